"""Stage II: steering the MEWMA detector state to a known value without alarms."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..detect import DetectorConfig
from .knowledge import AttackerKnowledge


@dataclass(frozen=True)
class DetectorEstimate:
    x_D_hat: np.ndarray
    gamma_target: float = 0.0
    e_D_inf: float = float("nan")


def stage2_length(beta: float, J_D: float, gamma: float) -> int:
    """Steps after which ||x_D - x_D_hat|| <= gamma regardless of the initial detector state."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    radius = math.sqrt(beta * J_D / (2.0 - beta))
    if gamma >= radius:
        return 0
    n = math.log(gamma / radius) / math.log(1.0 - beta)
    # guard against n = 120.0000000001 from rounding
    return int(math.ceil(n - 1e-9))


def stage2_accuracy(beta: float, J_D: float, n: int) -> float:
    """Inverse of :func:`stage2_length`: the error bound reached after ``n`` steps."""
    return math.sqrt(beta * J_D / (2.0 - beta)) * (1.0 - beta) ** n


def output_budget(j: int, cfg: DetectorConfig) -> float:
    """Upper end J(j) = (1 - (1 - beta)^j) J_D of the sampled detector output, j >= 1."""
    return (1.0 - (1.0 - cfg.beta) ** j) * cfg.J_D


class NominalOutputSampler:
    """Shadow MEWMA fed with i.i.d. N(0, I) residuals, rejection-sampled below a bound.

    The shadow starts from zero at the beginning of Stage II, matching the
    growth of the output budget.
    """

    def __init__(self, cfg: DetectorConfig, rng: np.random.Generator, max_tries: int = 1000):
        self.cfg = cfg
        self.rng = rng
        self.max_tries = max_tries
        self.state = np.zeros(cfg.dim)
        self.fallbacks = 0

    def draw(self, bound: float) -> float:
        b = self.cfg.beta
        gain = (2.0 - b) / b
        for _ in range(self.max_tries):
            s = b * self.rng.standard_normal(self.cfg.dim) + (1.0 - b) * self.state
            y = gain * float(s @ s)
            if y <= bound:
                self.state = s
                return y
        # nothing landed inside the budget; draw uniformly and keep the direction
        self.fallbacks += 1
        y = float(self.rng.uniform(0.0, bound))
        n = np.linalg.norm(s)
        self.state = s / n * math.sqrt(y / gain) if n > 0 else self.state
        return y


def sphere_maximizer(center, radius: float, base, M):
    """Maximize ||base - M a||_inf over the sphere ||a - center|| = radius.

    Each signed coordinate is linear in ``a``, so its maximizer is
    ``center + radius * g/||g||``; the best of the 2n candidates is global.
    Ties go to the lowest index, positive sign first.
    """
    center = np.asarray(center, dtype=float)
    best_val, best_a = -np.inf, None
    for i in range(M.shape[0]):
        for s in (1.0, -1.0):
            g = -s * M[i]
            ng = np.linalg.norm(g)
            a = center + radius * (g / ng if ng > 0 else np.eye(len(center))[0])
            val = float(np.max(np.abs(base - M @ a)))
            if val > best_val:
                best_val, best_a = val, a
    return best_a, best_val


def stage2_step(know: AttackerKnowledge, est_D: DetectorEstimate, Ee, sampler: NominalOutputSampler,
                j: int):
    """Choose the Stage II reference ``a`` for the j-th step of the stage (j >= 0).

    Returns ``(a, est_D', Ee')`` where ``Ee`` is the expected operator
    estimation error driven by ``E{e}' = A E{e} - L Sigma_r^(1/2) a``.
    """
    cfg = know.detector
    b = cfg.beta
    y_target = sampler.draw(output_budget(j + 1, cfg))
    center = -(1.0 - b) / b * est_D.x_D_hat
    radius = math.sqrt(b * y_target / (2.0 - b)) / b
    M = know.controller.L @ know.sqrt_cov
    base = know.model.A @ Ee
    a, _ = sphere_maximizer(center, radius, base, M)
    x_D_hat = b * a + (1.0 - b) * est_D.x_D_hat
    return a, replace(est_D, x_D_hat=x_D_hat), base - M @ a
