"""Attacker runtime: sees the plant output and its own state, returns the sensor offset."""
from __future__ import annotations

import logging

import numpy as np

from .impact import ImpactProblem, build_Txa, solve_worst_case
from .knowledge import AttackerKnowledge, AttackTimeline
from .stage1 import ControllerEstimate, default_mode, stage1_step
from .stage2 import DetectorEstimate, NominalOutputSampler, stage2_step

log = logging.getLogger(__name__)


def attack_signal(know: AttackerKnowledge, x_c_hat, y, a, extra=None) -> np.ndarray:
    """y_a = -y + C Tc x_c_hat + Sigma_r^(1/2) a (+ extra).

    With an exact controller-state estimate the controller sees its own
    prediction plus ``Sigma_r^(1/2) a``, so the normalized residual is ``a``.
    """
    y_a = -np.asarray(y, dtype=float) + know.output_map @ x_c_hat + know.sqrt_cov @ np.asarray(a, dtype=float)
    if extra is not None:
        y_a = y_a + extra
    return y_a


def stage3_first_signal(know: AttackerKnowledge, x_D_hat) -> np.ndarray:
    """Offset that cancels the filtered detector state on the first Stage III step."""
    cfg = know.detector
    x_D_hat = np.zeros(cfg.dim) if x_D_hat is None else np.asarray(x_D_hat, dtype=float)
    if not cfg.stateful:
        return np.zeros(cfg.dim)
    b = cfg.beta
    return -know.sqrt_cov @ ((1.0 - b) / b * x_D_hat)


class Attacker:
    """Three-stage attacker.

    ``act(k, y)`` is the only input channel: the step index and the
    eavesdropped measurement. The estimates are exposed as attributes so the
    simulator can log diagnostics; nothing written there is read back.
    """

    def __init__(self, know: AttackerKnowledge, timeline: AttackTimeline,
                 rng: np.random.Generator, mode: str | None = None, P0: float = 10.0,
                 margin: float = 1e-4, method: str = "exact", problem: ImpactProblem | None = None):
        self.know = know
        self.timeline = timeline
        self.mode = default_mode(know.controller) if mode is None else mode
        self.est_c = ControllerEstimate.initial(know, self.mode, P0)
        cfg = know.detector
        self.est_D = DetectorEstimate(np.zeros(cfg.dim)) if cfg.stateful else None
        self.Ee = np.zeros(know.model.n_x)
        self.sampler = NominalOutputSampler(cfg, rng) if cfg.stateful else None
        if problem is None:
            problem = solve_worst_case(build_Txa(know, timeline.N_III), cfg, method=method, margin=margin)
        self.problem = problem
        self.last_a = None
        self.last_stage = "nominal"

    def act(self, k: int, y) -> np.ndarray:
        tl = self.timeline
        stage = tl.stage(k)
        self.last_stage = stage
        y = np.asarray(y, dtype=float)
        self.last_a = None
        if stage in ("nominal", "post"):
            return np.zeros_like(y)
        if stage == "I":
            self.est_c = stage1_step(self.know, self.est_c, y)
            return np.zeros_like(y)

        extra = None
        if stage == "II":
            a, self.est_D, self.Ee = stage2_step(self.know, self.est_D, self.Ee, self.sampler, k - tl.k_II)
        else:
            j = k - tl.k_III
            a = self.problem.a_star[j]
            if j == 0 and self.know.detector.stateful:
                x_D_hat = None if self.est_D is None else self.est_D.x_D_hat
                extra = stage3_first_signal(self.know, x_D_hat)
        y_a = attack_signal(self.know, self.est_c.x_c_hat, y, a, extra)
        self.est_c = stage1_step(self.know, self.est_c, y, y + y_a)
        self.last_a = a
        return y_a
