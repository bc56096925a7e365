"""Stage III: worst-case stealthy impact of the residual reference trajectory."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..detect import DetectorConfig
from .knowledge import AttackerKnowledge

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class ImpactProblem:
    """Linear map from the Stage III references to the expected final plant state.

    ``T_xa[:, 2k:2k+2]`` is the influence of ``a(k)`` on ``E{x(N_a)}``.
    """

    T_xa: np.ndarray
    horizon: int
    A_cl: np.ndarray = field(repr=False)
    B_cl: np.ndarray = field(repr=False)
    n_x: int = 4
    a_star: np.ndarray | None = field(default=None, repr=False)
    theoretical_impact: float = float("nan")
    target_index: int = -1
    target_sign: float = 1.0
    method: str = ""
    iterations: int = 0
    restarts: int = 0
    suboptimal: bool = False
    stealth_margin: float = 0.0
    feasibility_margin: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_y(self) -> int:
        return self.T_xa.shape[1] // self.horizon

    def blocks(self, row: int) -> np.ndarray:
        return self.T_xa[row].reshape(self.horizon, self.n_y)

    def final_state(self, a) -> np.ndarray:
        return self.T_xa @ np.asarray(a, dtype=float).ravel()

    def summary(self) -> dict:
        fm = self.feasibility_margin
        return {
            "schema_version": SCHEMA_VERSION,
            "theoretical_impact": self.theoretical_impact,
            "target_index": self.target_index,
            "target_sign": self.target_sign,
            "horizon": self.horizon,
            "method": self.method,
            "solver_iterations": self.iterations,
            "restarts": self.restarts,
            "suboptimal": self.suboptimal,
            "stealth_margin": self.stealth_margin,
            "feasibility_margin": None if fm is None else fm.tolist(),
        }

    def save_summary(self, path):
        Path(path).write_text(json.dumps(self.summary(), indent=2))

    def export_csv(self, path):
        with open(path, "w") as fh:
            fh.write("k," + ",".join(f"a{i + 1}" for i in range(self.n_y)) + "\n")
            for k, row in enumerate(self.a_star):
                fh.write(f"{k}," + ",".join(f"{v:.12g}" for v in row) + "\n")


def closed_loop_under_attack(know: AttackerKnowledge):
    """Augmented (x, x_c) dynamics when the controller receives C Tc x_c + Sigma_r^(1/2) a."""
    A, B, C = know.model.A, know.model.B, know.model.C
    c = know.controller
    n_x, n_c = A.shape[0], c.n_c
    A_cl = np.block([[A, B @ c.Cc], [np.zeros((n_c, n_x)), c.Ac + c.Bc @ C @ c.Tc]])
    B_cl = np.vstack([np.zeros((n_x, C.shape[0])), c.Bc @ know.sqrt_cov])
    return A_cl, B_cl


def build_Txa(know: AttackerKnowledge, N_III: int) -> ImpactProblem:
    if N_III < 1:
        raise ValueError("horizon must be at least one step")
    A_cl, B_cl = closed_loop_under_attack(know)
    n_x, n_y = know.model.n_x, B_cl.shape[1]
    T = np.empty((n_x, N_III * n_y))
    M = np.eye(A_cl.shape[0])[:n_x]
    for k in range(N_III - 1, -1, -1):
        T[:, k * n_y:(k + 1) * n_y] = M @ B_cl
        M = M @ A_cl
    return ImpactProblem(T, N_III, A_cl, B_cl, n_x)


def detector_trace(a, cfg: DetectorConfig) -> np.ndarray:
    """Detector outputs y_D(k+1) for references ``a`` from a zero state, ignoring resets."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not cfg.stateful:
        return np.einsum("ij,ij->i", a, a)
    b = cfg.beta
    x = np.zeros(a.shape[1])
    out = np.empty(len(a))
    for k, ak in enumerate(a):
        x = b * ak + (1 - b) * x
        out[k] = (2 - b) / b * float(x @ x)
    return out


def _unit_rows(V):
    n = np.linalg.norm(V, axis=1, keepdims=True)
    return np.divide(V, n, out=np.zeros_like(V), where=n > 0)


def _exact_direction(c: np.ndarray, cfg: DetectorConfig, J: float):
    """Maximize sum_k c_k . a_k under the detector constraints in closed form.

    Chi-squared: independent balls ||a_k|| <= sqrt(J).
    MEWMA: the filtered states z_k = x_D(k+1) are in bijection with ``a``
    (a_k = (z_k - (1-beta) z_{k-1})/beta), and the constraints are
    independent balls ||z_k|| <= sqrt(beta J/(2-beta)).
    """
    if not cfg.stateful:
        r = math.sqrt(J)
        return r * _unit_rows(c), r * float(np.linalg.norm(c, axis=1).sum())
    b = cfg.beta
    rho = math.sqrt(b * J / (2 - b))
    d = c.copy()
    d[:-1] -= (1 - b) * c[1:]
    d /= b
    z = rho * _unit_rows(d)
    a = z.copy()
    a[1:] -= (1 - b) * z[:-1]
    a /= b
    return a, rho * float(np.linalg.norm(d, axis=1).sum())


class _EllipsoidIntersection:
    """Cyclic (Dykstra) projection onto {a : ||x_D(k+1)|| <= rho for all k}."""

    def __init__(self, N: int, cfg: DetectorConfig, J: float):
        b = cfg.beta if cfg.stateful else 1.0
        self.N, self.b, self.stateful = N, b, cfg.stateful
        self.rho = math.sqrt(b * J / (2 - b))
        powers = (1 - b) ** np.arange(N)
        # weight of a_j in x_D(k+1) is b (1-b)^(k-j)
        self.w = [b * powers[:k + 1][::-1] for k in range(N)]
        self.s = [float(wk @ wk) for wk in self.w]

    def _project_one(self, a, k):
        wk = self.w[k]
        v = wk @ a[:k + 1]
        nv = np.linalg.norm(v)
        if nv > self.rho:
            a[:k + 1] -= np.outer(wk, v * (1 - self.rho / nv) / self.s[k])
        return a

    def project(self, v, sweeps: int = 2000, tol: float = 1e-12):
        if not self.stateful:
            n = np.linalg.norm(v, axis=1, keepdims=True)
            return v * np.minimum(1.0, self.rho / np.maximum(n, 1e-300))
        x = v.copy()
        incr = np.zeros((self.N,) + v.shape)
        for _ in range(sweeps):
            x_old = x.copy()
            for k in range(self.N):
                y = x + incr[k]
                x = self._project_one(y.copy(), k)
                incr[k] = y - x
            if np.max(np.abs(x - x_old)) <= tol:
                break
        return x

    def violation(self, a) -> float:
        xD = np.zeros(a.shape[1])
        worst = 0.0
        for ak in a:
            xD = self.b * ak + (1 - self.b) * xD
            worst = max(worst, np.linalg.norm(xD) / self.rho)
        return worst


def _projected_ascent(c, cfg, J, restarts, max_iter, tol, rng):
    """Projected gradient ascent on c . a with random feasible restarts."""
    S = _EllipsoidIntersection(c.shape[0], cfg, J)
    best_val, best_a, iters = -np.inf, None, 0
    scale = S.rho / max(np.linalg.norm(c), 1e-300)
    for _ in range(max(1, restarts)):
        a = S.project(rng.standard_normal(c.shape) * S.rho)
        val = float(np.sum(c * a))
        eta = scale
        for it in range(max_iter):
            a = S.project(a + eta * c)
            new = float(np.sum(c * a))
            iters += 1
            eta = min(eta * 1.5, 1e6 * scale)
            if abs(new - val) <= tol * max(abs(new), 1e-300):
                val = new
                break
            val = new
        worst = S.violation(a)
        if worst > 1.0:
            a = a / worst
        val = float(np.sum(c * a))
        if val > best_val:
            best_val, best_a = val, a
    return best_a, best_val, iters


def solve_worst_case(problem: ImpactProblem, cfg: DetectorConfig, method: str = "exact",
                     margin: float = 0.0, restarts: int = 20, max_iter: int = 500,
                     tol: float = 1e-6, seed: int = 0) -> ImpactProblem:
    """Maximize ||T_xa a||_inf subject to y_D(k+1) <= J_D over the horizon.

    Solves one concave subproblem per signed state coordinate and keeps the
    best (lowest index, positive sign first on ties). ``margin`` shrinks the
    threshold to J_D (1 - margin) so that round-off in the loop cannot push
    the detector output over the threshold.
    """
    J = cfg.J_D * (1.0 - margin)
    rng = np.random.default_rng(seed)
    best = (-np.inf, None, -1, 1.0)
    total_iters = 0
    for i in range(problem.n_x):
        for s in (1.0, -1.0):
            c = s * problem.blocks(i)
            if method == "exact":
                a, val = _exact_direction(c, cfg, J)
            elif method == "projected":
                a, val, it = _projected_ascent(c, cfg, J, restarts, max_iter, tol, rng)
                total_iters += it
            else:
                raise ValueError(f"unknown method {method!r}")
            if best[1] is None or val > best[0] + 1e-12 * max(1.0, abs(best[0])):
                best = (val, a, i, s)
    val, a, i, s = best
    problem.a_star = a
    problem.theoretical_impact = float(abs(problem.final_state(a)[i]))
    problem.target_index, problem.target_sign = i, s
    problem.method = method
    problem.iterations = total_iters
    problem.restarts = restarts if method == "projected" else 0
    problem.stealth_margin = margin
    problem.feasibility_margin = cfg.J_D - detector_trace(a, cfg)
    problem.suboptimal = bool(np.any(problem.feasibility_margin < -1e-9 * cfg.J_D))
    if method == "projected":
        log.info("projected ascent: %d iterations over %d restarts", total_iters, restarts)
    return problem
