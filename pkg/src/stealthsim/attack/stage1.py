"""Stage I: estimating the operator's controller state from eavesdropped outputs."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .knowledge import AttackerKnowledge

log = logging.getLogger(__name__)

UNIT_TOL = 1e-9


def stage1_feasible(controller, tol: float = UNIT_TOL) -> str:
    """'strict' if rho(Ac) < 1, 'marginal' if rho(Ac) == 1 (within tol), else 'infeasible'."""
    rho = controller.spectral_radius()
    if rho > 1.0 + tol:
        return "infeasible"
    if rho >= 1.0 - tol:
        return "marginal"
    return "strict"


@dataclass(frozen=True)
class ControllerEstimate:
    x_c_hat: np.ndarray
    mode: str = "open_loop"
    x_hat: np.ndarray | None = None  # plant part of the joint filter
    P_joint: np.ndarray | None = None
    e_c_inf: float = float("nan")
    floor_events: int = 0

    @classmethod
    def initial(cls, know: AttackerKnowledge, mode: str = "open_loop", P0: float = 10.0):
        n_c = know.controller.n_c
        if mode == "open_loop":
            return cls(np.zeros(n_c), mode)
        if mode == "joint_kalman":
            n_x = know.model.n_x
            return cls(np.zeros(n_c), mode, np.zeros(n_x), P0 * np.eye(n_x + n_c))
        raise ValueError(f"unknown stage I mode {mode!r}")


def default_mode(controller) -> str:
    verdict = stage1_feasible(controller)
    if verdict == "infeasible":
        raise ValueError("controller has unstable dynamics; the state cannot be estimated")
    return "open_loop" if verdict == "strict" else "joint_kalman"


def joint_system(know: AttackerKnowledge, eavesdrop_only: bool):
    """Joint (plant, controller) model seen by the attacker.

    While only eavesdropping, the controller is driven by ``y = Cx + v``, so
    its update noise ``Bc v`` is correlated with the measurement noise. Once
    the attacker injects, the controller input ``y~`` is known exactly and
    enters as a deterministic input.
    """
    A, B, C = know.model.A, know.model.B, know.model.C
    c = know.controller
    n_x, n_c = A.shape[0], c.n_c
    Sv = know.Sigma_v
    nu = np.zeros((n_c, n_c)) if know.Sigma_nu is None else know.Sigma_nu
    H = np.hstack([C, np.zeros((C.shape[0], n_c))])
    if eavesdrop_only:
        F = np.block([[A, B @ c.Cc], [c.Bc @ C, c.Ac]])
        Q = np.block([[know.Sigma_w, np.zeros((n_x, n_c))],
                      [np.zeros((n_c, n_x)), c.Bc @ Sv @ c.Bc.T + nu]])
        S = np.vstack([np.zeros((n_x, Sv.shape[0])), c.Bc @ Sv])
    else:
        F = np.block([[A, B @ c.Cc], [np.zeros((n_c, n_x)), c.Ac]])
        Q = np.block([[know.Sigma_w, np.zeros((n_x, n_c))], [np.zeros((n_c, n_x)), nu]])
        S = np.zeros((n_x + n_c, Sv.shape[0]))
    return F, H, Q, S, Sv


def _kalman_predict(z, P, y, F, H, Q, S, R, u=None):
    Sg = H @ P @ H.T + R
    G = np.linalg.solve(Sg.T, (F @ P @ H.T + S).T).T
    z_next = F @ z + G @ (y - H @ z)
    if u is not None:
        z_next = z_next + u
    P_next = F @ P @ F.T + Q - G @ Sg @ G.T
    return z_next, 0.5 * (P_next + P_next.T)


def stage1_step(know: AttackerKnowledge, est: ControllerEstimate, y, y_tilde=None) -> ControllerEstimate:
    """Advance the controller-state estimate by one sample.

    ``y`` is the eavesdropped plant output. ``y_tilde`` is what the
    controller received; ``None`` means the attacker is not injecting
    (``y_tilde == y``).
    """
    c = know.controller
    y = np.asarray(y, dtype=float)
    eavesdrop_only = y_tilde is None
    y_tilde = y if eavesdrop_only else np.asarray(y_tilde, dtype=float)
    if est.mode == "open_loop":
        return replace(est, x_c_hat=c.Ac @ est.x_c_hat + c.Bc @ y_tilde)

    F, H, Q, S, R = joint_system(know, eavesdrop_only)
    n_x = know.model.n_x
    z = np.concatenate([est.x_hat, est.x_c_hat])
    u = None
    if not eavesdrop_only:
        u = np.concatenate([np.zeros(n_x), c.Bc @ y_tilde])
    z, P = _kalman_predict(z, est.P_joint, y, F, H, Q, S, R, u)
    floor_events = est.floor_events
    w = np.linalg.eigvalsh(P)
    if w.min() < 0:
        w_all, V = np.linalg.eigh(P)
        P = (V * np.maximum(w_all, 0.0)) @ V.T
        floor_events += 1
        log.debug("joint covariance lost PSD (min eig %.3g); floored", w.min())
    return replace(est, x_c_hat=z[n_x:], x_hat=z[:n_x], P_joint=P, floor_events=floor_events)
