"""LQG / LQI output-feedback design and residual normalization."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DegenerateResidualError, NoSolutionError, SchemaError
from .plant import LinearModel

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CostWeights:
    Qx: np.ndarray
    Ru: np.ndarray
    Sigma_w: np.ndarray
    Sigma_v: np.ndarray
    Qint: np.ndarray | None = None

    @classmethod
    def default(cls, lqi: bool = False) -> "CostWeights":
        return cls(
            Qx=10 * np.eye(4),
            Ru=2 * np.eye(2),
            Sigma_w=5 * np.eye(4),
            Sigma_v=np.eye(2),
            Qint=2 * np.eye(2) if lqi else None,
        )

    def validate(self):
        for name in ("Qx", "Ru", "Sigma_w", "Sigma_v"):
            M = getattr(self, name)
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
        if np.min(np.linalg.eigvalsh(self.Qx)) < -1e-12 or np.min(np.linalg.eigvalsh(self.Sigma_w)) < -1e-12:
            raise ValueError("Qx and Sigma_w must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(self.Ru)) <= 0 or np.min(np.linalg.eigvalsh(self.Sigma_v)) <= 0:
            raise ValueError("Ru and Sigma_v must be positive definite")
        if self.Qint is not None and np.min(np.linalg.eigvalsh(self.Qint)) < -1e-12:
            raise ValueError("Qint must be positive semidefinite")


@dataclass(frozen=True)
class ControllerRealization:
    """x_c(k+1) = Ac x_c(k) + Bc y~(k) [+ nu(k)],  u(k) = Cc x_c(k)."""

    Ac: np.ndarray
    Bc: np.ndarray
    Cc: np.ndarray
    Tc: np.ndarray
    kind: str
    L: np.ndarray
    K: np.ndarray
    K_int: np.ndarray | None = None
    Sigma_nu: np.ndarray | None = None
    Ts: float = 1.0
    C: np.ndarray | None = None

    @property
    def n_c(self) -> int:
        return self.Ac.shape[0]

    @property
    def K_xhat(self) -> np.ndarray:
        return self.K

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.Ac))))

    @cached_property
    def _nu_factor(self) -> np.ndarray | None:
        if self.Sigma_nu is None:
            return None
        w, V = np.linalg.eigh(0.5 * (self.Sigma_nu + self.Sigma_nu.T))
        return V * np.sqrt(np.maximum(w, 0.0))

    def with_injection(self, Sigma_nu) -> "ControllerRealization":
        if Sigma_nu is not None:
            Sigma_nu = np.atleast_2d(np.asarray(Sigma_nu, dtype=float))
            if Sigma_nu.shape == (1, 1):
                Sigma_nu = Sigma_nu[0, 0] * np.eye(self.n_c)
        return replace(self, Sigma_nu=Sigma_nu)

    def to_dict(self) -> dict:
        def mat(M):
            return None if M is None else {"rows": M.shape[0], "cols": M.shape[1], "data": M.ravel().tolist()}

        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "Ts": self.Ts,
            "Ac": mat(self.Ac), "Bc": mat(self.Bc), "Cc": mat(self.Cc), "Tc": mat(self.Tc),
            "L": mat(self.L), "K": mat(self.K), "K_int": mat(self.K_int),
            "Sigma_nu": mat(self.Sigma_nu), "C": mat(self.C),
            "spectral_radius": self.spectral_radius(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerRealization":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"controller schema {d.get('schema_version')} != {SCHEMA_VERSION}")

        def mat(m):
            return None if m is None else np.array(m["data"], dtype=float).reshape(m["rows"], m["cols"])

        return cls(Ac=mat(d["Ac"]), Bc=mat(d["Bc"]), Cc=mat(d["Cc"]), Tc=mat(d["Tc"]),
                   kind=d["kind"], L=mat(d["L"]), K=mat(d["K"]), K_int=mat(d.get("K_int")),
                   Sigma_nu=mat(d.get("Sigma_nu")), Ts=float(d.get("Ts", 1.0)), C=mat(d.get("C")))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "ControllerRealization":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ResidualStats:
    mu_r: np.ndarray
    Sigma_r: np.ndarray
    normalizer: np.ndarray
    n_samples: int = 0
    injected: np.ndarray | None = field(default=None, repr=False)

    @property
    def sqrt_cov(self) -> np.ndarray:
        """Inverse of the normalizer (the attacker's residual shaping matrix)."""
        return np.linalg.inv(self.normalizer)

    @classmethod
    def from_covariance(cls, Sigma_r, mu_r=None, n_samples: int = 0) -> "ResidualStats":
        Sigma_r = np.asarray(Sigma_r, dtype=float)
        mu = np.zeros(Sigma_r.shape[0]) if mu_r is None else np.asarray(mu_r, dtype=float)
        return cls(mu, Sigma_r, inv_sqrtm(Sigma_r), n_samples)

    def with_injection(self, C, Tc, Sigma_nu) -> "ResidualStats":
        """Renormalize for controller noise injection: (Sigma_r + C Tc Sigma_nu Tc' C')^(-1/2)."""
        extra = C @ Tc @ Sigma_nu @ Tc.T @ C.T
        return replace(self, normalizer=inv_sqrtm(self.Sigma_r + extra), injected=extra)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mu_r": self.mu_r.tolist(),
            "Sigma_r": self.Sigma_r.tolist(),
            "normalizer": self.normalizer.tolist(),
            "n_samples": self.n_samples,
            "injected": None if self.injected is None else self.injected.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResidualStats":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"residual stats schema {d.get('schema_version')} != {SCHEMA_VERSION}")
        inj = d.get("injected")
        return cls(np.array(d["mu_r"]), np.array(d["Sigma_r"]), np.array(d["normalizer"]),
                   int(d.get("n_samples", 0)), None if inj is None else np.array(inj))


def inv_sqrtm(S, floor: float = 1e-12) -> np.ndarray:
    """Symmetric inverse square root via eigendecomposition."""
    S = 0.5 * (np.asarray(S, dtype=float) + np.asarray(S, dtype=float).T)
    w, V = np.linalg.eigh(S)
    w = np.maximum(w, floor)
    return (V / np.sqrt(w)) @ V.T


def solve_dare(A, B, Q, R, tol: float = 1e-12, max_iter: int = 1_000_000):
    """Stabilizing DARE solution by fixed-point iteration.

    Returns ``(P, K)`` with ``K = (R + B'PB)^-1 B'PA``.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    P = Q.copy()
    for it in range(max_iter):
        BtP = B.T @ P
        G = np.linalg.solve(R + BtP @ B, BtP @ A)
        with np.errstate(over="ignore", invalid="ignore"):
            Pn = A.T @ P @ A - (A.T @ P @ B) @ G + Q
        Pn = 0.5 * (Pn + Pn.T)
        # max-abs norms: Frobenius squares overflow before P itself does
        diff = np.max(np.abs(Pn - P))
        P = Pn
        if not np.all(np.isfinite(P)):
            break
        if diff <= tol * max(1.0, np.max(np.abs(P))):
            K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            return P, K
    raise NoSolutionError(f"Riccati iteration did not converge in {max_iter} steps")


def dare_residual(A, B, Q, R, P) -> float:
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    G = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return float(np.linalg.norm(A.T @ P @ A - A.T @ P @ B @ G + Q - P))


def kalman_gain(A, C, Sigma_w, Sigma_v, **kw):
    """Steady-state predictor Kalman gain ``L = A P C'(C P C' + Sigma_v)^-1`` by duality."""
    P, Kd = solve_dare(np.asarray(A).T, np.asarray(C).T, Sigma_w, Sigma_v, **kw)
    return P, Kd.T


def design_lqg(model: LinearModel, weights: CostWeights) -> ControllerRealization:
    if model.mode != "discrete":
        raise ValueError("design requires a discrete model")
    weights.validate()
    A, B, C = model.A, model.B, model.C
    _, K = solve_dare(A, B, weights.Qx, weights.Ru)
    _, L = kalman_gain(A, C, weights.Sigma_w, weights.Sigma_v)
    Ac = A - B @ K - L @ C
    return ControllerRealization(Ac=Ac, Bc=L.copy(), Cc=-K, Tc=np.eye(model.n_x), kind="LQG",
                                 L=L, K=K, Ts=model.Ts, C=C.copy())


def augmented_model(model: LinearModel) -> tuple[np.ndarray, np.ndarray]:
    n, m, p = model.n_x, model.n_u, model.n_y
    A_aug = np.block([[model.A, np.zeros((n, p))], [-model.Ts * model.C, np.eye(p)]])
    B_aug = np.vstack([model.B, np.zeros((p, m))])
    return A_aug, B_aug


def design_lqi(model: LinearModel, weights: CostWeights) -> ControllerRealization:
    """LQG with output integrators; the Kalman gain is shared with the LQG design."""
    if model.mode != "discrete":
        raise ValueError("design requires a discrete model")
    if weights.Qint is None:
        raise ValueError("LQI design needs an integrator weight Qint")
    weights.validate()
    A, B, C = model.A, model.B, model.C
    n, p = model.n_x, model.n_y
    A_aug, B_aug = augmented_model(model)
    Q_aug = np.block([[weights.Qx, np.zeros((n, p))], [np.zeros((p, n)), weights.Qint]])
    _, Kf = solve_dare(A_aug, B_aug, Q_aug, weights.Ru)
    Kx, Ki = Kf[:, :n], Kf[:, n:]
    _, L = kalman_gain(A, C, weights.Sigma_w, weights.Sigma_v)
    Ac = np.block([[A - B @ Kx - L @ C, -B @ Ki], [np.zeros((p, n)), np.eye(p)]])
    Bc = np.vstack([L, -model.Ts * np.eye(p)])
    Cc = np.hstack([-Kx, -Ki])
    Tc = np.hstack([np.eye(n), np.zeros((n, p))])
    return ControllerRealization(Ac=Ac, Bc=Bc, Cc=Cc, Tc=Tc, kind="LQI", L=L, K=Kx, K_int=Ki,
                                 Ts=model.Ts, C=C.copy())


def design(model: LinearModel, kind: str = "LQG", weights: CostWeights | None = None) -> ControllerRealization:
    kind = kind.upper()
    if weights is None:
        weights = CostWeights.default(lqi=kind == "LQI")
    if kind == "LQG":
        return design_lqg(model, weights)
    if kind == "LQI":
        return design_lqi(model, weights)
    raise ValueError(f"unknown controller kind {kind!r}")


def controller_step(c: ControllerRealization, x_c, y_tilde,
                    rng: np.random.Generator | None = None):
    """One controller update.

    Returns ``(x_c_next, u, r_bar)``; the residual and input use the
    pre-update state. ``nu ~ N(0, Sigma_nu)`` is added when injection is on.
    """
    x_c = np.asarray(x_c, dtype=float)
    r_bar = y_tilde - c.C @ (c.Tc @ x_c)
    u = c.Cc @ x_c
    x_next = c.Ac @ x_c + c.Bc @ y_tilde
    if c.Sigma_nu is not None:
        if rng is None:
            raise ValueError("noise injection needs an rng")
        x_next = x_next + c._nu_factor @ rng.standard_normal(c.n_c)
    return x_next, u, r_bar


def estimate_residual_stats(r_bar) -> ResidualStats:
    """Sample mean/covariance and the symmetric normalizer (mean is not removed)."""
    r = np.asarray(r_bar, dtype=float)
    if r.ndim != 2 or r.shape[0] < 100:
        raise ValueError("need at least 100 residual samples shaped (N, n_y)")
    mu = r.mean(axis=0)
    S = np.atleast_2d(np.cov(r, rowvar=False))
    w = np.linalg.eigvalsh(S)
    if w.min() <= 1e-12 * max(1.0, w.max()):
        raise DegenerateResidualError(f"singular residual covariance, eigenvalues {w}")
    return ResidualStats(mu, S, inv_sqrtm(S), r.shape[0])
