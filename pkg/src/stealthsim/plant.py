"""Two-heater thermal process: nonlinear dynamics, steady state, linear models.

All temperatures are in kelvin and heater powers in percent. States are
ordered ``(T_H1, T_H2, T_S1, T_S2)``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numba
import numpy as np
from scipy.linalg import expm

from .errors import InfeasibleSteadyState, IntegrationError, SaturationInfeasible

Q_MIN, Q_MAX = 0.0, 100.0
T_AMB_DEFAULT = 294.15
T_SET_DEFAULT = 313.15

# Box constraints for the identified parameters.
PARAM_BOUNDS = {
    "alpha1": (0.005, 0.02),
    "alpha2": (0.002, 0.015),
    "U": (2.0, 30.0),
    "Us": (2.0, 30.0),
    "tau_c1": (15.0, 40.0),
    "tau_c2": (15.0, 40.0),
}


@dataclass(frozen=True)
class PlantParams:
    alpha1: float
    alpha2: float
    U: float
    Us: float
    tau_c1: float
    tau_c2: float
    m: float = 0.004
    c_p: float = 500.0
    A_surf: float = 1e-3
    As_surf: float = 2e-4
    eps: float = 0.9
    k_B: float = 5.67e-8

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"PlantParams.{f.name} must be finite and > 0, got {v}")

    @classmethod
    def identified(cls) -> "PlantParams":
        """Identified heater/transfer values with the tabulated constants (m*c_p = 2 J/K)."""
        return cls(alpha1=0.00854, alpha2=0.00480, U=4.05, Us=26.44, tau_c1=25.16, tau_c2=22.50)

    @classmethod
    def lumped(cls) -> "PlantParams":
        """Identified values with the lumped heat capacity m*c_p = 1 J/K.

        The reference discrete model (A(1,1)=0.9784, B(1,1)=0.0085 at Ts=1 s)
        is only reproduced with a lumped heat capacity of 1 J/K, so this preset
        halves c_p relative to :meth:`identified`. All scenarios use it.
        """
        return dataclasses.replace(cls.identified(), c_p=250.0)

    @property
    def heat_capacity(self) -> float:
        return self.m * self.c_p

    def within_bounds(self, bounds: dict | None = None) -> bool:
        bounds = PARAM_BOUNDS if bounds is None else bounds
        return all(lo <= getattr(self, k) <= hi for k, (lo, hi) in bounds.items())

    def vector(self) -> np.ndarray:
        """Packed layout consumed by the compiled integrator."""
        return np.array([
            self.alpha1, self.alpha2, self.U, self.Us, self.tau_c1, self.tau_c2,
            self.heat_capacity, self.A_surf, self.As_surf, self.eps * self.k_B,
        ])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PlantParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names - {"schema_version"}
        if unknown:
            raise ValueError(f"unknown PlantParams fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items() if k in names})

    def save(self, path, schema_version: int | None = None):
        d = self.to_dict()
        if schema_version is not None:
            d["schema_version"] = schema_version
        Path(path).write_text(json.dumps(d, indent=2))

    @classmethod
    def load(cls, path) -> "PlantParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


class PlantState(NamedTuple):
    T_H1: float
    T_H2: float
    T_S1: float
    T_S2: float


class HeaterInput(NamedTuple):
    Q1: float
    Q2: float


@dataclass(frozen=True)
class SteadyState:
    T_amb: float
    T_Hinf: np.ndarray
    Q_inf: np.ndarray

    def state(self) -> np.ndarray:
        """Equilibrium plant state, sensors equal to heaters."""
        return np.concatenate([self.T_Hinf, self.T_Hinf]).astype(float)


@dataclass(frozen=True)
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Ts: float = 0.0
    mode: str = "continuous"

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))


@dataclass(frozen=True)
class MeasurementNoiseSpec:
    """Sensor noise and ambient disturbance used by the simulator.

    The default per-sensor standard deviations make the nominal LQG residual
    covariance land near diag(0.0555, 0.0482) K^2 (a calibration, not a
    measured value).
    """

    sigma_meas: tuple[float, float] = (0.179, 0.167)
    seed: int = 0
    ambient_drift_amp: float = 0.0
    ambient_drift_period: float = 3600.0

    def __post_init__(self):
        sig = np.broadcast_to(np.asarray(self.sigma_meas, dtype=float), (2,))
        if np.any(sig < 0) or not np.all(np.isfinite(sig)):
            raise ValueError("sigma_meas must be finite and >= 0")
        object.__setattr__(self, "sigma_meas", tuple(float(s) for s in sig))

    def ambient(self, T_amb: float, t: float) -> float:
        if self.ambient_drift_amp == 0.0:
            return T_amb
        return T_amb + self.ambient_drift_amp * math.sin(2 * math.pi * t / self.ambient_drift_period)


# -- compiled kernels ----------------------------------------------------------

@numba.njit(cache=True)
def _rhs(th1, th2, ts1, ts2, q1, q2, t_amb, pv):
    a1, a2, U, Us, tau1, tau2, mcp, A, As, ek = pv[0], pv[1], pv[2], pv[3], pv[4], pv[5], pv[6], pv[7], pv[8], pv[9]
    ta4 = t_amb ** 4
    h14 = th1 ** 4
    h24 = th2 ** 4
    conv = Us * As * (th2 - th1)
    rad = ek * A * (h24 - h14)
    d1 = (U * A * (t_amb - th1) + ek * A * (ta4 - h14) + conv + rad + a1 * q1) / mcp
    d2 = (U * A * (t_amb - th2) + ek * A * (ta4 - h24) - conv - rad + a2 * q2) / mcp
    d3 = (th1 - ts1) / tau1
    d4 = (th2 - ts2) / tau2
    return d1, d2, d3, d4


@numba.njit(cache=True)
def _rk4(x, q1, q2, t_amb, pv, dt, nsub):
    h = dt / nsub
    a, b, c, d = x[0], x[1], x[2], x[3]
    for _ in range(nsub):
        k1 = _rhs(a, b, c, d, q1, q2, t_amb, pv)
        k2 = _rhs(a + 0.5 * h * k1[0], b + 0.5 * h * k1[1], c + 0.5 * h * k1[2], d + 0.5 * h * k1[3],
                  q1, q2, t_amb, pv)
        k3 = _rhs(a + 0.5 * h * k2[0], b + 0.5 * h * k2[1], c + 0.5 * h * k2[2], d + 0.5 * h * k2[3],
                  q1, q2, t_amb, pv)
        k4 = _rhs(a + h * k3[0], b + h * k3[1], c + h * k3[2], d + h * k3[3], q1, q2, t_amb, pv)
        a += h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        b += h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        c += h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        d += h / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
    out = np.empty(4)
    out[0], out[1], out[2], out[3] = a, b, c, d
    return out


@numba.njit(cache=True)
def _rollout(x0, Q, t_amb, pv, dt, nsub):
    n = Q.shape[0]
    X = np.empty((n, 4))
    x = x0.copy()
    for i in range(n):
        X[i] = x
        q1 = min(max(Q[i, 0], 0.0), 100.0)
        q2 = min(max(Q[i, 1], 0.0), 100.0)
        x = _rk4(x, q1, q2, t_amb, pv, dt, nsub)
        if not (np.isfinite(x[0]) and np.isfinite(x[1]) and np.isfinite(x[2]) and np.isfinite(x[3])):
            X[i + 1:] = np.nan
            return X
    return X


# -- public operations -----------------------------------------------------------

def saturate(u) -> np.ndarray:
    return np.clip(np.asarray(u, dtype=float), Q_MIN, Q_MAX)


def derivative(p: PlantParams, x, u, T_amb: float) -> np.ndarray:
    """Right-hand side of the heater/sensor ODE at state ``x`` and input ``u``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.array(_rhs(x[0], x[1], x[2], x[3], u[0], u[1], float(T_amb), p.vector()))
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite derivative at x={x}, u={u}")
    return out


def step(p: PlantParams, x, u, dt: float = 1.0, T_amb: float = T_AMB_DEFAULT,
         noise: MeasurementNoiseSpec | None = None, t: float = 0.0,
         substep: float = 0.1) -> np.ndarray:
    """Advance the plant ``dt`` seconds with classical RK4 under a held input.

    The input is clamped to [0, 100] % first. ``noise`` only contributes the
    ambient drift, evaluated at time ``t`` and held over the interval.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    nsub = max(1, int(round(dt / substep)))
    q = saturate(u)
    t_amb = noise.ambient(T_amb, t) if noise is not None else T_amb
    out = _rk4(np.asarray(x, dtype=float), q[0], q[1], float(t_amb), p.vector(), float(dt), nsub)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"integration blew up from x={x}")
    return out


def simulate_open_loop(p: PlantParams, x0, Q, T_amb: float, dt: float = 1.0,
                       substep: float = 0.1) -> np.ndarray:
    """States at each sample for a sequence of held inputs (row i is the state before input i).

    Non-finite trajectories are padded with NaN instead of raising so that
    optimizers can retreat from them.
    """
    Q = np.ascontiguousarray(Q, dtype=float)
    nsub = max(1, int(round(dt / substep)))
    return _rollout(np.asarray(x0, dtype=float), Q, float(T_amb), p.vector(), float(dt), nsub)


def steady_state_inputs(p: PlantParams, T_amb: float = T_AMB_DEFAULT,
                        T_Hinf=T_SET_DEFAULT) -> SteadyState:
    """Heater powers that hold the heaters at ``T_Hinf``.

    Each steady-state equation contains only its own heater power, so both
    inputs follow in closed form; for equal temperatures this reduces to
    Q2 = (alpha1/alpha2) Q1.
    """
    T = np.broadcast_to(np.asarray(T_Hinf, dtype=float), (2,)).copy()
    if np.any(T < T_amb):
        raise InfeasibleSteadyState(f"T_Hinf={T} below ambient {T_amb}")
    ek, A, As = p.eps * p.k_B, p.A_surf, p.As_surf
    t1, t2 = T
    loss1 = p.U * A * (t1 - T_amb) + ek * A * (t1 ** 4 - T_amb ** 4)
    loss2 = p.U * A * (t2 - T_amb) + ek * A * (t2 ** 4 - T_amb ** 4)
    exchange = p.Us * As * (t2 - t1) + ek * A * (t2 ** 4 - t1 ** 4)
    Q = np.array([(loss1 - exchange) / p.alpha1, (loss2 + exchange) / p.alpha2])
    if np.any(Q < Q_MIN) or np.any(Q > Q_MAX):
        raise SaturationInfeasible(f"steady-state inputs {Q} outside [0, 100] %")
    return SteadyState(T_amb=float(T_amb), T_Hinf=T, Q_inf=Q)


def linearize(p: PlantParams, ss: SteadyState) -> LinearModel:
    """Continuous Jacobians at the steady state (deviation coordinates)."""
    mcp = p.heat_capacity
    ek, A, As = p.eps * p.k_B, p.A_surf, p.As_surf
    t1, t2 = ss.T_Hinf
    rad1 = 4 * ek * A * t1 ** 3
    rad2 = 4 * ek * A * t2 ** 3
    coup = p.Us * As
    Ac = np.array([
        [-(p.U * A + rad1 + coup + rad1) / mcp, (coup + rad2) / mcp, 0.0, 0.0],
        [(coup + rad1) / mcp, -(p.U * A + rad2 + coup + rad2) / mcp, 0.0, 0.0],
        [1 / p.tau_c1, 0.0, -1 / p.tau_c1, 0.0],
        [0.0, 1 / p.tau_c2, 0.0, -1 / p.tau_c2],
    ])
    Bc = np.zeros((4, 2))
    Bc[0, 0] = p.alpha1 / mcp
    Bc[1, 1] = p.alpha2 / mcp
    return LinearModel(Ac, Bc, output_matrix(), 0.0, "continuous")


def output_matrix() -> np.ndarray:
    return np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])


def discretize(m: LinearModel, Ts: float) -> LinearModel:
    """Zero-order-hold discretization via the augmented matrix exponential."""
    if m.mode != "continuous":
        raise ValueError("discretize expects a continuous model")
    n, k = m.n_x, m.n_u
    M = np.zeros((n + k, n + k))
    M[:n, :n] = m.A
    M[:n, n:] = m.B
    E = expm(M * Ts)
    return LinearModel(E[:n, :n], E[:n, n:], m.C.copy(), float(Ts), "discrete")


def discrete_model(p: PlantParams | None = None, T_amb: float = T_AMB_DEFAULT,
                   T_Hinf=T_SET_DEFAULT, Ts: float = 1.0) -> tuple[LinearModel, SteadyState]:
    p = PlantParams.lumped() if p is None else p
    ss = steady_state_inputs(p, T_amb, T_Hinf)
    return discretize(linearize(p, ss), Ts), ss


def measure(x, noise: MeasurementNoiseSpec, ss: SteadyState, k: int = 0,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Sensor deviations from the set point plus Gaussian noise.

    Without an explicit ``rng`` the draw is keyed on ``(noise.seed, k)``.
    """
    x = np.asarray(x, dtype=float)
    y = x[2:4] - ss.T_Hinf
    sig = np.asarray(noise.sigma_meas)
    if np.any(sig > 0):
        if rng is None:
            rng = np.random.default_rng((noise.seed, k))
        y = y + sig * rng.standard_normal(2)
    return y
