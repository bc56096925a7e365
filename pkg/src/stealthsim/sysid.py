"""Parameter identification from heater/sensor records."""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .errors import RecordFormatError
from .plant import PARAM_BOUNDS, T_AMB_DEFAULT, PlantParams, simulate_open_loop

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RECORD_COLUMNS = ("t", "Q1", "Q2", "TS1", "TS2")
FIT_NAMES = ("alpha1", "alpha2", "U", "Us", "tau_c1", "tau_c2")


@dataclass(frozen=True)
class ExperimentRecord:
    t: np.ndarray
    Q: np.ndarray  # (N, 2) applied inputs, %
    T_meas: np.ndarray  # (N, 2) sensor temperatures, K
    T_amb: float = T_AMB_DEFAULT

    def __post_init__(self):
        n = len(self.t)
        if self.Q.shape != (n, 2) or self.T_meas.shape != (n, 2):
            raise RecordFormatError("t, Q and T_meas must have matching lengths")
        if n < 2 or np.any(np.diff(self.t) <= 0):
            raise RecordFormatError("timestamps must be strictly increasing")
        if not np.allclose(np.diff(self.t), 1.0):
            raise RecordFormatError("records must be on a uniform 1 s grid")
        if np.any(self.T_meas <= 0):
            raise RecordFormatError("measured temperatures must be positive (kelvin)")

    def __len__(self):
        return len(self.t)

    def to_csv(self, path):
        path = Path(path)
        with open(path, "w") as fh:
            fh.write(",".join(RECORD_COLUMNS) + "\n")
            for row in np.column_stack([self.t, self.Q, self.T_meas]):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        path.with_suffix(".json").write_text(
            json.dumps({"schema_version": SCHEMA_VERSION, "T_amb": self.T_amb}, indent=2))

    @classmethod
    def from_csv(cls, path) -> "ExperimentRecord":
        """Read ``t,Q1,Q2,TS1,TS2``; T_amb comes from the JSON sidecar when present."""
        path = Path(path)
        with open(path) as fh:
            header = [h.strip() for h in fh.readline().strip().split(",")]
            for want, got in zip(RECORD_COLUMNS, header + [""] * len(RECORD_COLUMNS)):
                if want != got:
                    raise RecordFormatError(f"bad column {got!r} in header, expected {want!r}")
            if len(header) != len(RECORD_COLUMNS):
                raise RecordFormatError(f"unexpected extra column {header[len(RECORD_COLUMNS)]!r}")
            try:
                data = np.loadtxt(fh, delimiter=",", ndmin=2)
            except ValueError as e:
                raise RecordFormatError(f"non-numeric data in {path}: {e}") from e
        T_amb = T_AMB_DEFAULT
        side = path.with_suffix(".json")
        if side.exists():
            T_amb = float(json.loads(side.read_text())["T_amb"])
        return cls(data[:, 0], data[:, 1:3], data[:, 3:5], T_amb)


@dataclass
class FitResult:
    params: PlantParams
    objective_value: float
    iterations: int
    converged: bool
    evaluations: int = 0
    initial_objective: float = float("nan")

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "params": self.params.to_dict(),
                "objective_value": self.objective_value, "iterations": self.iterations,
                "converged": self.converged, "evaluations": self.evaluations,
                "initial_objective": self.initial_objective}


def fit_objective(rec: ExperimentRecord, p: PlantParams) -> float:
    """Sum over samples and sensors of ((T_meas - T_model) / T_meas)^2.

    The rollout starts from the first measurements with the heaters equal
    to their sensors. A blown-up rollout scores ``inf``.
    """
    T0 = rec.T_meas[0]
    x0 = np.array([T0[0], T0[1], T0[0], T0[1]])
    X = simulate_open_loop(p, x0, rec.Q, rec.T_amb)
    rel = (rec.T_meas - X[:, 2:4]) / rec.T_meas
    val = float(np.sum(rel * rel))
    return val if np.isfinite(val) else float("inf")


def _box(bounds):
    lo = np.array([bounds[k][0] for k in FIT_NAMES], dtype=float)
    hi = np.array([bounds[k][1] for k in FIT_NAMES], dtype=float)
    return lo, hi


def bound_midpoints(base: PlantParams | None = None, bounds: dict | None = None) -> PlantParams:
    lo, hi = _box(PARAM_BOUNDS if bounds is None else bounds)
    base = PlantParams.lumped() if base is None else base
    return dataclasses.replace(base, **dict(zip(FIT_NAMES, 0.5 * (lo + hi))))


def estimate_parameters(rec: ExperimentRecord, bounds: dict | None = None, init: PlantParams | None = None,
                        max_iter: int = 5000, xatol: float = 1e-6, restarts: int = 3,
                        on_eval=None) -> FitResult:
    """Nelder-Mead over the six fitted parameters in box-normalized coordinates.

    Candidates are clipped to the box before evaluation. Convergence means
    the simplex diameter fell below ``xatol`` (relative to the box widths).
    The search is restarted from the best point to escape simplex collapse.
    Constants (heat capacity, areas, emissivity) come from ``init``.
    """
    bounds = PARAM_BOUNDS if bounds is None else bounds
    init = bound_midpoints(bounds=bounds) if init is None else init
    if not init.within_bounds(bounds):
        raise ValueError("initial parameters lie outside the bounds")
    lo, hi = _box(bounds)
    span = hi - lo
    n_eval = 0

    def to_params(u):
        theta = lo + np.clip(u, 0.0, 1.0) * span
        return dataclasses.replace(init, **dict(zip(FIT_NAMES, theta)))

    def f(u):
        nonlocal n_eval
        n_eval += 1
        p = to_params(u)
        if on_eval is not None:
            on_eval(p)
        return fit_objective(rec, p)

    u = (np.array([getattr(init, k) for k in FIT_NAMES]) - lo) / span
    f0 = f(u)
    best_u, best_f, total_it, converged = u, f0, 0, False
    for _ in range(restarts + 1):
        budget = max_iter - total_it
        if budget <= 0:
            break
        res = minimize(f, best_u, method="Nelder-Mead",
                       options={"xatol": xatol, "fatol": np.inf, "maxiter": budget, "adaptive": True})
        total_it += int(res.nit)
        improved = res.fun < best_f
        if res.fun <= best_f:
            best_u, best_f = np.clip(res.x, 0.0, 1.0), float(res.fun)
        converged = bool(res.success)
        if converged and not improved:
            break
    log.info("sysid: objective %.3g -> %.3g in %d iterations", f0, best_f, total_it)
    return FitResult(to_params(best_u), best_f, total_it, converged, n_eval, f0)


def excitation_inputs(n: int = 1800, hold: int = 120, seed: int = 0) -> np.ndarray:
    """Piecewise-constant random heater powers, a new level every ``hold`` seconds."""
    rng = np.random.default_rng(seed)
    levels = rng.uniform(0.0, 80.0, size=(n // hold + 1, 2))
    return np.repeat(levels, hold, axis=0)[:n]


def synthetic_record(p: PlantParams, n: int = 1800, seed: int = 0, sigma_meas: float = 0.0,
                     T_amb: float = T_AMB_DEFAULT) -> ExperimentRecord:
    """Record generated by the model itself from ambient, optionally with sensor noise."""
    Q = excitation_inputs(n, seed=seed)
    X = simulate_open_loop(p, np.full(4, T_amb), Q, T_amb)
    T = X[:, 2:4]
    if sigma_meas > 0:
        T = T + sigma_meas * np.random.default_rng((seed, 1)).standard_normal(T.shape)
    return ExperimentRecord(np.arange(n, dtype=float), Q, T, T_amb)
