"""Chi-squared and MEWMA anomaly detectors with threshold tuning."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2

from .errors import BracketNotFound, SchemaError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
VARIANTS = ("chi2", "mewma")


@dataclass(frozen=True)
class DetectorConfig:
    variant: str
    J_D: float
    beta: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.J_D > 0:
            raise ValueError(f"J_D must be positive, got {self.J_D}")

    @property
    def stateful(self) -> bool:
        return self.variant == "mewma"

    @property
    def state_radius(self) -> float:
        """Largest filtered-state norm compatible with no alarm."""
        b = self.beta if self.stateful else 1.0
        return float(np.sqrt(b * self.J_D / (2.0 - b)))

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "variant": self.variant, "J_D": self.J_D,
                "beta": self.beta, "dim": self.dim}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise SchemaError(f"detector schema {d.get('schema_version')} != {SCHEMA_VERSION}")
        return cls(d["variant"], float(d["J_D"]), float(d.get("beta", 1.0)), int(d.get("dim", 2)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "DetectorConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class DetectorState:
    x_D: np.ndarray | None = None
    y_D: float = 0.0
    alarm_count: int = 0
    steps_since_alarm: int = 0

    @classmethod
    def initial(cls, cfg: DetectorConfig) -> "DetectorState":
        return cls(x_D=np.zeros(cfg.dim) if cfg.stateful else None)


def detector_step(cfg: DetectorConfig, state: DetectorState, r):
    """Feed one normalized residual; returns ``(state', y_D, alarm)``.

    The alarm test is strict (``y_D > J_D``) and an alarm resets the MEWMA
    state to zero.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (cfg.dim,):
        raise ValueError(f"residual must have shape ({cfg.dim},), got {r.shape}")
    if cfg.stateful:
        b = cfg.beta
        x = b * r + (1.0 - b) * state.x_D
        y = (2.0 - b) / b * float(x @ x)
    else:
        x = None
        y = float(r @ r)
    alarm = y > cfg.J_D
    if alarm and cfg.stateful:
        x = np.zeros(cfg.dim)
    new = DetectorState(
        x_D=x,
        y_D=y,
        alarm_count=state.alarm_count + int(alarm),
        steps_since_alarm=0 if alarm else state.steps_since_alarm + 1,
    )
    return new, y, alarm


def tune_chi2_threshold(arl: float, dim: int = 2) -> float:
    """Threshold giving a false-alarm probability of 1/arl per step for i.i.d. N(0, I)."""
    if arl <= 1:
        raise ValueError("arl must exceed 1")
    if dim == 2:
        return float(2.0 * np.log(arl))
    return float(chi2.ppf(1.0 - 1.0 / arl, dim))


@dataclass
class ArlEstimate:
    arl: float
    batch_arls: np.ndarray = field(repr=False)
    alarms: int = 0
    steps: int = 0

    @property
    def stderr(self) -> float:
        return float(np.std(self.batch_arls, ddof=1) / np.sqrt(len(self.batch_arls)))


def simulate_arl(J_D: float, beta: float = 1.0, dim: int = 2, n_steps: int = 1_000_000,
                 n_batches: int = 20, seed: int = 0, chains_per_batch: int = 100) -> ArlEstimate:
    """Monte Carlo run length of the MEWMA recursion (with reset) under i.i.d. N(0, I).

    Parallel chains restart from zero after each alarm, so every alarm closes
    an independent run and ``steps / alarms`` estimates the mean run length.
    Each batch uses its own seed stream.
    """
    n_chains = n_batches * chains_per_batch
    horizon = max(1, n_steps // n_chains)
    rng = np.random.default_rng(seed)
    x = np.zeros((n_chains, dim))
    alarms = np.zeros(n_chains, dtype=np.int64)
    gain = (2.0 - beta) / beta
    for _ in range(horizon):
        x *= 1.0 - beta
        x += beta * rng.standard_normal((n_chains, dim))
        hit = gain * np.einsum("ij,ij->i", x, x) > J_D
        alarms += hit
        x[hit] = 0.0
    per_batch = alarms.reshape(n_batches, chains_per_batch).sum(axis=1)
    batch_steps = horizon * chains_per_batch
    with np.errstate(divide="ignore"):
        batch_arls = batch_steps / per_batch.astype(float)
    total = int(alarms.sum())
    arl = np.inf if total == 0 else horizon * n_chains / total
    return ArlEstimate(arl=float(arl), batch_arls=batch_arls, alarms=total, steps=horizon * n_chains)


def tune_mewma_threshold(arl: float, beta: float, dim: int = 2, tol: float = 0.02,
                         n_steps: int = 1_000_000, seed: int = 0, max_iter: int = 60) -> float:
    """Bisection on the threshold with Monte Carlo run lengths (common random numbers).

    Stops once the run lengths at the bracket ends differ by less than
    ``tol * arl`` and interpolates linearly inside the bracket.
    """
    if arl <= 1:
        raise ValueError("arl must exceed 1")
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")

    def run_length(J):
        return simulate_arl(J, beta, dim, n_steps=n_steps, seed=seed).arl

    lo, arl_lo = 0.0, 1.0
    hi = tune_chi2_threshold(arl, dim)
    arl_hi = run_length(hi)
    for _ in range(30):
        if arl_hi > arl:
            break
        lo, arl_lo = hi, arl_hi
        hi *= 2.0
        arl_hi = run_length(hi)
    else:
        raise BracketNotFound(f"could not bracket ARL {arl} (beta={beta})")

    for _ in range(max_iter):
        if arl_hi - arl_lo <= tol * arl:
            break
        mid = 0.5 * (lo + hi)
        arl_mid = run_length(mid)
        if arl_mid > arl:
            hi, arl_hi = mid, arl_mid
        else:
            lo, arl_lo = mid, arl_mid
    if not np.isfinite(arl_hi) or arl_hi == arl_lo:
        return float(0.5 * (lo + hi))
    w = (arl - arl_lo) / (arl_hi - arl_lo)
    J = lo + w * (hi - lo)
    log.debug("mewma threshold %.4f (bracket %.4f-%.4f, ARL %.2f-%.2f)", J, lo, hi, arl_lo, arl_hi)
    return float(J)


def tune_threshold(variant: str, arl: float, beta: float = 0.2, dim: int = 2, **kw) -> DetectorConfig:
    if variant == "chi2":
        return DetectorConfig("chi2", tune_chi2_threshold(arl, dim), 1.0, dim)
    return DetectorConfig("mewma", tune_mewma_threshold(arl, beta, dim, **kw), beta, dim)


def replay(cfg: DetectorConfig, residuals, state: DetectorState | None = None):
    """Run a residual sequence through the detector; returns ``(y_D, alarms, final_state)``."""
    state = DetectorState.initial(cfg) if state is None else state
    res = np.asarray(residuals, dtype=float)
    out = np.empty(len(res))
    alarms = np.zeros(len(res), dtype=bool)
    for i, r in enumerate(res):
        state, out[i], alarms[i] = detector_step(cfg, state, r)
    return out, alarms, state


def write_alarm_log(path, y_D, alarms, k0: int = 0):
    with open(path, "w") as fh:
        fh.write("k,y_D,alarm\n")
        for i, (y, a) in enumerate(zip(y_D, alarms)):
            fh.write(f"{k0 + i},{y:.10g},{int(a)}\n")


__all__ = [
    "DetectorConfig", "DetectorState", "detector_step", "tune_chi2_threshold",
    "tune_mewma_threshold", "simulate_arl", "tune_threshold", "replay", "write_alarm_log",
    "ArlEstimate",
]
