"""Closed-loop scenarios: plant, controller, detector and attacker on one clock."""
from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import plant as pl
from .attack import Attacker, AttackerKnowledge, AttackTimeline, ImpactProblem
from .detect import DetectorConfig, DetectorState, detector_step
from .errors import SchemaError
from .synthesis import CostWeights, ControllerRealization, ResidualStats, controller_step, design, \
    estimate_residual_stats

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRACE_COLUMNS = ("k", "TH1", "TH2", "TS1", "TS2", "y1", "y2", "yt1", "yt2", "u1raw", "u2raw",
                 "u1", "u2", "r1", "r2", "yD", "alarm", "stage", "ec", "eD", "er")
CALIBRATION_WINDOW = (900, 3600)
PRE_WINDOW = 300
END_WINDOW = 60


def _matrix(v, n):
    if v is None:
        return None
    a = np.asarray(v, dtype=float)
    return a * np.eye(n) if a.ndim == 0 else np.atleast_2d(a)


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one closed-loop run.

    ``timeline`` is ``None`` for a nominal run of ``duration`` steps.
    ``truth_scale`` multiplies fields of the true plant parameters (the
    operator and attacker keep the nominal model). ``weights`` entries may
    be scalars (times identity) or nested lists. ``Sigma_r`` fixes the
    nominal residual covariance instead of calibrating it.
    """

    name: str = "nominal"
    plant: str | dict = "lumped"
    truth_scale: dict | None = None
    T_amb: float = pl.T_AMB_DEFAULT
    T_Hinf: float = pl.T_SET_DEFAULT
    controller: str = "LQG"
    weights: dict | None = None
    detector: dict = field(default_factory=lambda: {"variant": "mewma", "J_D": 4.3918, "beta": 0.2})
    sigma_meas: tuple = (0.179, 0.167)
    ambient_drift_amp: float = 0.0
    ambient_drift_period: float = 3600.0
    seed: int = 0
    calibration_seed: int = 10_000
    warmup: int = 900
    timeline: dict | None = None
    duration: int | None = None
    Sigma_nu: float | None = None
    injection_start: int = 0
    linear_truth: bool = False
    process_noise: float = 0.0
    start_at_steady_state: bool = False
    Sigma_r: list | None = None
    attacker: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sigma_meas = tuple(np.broadcast_to(np.asarray(self.sigma_meas, dtype=float), (2,)).tolist())
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")
        tl = self.attack_timeline()
        if tl is not None and tl.k_I < self.warmup:
            raise ValueError(f"attack starts at {tl.k_I}, before the end of warmup ({self.warmup})")
        if self.n_steps() <= 0:
            raise ValueError("scenario has no steps")

    # -- derived objects -------------------------------------------------------

    def attack_timeline(self) -> AttackTimeline | None:
        return None if self.timeline is None else AttackTimeline(**self.timeline)

    def n_steps(self) -> int:
        if self.duration is not None:
            return int(self.duration)
        tl = self.attack_timeline()
        return 3600 if tl is None else tl.k_end

    def params(self) -> pl.PlantParams:
        if isinstance(self.plant, dict):
            return pl.PlantParams.from_dict(self.plant)
        if self.plant == "lumped":
            return pl.PlantParams.lumped()
        if self.plant == "identified":
            return pl.PlantParams.identified()
        return pl.PlantParams.load(self.plant)

    def true_params(self) -> pl.PlantParams:
        p = self.params()
        if not self.truth_scale:
            return p
        return dataclasses.replace(p, **{k: getattr(p, k) * float(s) for k, s in self.truth_scale.items()})

    def cost_weights(self) -> CostWeights:
        base = CostWeights.default(lqi=self.controller.upper() == "LQI")
        if not self.weights:
            return base
        sizes = {"Qx": 4, "Ru": 2, "Sigma_w": 4, "Sigma_v": 2, "Qint": 2}
        return dataclasses.replace(base, **{k: _matrix(v, sizes[k]) for k, v in self.weights.items()})

    def detector_config(self) -> DetectorConfig:
        d = dict(self.detector)
        d.setdefault("schema_version", 1)
        return DetectorConfig.from_dict(d)

    def noise(self) -> pl.MeasurementNoiseSpec:
        return pl.MeasurementNoiseSpec(self.sigma_meas, self.seed, self.ambient_drift_amp,
                                       self.ambient_drift_period)

    # -- serialization ------------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sigma_meas"] = list(self.sigma_meas)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        ver = d.pop("schema_version", SCHEMA_VERSION)
        if ver != SCHEMA_VERSION:
            raise SchemaError(f"scenario schema {ver} != {SCHEMA_VERSION}")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise SchemaError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


class TraceRecord(NamedTuple):
    k: int
    TH1: float
    TH2: float
    TS1: float
    TS2: float
    y1: float
    y2: float
    yt1: float
    yt2: float
    u1raw: float
    u2raw: float
    u1: float
    u2: float
    r1: float
    r2: float
    yD: float
    alarm: int
    stage: str
    ec: float
    eD: float
    er: float


@dataclass
class Trace:
    """Column-oriented run log. Temperatures in K; y, yt are deviations from the set point."""

    columns: dict

    def __len__(self):
        return len(self.columns["k"])

    def __getitem__(self, name):
        return self.columns[name]

    def records(self):
        for i in range(len(self)):
            yield TraceRecord(*(self.columns[c][i].item() if hasattr(self.columns[c][i], "item")
                                else self.columns[c][i] for c in TRACE_COLUMNS))

    @property
    def states(self) -> np.ndarray:
        return np.column_stack([self.columns[c] for c in ("TH1", "TH2", "TS1", "TS2")])

    def to_csv(self, path):
        cols = [self.columns[c] for c in TRACE_COLUMNS]
        with open(path, "w") as fh:
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            for row in zip(*cols):
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trace":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != TRACE_COLUMNS:
                raise SchemaError(f"unexpected trace header {header}")
            rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
        cols = {}
        for j, name in enumerate(TRACE_COLUMNS):
            vals = [r[j] for r in rows]
            if name == "stage":
                cols[name] = np.array(vals)
            elif name in ("k", "alarm"):
                cols[name] = np.array(vals, dtype=np.int64)
            else:
                cols[name] = np.array(vals, dtype=float)
        return cls(cols)


def _fmt(v) -> str:
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class Metrics:
    """Impact reporting: ``achieved_impact = sign * (end_mean - pre_mean)`` of the targeted state."""

    pre_mean: list
    end_mean: list
    achieved_impact: float
    target_index: int
    target_sign: float
    theoretical_impact: float
    alarms_per_stage: dict
    stealthy: bool
    flags: list = field(default_factory=list)

    @property
    def target_heater(self) -> int:
        return self.target_index % 2

    @property
    def relative_gap(self) -> float:
        if not self.theoretical_impact:
            return float("nan")
        return self.achieved_impact / self.theoretical_impact - 1.0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        d["target_heater"] = self.target_heater
        return d

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        d = dict(d)
        if d.pop("schema_version", None) != SCHEMA_VERSION:
            raise SchemaError("metrics schema mismatch")
        d.pop("target_heater", None)
        return cls(**d)


# -- assembly -----------------------------------------------------------------------

@dataclass
class Setup:
    params: pl.PlantParams
    truth: pl.PlantParams
    model: pl.LinearModel
    ss: pl.SteadyState
    controller: ControllerRealization
    weights: CostWeights
    detector: DetectorConfig


def build_setup(cfg: ScenarioConfig) -> Setup:
    p = cfg.params()
    model, ss = pl.discrete_model(p, cfg.T_amb, cfg.T_Hinf)
    weights = cfg.cost_weights()
    return Setup(p, cfg.true_params(), model, ss, design(model, cfg.controller, weights), weights,
                 cfg.detector_config())


def _calibration_key(cfg: ScenarioConfig) -> str:
    d = cfg.to_dict()
    for k in ("name", "seed", "timeline", "duration", "Sigma_nu", "injection_start", "attacker", "detector"):
        d.pop(k, None)
    return json.dumps(d, sort_keys=True)


@lru_cache(maxsize=32)
def _calibrate_cached(key: str) -> ResidualStats:
    d = json.loads(key)
    cfg = ScenarioConfig.from_dict(d).replace(seed=d["calibration_seed"], duration=CALIBRATION_WINDOW[1],
                                              timeline=None, Sigma_nu=None)
    setup = build_setup(cfg)
    ident = ResidualStats.from_covariance(np.eye(2))
    trace = _run(cfg, setup, ident, attacker=None)
    lo, hi = CALIBRATION_WINDOW
    r_bar = np.column_stack([trace["r1"], trace["r2"]])[lo:hi]
    return estimate_residual_stats(r_bar)


def calibrate_residuals(cfg: ScenarioConfig) -> ResidualStats:
    """Nominal residual statistics over steps [900, 3600) of an unattacked run.

    Uses ``cfg.calibration_seed`` rather than the scenario seed; results are
    cached per plant/noise/controller setting.
    """
    return _calibrate_cached(_calibration_key(cfg))


def operator_stats(cfg: ScenarioConfig, setup: Setup) -> tuple[ResidualStats, ResidualStats]:
    """(nominal stats, stats in force once noise injection is on)."""
    if cfg.Sigma_r is not None:
        stats = ResidualStats.from_covariance(np.asarray(cfg.Sigma_r, dtype=float))
    else:
        stats = calibrate_residuals(cfg)
    if cfg.Sigma_nu is None:
        return stats, stats
    c = setup.controller.with_injection(cfg.Sigma_nu)
    return stats, stats.with_injection(setup.model.C, c.Tc, c.Sigma_nu)


def attacker_knowledge(cfg: ScenarioConfig, setup: Setup, stats: ResidualStats) -> AttackerKnowledge:
    a = cfg.attacker
    Sw = _matrix(a.get("Sigma_w"), 4)
    Sv = _matrix(a.get("Sigma_v"), 2)
    ctrl = setup.controller
    nu = None
    if cfg.Sigma_nu is not None and a.get("knows_injection", True):
        nu = ctrl.with_injection(cfg.Sigma_nu).Sigma_nu
    return AttackerKnowledge(setup.model, ctrl, setup.detector, stats,
                             setup.weights.Sigma_w if Sw is None else Sw,
                             setup.weights.Sigma_v if Sv is None else Sv, nu)


def _run(cfg: ScenarioConfig, setup: Setup, stats: ResidualStats, attacker: Attacker | None,
         stats_injected: ResidualStats | None = None, diagnostics: bool = True) -> Trace:
    n = cfg.n_steps()
    noise = cfg.noise()
    ss = setup.ss
    rng_meas, rng_nu, rng_w = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3))
    ctrl_plain = setup.controller
    ctrl_inj = ctrl_plain.with_injection(cfg.Sigma_nu) if cfg.Sigma_nu is not None else None
    N_plain = stats.normalizer
    N_inj = (stats_injected or stats).normalizer
    det = setup.detector
    tl = cfg.attack_timeline()

    x = ss.state() if cfg.start_at_steady_state else np.full(4, cfg.T_amb)
    x_c = np.zeros(ctrl_plain.n_c)
    dstate = DetectorState.initial(det)
    A, B = setup.model.A, setup.model.B
    x_ss = ss.state()

    out = {c: np.full(n, np.nan) for c in TRACE_COLUMNS}
    out["k"] = np.arange(n, dtype=np.int64)
    out["alarm"] = np.zeros(n, dtype=np.int64)
    out["stage"] = np.array(["nominal"] * n, dtype=object) if tl is None else tl.tags(n).astype(object)

    for k in range(n):
        y = pl.measure(x, noise, ss, k, rng_meas)
        y_a = attacker.act(k, y) if attacker is not None else np.zeros(2)
        y_t = y + y_a
        injecting = ctrl_inj is not None and k >= cfg.injection_start
        c = ctrl_inj if injecting else ctrl_plain
        x_c, u, r_bar = controller_step(c, x_c, y_t, rng_nu)
        r = (N_inj if injecting else N_plain) @ r_bar
        dstate, yD, alarm = detector_step(det, dstate, r)
        u_raw = ss.Q_inf + u
        u_sat = pl.saturate(u_raw)

        out["TH1"][k], out["TH2"][k], out["TS1"][k], out["TS2"][k] = x
        out["y1"][k], out["y2"][k] = y
        out["yt1"][k], out["yt2"][k] = y_t
        out["u1raw"][k], out["u2raw"][k] = u_raw
        out["u1"][k], out["u2"][k] = u_sat
        out["r1"][k], out["r2"][k] = r
        out["yD"][k] = yD
        out["alarm"][k] = int(alarm)
        if diagnostics and attacker is not None and tl is not None and k >= tl.k_I:
            # diagnostics only; the attacker never reads these
            est = attacker.est_c
            if k + 1 < tl.k_end:
                out["ec"][k] = np.max(np.abs(x_c - est.x_c_hat))
            if attacker.est_D is not None and tl.k_II <= k < tl.k_III:
                xD = dstate.x_D if not alarm else np.full(det.dim, np.nan)
                out["eD"][k] = np.max(np.abs(xD - attacker.est_D.x_D_hat))
            if attacker.last_a is not None:
                out["er"][k] = np.max(np.abs(r - attacker.last_a))

        if cfg.linear_truth:
            w = cfg.process_noise * rng_w.standard_normal(4) if cfg.process_noise > 0 else 0.0
            x = x_ss + A @ (x - x_ss) + B @ (u_sat - ss.Q_inf) + w
        else:
            x = pl.step(setup.truth, x, u_sat, 1.0, cfg.T_amb, noise, float(k))
    out["stage"] = out["stage"].astype(str)
    return Trace(out)


def run_scenario(cfg: ScenarioConfig, problem: ImpactProblem | None = None,
                 diagnostics: bool = True) -> tuple[Trace, Metrics]:
    """Run one scenario; deterministic given ``cfg`` (including its seed).

    ``diagnostics=False`` skips the ground-truth error columns (ec, eD, er).
    """
    setup = build_setup(cfg)
    stats, stats_inj = operator_stats(cfg, setup)
    tl = cfg.attack_timeline()
    attacker = None
    if tl is not None:
        a = cfg.attacker
        know = attacker_knowledge(cfg, setup, stats_inj)
        rng_att = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        attacker = Attacker(know, tl, rng_att, mode=a.get("mode"), P0=float(a.get("P0", 10.0)),
                            margin=float(a.get("margin", 1e-4)), method=a.get("method", "exact"),
                            problem=problem)
        problem = attacker.problem
    trace = _run(cfg, setup, stats, attacker, stats_inj, diagnostics)
    return trace, compute_metrics(trace, problem, tl)


def _run_one(args):
    cfg, seed = args
    return run_scenario(cfg.replace(seed=seed))


def run_seeds(cfg: ScenarioConfig, seeds, workers: int | None = None):
    """Independent replicas of one scenario, in parallel processes when ``workers != 1``."""
    seeds = list(seeds)
    if workers == 1 or len(seeds) == 1:
        return [run_scenario(cfg.replace(seed=s)) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, [(cfg, s) for s in seeds]))


def compute_metrics(trace: Trace, problem: ImpactProblem | None = None,
                    timeline: AttackTimeline | None = None) -> Metrics:
    """Pre window: last 300 s before k_II. End window: last 60 s of Stage III."""
    n = len(trace)
    if n == 0:
        raise ValueError("empty trace")
    stages = trace["stage"]
    alarms = trace["alarm"].astype(bool)
    per_stage = {s: int(alarms[stages == s].sum()) for s in ("nominal", "I", "II", "III", "post")}
    X = trace.states
    flags = []
    idx = problem.target_index if problem is not None and problem.target_index >= 0 else 0
    sign = problem.target_sign if problem is not None else 1.0
    theo = problem.theoretical_impact if problem is not None else float("nan")

    if timeline is None:
        k2 = np.flatnonzero(stages == "II")
        k3 = np.flatnonzero(stages == "III")
        k_II = int(k2[0]) if len(k2) else (int(k3[0]) if len(k3) else None)
        k_end = int(k3[-1]) + 1 if len(k3) else None
    else:
        k_II, k_end = timeline.k_II, min(timeline.k_end, n)
    if k_II is None:
        flags.append("no attack stages")
        k_II = n
    if k_end is None or k_end <= k_II:
        flags.append("stage III missing")
    pre = X[max(0, k_II - PRE_WINDOW):k_II]
    pre_mean = pre.mean(axis=0) if len(pre) else np.full(4, np.nan)
    if k_end is not None and k_end > k_II:
        end_mean = X[max(k_II, k_end - END_WINDOW):k_end].mean(axis=0)
    else:
        end_mean = np.full(4, np.nan)
    achieved = float(sign * (end_mean[idx] - pre_mean[idx]))
    stealthy = not bool(alarms[k_II:].any())
    return Metrics(pre_mean.tolist(), end_mean.tolist(), achieved, int(idx), float(sign), float(theo),
                   per_stage, stealthy, flags)


# -- bundled scenarios -------------------------------------------------------------

SCENARIO_DIR = Path(__file__).parent / "scenarios"


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))


def load_scenario(name_or_path) -> ScenarioConfig:
    p = Path(name_or_path)
    if not p.exists():
        p = SCENARIO_DIR / f"{name_or_path}.json"
    return ScenarioConfig.load(p)


def impact_in_celsius(metrics: Metrics) -> tuple[float, float]:
    """Targeted-state means before and at the end of the attack, in degrees Celsius."""
    i = metrics.target_index
    return metrics.pre_mean[i] - 273.15, metrics.end_mean[i] - 273.15


__all__ = [
    "ScenarioConfig", "Trace", "TraceRecord", "Metrics", "Setup", "build_setup", "calibrate_residuals",
    "operator_stats", "attacker_knowledge", "run_scenario", "run_seeds", "compute_metrics",
    "bundled_scenarios", "load_scenario", "TRACE_COLUMNS", "impact_in_celsius",
]
