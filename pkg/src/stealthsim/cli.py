"""Command-line entry point: identify, design, tune, plan, run, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import plant as pl
from .attack import AttackerKnowledge, build_Txa, solve_worst_case
from .detect import DetectorConfig, tune_threshold
from .errors import BracketNotFound, NoSolutionError, RecordFormatError, SchemaError, StealthSimError
from .sim import (ScenarioConfig, Trace, build_setup, calibrate_residuals, load_scenario, operator_stats,
                  run_scenario, run_seeds)
from .synthesis import ControllerRealization, ResidualStats
from .sysid import ExperimentRecord, estimate_parameters

log = logging.getLogger("stealthsim")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_IO, EXIT_NOCONV, EXIT_SCHEMA = 0, 1, 2, 3


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2))


def _read_json(path) -> dict:
    d = json.loads(Path(path).read_text())
    if d.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{path}: schema_version {d.get('schema_version')} != {SCHEMA_VERSION}")
    return d


def _scenario(args) -> ScenarioConfig:
    cfg = load_scenario(args.scenario) if getattr(args, "scenario", None) else ScenarioConfig()
    if getattr(args, "plant", None):
        cfg = cfg.replace(plant=str(args.plant))
    if getattr(args, "controller", None):
        cfg = cfg.replace(controller=args.controller)
    if getattr(args, "inject_noise", None) is not None:
        cfg = cfg.replace(Sigma_nu=args.inject_noise)
    if getattr(args, "linear_truth", False):
        cfg = cfg.replace(linear_truth=True)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "detector", None):
        arl = args.arl if args.arl is not None else 20.0
        beta = float(cfg.detector.get("beta", 0.2)) if args.detector == "mewma" else 1.0
        beta = 0.2 if args.detector == "mewma" and beta >= 1.0 else beta
        det = tune_threshold(args.detector, arl, beta=beta)
        cfg = cfg.replace(detector={"variant": det.variant, "J_D": det.J_D, "beta": det.beta})
    return cfg


# -- subcommands --------------------------------------------------------------------

def cmd_identify(args) -> int:
    rec = ExperimentRecord.from_csv(args.csv)
    init = pl.PlantParams.load(args.init) if args.init else None
    bounds = None
    if args.bounds:
        bounds = {k: tuple(v) for k, v in json.loads(Path(args.bounds).read_text()).items()}
    res = estimate_parameters(rec, bounds=bounds, init=init, max_iter=args.max_iter)
    out = res.params.to_dict()
    out.update(schema_version=SCHEMA_VERSION, objective_value=res.objective_value,
               iterations=res.iterations, converged=res.converged)
    _write_json(args.out, out)
    print(f"objective {res.objective_value:.6g} after {res.iterations} iterations "
          f"({'converged' if res.converged else 'NOT converged'})")
    return EXIT_OK if res.converged else EXIT_NOCONV


def design_artifact(cfg: ScenarioConfig) -> dict:
    setup = build_setup(cfg)
    stats, stats_inj = operator_stats(cfg, setup)
    ctrl = setup.controller if cfg.Sigma_nu is None else setup.controller.with_injection(cfg.Sigma_nu)
    return {
        "schema_version": SCHEMA_VERSION,
        "plant": setup.params.to_dict(),
        "T_amb": cfg.T_amb,
        "T_Hinf": cfg.T_Hinf,
        "Q_inf": setup.ss.Q_inf.tolist(),
        "Sigma_w": setup.weights.Sigma_w.tolist(),
        "Sigma_v": setup.weights.Sigma_v.tolist(),
        "controller": ctrl.to_dict(),
        "residual_stats": stats_inj.to_dict(),
        "nominal_residual_stats": stats.to_dict(),
        "spectral_radius": setup.controller.spectral_radius(),
    }


def cmd_design(args) -> int:
    art = design_artifact(_scenario(args))
    _write_json(args.out, art)
    print(f"{art['controller']['kind']}: rho(Ac) = {art['spectral_radius']:.6f}")
    return EXIT_OK


def cmd_tune(args) -> int:
    beta = args.beta if args.detector == "mewma" else 1.0
    det = tune_threshold(args.detector, args.arl, beta=beta, seed=args.seed or 0) if args.detector == "mewma" \
        else tune_threshold(args.detector, args.arl)
    det.save(args.out)
    print(f"{det.variant}: J_D = {det.J_D:.4f}")
    return EXIT_OK


def knowledge_from_design(design: dict, det: DetectorConfig) -> AttackerKnowledge:
    p = pl.PlantParams.from_dict(design["plant"])
    model, _ = pl.discrete_model(p, design["T_amb"], design["T_Hinf"])
    ctrl = ControllerRealization.from_dict(design["controller"])
    stats = ResidualStats.from_dict(design["residual_stats"])
    return AttackerKnowledge(model, ctrl, det, stats, np.array(design["Sigma_w"]),
                             np.array(design["Sigma_v"]), ctrl.Sigma_nu)


def cmd_plan(args) -> int:
    design = _read_json(args.design)
    det = DetectorConfig.load(args.detector_file)
    know = knowledge_from_design(design, det)
    prob = solve_worst_case(build_Txa(know, args.horizon), det, method=args.method, margin=args.margin,
                            seed=args.seed or 0)
    summary = prob.summary()
    summary["a_star"] = prob.a_star.tolist()
    _write_json(args.out, summary)
    if args.trajectory_csv:
        prob.export_csv(args.trajectory_csv)
    print(f"theoretical impact {prob.theoretical_impact:.4f} K on state {prob.target_index} "
          f"(sign {prob.target_sign:+.0f})")
    return EXIT_NOCONV if prob.suboptimal else EXIT_OK


def _save_run(out: Path, cfg: ScenarioConfig, trace: Trace, metrics):
    stem = out / f"{cfg.name}_s{cfg.seed}"
    trace.to_csv(stem.with_suffix(".csv"))
    _write_json(stem.with_suffix(".json"), {"schema_version": SCHEMA_VERSION, "scenario": cfg.to_dict(),
                                            "metrics": metrics.to_dict()})


def cmd_run(args) -> int:
    cfg = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.seeds and args.seeds > 1:
        seeds = [cfg.seed + i for i in range(args.seeds)]
        results = run_seeds(cfg, seeds, workers=args.workers)
    else:
        seeds = [cfg.seed]
        results = [run_scenario(cfg)]
    for s, (trace, m) in zip(seeds, results):
        _save_run(out, cfg.replace(seed=s), trace, m)
        print(f"{cfg.name} seed {s}: impact {m.achieved_impact:.3f} K "
              f"(theory {m.theoretical_impact:.3f}), alarms {m.alarms_per_stage}, "
              f"stealthy={m.stealthy}")
    return EXIT_OK


FIGURES = {
    # figure id: (columns, window selector)
    "stage1_error": ("k,ec", lambda tl: (tl.k_I, tl.k_II)),
    "stage2_detector": ("k,eD,yD,alarm", lambda tl: (max(0, tl.k_II - 100), tl.k_III)),
    "trajectories": ("k,TS1_C,TS2_C,u1,u2,yD,alarm", lambda tl: (max(0, tl.k_II - 300), tl.k_end)),
    "injection": ("k,TS1_C,TS2_C,u1,u2,ec,yD", lambda tl: (max(0, tl.k_I - 300), tl.k_end)),
}


def _figure_ids(cfg: ScenarioConfig) -> dict:
    """Map extract kinds to figure numbers of the original experiment series."""
    lqi = cfg.controller.upper() == "LQI"
    mewma = cfg.detector.get("variant") == "mewma"
    ids = {"stage1_error": 3}
    if cfg.Sigma_nu is not None:
        return {"injection": 9}
    if mewma:
        ids["stage2_detector"] = 5 if lqi else 4
        ids["trajectories"] = 7 if lqi else 6
    else:
        ids["trajectories"] = 8
    return ids


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    out = Path(args.out) if args.out else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    files = sorted(run_dir.glob("*.json"))
    if not files:
        raise FileNotFoundError(f"no run artifacts in {run_dir}")
    rows = []
    for f in files:
        d = _read_json(f)
        cfg = ScenarioConfig.from_dict(d["scenario"])
        m = d["metrics"]
        i = m["target_index"]
        rows.append((f.stem, m["pre_mean"][i] - 273.15, m["end_mean"][i] - 273.15, m["achieved_impact"],
                     m["theoretical_impact"], sum(m["alarms_per_stage"].get(s, 0) for s in ("II", "III")),
                     m["stealthy"]))
        trace = Trace.from_csv(f.with_suffix(".csv"))
        tl = cfg.attack_timeline()
        if tl is None:
            continue
        for kind, fig in _figure_ids(cfg).items():
            cols, window = FIGURES[kind]
            lo, hi = window(tl)
            hi = min(hi, len(trace))
            data = []
            for c in cols.split(","):
                if c.endswith("_C"):
                    data.append(trace[c[:-2]][lo:hi] - 273.15)
                else:
                    data.append(trace[c][lo:hi])
            np.savetxt(out / f"fig{fig}_{kind}_{f.stem}.csv", np.column_stack(data), delimiter=",",
                       header=cols, comments="", fmt="%.10g")
    header = f"{'run':<28}{'pre [C]':>9}{'end [C]':>9}{'impact':>9}{'theory':>9}{'alarms':>8}  stealthy"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r[0]:<28}{r[1]:>9.2f}{r[2]:>9.2f}{r[3]:>9.3f}{r[4]:>9.3f}{r[5]:>8d}  {r[6]}")
    table = "\n".join(lines)
    (out / "summary.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stealthsim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("identify", help="fit plant parameters to a record")
    p.add_argument("csv")
    p.add_argument("--out", required=True)
    p.add_argument("--init")
    p.add_argument("--bounds", help="JSON mapping parameter -> [lo, hi]")
    p.add_argument("--max-iter", type=int, default=5000)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("design", help="LQG/LQI synthesis and residual calibration")
    p.add_argument("--scenario")
    p.add_argument("--plant")
    p.add_argument("--controller", choices=["LQG", "LQI"])
    p.add_argument("--inject-noise", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("tune", help="detector threshold for a target run length")
    p.add_argument("--detector", choices=["chi2", "mewma"], required=True)
    p.add_argument("--arl", type=float, default=20.0)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("plan", help="worst-case Stage III trajectory")
    p.add_argument("--design", required=True)
    p.add_argument("--detector", dest="detector_file", required=True)
    p.add_argument("--horizon", type=int, default=1800)
    p.add_argument("--method", choices=["exact", "projected"], default="exact")
    p.add_argument("--margin", type=float, default=1e-4)
    p.add_argument("--seed", type=int)
    p.add_argument("--trajectory-csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="simulate a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--linear-truth", action="store_true")
    p.add_argument("--detector", choices=["chi2", "mewma"])
    p.add_argument("--arl", type=float)
    p.add_argument("--inject-noise", type=float)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summary table and per-figure CSV extracts")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SchemaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except (NoSolutionError, BracketNotFound) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NOCONV
    except (OSError, RecordFormatError, json.JSONDecodeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except StealthSimError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
