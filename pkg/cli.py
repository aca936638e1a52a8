#!/usr/bin/env python3
"""Config-driven runner: rates, Lindblad evolution, trajectory ensembles, steady states, sweeps.

    python cli.py run configs/bitflip_lifetime_sweep.json --out out
    python cli.py sweep configs/bitflip_sweep.json --threads 3
    python cli.py rates configs/bitflip_rates.json
    python cli.py hygiene --out out

Outputs go to <out>/<name>.csv, <name>.rates.txt, <name>.manifest.json and,
for sweeps, <name>.sweep.csv (rewritten after every completed point).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from functools import partial
from multiprocessing import Pool
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from tqdm import tqdm

import guardian
import storage
from analysis import DecayFit, fidelity, fit_decay, window_sensitivity
from config import (
    RATES_ONLY_MODELS,
    ExperimentConfig,
    config_hash,
    load_config,
    resolved,
    validate_parameters,
    with_overrides,
)
from dynamics import TimeSeries, evolve, steady_state
from errors import EXIT_CONFIG, ConfigError, RatchetError, exit_code_for
from hilbert import DensityMatrix, Operator, expectation
from models import ModelBundle, build_model
from ratchet import RateReport, bitflip_rates, dispersive_report, three_level_rates, vslq_rates
from trajectories import RamseyParams, SpectrumParams, calibrate_dephasing, dephasing_ensemble, ensemble_average

log = logging.getLogger(__name__)

__version__ = "0.3.0"

CSV_FLOAT = "%.17g"


@dataclass
class RunOutcome:
    series: TimeSeries | None = None
    frame: pd.DataFrame | None = None
    report: RateReport | None = None
    fit: DecayFit | None = None
    sections: dict[str, Any] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)


# --- model plumbing ---

def formula_rates(model: str, params: dict[str, Any]) -> RateReport | None:
    """Closed-form rates for a model, None where there are none."""
    if model == "three_level":
        return three_level_rates(params["Delta"], params["Omega"], params["nu"], params["GammaS"], params["GammaP"])
    if model in ("bitflip_ring", "bitflip_ring_reduced"):
        return bitflip_rates(params["J"], params["Omega"], params["GammaS"], params["GammaP"])
    if model == "vslq":
        return vslq_rates(params["W"], params["delta"], params["Omega"], params["GammaS"], params["GammaP"])
    if model == "dispersive":
        return dispersive_report(**params)
    return None


def observables_for(cfg: ExperimentConfig, bundle: ModelBundle) -> dict[str, Operator]:
    labels = list(cfg.observables) or list(bundle.labeled_ops)
    if cfg.fit is not None and cfg.fit.observable not in labels:
        labels.append(cfg.fit.observable)
    return bundle.observables(labels)


def initial_label(cfg: ExperimentConfig, bundle: ModelBundle) -> str:
    label = cfg.initial or bundle.initial
    if label is None:
        raise ConfigError(f"{bundle.name}: no initial state configured")
    bundle.state(label)
    return label


def noise_spectrum(cfg: ExperimentConfig, t: np.ndarray) -> SpectrumParams:
    noise = cfg.noise
    if noise.target_T2R is not None:
        ramsey = RamseyParams(alpha=noise.alpha, n_realizations=noise.n_realizations, seed_base=cfg.seed,
                              f_min=noise.f_min, f_max=noise.f_max, telegraph_fraction=noise.telegraph_fraction)
        amplitude = calibrate_dephasing(noise.target_T2R, ramsey)
        log.info("noise: amplitude %.6g calibrated to T2R=%g", amplitude, noise.target_T2R)
        return ramsey.spectrum(amplitude, noise.target_T2R)
    span, step = t[-1] - t[0], float(np.min(np.diff(t)))
    f_min = noise.f_min if noise.f_min is not None else 1.0 / (10.0 * span)
    f_max = noise.f_max if noise.f_max is not None else 10.0 / step
    return SpectrumParams(noise.amplitude, f_min, f_max, noise.alpha, telegraph_fraction=noise.telegraph_fraction)


def noise_operators(cfg: ExperimentConfig, bundle: ModelBundle) -> dict[str, Operator]:
    names = cfg.noise.modes or list(bundle.modes)
    if not names:
        raise ConfigError(f"{bundle.name}: no modes to dephase")
    ops = {}
    for name in names:
        if name not in bundle.modes:
            raise ConfigError(f"{bundle.name}: unknown mode {name!r}; known: {sorted(bundle.modes)}")
        a = bundle.modes[name]
        ops[name] = (a.dag() @ a).relabel(f"n_{name}")
    return ops


def _fit(cfg: ExperimentConfig, ts: TimeSeries, report: RateReport | None) -> DecayFit | None:
    if cfg.fit is None:
        return None
    return fit_decay(
        ts,
        cfg.fit.observable,
        cfg.fit.window,
        repair_rate=report.repair if report is not None else None,
        omega=cfg.parameters.get("Omega"),
        fixed_offset=cfg.fit.fixed_offset,
    )


# --- tasks ---

def task_rates(cfg: ExperimentConfig) -> RunOutcome:
    report = formula_rates(cfg.model, cfg.parameters)
    if report is None:
        raise ConfigError(f"model {cfg.model!r} has no closed-form rates")
    return RunOutcome(report=report)


def _evolve_series(cfg: ExperimentConfig, bundle: ModelBundle, t: np.ndarray, threads: int,
                   progress: bool) -> TimeSeries:
    obs = observables_for(cfg, bundle)
    rho0 = DensityMatrix.from_state(bundle.state(initial_label(cfg, bundle)))
    integ = cfg.integrator
    if cfg.noise is not None:
        if integ.method == "propagator":
            raise ConfigError("the propagator method cannot integrate a noisy (time-dependent) Hamiltonian")
        return dephasing_ensemble(
            bundle.system, rho0, t, noise_operators(cfg, bundle), noise_spectrum(cfg, t),
            cfg.noise.n_realizations, cfg.seed, obs,
            threads=threads, method=integ.method, rtol=integ.rtol, atol=integ.atol, max_step=integ.max_step,
            progress=progress,
        )
    return evolve(bundle.system, rho0, t, obs, method=integ.method, rtol=integ.rtol, atol=integ.atol,
                  max_step=integ.max_step)


def task_evolve(cfg: ExperimentConfig, progress: bool = False) -> RunOutcome:
    bundle = build_model(cfg.model, **cfg.parameters)
    report = formula_rates(cfg.model, cfg.parameters)
    ts = _evolve_series(cfg, bundle, cfg.time.grid(), cfg.threads, progress)
    return RunOutcome(series=ts, report=report, fit=_fit(cfg, ts, report))


def task_trajectories(cfg: ExperimentConfig, progress: bool = False) -> RunOutcome:
    bundle = build_model(cfg.model, **cfg.parameters)
    report = formula_rates(cfg.model, cfg.parameters)
    t = cfg.time.grid()
    if cfg.noise is not None:
        ts = _evolve_series(cfg, bundle, t, cfg.threads, progress)
    else:
        traj = cfg.trajectories
        ts = ensemble_average(
            bundle.system, bundle.state(initial_label(cfg, bundle)), t, traj.n_traj, cfg.seed,
            observables_for(cfg, bundle), threads=cfg.threads, keep_density=traj.keep_density,
            method=traj.method, rtol=cfg.integrator.rtol, atol=cfg.integrator.atol, progress=progress,
        )
    return RunOutcome(series=ts, report=report, fit=_fit(cfg, ts, report))


def task_steady(cfg: ExperimentConfig, progress: bool = False) -> RunOutcome:
    bundle = build_model(cfg.model, **cfg.parameters)
    rho0 = DensityMatrix.from_state(bundle.state(cfg.initial)) if cfg.initial else None
    ss = steady_state(bundle.system, rho0)
    obs = observables_for(cfg, bundle)
    values = {name: float(expectation(op, ss.rho).real) for name, op in obs.items()}
    sections: dict[str, Any] = {
        "steady": {"method": ss.method, "residual": ss.residual, "degenerate": ss.degenerate,
                   "multiplicity": ss.multiplicity, "purity": ss.rho.purity(), "initial": cfg.initial,
                   "values": values},
    }
    target = cfg.target or bundle.initial
    if target is not None:
        sections["steady"]["fidelity"] = {"target": target, "value": fidelity(ss.rho, bundle.state(target))}
    frame = pd.DataFrame({"observable": list(values), "value": list(values.values())})
    return RunOutcome(frame=frame, report=formula_rates(cfg.model, cfg.parameters), sections=sections)


# --- sweeps ---

def sweep_point(cfg: ExperimentConfig, idx: int) -> dict[str, Any]:
    """One row of a sweep; nested ensembles run single-threaded."""
    sweep = cfg.sweep
    value = sweep.values[idx]
    params = validate_parameters(cfg.model, {**cfg.parameters, sweep.parameter: value})
    report = formula_rates(cfg.model, params)
    row: dict[str, Any] = {"idx": idx, "parameter": sweep.parameter, "value": float(value)}
    if cfg.model not in RATES_ONLY_MODELS:
        point = cfg.model_copy(update={"parameters": params})
        bundle = build_model(cfg.model, **params)
        t_final = sweep.t_final[idx] if sweep.t_final is not None else None
        ts = _evolve_series(point, bundle, cfg.time.grid(t_final), 1, False)
        fit = _fit(point, ts, report)
        row.update({
            "rate": fit.rate if fit else math.nan,
            "half_width": fit.half_width if fit else math.nan,
            "residual_rms": fit.residual_rms if fit else math.nan,
            "monotone": bool(fit.monotone) if fit else True,
            "t_final": float(ts.times[-1]),
        })
        label = initial_label(point, bundle)
        final = ts.final_state
        row["fidelity"] = fidelity(final, bundle.state(label)) if final is not None else math.nan
    if report is not None:
        row.update({f"formula.{k}": float(v) for k, v in report.as_dict().items()})
    return row


def _loglog_slope(rows: list[dict]) -> float | None:
    xs = np.array([r["value"] for r in rows], dtype=float)
    ys = np.array([r.get("rate", math.nan) for r in rows], dtype=float)
    ok = (xs > 0) & (ys > 0) & np.isfinite(ys)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(xs[ok]), np.log(ys[ok]), 1)[0])


def task_sweep(cfg: ExperimentConfig, out_dir: Path, progress: bool = False) -> RunOutcome:
    db = storage.init_db(storage.ledger_path(out_dir))
    key = config_hash(cfg)
    done = storage.completed_points(db, key)
    values = cfg.sweep.values
    todo = [i for i in range(len(values)) if i not in done]
    if done:
        print(f"[sweep] resuming: {len(done)}/{len(values)} points already in the ledger")
    path = out_dir / f"{cfg.name}.sweep.csv"
    rows = dict(done)

    def flush():
        frame = pd.DataFrame([rows[i] for i in sorted(rows)])
        frame.to_csv(path, index=False, float_format=CSV_FLOAT)

    task = partial(sweep_point, cfg)
    if cfg.threads > 1 and len(todo) > 1:
        with Pool(min(cfg.threads, len(todo))) as pool:
            results = zip(todo, pool.imap(task, todo))
            _collect(cfg, db, key, results, rows, flush, progress)
    else:
        _collect(cfg, db, key, ((i, task(i)) for i in todo), rows, flush, progress)
    if not todo:
        flush()

    ordered = [rows[i] for i in range(len(values))]
    sections: dict[str, Any] = {"sweep": {"points": len(ordered), "resumed": len(done), "config_hash": key}}
    slope = _loglog_slope(ordered)
    if slope is not None:
        sections["sweep"]["loglog_slope_rate"] = slope
    return RunOutcome(sections=sections, outputs={"sweep_csv": str(path)})


def _collect(cfg, db, key, results, rows, flush, progress):
    sweep = cfg.sweep
    n = len(sweep.values)
    for idx, row in tqdm(results, total=n - len(rows), desc="sweep", disable=not progress):
        rows[idx] = row
        storage.save_point(db, key, idx, sweep.parameter, sweep.values[idx], row)
        flush()
        print(f"[sweep] {idx + 1}/{n} {sweep.parameter}={sweep.values[idx]:g}")


TASKS = {
    "evolve": task_evolve,
    "trajectories": task_trajectories,
    "steady": task_steady,
}


# --- outputs ---

def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items() if not isinstance(v, np.ndarray)}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def write_series(ts: TimeSeries, path: Path) -> None:
    ts.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT)


def write_rates(report: RateReport, path: Path) -> None:
    path.write_text(report.as_table(), encoding="utf-8")


def manifest_for(cfg: ExperimentConfig, outcome: RunOutcome) -> dict[str, Any]:
    manifest: dict[str, Any] = {
        "tool": "ratchet-sim",
        "version": __version__,
        "config": resolved(cfg),
        "config_hash": config_hash(cfg),
        "outputs": outcome.outputs,
    }
    if outcome.series is not None:
        manifest["diagnostics"] = outcome.series.metadata
    if outcome.report is not None:
        manifest["formula_rates"] = outcome.report.as_dict()
    if outcome.fit is not None:
        manifest["fit"] = outcome.fit.as_dict()
    manifest.update(outcome.sections)
    return _jsonable(manifest)


def write_outputs(cfg: ExperimentConfig, outcome: RunOutcome, out_dir: Path) -> dict[str, Any]:
    out_dir.mkdir(parents=True, exist_ok=True)
    if outcome.series is not None:
        path = out_dir / f"{cfg.name}.csv"
        write_series(outcome.series, path)
        outcome.outputs["csv"] = str(path)
        print(f"OK: csv -> {path}")
    elif outcome.frame is not None:
        path = out_dir / f"{cfg.name}.csv"
        outcome.frame.to_csv(path, index=False, float_format=CSV_FLOAT)
        outcome.outputs["csv"] = str(path)
        print(f"OK: csv -> {path}")
    if outcome.report is not None:
        path = out_dir / f"{cfg.name}.rates.txt"
        write_rates(outcome.report, path)
        outcome.outputs["rates"] = str(path)
        print(f"OK: rates -> {path}")
    if cfg.fit is not None and cfg.fit.window_starts and outcome.series is not None:
        path = out_dir / f"{cfg.name}.window.csv"
        frame = window_sensitivity(outcome.series, cfg.fit.observable, cfg.fit.window_starts,
                                   fixed_offset=cfg.fit.fixed_offset)
        frame.to_csv(path, index=False, float_format=CSV_FLOAT)
        outcome.outputs["window_sensitivity"] = str(path)
    path = out_dir / f"{cfg.name}.manifest.json"
    manifest = manifest_for(cfg, outcome)
    manifest["outputs"]["manifest"] = str(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"OK: manifest -> {path}")
    if outcome.fit is not None:
        f = outcome.fit
        print(f"OK: fit {f.observable} rate={f.rate:.6g} +- {f.half_width:.2g} on [{f.fit_window[0]:g}, {f.fit_window[1]:g}]")
        if not f.monotone:
            print(f"WARN: {f.observable} not monotone inside the fit window")
    return manifest


def execute(cfg: ExperimentConfig, progress: bool = False) -> dict[str, Any]:
    """Run the configured task and write its outputs; returns the manifest."""
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.task == "rates":
        outcome = task_rates(cfg)
    elif cfg.task == "sweep":
        outcome = task_sweep(cfg, out_dir, progress)
    else:
        outcome = TASKS[cfg.task](cfg, progress)
    manifest = write_outputs(cfg, outcome, out_dir)
    db = storage.init_db(storage.ledger_path(out_dir))
    storage.record_run(db, cfg.name, cfg.task, manifest["config_hash"], "ok", manifest)
    return manifest


# --- commands ---

def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    return with_overrides(cfg, seed=args.seed, threads=args.threads, out=args.out)


def cmd_run(args) -> int:
    execute(_load(args), progress=args.progress)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if cfg.task != "sweep" or cfg.sweep is None:
        raise ConfigError(f"{args.config}: task must be 'sweep' with a sweep section")
    execute(cfg, progress=args.progress)
    return 0


def cmd_rates(args) -> int:
    cfg = _load(args)
    report = task_rates(cfg).report
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{cfg.name}.rates.txt"
    write_rates(report, path)
    sys.stdout.write(report.as_table())
    print(f"OK: rates -> {path}")
    return 0


def cmd_hygiene(args) -> int:
    status, _ = guardian.guard(args.out or "out", with_noise=args.with_noise)
    return status


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker processes (overrides config)")
    common.add_argument("--seed", type=int, default=None, help="base seed (overrides config)")
    common.add_argument("--out", default=None, help="output directory (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("--progress", action="store_true", help="progress bars")

    p = argparse.ArgumentParser(prog="ratchet-sim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", parents=[common], help="Run the task of a config file")
    p_run.add_argument("config")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", parents=[common], help="Run a sweep config (resumes from the ledger)")
    p_sweep.add_argument("config")
    p_sweep.set_defaults(func=cmd_sweep)

    p_rates = sub.add_parser("rates", parents=[common], help="Closed-form rate table for a config")
    p_rates.add_argument("config")
    p_rates.set_defaults(func=cmd_rates)

    p_hyg = sub.add_parser("hygiene", parents=[common], help="Lindblad hygiene checks with markdown report")
    p_hyg.add_argument("--with-noise", action="store_true", help="add a short dephasing-noise ensemble")
    p_hyg.set_defaults(func=cmd_hygiene)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="[%(name)s] %(message)s", force=True)
    if args.threads is not None and args.threads < 1:
        print("ERROR: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (RatchetError, OSError, ValueError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    raise SystemExit(main())
