#!/usr/bin/env python3
"""
Lindblad hygiene guardian

Checks, per model of the library at small default parameters:
- evolution keeps trace, Hermiticity and positivity inside tolerance
- the steady-state residual is small
- labeled states/operators live on the system space, H is Hermitian
- optional: a short dephasing-noise ensemble on the VSLQ

Exit policy:
- OK/WARN => 0
- any FAIL => 3 (numerical)
"""
from __future__ import annotations

import argparse
import logging
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import List

import numpy as np

from dynamics import STEADY_TOL, TRACE_DRIFT_TOL, evolve, steady_state
from errors import EXIT_NUMERICAL, RatchetError
from hilbert import HERMITIAN_TOL, POSITIVITY_TOL, DensityMatrix, hermiticity_error
from models import ModelBundle, build_model
from trajectories import SpectrumParams, dephasing_ensemble

log = logging.getLogger(__name__)

HERMITICITY_DRIFT_TOL = 1e-9
BUNDLE_HERMITIAN_TOL = 1e-12
STEADY_MAX_DIM = 40

HYGIENE_MODELS: dict[str, dict] = {
    "three_level": dict(Delta=20.0, Omega=1.0, nu=0.0, GammaP=0.01, GammaS=2.0),
    "bitflip_ring": dict(J=1.0, Omega=0.05, GammaP=1e-3, GammaS=0.1),
    "bitflip_ring_reduced": dict(J=1.0, Omega=0.05, GammaP=1e-3, GammaS=0.1),
    "vslq": dict(W=1.0, delta=12.0, Omega=0.1, GammaP=1e-3, GammaS=0.2),
    "cat_two_photon": dict(Omega2=1.0, GammaP=0.01, Gamma2=0.5),
    "cat_states": dict(alpha=2.0),
}


@dataclass
class CheckResult:
    ok: bool
    severity: str  # OK | WARN | FAIL
    title: str
    details: str = ""


def _utc_ts() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%d_%H%M%S_%f")


def check_evolution(name: str, bundle: ModelBundle, t_final: float = 20.0, n_points: int = 21) -> CheckResult:
    title = f"evolution hygiene: {name}"
    if bundle.initial is None:
        return CheckResult(ok=True, severity="OK", title=title, details="no initial state (skip)")
    rho0 = DensityMatrix.from_state(bundle.state(bundle.initial))
    try:
        ts = evolve(bundle.system, rho0, np.linspace(0.0, t_final, n_points))
    except RatchetError as e:
        return CheckResult(ok=False, severity="FAIL", title=title, details=f"{type(e).__name__}: {e}")
    meta = ts.metadata
    problems = []
    if meta["max_trace_drift"] > TRACE_DRIFT_TOL:
        problems.append(f"trace drift {meta['max_trace_drift']:.3e} > {TRACE_DRIFT_TOL:g}")
    if meta["max_hermiticity_drift"] > HERMITICITY_DRIFT_TOL:
        problems.append(f"hermiticity drift {meta['max_hermiticity_drift']:.3e} > {HERMITICITY_DRIFT_TOL:g}")
    if meta["min_eigenvalue"] < -POSITIVITY_TOL:
        problems.append(f"min eigenvalue {meta['min_eigenvalue']:.3e} < {-POSITIVITY_TOL:g}")
    details = (f"dim={bundle.system.dim} window=[0, {t_final:g}] trace_drift={meta['max_trace_drift']:.2e} "
               f"herm_drift={meta['max_hermiticity_drift']:.2e} min_eig={meta['min_eigenvalue']:.2e}")
    if problems:
        return CheckResult(ok=False, severity="FAIL", title=title, details=details + "\n" + "\n".join(problems))
    return CheckResult(ok=True, severity="OK", title=title, details=details)


def check_steady(name: str, bundle: ModelBundle) -> CheckResult:
    title = f"steady state: {name}"
    if not any(ch.rate > 0 for ch in bundle.system.collapse_ops):
        return CheckResult(ok=True, severity="OK", title=title, details="no dissipation (skip)")
    if bundle.system.dim > STEADY_MAX_DIM:
        return CheckResult(ok=True, severity="OK", title=title, details=f"dim={bundle.system.dim} > {STEADY_MAX_DIM} (skip)")
    try:
        ss = steady_state(bundle.system)
    except RatchetError as e:
        return CheckResult(ok=False, severity="WARN", title=title, details=f"{type(e).__name__}: {e}")
    details = f"method={ss.method} residual={ss.residual:.2e} degenerate={ss.degenerate}"
    if ss.residual > STEADY_TOL:
        return CheckResult(ok=False, severity="WARN", title=title, details=details)
    return CheckResult(ok=True, severity="OK", title=title, details=details)


def check_bundle(name: str, bundle: ModelBundle) -> CheckResult:
    title = f"bundle consistency: {name}"
    space = bundle.system.space
    problems = []
    for label, psi in bundle.labeled_states.items():
        if psi.space != space:
            problems.append(f"state {label} on {psi.space}")
        elif abs(np.linalg.norm(psi.amplitudes) - 1.0) > 1e-12:
            problems.append(f"state {label} not normalized")
    for label, op in bundle.labeled_ops.items():
        if op.space != space:
            problems.append(f"operator {label} on {op.space}")
    herr = hermiticity_error(bundle.system.hamiltonian_at(0.0))
    if herr > BUNDLE_HERMITIAN_TOL:
        problems.append(f"hamiltonian hermiticity error {herr:.2e}")
    if problems:
        return CheckResult(ok=False, severity="FAIL", title=title, details="\n".join(problems))
    return CheckResult(ok=True, severity="OK", title=title,
                       details=f"{len(bundle.labeled_states)} states, {len(bundle.labeled_ops)} operators, "
                               f"H hermiticity error {herr:.1e}")


def check_noise(n_realizations: int = 4, t_final: float = 2.0) -> CheckResult:
    title = "dephasing ensemble: vslq"
    bundle = build_model("vslq", **HYGIENE_MODELS["vslq"])
    noise_ops = [(a.dag() @ a).relabel(f"n_{k}") for k, a in bundle.modes.items()]
    spectrum = SpectrumParams(amplitude=0.05, f_min=0.01, f_max=5.0)
    rho0 = DensityMatrix.from_state(bundle.state("0_L"))
    try:
        ts = dephasing_ensemble(bundle.system, rho0, np.linspace(0.0, t_final, 11), noise_ops, spectrum,
                                n_realizations, 0, bundle.observables(["X_L"]))
    except RatchetError as e:
        return CheckResult(ok=False, severity="FAIL", title=title, details=f"{type(e).__name__}: {e}")
    drift = ts.metadata["max_trace_drift"]
    details = f"{n_realizations} realizations, trace_drift={drift:.2e}, min_eig={ts.metadata['min_eigenvalue']:.2e}"
    if drift > TRACE_DRIFT_TOL:
        return CheckResult(ok=False, severity="FAIL", title=title, details=details)
    return CheckResult(ok=True, severity="OK", title=title, details=details)


def run_checks(models: dict[str, dict] | None = None, with_noise: bool = False) -> List[CheckResult]:
    results: List[CheckResult] = []
    for name, params in (models or HYGIENE_MODELS).items():
        try:
            bundle = build_model(name, **params)
        except RatchetError as e:
            results.append(CheckResult(ok=False, severity="FAIL", title=f"build: {name}", details=str(e)))
            continue
        results.append(check_bundle(name, bundle))
        results.append(check_evolution(name, bundle))
        results.append(check_steady(name, bundle))
    if with_noise:
        results.append(check_noise())
    return results


SEVERITIES = ("OK", "WARN", "FAIL")


def overall_severity(results: List[CheckResult]) -> str:
    seen = {r.severity for r in results}
    return next((s for s in reversed(SEVERITIES) if s in seen), "OK")


def tolerance_table() -> dict[str, float]:
    return {
        "operator hermiticity": HERMITIAN_TOL,
        "hamiltonian hermiticity": BUNDLE_HERMITIAN_TOL,
        "trace drift": TRACE_DRIFT_TOL,
        "hermiticity drift": HERMITICITY_DRIFT_TOL,
        "negative eigenvalue": POSITIVITY_TOL,
        "steady residual": STEADY_TOL,
    }


def write_report(results: List[CheckResult], report_path: Path) -> None:
    """Markdown report: summary, tolerance bounds, one table row per check, then details of non-OK checks."""
    counts = Counter(r.severity for r in results)
    out = [
        "# Guardian report",
        "",
        f"Lindblad hygiene run at `{datetime.now(timezone.utc).isoformat()}`.",
        "",
        "## Summary",
        "",
        f"- status: **{overall_severity(results)}**",
        "- checks: " + ", ".join(f"{counts[s]} {s}" for s in SEVERITIES),
        "",
        "## Tolerances",
        "",
        "| quantity | bound |",
        "|---|---|",
        *(f"| {name} | {bound:g} |" for name, bound in tolerance_table().items()),
        "",
        "## Checks",
        "",
        "| severity | check | result |",
        "|---|---|---|",
    ]
    for r in results:
        headline = r.details.strip().splitlines()[0] if r.details.strip() else ""
        out.append(f"| {r.severity} | {r.title} | {headline} |")
    flagged = [r for r in results if r.severity != "OK"]
    if flagged:
        out += ["", "## Findings", ""]
        for r in flagged:
            out += [f"### {r.severity}: {r.title}", "", "```text", r.details.strip(), "```", ""]

    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text("\n".join(out).rstrip("\n") + "\n", encoding="utf-8")


def exit_status(results: List[CheckResult]) -> int:
    return EXIT_NUMERICAL if overall_severity(results) == "FAIL" else 0


def guard(out: str | Path, with_noise: bool = False, models: dict[str, dict] | None = None) -> tuple[int, Path]:
    report = Path(out) / "guardian" / f"guardian_report_{_utc_ts()}.md"
    results = run_checks(models, with_noise)
    write_report(results, report)
    for r in results:
        if r.severity != "OK":
            print(f"{r.severity}: {r.title}")
    print(f"OK: report -> {report}")
    return exit_status(results), report


def main() -> int:
    ap = argparse.ArgumentParser(description="Lindblad hygiene guardian")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--with-noise", action="store_true", help="add a short dephasing-noise ensemble check")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="[%(name)s] %(message)s")
    status, _ = guard(args.out, args.with_noise)
    return status


if __name__ == "__main__":
    raise SystemExit(main())
