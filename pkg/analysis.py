"""Lifetimes, fidelities and QEC-condition reports from simulation output."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import OptimizeWarning, curve_fit

from dynamics import ATOL, RTOL, TimeSeries, evolve
from errors import ConfigError, FitError, SpaceMismatchError
from hilbert import DensityMatrix, Operator, PureState, expectation
from models import ModelBundle
from trajectories import SpectrumParams, ramsey_envelope, t_one_over_e

log = logging.getLogger(__name__)

MIN_FIT_POINTS = 10
CONFIDENCE_Z = 1.96
MONOTONE_SIGMAS = 3.0
QEC_TOL = 1e-10


@dataclass(frozen=True)
class DecayFit:
    observable: str
    rate: float
    amplitude: float
    offset: float
    fit_window: tuple[float, float]
    residual_rms: float
    half_width: float
    n_points: int
    monotone: bool = True
    fixed_offset: bool = False

    @property
    def lifetime(self) -> float:
        return math.inf if self.rate == 0 else 1.0 / self.rate

    def as_dict(self) -> dict[str, float]:
        return {
            "rate": self.rate,
            "half_width": self.half_width,
            "amplitude": self.amplitude,
            "offset": self.offset,
            "t_start": self.fit_window[0],
            "t_end": self.fit_window[1],
            "residual_rms": self.residual_rms,
            "n_points": self.n_points,
            "monotone": self.monotone,
        }


def default_window_start(repair_rate: float | None = None, omega: float | None = None) -> float:
    """Skip the repair transient: max(5/GammaR, 3/Omega) from whichever is known."""
    starts = [0.0]
    if repair_rate:
        starts.append(5.0 / repair_rate)
    if omega:
        starts.append(3.0 / abs(omega))
    return max(starts)


def fit_decay(
    series: TimeSeries,
    observable: str,
    window: tuple[float, float] | None = None,
    *,
    repair_rate: float | None = None,
    omega: float | None = None,
    fixed_offset: float | None = None,
) -> DecayFit:
    """Least-squares A exp(-rate t) + C on a window of the series.

    Time is rescaled to [0, 1] over the window before fitting; the reported
    half-width is 1.96 sqrt(var(rate)).
    """
    if observable not in series.values:
        raise ConfigError(f"observable {observable!r} not in series ({series.observables})")
    t_all = series.times
    y_all = np.real(series[observable])
    if window is None:
        window = (max(t_all[0], default_window_start(repair_rate, omega)), t_all[-1])
    t0, t1 = window
    if not t0 < t1 or t0 < t_all[0] - 1e-12 or t1 > t_all[-1] + 1e-12:
        raise FitError(f"fit window [{t0:g}, {t1:g}] outside series range [{t_all[0]:g}, {t_all[-1]:g}]")
    mask = (t_all >= t0) & (t_all <= t1)
    t, y = t_all[mask], y_all[mask]
    if len(t) < MIN_FIT_POINTS:
        raise FitError(f"{len(t)} points in window [{t0:g}, {t1:g}], need >= {MIN_FIT_POINTS}")
    span = t[-1] - t[0]
    tau = (t - t[0]) / span

    if fixed_offset is None:
        def model(x, A, k, C):
            return A * np.exp(-k * x) + C
        p0 = [y[0] - y[-1], 1.0, y[-1]]
        bounds = ([-np.inf, 0.0, -np.inf], [np.inf, np.inf, np.inf])
    else:
        def model(x, A, k):
            return A * np.exp(-k * x) + fixed_offset
        p0 = [y[0] - fixed_offset, 1.0]
        bounds = ([-np.inf, 0.0], [np.inf, np.inf])
        if abs(y[-1] - fixed_offset) > 0 and abs(y[0] - fixed_offset) > abs(y[-1] - fixed_offset):
            p0[1] = math.log(abs(y[0] - fixed_offset) / abs(y[-1] - fixed_offset))

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(model, tau, y, p0=p0, bounds=bounds, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"decay fit of {observable!r} failed: {exc}") from exc

    A, k = float(popt[0]), float(popt[1])
    C = float(popt[2]) if fixed_offset is None else float(fixed_offset)
    rate = k / span
    if not math.isfinite(rate):
        raise FitError(f"decay fit of {observable!r} returned a non-finite rate")
    var_k = float(pcov[1, 1]) if np.all(np.isfinite(pcov)) else math.inf
    half_width = CONFIDENCE_Z * math.sqrt(max(var_k, 0.0)) / span
    resid = y - model(tau, *popt)
    rms = float(np.sqrt(np.mean(resid ** 2)))

    noise = rms
    if observable in series.errors:
        noise = max(noise, float(np.max(series.errors[observable][mask])))
    direction = -np.sign(A) if A != 0 else 0.0
    steps = np.diff(y) * direction
    monotone = bool(np.all(steps >= -MONOTONE_SIGMAS * noise - 1e-12))
    if not monotone:
        log.warning("fit_decay: %s is not monotone beyond noise (rms %.3g)", observable, noise)
    log.debug("fit_decay: %s rate=%.6g +- %.3g on [%g, %g]", observable, rate, half_width, t[0], t[-1])
    return DecayFit(observable, rate, A, C, (float(t[0]), float(t[-1])), rms, half_width, len(t), monotone,
                    fixed_offset is not None)


def window_sensitivity(series: TimeSeries, observable: str, starts: Sequence[float], **kw) -> pd.DataFrame:
    """Fitted rate for each window start (window end fixed at the last sample)."""
    rows = []
    for start in starts:
        try:
            fit = fit_decay(series, observable, (start, series.times[-1]), **kw)
            rows.append({"t_start": start, "rate": fit.rate, "half_width": fit.half_width,
                         "residual_rms": fit.residual_rms})
        except FitError as exc:
            log.warning("window_sensitivity: start=%g skipped: %s", start, exc)
            rows.append({"t_start": start, "rate": math.nan, "half_width": math.nan, "residual_rms": math.nan})
    return pd.DataFrame(rows)


def logical_decay(
    bundle: ModelBundle,
    observable: str,
    initial: str | None = None,
    *,
    t_final: float,
    n_points: int = 101,
    method: str = "rk45",
    window: tuple[float, float] | None = None,
    repair_rate: float | None = None,
    omega: float | None = None,
    fixed_offset: float | None = None,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> tuple[TimeSeries, DecayFit]:
    """Evolve a bundle from a labeled state and fit the decay of one labeled observable."""
    label = initial or bundle.initial
    if label is None:
        raise ConfigError(f"{bundle.name}: no initial state given")
    rho0 = DensityMatrix.from_state(bundle.state(label))
    t = np.linspace(0.0, t_final, n_points)
    ts = evolve(bundle.system, rho0, t, {observable: bundle.op(observable)}, method=method, rtol=rtol, atol=atol)
    fit = fit_decay(ts, observable, window, repair_rate=repair_rate, omega=omega, fixed_offset=fixed_offset)
    return ts, fit


def fidelity(rho: DensityMatrix | PureState, target: PureState) -> float:
    if rho.space != target.space:
        raise SpaceMismatchError(f"state on {rho.space}, target on {target.space}")
    psi = target.amplitudes
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.outer(rho.amplitudes, rho.amplitudes.conj())
    return float(min(max(np.vdot(psi, m @ psi).real, 0.0), 1.0))


# --- QEC conditions ---

@dataclass(frozen=True)
class QecRow:
    error: str
    diag: float
    diag_rel: float
    offdiag: float
    kl_diag: float
    kl_offdiag: float


@dataclass
class QecReport:
    model: str
    logical: tuple[str, str]
    rows: list[QecRow]
    degeneracy_gap: float
    logical_coupling: float
    flags: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flags

    def max_residual(self, key: str = "diag_rel") -> float:
        return max((getattr(r, key) for r in self.rows), default=0.0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows])


def _mel(bra: PureState, op: Operator, ket: PureState) -> complex:
    return complex(np.vdot(bra.amplitudes, op.apply(ket.amplitudes)))


def qec_condition_check(bundle: ModelBundle, error_ops: Mapping[str, Operator] | None = None, tol: float = QEC_TOL) -> QecReport:
    """Number-operator conditions <0|E^dag E|0> = <1|E^dag E|1>, <1|E^dag E|0> = 0 per error E.

    Also reports the first-order residuals |<0|E|0> - <1|E|1>| and |<1|E|0>|,
    and the splitting and coupling of the logical pair under the Hamiltonian.
    """
    if bundle.logical is None:
        raise ConfigError(f"{bundle.name}: no logical state labels")
    zero, one = (bundle.state(label) for label in bundle.logical)
    errs = dict(bundle.modes if error_ops is None else error_ops)
    if not errs:
        raise ConfigError(f"{bundle.name}: no error operators to check")
    rows, flags = [], []
    for name, E in errs.items():
        if E.space != bundle.system.space:
            raise SpaceMismatchError(f"error operator {name} on {E.space}, system on {bundle.system.space}")
        n = E.dag() @ E
        n0, n1 = _mel(zero, n, zero).real, _mel(one, n, one).real
        diag = abs(n0 - n1)
        mean = 0.5 * (n0 + n1)
        row = QecRow(
            error=name,
            diag=diag,
            diag_rel=diag / mean if mean > 0 else diag,
            offdiag=abs(_mel(one, n, zero)),
            kl_diag=abs(_mel(zero, E, zero) - _mel(one, E, one)),
            kl_offdiag=abs(_mel(one, E, zero)),
        )
        rows.append(row)
        for key in ("diag", "offdiag", "kl_diag", "kl_offdiag"):
            value = getattr(row, key)
            if value > tol:
                flags.append(f"{name}: {key} residual {value:.3g}")
    gap = coupling = math.nan
    if not bundle.system.time_dependent:
        h = bundle.system.hamiltonian
        gap = abs(expectation(h, zero) - expectation(h, one))
        coupling = abs(_mel(one, h, zero))
    report = QecReport(bundle.name, bundle.logical, rows, gap, coupling, flags)
    for flag in flags:
        log.info("qec %s: %s", bundle.name, flag)
    return report


# --- Ramsey ---

def ramsey_t2(
    spectrum: SpectrumParams,
    times=None,
    *,
    T1: float | None = None,
    n_realizations: int = 400,
    seed_base: int = 0,
    progress: bool = False,
) -> float:
    """1/e time of the averaged free-induction envelope under h(t) a^dag a dephasing."""
    if times is None:
        times = np.linspace(0.0, 1.0 / (10.0 * spectrum.f_min), 400)
    env = ramsey_envelope(spectrum, times, n_realizations, seed_base, T1=T1, progress=progress)
    return t_one_over_e(np.asarray(times) - np.asarray(times)[0], env)
