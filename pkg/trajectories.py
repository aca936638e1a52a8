"""Quantum-jump unraveling and low-frequency dephasing noise.

Jumps: the unnormalized state evolves under H_eff = H - i/2 sum_k g_k L_k^dag L_k
and a jump fires when its squared norm falls to a threshold drawn uniformly
from [0, 1). Every random draw comes from numpy.random.default_rng(seed), so a
trajectory is reproducible from (system, psi0, grid, seed).

Noise: h(t) is a sum of symmetric telegraph processes with corner frequencies
log-spaced over [f_min, f_max], three per decade, variance per process
proportional to f^(1 - alpha). The ensemble spectrum then follows 1/f^alpha
inside the band.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from multiprocessing import Pool
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import brentq
from tqdm import tqdm

from dynamics import (
    ATOL,
    RTOL,
    LindbladSystem,
    TimeSeries,
    Tolerances,
    as_observables,
    check_grid,
    evolve,
)
from errors import ConvergenceError, ModelError, NormUnderflowError, RamseyError, SpaceMismatchError
from hilbert import DensityMatrix, Operator, PureState

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-300
MAX_BISECTIONS = 200


# --- 1/f noise ---

@dataclass(frozen=True)
class SpectrumParams:
    """amplitude is the RMS of h(t) in energy units."""
    amplitude: float
    f_min: float
    f_max: float
    alpha: float = 1.0
    per_decade: int = 3
    telegraph_fraction: float = 0.0
    telegraph_rate: float | None = None

    def __post_init__(self):
        if not (0.0 < self.f_min < self.f_max) or not math.isfinite(self.f_max):
            raise ModelError(f"invalid band: need 0 < f_min < f_max, got [{self.f_min}, {self.f_max}]")
        if not 0.5 <= self.alpha <= 1.5:
            raise ModelError(f"alpha must lie in [0.5, 1.5], got {self.alpha}")
        if self.amplitude < 0:
            raise ModelError(f"amplitude must be >= 0, got {self.amplitude}")
        if not 0.0 <= self.telegraph_fraction <= 1.0:
            raise ModelError(f"telegraph_fraction must lie in [0, 1], got {self.telegraph_fraction}")
        if self.per_decade < 1:
            raise ModelError("per_decade must be >= 1")

    @classmethod
    def for_window(cls, amplitude: float, total_time: float, min_step: float, **kw) -> "SpectrumParams":
        """Decade-padded band: f_min = 1/(10 T), f_max = 10/min_step."""
        return cls(amplitude=amplitude, f_min=1.0 / (10.0 * total_time), f_max=10.0 / min_step, **kw)

    @property
    def resolution(self) -> float:
        return 1.0 / (20.0 * self.f_max)

    def scaled(self, amplitude: float) -> "SpectrumParams":
        return SpectrumParams(amplitude, self.f_min, self.f_max, self.alpha, self.per_decade,
                              self.telegraph_fraction, self.telegraph_rate)

    def components(self) -> tuple[np.ndarray, np.ndarray]:
        """(switching rates, RMS amplitudes) of the telegraph processes."""
        decades = math.log10(self.f_max / self.f_min)
        n = max(2, int(round(self.per_decade * decades)) + 1)
        corners = np.geomspace(self.f_min, self.f_max, n)
        w = corners ** (1.0 - self.alpha)
        var = (1.0 - self.telegraph_fraction) * self.amplitude ** 2 * w / w.sum()
        rates = math.pi * corners
        if self.telegraph_fraction > 0:
            extra = self.telegraph_rate if self.telegraph_rate is not None else math.pi * math.sqrt(self.f_min * self.f_max)
            rates = np.append(rates, extra)
            var = np.append(var, self.telegraph_fraction * self.amplitude ** 2)
        return rates, np.sqrt(var)


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """h_values[q, k] holds on [times[k], times[k+1])."""
    times: np.ndarray
    h_values: np.ndarray
    seed: int
    spectrum: SpectrumParams

    @property
    def n_qubits(self) -> int:
        return self.h_values.shape[0]

    def value_at(self, t: float, qubit: int = 0) -> float:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), len(self.times) - 1)
        return float(self.h_values[qubit, k])

    def phase(self, times, qubit: int = 0) -> np.ndarray:
        """Exact integral of h from times[0] for a piecewise-constant signal."""
        t = np.asarray(times, dtype=float)
        h = self.h_values[qubit]
        cum = np.concatenate(([0.0], np.cumsum(h[:-1] * np.diff(self.times))))
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1)
        return cum[k] + h[k] * (t - self.times[k])


def noise_grid(spectrum: SpectrumParams, tgrid) -> np.ndarray:
    t = check_grid(tgrid)
    if len(t) > 1 and np.max(np.diff(t)) <= spectrum.resolution:
        return t
    span = t[-1] - t[0]
    n = int(math.ceil(span / spectrum.resolution)) + 1
    return t[0] + spectrum.resolution * np.arange(max(n, 2))


def _telegraph(rng: np.random.Generator, rate: float, offsets: np.ndarray) -> np.ndarray:
    """+-1 telegraph signal sampled at offsets (>= 0) from the window start."""
    span = float(offsets[-1])
    sign0 = 1.0 if rng.random() < 0.5 else -1.0
    switches = np.empty(0)
    expected = rate * span
    last = 0.0
    while last <= span:
        batch = rng.exponential(1.0 / rate, size=int(expected + 10.0 * math.sqrt(expected) + 16))
        chunk = last + np.cumsum(batch)
        switches = np.concatenate((switches, chunk))
        last = float(chunk[-1])
    count = np.searchsorted(switches, offsets, side="right")
    return sign0 * (1.0 - 2.0 * (count & 1))


def sample_low_freq_noise(params: SpectrumParams, tgrid, seed: int, n_qubits: int = 1) -> NoiseRealization:
    times = noise_grid(params, tgrid)
    h = np.zeros((n_qubits, len(times)))
    if params.amplitude > 0:
        rng = np.random.default_rng(seed)
        rates, sigmas = params.components()
        offsets = times - times[0]
        for q in range(n_qubits):
            for rate, sigma in zip(rates, sigmas):
                h[q] += sigma * _telegraph(rng, rate, offsets)
    times.setflags(write=False)
    h.setflags(write=False)
    return NoiseRealization(times, h, seed, params)


class NoisyHamiltonian:
    """H(t) = H0 + sum_q h_q(t) n_q; picklable for worker pools."""

    def __init__(self, base: np.ndarray, ops: Sequence[np.ndarray], noise: NoiseRealization):
        if len(ops) != noise.n_qubits:
            raise ValueError(f"{len(ops)} noise operators for {noise.n_qubits} noise signals")
        self.base = base
        self.ops = list(ops)
        self.noise = noise

    def __call__(self, t: float) -> np.ndarray:
        h = self.base.copy()
        for q, op in enumerate(self.ops):
            h += self.noise.value_at(t, q) * op
        return h


# --- Ramsey ---

def ramsey_phases(spectrum: SpectrumParams, times, n_realizations: int, seed_base: int = 0,
                  progress: bool = False) -> np.ndarray:
    """Accumulated phases (n_realizations, len(times)) of h(t) a^dag a on a qubit."""
    t = check_grid(times)
    out = np.empty((n_realizations, len(t)))
    for i in tqdm(range(n_realizations), desc="ramsey", disable=not progress):
        noise = sample_low_freq_noise(spectrum, t, seed_base + i)
        out[i] = noise.phase(t)
    return out


def envelope_from_phases(phases: np.ndarray, times, T1: float | None = None) -> np.ndarray:
    env = np.abs(np.mean(np.exp(1j * phases), axis=0))
    if T1 is not None:
        env = env * np.exp(-np.asarray(times) / (2.0 * T1))
    return env


def ramsey_envelope(spectrum: SpectrumParams, times, n_realizations: int = 400, seed_base: int = 0,
                    T1: float | None = None, progress: bool = False) -> np.ndarray:
    t = check_grid(times)
    return envelope_from_phases(ramsey_phases(spectrum, t, n_realizations, seed_base, progress), t - t[0], T1)


def t_one_over_e(times, envelope) -> float:
    t = np.asarray(times, dtype=float)
    env = np.asarray(envelope, dtype=float)
    target = math.exp(-1.0)
    below = np.flatnonzero(env <= target)
    if len(below) == 0:
        raise RamseyError(f"envelope stays above 1/e up to t={t[-1]:.6g} (min {env.min():.4f})")
    k = int(below[0])
    if k == 0:
        return float(t[0])
    t0, t1, e0, e1 = t[k - 1], t[k], env[k - 1], env[k]
    return float(t0 + (e0 - target) * (t1 - t0) / (e0 - e1))


@dataclass(frozen=True)
class RamseyParams:
    """Single-qubit free-induction setup used for amplitude calibration.

    The simulated window is window_factor * target_T2R sampled at n_times
    points; band edges default to the decade-padded rule on that window.
    """
    alpha: float = 1.0
    n_realizations: int = 400
    seed_base: int = 0
    window_factor: float = 4.0
    n_times: int = 400
    f_min: float | None = None
    f_max: float | None = None
    T1: float | None = None
    telegraph_fraction: float = 0.0

    def times(self, target: float) -> np.ndarray:
        return np.linspace(0.0, self.window_factor * target, self.n_times)

    def spectrum(self, amplitude: float, target: float) -> SpectrumParams:
        t = self.times(target)
        f_min = self.f_min if self.f_min is not None else 1.0 / (10.0 * t[-1])
        f_max = self.f_max if self.f_max is not None else 10.0 / (t[1] - t[0])
        return SpectrumParams(amplitude, f_min, f_max, self.alpha, telegraph_fraction=self.telegraph_fraction)


def calibrate_dephasing(target_T2R: float, qubit_params: RamseyParams | None = None, *,
                        rel_tol: float = 1e-3, progress: bool = False) -> float:
    """Noise amplitude whose averaged Ramsey envelope reaches 1/e at target_T2R.

    Bisection on log(amplitude). Phases scale linearly with the amplitude, so
    one ensemble of unit-amplitude phases serves every trial amplitude.
    """
    if not target_T2R > 0:
        raise ValueError(f"target_T2R must be > 0, got {target_T2R}")
    p = qubit_params or RamseyParams()
    times = p.times(target_T2R)
    unit = ramsey_phases(p.spectrum(1.0, target_T2R), times, p.n_realizations, p.seed_base, progress)

    def t2(amp: float) -> float:
        try:
            return t_one_over_e(times, envelope_from_phases(amp * unit, times, p.T1))
        except RamseyError:
            return math.inf

    hi = math.sqrt(2.0) / target_T2R
    for _ in range(MAX_BISECTIONS):
        if t2(hi) < target_T2R:
            break
        hi *= 2.0
    else:
        raise ConvergenceError(f"could not bracket T2R={target_T2R:g} from above")
    lo = hi / 2.0
    for _ in range(MAX_BISECTIONS):
        if t2(lo) > target_T2R:
            break
        lo /= 2.0
    else:
        raise ConvergenceError(f"could not bracket T2R={target_T2R:g} from below")

    for it in range(MAX_BISECTIONS):
        mid = math.sqrt(lo * hi)
        val = t2(mid)
        if abs(val / target_T2R - 1.0) < rel_tol or hi / lo < 1.0 + 1e-9:
            log.debug("calibrate: amplitude=%.6g T2R=%.6g after %d steps", mid, val, it + 1)
            return mid
        if val > target_T2R:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(f"bisection did not converge for T2R={target_T2R:g} (bracket [{lo:g}, {hi:g}])")


# --- quantum jumps ---

@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    times: np.ndarray
    jump_times: np.ndarray
    jump_channels: np.ndarray
    values: dict[str, np.ndarray]
    final_state: PureState
    seed: int
    states: np.ndarray | None = None

    def __post_init__(self):
        jt = self.jump_times
        if len(jt):
            if np.any(np.diff(jt) <= 0):
                raise ValueError("jump times must be strictly increasing")
            if jt[0] < self.times[0] or jt[-1] > self.times[-1]:
                raise ValueError("jump times outside the simulated window")

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)


def effective_hamiltonian(h: np.ndarray, sys: LindbladSystem) -> np.ndarray:
    heff = np.array(h, dtype=complex)
    for rate, _L, LdL in sys.jump_terms:
        heff = heff - 0.5j * rate * LdL
    return heff


class _Jumper:
    def __init__(self, sys: LindbladSystem, rng: np.random.Generator):
        self.rng = rng
        self.ops = [(i, ch.rate, ch.operator.dense()) for i, ch in enumerate(sys.collapse_ops) if ch.rate > 0]

    def jump(self, phi: np.ndarray, t: float) -> tuple[np.ndarray, int]:
        outs = [L @ phi for _, _, L in self.ops]
        weights = np.array([rate * np.vdot(o, o).real for (_, rate, _), o in zip(self.ops, outs)])
        total = weights.sum()
        if not total > 0:
            raise NormUnderflowError(f"norm threshold crossed at t={t:.6g} but no channel can fire")
        k = int(np.searchsorted(np.cumsum(weights) / total, self.rng.random(), side="right"))
        k = min(k, len(outs) - 1)
        new = outs[k]
        return new / np.linalg.norm(new), self.ops[k][0]


def _sampler(ops: dict[str, Operator]):
    mats = {name: op.dense() for name, op in ops.items()}

    def sample(phi: np.ndarray) -> dict[str, float]:
        nn = np.vdot(phi, phi).real
        return {name: np.vdot(phi, m @ phi).real / nn for name, m in mats.items()}

    return sample


def _check_norm(nn: float, t: float) -> None:
    if not math.isfinite(nn) or nn < NORM_FLOOR:
        raise NormUnderflowError(f"state norm underflow ({nn:.3e}) at t={t:.6g} without a jump")


def _run_propagator(sys, psi, t, rng, sample, tol, keep_states):
    heff = effective_hamiltonian(sys.hamiltonian_at(0.0), sys)
    jumper = _Jumper(sys, rng)
    cache: dict[float, np.ndarray] = {}

    def U(dt: float) -> np.ndarray:
        key = round(dt, 12)
        m = cache.get(key)
        if m is None:
            m = expm(-1j * heff * dt)
            if len(cache) < 64:
                cache[key] = m
        return m

    phi = psi.copy()
    r = rng.random()
    rows, states, jt, jc = [sample(phi)], [phi / np.linalg.norm(phi)], [], []
    for k in range(1, len(t)):
        t_cur, remaining = t[k - 1], t[k] - t[k - 1]
        while True:
            nxt = U(remaining) @ phi
            nn = np.vdot(nxt, nxt).real
            _check_norm(nn, t[k])
            if nn > r:
                phi = nxt
                break
            start = phi

            def excess(tau):
                v = expm(-1j * heff * tau) @ start
                return np.vdot(v, v).real - r

            tau = brentq(excess, 0.0, remaining, xtol=tol.atol, rtol=max(tol.rtol, 4 * np.finfo(float).eps))
            phi_tau = expm(-1j * heff * tau) @ start
            phi, ch = jumper.jump(phi_tau, t_cur + tau)
            t_jump = t_cur + tau
            if jt and t_jump <= jt[-1]:
                t_jump = np.nextafter(jt[-1], np.inf)
            jt.append(t_jump)
            jc.append(ch)
            r = rng.random()
            t_cur, remaining = t_cur + tau, remaining - tau
            if remaining <= 0:
                break
        rows.append(sample(phi))
        states.append(phi / np.linalg.norm(phi))
    return phi, rows, states, jt, jc


def _run_ivp(sys, psi, t, rng, sample, tol, keep_states, max_step):
    jumper = _Jumper(sys, rng)
    jumps = sys.jump_terms

    def fun(tt, y):
        return -1j * (effective_hamiltonian(sys.hamiltonian_at(tt), sys) @ y) if jumps else -1j * (sys.hamiltonian_at(tt) @ y)

    phi = psi.copy()
    r = rng.random()
    rows, states, jt, jc = [sample(phi)], [phi / np.linalg.norm(phi)], [], []
    t_cur, nxt_idx = t[0], 1
    while nxt_idx < len(t):
        def crossing(tt, y, r=r):
            return np.vdot(y, y).real - r
        crossing.terminal = True
        crossing.direction = -1

        sol = solve_ivp(fun, (t_cur, t[-1]), phi, t_eval=t[nxt_idx:], events=crossing,
                        rtol=tol.rtol, atol=tol.atol, max_step=np.inf if max_step is None else max_step)
        if sol.status == -1:
            raise NormUnderflowError(f"jump integration failed at t={t_cur:.6g}: {sol.message}")
        for j in range(len(sol.t)):
            y = sol.y[:, j]
            _check_norm(np.vdot(y, y).real, sol.t[j])
            rows.append(sample(y))
            states.append(y / np.linalg.norm(y))
        nxt_idx += len(sol.t)
        if sol.status == 1 and len(sol.t_events[0]):
            t_cur = float(sol.t_events[0][0])
            phi, ch = jumper.jump(sol.y_events[0][0], t_cur)
            jt.append(t_cur)
            jc.append(ch)
            r = rng.random()
        else:
            phi = sol.y[:, -1]
            break
    return phi, rows, states, jt, jc


def run_trajectory(
    sys: LindbladSystem,
    psi0: PureState,
    tgrid,
    seed: int,
    observables=(),
    *,
    method: str = "auto",
    rtol: float = RTOL,
    atol: float = ATOL,
    max_step: float | None = None,
    keep_states: bool = False,
) -> TrajectoryRecord:
    if psi0.space != sys.space:
        raise SpaceMismatchError(f"psi0 on {psi0.space}, system on {sys.space}")
    t = check_grid(tgrid)
    ops = as_observables(observables)
    sample = _sampler(ops)
    rng = np.random.default_rng(seed)
    tol = Tolerances(rtol, atol)
    psi = np.array(psi0.amplitudes)
    if method == "auto":
        method = "rk45" if sys.time_dependent else "propagator"
    if method == "propagator":
        if sys.time_dependent:
            raise ValueError("propagator jumps need a time-independent system")
        phi, rows, states, jt, jc = _run_propagator(sys, psi, t, rng, sample, tol, keep_states)
    elif method == "rk45":
        phi, rows, states, jt, jc = _run_ivp(sys, psi, t, rng, sample, tol, keep_states, max_step)
    else:
        raise ValueError(f"unknown trajectory method {method!r}")
    values = {name: np.array([row[name] for row in rows]) for name in ops}
    return TrajectoryRecord(
        times=t,
        jump_times=np.array(jt, dtype=float),
        jump_channels=np.array(jc, dtype=int),
        values=values,
        final_state=PureState(sys.space, phi),
        seed=int(seed),
        states=np.array(states) if keep_states else None,
    )


def _trajectory_task(seed, sys, psi0, t, ops, keep_states, method, rtol, atol):
    return run_trajectory(sys, psi0, t, seed, ops, method=method, rtol=rtol, atol=atol, keep_states=keep_states)


def _map(task, items, threads: int, desc: str, progress: bool):
    if threads > 1:
        with Pool(threads) as pool:
            yield from tqdm(pool.imap(task, items), total=len(items), desc=desc, disable=not progress)
    else:
        for item in tqdm(items, desc=desc, disable=not progress):
            yield task(item)


def _mean_and_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def ensemble_average(
    sys: LindbladSystem,
    psi0: PureState,
    tgrid,
    n_traj: int,
    seed_base: int,
    observables=(),
    *,
    threads: int = 1,
    keep_density: bool = False,
    method: str = "auto",
    rtol: float = RTOL,
    atol: float = ATOL,
    progress: bool = False,
) -> TimeSeries:
    """Trajectory means and standard errors; trajectory i uses seed seed_base + i."""
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    t = check_grid(tgrid)
    ops = as_observables(observables)
    seeds = [seed_base + i for i in range(n_traj)]
    task = partial(_trajectory_task, sys=sys, psi0=psi0, t=t, ops=ops, keep_states=keep_density,
                   method=method, rtol=rtol, atol=atol)

    per_obs = {name: np.empty((n_traj, len(t))) for name in ops}
    n_jumps = np.empty(n_traj, dtype=int)
    d = sys.dim
    s1 = s2r = s2i = None
    if keep_density:
        s1 = np.zeros((len(t), d, d), dtype=complex)
        s2r = np.zeros((len(t), d, d))
        s2i = np.zeros((len(t), d, d))
    for i, rec in enumerate(_map(task, seeds, threads, "trajectories", progress)):
        for name in ops:
            per_obs[name][i] = rec.values[name]
        n_jumps[i] = rec.n_jumps
        if keep_density:
            outer = rec.states[:, :, None] * rec.states[:, None, :].conj()
            s1 += outer
            s2r += outer.real ** 2
            s2i += outer.imag ** 2

    values, errors = {}, {}
    for name, arr in per_obs.items():
        values[name], errors[name] = _mean_and_se(arr)
    meta = {
        "n_traj": n_traj,
        "seed_base": seed_base,
        "seeds": [seeds[0], seeds[-1]],
        "method": method,
        "rtol": rtol,
        "atol": atol,
        "mean_jumps": float(n_jumps.mean()),
    }
    states = None
    if keep_density:
        mean = s1 / n_traj
        if n_traj > 1:
            var_r = np.maximum(s2r / n_traj - mean.real ** 2, 0.0) * n_traj / (n_traj - 1)
            var_i = np.maximum(s2i / n_traj - mean.imag ** 2, 0.0) * n_traj / (n_traj - 1)
            meta["density_se_re"] = np.sqrt(var_r / n_traj)
            meta["density_se_im"] = np.sqrt(var_i / n_traj)
        states = [DensityMatrix(sys.space, mean[k], check=False) for k in range(len(t))]
    log.info("ensemble: %d trajectories, mean jumps %.2f", n_traj, meta["mean_jumps"])
    return TimeSeries(t, values, errors, meta, states=states, final_state=states[-1] if states else None)


# --- dephasing-noise ensembles ---

def _noise_task(seed, system, rho0, t, noise_ops, spectrum, observables, method, rtol, atol, max_step):
    base = system.hamiltonian_at(0.0)
    noise = sample_low_freq_noise(spectrum, t, seed, n_qubits=len(noise_ops))
    noisy = system.with_hamiltonian(NoisyHamiltonian(base, noise_ops, noise), label=f"{system.label}+noise")
    return evolve(noisy, rho0, t, observables, method=method, rtol=rtol, atol=atol, max_step=max_step)


def dephasing_ensemble(
    system: LindbladSystem,
    rho0: DensityMatrix,
    tgrid,
    noise_ops: Mapping[str, Operator] | Sequence[Operator],
    spectrum: SpectrumParams,
    n_realizations: int,
    seed_base: int,
    observables=(),
    *,
    threads: int = 1,
    method: str = "rk45",
    rtol: float = RTOL,
    atol: float = ATOL,
    max_step: float | None = None,
    progress: bool = False,
) -> TimeSeries:
    """Average Lindblad evolution over independent h_q(t) n_q signals, one per noise operator.

    Realization i draws every qubit's signal from seed seed_base + i, so the
    per-qubit signals are independent and paired per realization.
    """
    if system.time_dependent:
        raise ValueError("dephasing_ensemble needs a time-independent base system")
    if n_realizations < 1:
        raise ValueError(f"n_realizations must be >= 1, got {n_realizations}")
    t = check_grid(tgrid)
    nops = list(noise_ops.values()) if isinstance(noise_ops, Mapping) else list(noise_ops)
    mats = []
    for op in nops:
        if op.space != system.space:
            raise SpaceMismatchError(f"noise operator on {op.space}, system on {system.space}")
        if not op.is_hermitian():
            raise ValueError("noise operators must be Hermitian")
        mats.append(op.dense())
    ops = as_observables(observables)
    step = spectrum.resolution if max_step is None else max_step
    seeds = [seed_base + i for i in range(n_realizations)]
    task = partial(_noise_task, system=system, rho0=rho0, t=t, noise_ops=mats, spectrum=spectrum,
                   observables=ops, method=method, rtol=rtol, atol=atol, max_step=step)

    per_obs = {name: np.empty((n_realizations, len(t))) for name in ops}
    worst = {"max_trace_drift": 0.0, "max_hermiticity_drift": 0.0, "min_eigenvalue": math.inf}
    for i, ts in enumerate(_map(task, seeds, threads, "noise", progress)):
        for name in ops:
            per_obs[name][i] = np.real(ts.values[name])
        worst["max_trace_drift"] = max(worst["max_trace_drift"], ts.metadata["max_trace_drift"])
        worst["max_hermiticity_drift"] = max(worst["max_hermiticity_drift"], ts.metadata["max_hermiticity_drift"])
        worst["min_eigenvalue"] = min(worst["min_eigenvalue"], ts.metadata["min_eigenvalue"])

    values, errors = {}, {}
    for name, arr in per_obs.items():
        values[name], errors[name] = _mean_and_se(arr)
    meta = {
        "n_realizations": n_realizations,
        "seed_base": seed_base,
        "spectrum": {
            "amplitude": spectrum.amplitude, "f_min": spectrum.f_min, "f_max": spectrum.f_max,
            "alpha": spectrum.alpha, "telegraph_fraction": spectrum.telegraph_fraction,
        },
        "method": method,
        "rtol": rtol,
        "atol": atol,
        **worst,
    }
    return TimeSeries(t, values, errors, meta)
