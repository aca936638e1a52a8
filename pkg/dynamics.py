"""Lindblad master-equation evolution and steady states.

Density matrices are flattened row-major, so vec(A rho B) = (A kron B^T) vec(rho).
Dissipators use the trace-preserving form D[L]rho = L rho L^dag - 1/2 {L^dag L, rho}.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.sparse.linalg import spsolve

from errors import (
    ConvergenceError,
    DegenerateSteadyStateError,
    ModelError,
    PositivityError,
    SpaceMismatchError,
    ToleranceError,
)
from hilbert import (
    HERMITIAN_TOL,
    DensityMatrix,
    HilbertSpace,
    Operator,
    hermiticity_error,
    min_eigenvalue,
)

log = logging.getLogger(__name__)

RTOL = 1e-8
ATOL = 1e-10
TRACE_DRIFT_TOL = 1e-8
POSITIVITY_WARN = -1e-7
POSITIVITY_ABORT = -1e-6
NULL_SV_REL = 1e-10
DENSE_STEADY_LIMIT = 4096
STEADY_TOL = 1e-9
METHODS = ("rk45", "dop853", "rk4", "propagator")

HamiltonianLike = Union[Operator, Callable[[float], Union[Operator, np.ndarray]]]


@dataclass(frozen=True)
class Tolerances:
    rtol: float = RTOL
    atol: float = ATOL

    def looser(self, factor: float = 10.0) -> "Tolerances":
        return Tolerances(self.rtol * factor, self.atol * factor)


@dataclass(frozen=True, eq=False)
class CollapseChannel:
    operator: Operator
    rate: float
    label: str = ""


@dataclass(frozen=True, eq=False)
class LindbladSystem:
    space: HilbertSpace
    hamiltonian: HamiltonianLike
    collapse_ops: tuple[CollapseChannel, ...] = ()
    label: str = ""

    def __post_init__(self):
        chans = tuple(self.collapse_ops)
        for ch in chans:
            if ch.operator.space != self.space:
                raise SpaceMismatchError(f"collapse operator {ch.label or ch.operator.label} is on {ch.operator.space}, system on {self.space}")
            if not (math.isfinite(ch.rate) and ch.rate >= 0.0):
                raise ModelError(f"collapse rate must be finite and >= 0, got {ch.rate} for {ch.label}")
        object.__setattr__(self, "collapse_ops", chans)
        if isinstance(self.hamiltonian, Operator):
            if self.hamiltonian.space != self.space:
                raise SpaceMismatchError(f"hamiltonian on {self.hamiltonian.space}, system on {self.space}")
            herr = hermiticity_error(self.hamiltonian.dense())
            if herr > HERMITIAN_TOL:
                raise ModelError(f"hamiltonian is not Hermitian (error {herr:.3e})")
        elif not callable(self.hamiltonian):
            raise ModelError("hamiltonian must be an Operator or a callable t -> Operator")

    @property
    def time_dependent(self) -> bool:
        return not isinstance(self.hamiltonian, Operator)

    @property
    def dim(self) -> int:
        return self.space.total_dim

    def hamiltonian_at(self, t: float) -> np.ndarray:
        if not self.time_dependent:
            return self._static_h
        h = self.hamiltonian(t)
        m = h.dense() if isinstance(h, Operator) else np.asarray(h, dtype=complex)
        if m.shape != (self.dim, self.dim):
            raise ModelError(f"hamiltonian(t={t}) has shape {m.shape}, expected {(self.dim, self.dim)}")
        herr = hermiticity_error(m)
        if herr > HERMITIAN_TOL:
            raise ModelError(f"hamiltonian(t={t}) is not Hermitian (error {herr:.3e})")
        return m

    @cached_property
    def _static_h(self) -> np.ndarray:
        return self.hamiltonian.dense()

    @cached_property
    def jump_terms(self) -> list[tuple[float, np.ndarray, np.ndarray]]:
        """(rate, L, L^dag L) for every channel with a nonzero rate."""
        out = []
        for ch in self.collapse_ops:
            if ch.rate == 0.0:
                continue
            L = ch.operator.dense()
            out.append((ch.rate, L, L.conj().T @ L))
        return out

    @cached_property
    def dissipator_superop(self) -> sp.csr_matrix:
        n = self.dim
        eye = sp.identity(n, format="csr")
        D = sp.csr_matrix((n * n, n * n), dtype=complex)
        for ch in self.collapse_ops:
            if ch.rate == 0.0:
                continue
            L = ch.operator.sparse()
            LdL = (L.conj().T @ L).tocsr()
            D = D + ch.rate * (sp.kron(L, L.conj()) - 0.5 * sp.kron(LdL, eye) - 0.5 * sp.kron(eye, LdL.T))
        return D.tocsr()

    def hamiltonian_superop(self, h: np.ndarray | sp.spmatrix) -> sp.csr_matrix:
        n = self.dim
        eye = sp.identity(n, format="csr")
        hs = sp.csr_matrix(h)
        return (-1j * (sp.kron(hs, eye) - sp.kron(eye, hs.T))).tocsr()

    @cached_property
    def _liouvillian(self) -> sp.csr_matrix:
        return (self.hamiltonian_superop(self.hamiltonian.sparse()) + self.dissipator_superop).tocsr()

    def liouvillian(self) -> sp.csr_matrix:
        if self.time_dependent:
            raise ModelError("liouvillian() needs a time-independent hamiltonian")
        return self._liouvillian

    def with_hamiltonian(self, hamiltonian: HamiltonianLike, label: str | None = None) -> "LindbladSystem":
        return LindbladSystem(self.space, hamiltonian, self.collapse_ops, self.label if label is None else label)

    def with_channels(self, extra: Sequence[CollapseChannel], label: str | None = None) -> "LindbladSystem":
        return LindbladSystem(self.space, self.hamiltonian, self.collapse_ops + tuple(extra), self.label if label is None else label)


@dataclass
class TimeSeries:
    times: np.ndarray
    values: dict[str, np.ndarray]
    errors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    states: list | None = None
    final_state: object | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or len(self.times) == 0:
            raise ValueError("times must be a non-empty 1-D grid")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        for name, arr in {**self.values, **self.errors}.items():
            if len(arr) != len(self.times):
                raise ValueError(f"{name}: {len(arr)} samples for {len(self.times)} times")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    @property
    def observables(self) -> list[str]:
        return list(self.values)

    def to_frame(self) -> pd.DataFrame:
        cols: dict[str, np.ndarray] = {"t": self.times}
        for name, arr in self.values.items():
            if np.iscomplexobj(arr):
                cols[f"{name}_re"] = arr.real
                cols[f"{name}_im"] = arr.imag
            else:
                cols[name] = arr
        for name, arr in self.errors.items():
            cols[f"{name}_se"] = arr
        return pd.DataFrame(cols)


def check_grid(tgrid) -> np.ndarray:
    t = np.asarray(tgrid, dtype=float).ravel()
    if len(t) == 0:
        raise ValueError("time grid is empty")
    if np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return t


def as_observables(observables) -> dict[str, Operator]:
    if observables is None:
        return {}
    if isinstance(observables, Mapping):
        return dict(observables)
    out = {}
    for i, op in enumerate(observables):
        name = op.label or f"obs{i}"
        if name in out:
            name = f"{name}_{i}"
        out[name] = op
    return out


def _rhs_dense(h: np.ndarray, rho: np.ndarray, jumps) -> np.ndarray:
    d = -1j * (h @ rho - rho @ h)
    for rate, L, LdL in jumps:
        d += rate * (L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL))
    return d


def lindblad_rhs(sys: LindbladSystem, rho: DensityMatrix | np.ndarray, t: float = 0.0) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        if rho.space != sys.space:
            raise SpaceMismatchError(f"state on {rho.space}, system on {sys.space}")
        m = rho.matrix
    else:
        m = np.asarray(rho, dtype=complex)
        if m.shape != (sys.dim, sys.dim):
            raise SpaceMismatchError(f"rho shape {m.shape} does not match system dim {sys.dim}")
    return _rhs_dense(sys.hamiltonian_at(t), m, sys.jump_terms)


# --- integrators: each returns an array of flattened states, one row per output time ---

def _integrate_ivp(sys: LindbladSystem, y0: np.ndarray, t: np.ndarray, method: str,
                   tol: Tolerances, max_step: float | None) -> np.ndarray:
    if len(t) == 1:
        return y0[None, :]
    n = sys.dim
    if sys.time_dependent:
        jumps = sys.jump_terms

        def fun(tt, y):
            return _rhs_dense(sys.hamiltonian_at(tt), y.reshape(n, n), jumps).ravel()
    else:
        L = sys.liouvillian()

        def fun(tt, y):
            return L @ y

    sol = solve_ivp(
        fun, (t[0], t[-1]), y0,
        method="RK45" if method == "rk45" else "DOP853",
        t_eval=t, rtol=tol.rtol, atol=tol.atol,
        max_step=np.inf if max_step is None else max_step,
    )
    if not sol.success:
        raise ToleranceError(f"integration failed ({method}, rtol={tol.rtol:g}): {sol.message}")
    return sol.y.T


def _integrate_rk4(sys: LindbladSystem, y0: np.ndarray, t: np.ndarray, n_substeps: int) -> np.ndarray:
    n = sys.dim
    jumps = sys.jump_terms
    out = np.empty((len(t), n * n), dtype=complex)
    out[0] = y0
    rho = y0.reshape(n, n).copy()

    def f(tt, r):
        return _rhs_dense(sys.hamiltonian_at(tt), r, jumps)

    for k in range(1, len(t)):
        h = (t[k] - t[k - 1]) / n_substeps
        tt = t[k - 1]
        for _ in range(n_substeps):
            k1 = f(tt, rho)
            k2 = f(tt + 0.5 * h, rho + 0.5 * h * k1)
            k3 = f(tt + 0.5 * h, rho + 0.5 * h * k2)
            k4 = f(tt + h, rho + h * k3)
            rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            tt += h
        out[k] = rho.ravel()
    return out


def _integrate_propagator(sys: LindbladSystem, y0: np.ndarray, t: np.ndarray) -> np.ndarray:
    if sys.time_dependent:
        raise ModelError("propagator method needs a time-independent system")
    L = sys.liouvillian().toarray()
    out = np.empty((len(t), len(y0)), dtype=complex)
    out[0] = y0
    cache: dict[float, np.ndarray] = {}
    y = y0
    for k in range(1, len(t)):
        dt = t[k] - t[k - 1]
        key = round(dt, 12)
        P = cache.get(key)
        if P is None:
            log.debug("propagator: expm over dt=%g (generator %d x %d)", dt, *L.shape)
            P = expm(L * dt)
            cache[key] = P
        y = P @ y
        out[k] = y
    return out


def _integrate(sys, y0, t, method, tol, max_step, n_substeps):
    if method in ("rk45", "dop853"):
        return _integrate_ivp(sys, y0, t, method, tol, max_step)
    if method == "rk4":
        return _integrate_rk4(sys, y0, t, n_substeps)
    if method == "propagator":
        return _integrate_propagator(sys, y0, t)
    raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")


def _expectations(Y: np.ndarray, ops: dict[str, Operator], n: int) -> dict[str, np.ndarray]:
    values = {}
    for name, op in ops.items():
        # Tr(O rho) = sum_ij O_ij rho_ji = vec(O^T) . vec(rho)
        w = op.dense().T.ravel()
        v = Y @ w
        scale = 1.0 + float(np.max(np.abs(v.real))) if len(v) else 1.0
        values[name] = v.real.copy() if np.max(np.abs(v.imag), initial=0.0) <= 1e-10 * scale else v
    return values


def state_diagnostics(Y: np.ndarray, t: np.ndarray, n: int, abort: float = POSITIVITY_ABORT) -> dict:
    """Trace / Hermiticity / positivity bookkeeping over every output state."""
    max_trace = 0.0
    max_herm = 0.0
    lam_min = np.inf
    warned = False
    for k in range(len(t)):
        rho = Y[k].reshape(n, n)
        max_trace = max(max_trace, abs(np.trace(rho) - 1.0))
        max_herm = max(max_herm, hermiticity_error(rho))
        lam = min_eigenvalue(rho)
        lam_min = min(lam_min, lam)
        if lam < abort:
            raise PositivityError(
                f"positivity violated at t={t[k]:.6g}: min eigenvalue {lam:.3e} < {abort:g}",
                time=float(t[k]), eigenvalue=lam,
            )
        if lam < POSITIVITY_WARN and not warned:
            log.warning("min eigenvalue %.3e at t=%.6g (below %g)", lam, t[k], POSITIVITY_WARN)
            warned = True
    if max_trace > TRACE_DRIFT_TOL:
        log.warning("trace drift %.3e exceeds %g", max_trace, TRACE_DRIFT_TOL)
    return {
        "max_trace_drift": float(max_trace),
        "max_hermiticity_drift": float(max_herm),
        "min_eigenvalue": float(lam_min),
    }


def evolve(
    sys: LindbladSystem,
    rho0: DensityMatrix,
    tgrid,
    observables=(),
    *,
    method: str = "rk45",
    rtol: float = RTOL,
    atol: float = ATOL,
    max_step: float | None = None,
    n_substeps: int = 20,
    estimate_error: bool = False,
    keep_states: bool = False,
) -> TimeSeries:
    """Integrate the master equation from rho0 and sample observables on tgrid.

    rk45/dop853 are adaptive embedded pairs (solve_ivp); rk4 is a fixed-step
    fallback with n_substeps per output interval; propagator applies
    expm(L dt) and is meant for long windows of time-independent systems.
    """
    if rho0.space != sys.space:
        raise SpaceMismatchError(f"rho0 on {rho0.space}, system on {sys.space}")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    t = check_grid(tgrid)
    ops = as_observables(observables)
    for name, op in ops.items():
        if op.space != sys.space:
            raise SpaceMismatchError(f"observable {name} on {op.space}, system on {sys.space}")
    n = sys.dim
    tol = Tolerances(rtol, atol)
    log.debug("evolve: method=%s dim=%d points=%d t=[%g, %g]", method, n, len(t), t[0], t[-1])

    y0 = rho0.matrix.ravel().astype(complex)
    Y = _integrate(sys, y0, t, method, tol, max_step, n_substeps)
    diag = state_diagnostics(Y, t, n)
    values = _expectations(Y, ops, n)

    meta = {
        "method": method,
        "rtol": rtol,
        "atol": atol,
        "dim": n,
        "system": sys.label,
        **diag,
    }
    if estimate_error:
        loose = tol.looser()
        Y2 = _integrate(sys, y0, t, method, loose, max_step, max(1, n_substeps // 2))
        v2 = _expectations(Y2[-1:], ops, n)
        meta["error_estimate"] = {
            name: float(abs(values[name][-1] - v2[name][0])) + atol for name in ops
        }

    final = DensityMatrix(sys.space, Y[-1].reshape(n, n), check=False)
    states = [DensityMatrix(sys.space, Y[k].reshape(n, n), check=False) for k in range(len(t))] if keep_states else None
    return TimeSeries(t, values, metadata=meta, states=states, final_state=final)


# --- steady states ---

@dataclass(frozen=True, eq=False)
class SteadyState:
    rho: DensityMatrix
    degenerate: bool
    multiplicity: int | None
    residual: float
    method: str


def _finish_steady(sys: LindbladSystem, vec: np.ndarray) -> tuple[DensityMatrix, float]:
    n = sys.dim
    rho = vec.reshape(n, n)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    residual = float(np.linalg.norm(_rhs_dense(sys.hamiltonian_at(0.0), rho, sys.jump_terms)))
    if residual > STEADY_TOL:
        log.warning("steady state residual %.3e above %g", residual, STEADY_TOL)
    return DensityMatrix(sys.space, rho, check=False), residual


def _steady_direct(sys: LindbladSystem, rho0: DensityMatrix | None) -> SteadyState:
    L = sys.liouvillian()
    N = L.shape[0]
    n = sys.dim
    if N > DENSE_STEADY_LIMIT:
        A = L.tolil()
        A[0, :] = np.eye(n, dtype=complex).ravel()
        b = np.zeros(N, dtype=complex)
        b[0] = 1.0
        vec = spsolve(A.tocsc(), b)
        if not np.all(np.isfinite(vec)):
            raise ConvergenceError("sparse steady-state solve failed (singular generator?)")
        rho, res = _finish_steady(sys, vec)
        return SteadyState(rho, False, None, res, "direct-sparse")

    U, s, Vh = np.linalg.svd(L.toarray())
    null = np.flatnonzero(s <= NULL_SV_REL * s[0]) if s[0] > 0 else np.arange(N)
    k = len(null)
    if k == 0:
        raise ConvergenceError(f"no null direction found (smallest singular value {s[-1]:.3e})")
    if k == 1:
        rho, res = _finish_steady(sys, Vh[null[0]].conj())
        return SteadyState(rho, False, 1, res, "direct")
    if rho0 is None:
        raise DegenerateSteadyStateError(
            f"steady-state manifold has multiplicity {k}; supply rho0 to project onto it", multiplicity=k
        )
    R = Vh[null].conj().T
    Lh = U[:, null].conj().T
    P = R @ np.linalg.solve(Lh @ R, Lh)
    rho, res = _finish_steady(sys, P @ rho0.matrix.ravel())
    log.info("steady state degenerate (multiplicity %d): returned projection of rho0", k)
    return SteadyState(rho, True, k, res, "direct")


def _steady_evolve(sys: LindbladSystem, rho0: DensityMatrix | None, t_chunk: float, max_iter: int) -> SteadyState:
    n = sys.dim
    L = sys.liouvillian().toarray()
    y = (rho0 if rho0 is not None else DensityMatrix.maximally_mixed(sys.space)).matrix.ravel().astype(complex)
    P = expm(L * t_chunk)
    dt = t_chunk
    for it in range(max_iter):
        y = P @ y
        y = y / np.trace(y.reshape(n, n))
        if np.linalg.norm(L @ y) <= STEADY_TOL:
            rho, res = _finish_steady(sys, y)
            log.debug("steady (evolve): converged after %d chunks, last dt=%g", it + 1, dt)
            return SteadyState(rho, False, None, res, "evolve")
        if it % 10 == 9:
            P = P @ P
            dt *= 2
    raise ConvergenceError(f"long-time evolution did not converge after {max_iter} chunks (last dt={dt:g})")


def steady_state(
    sys: LindbladSystem,
    rho0: DensityMatrix | None = None,
    *,
    method: str = "direct",
    t_chunk: float = 1.0,
    max_iter: int = 400,
) -> SteadyState:
    if sys.time_dependent:
        raise ModelError("steady_state needs a time-independent system")
    if rho0 is not None and rho0.space != sys.space:
        raise SpaceMismatchError(f"rho0 on {rho0.space}, system on {sys.space}")
    if method == "direct":
        return _steady_direct(sys, rho0)
    if method == "evolve":
        return _steady_evolve(sys, rho0, t_chunk, max_iter)
    raise ValueError(f"unknown steady-state method {method!r}")
