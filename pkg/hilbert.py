"""Operator algebra on composite truncated Hilbert spaces.

Ordering convention: the leftmost subsystem is the slowest-varying index of
the flattened basis, i.e. |i, j> sits at flat index i * d_1 + j (numpy C order,
the same order `np.kron` produces).

Qubits use the Fock convention: |0> is the vacuum, sigma_minus = ladder(2)
and sigma_z = 2 a^dag a - 1, so |0> is the sigma_z = -1 ground state.
"""
from __future__ import annotations

import logging
import math
from dataclasses import InitVar, dataclass
from functools import reduce
from numbers import Number
from typing import Iterable, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln
from scipy.stats import poisson

from errors import DimensionError, SpaceMismatchError, TruncationError

log = logging.getLogger(__name__)

SPARSE_FILL_THRESHOLD = 0.25
NORM_TOL = 1e-12
TRACE_TOL = 1e-9
HERMITIAN_TOL = 1e-10
POSITIVITY_TOL = 1e-7
TAIL_TOL = 1e-10

Matrix = Union[np.ndarray, sp.spmatrix]


@dataclass(frozen=True)
class HilbertSpace:
    subsystem_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.subsystem_dims)
        if not dims:
            raise DimensionError("HilbertSpace needs at least one subsystem")
        if any(d < 2 for d in dims):
            raise DimensionError(f"every subsystem dim must be >= 2, got {list(dims)}")
        object.__setattr__(self, "subsystem_dims", dims)

    @classmethod
    def vacuum_only(cls) -> "HilbertSpace":
        """One-level space of a mode truncated to |0>; tensor products with it are rejected."""
        space = object.__new__(cls)
        object.__setattr__(space, "subsystem_dims", (1,))
        return space

    @property
    def total_dim(self) -> int:
        return math.prod(self.subsystem_dims)

    @property
    def n_sites(self) -> int:
        return len(self.subsystem_dims)

    def index(self, levels: Sequence[int]) -> int:
        if len(levels) != self.n_sites:
            raise DimensionError(f"expected {self.n_sites} levels, got {len(levels)}")
        for lv, d in zip(levels, self.subsystem_dims):
            if not 0 <= lv < d:
                raise DimensionError(f"level {lv} outside 0..{d - 1}")
        return int(np.ravel_multi_index(tuple(levels), self.subsystem_dims))

    def levels(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(index, self.subsystem_dims))

    def __str__(self) -> str:
        return "x".join(str(d) for d in self.subsystem_dims)


def _as_space(space_or_dim: HilbertSpace | int | Sequence[int]) -> HilbertSpace:
    if isinstance(space_or_dim, HilbertSpace):
        return space_or_dim
    if isinstance(space_or_dim, (int, np.integer)):
        return HilbertSpace((int(space_or_dim),))
    return HilbertSpace(tuple(space_or_dim))


def _choose_storage(m: Matrix) -> Matrix:
    n = m.shape[0]
    if sp.issparse(m):
        m = sp.csr_matrix(m, dtype=complex, copy=True)
        m.eliminate_zeros()
        nnz = m.nnz
    else:
        m = np.array(m, dtype=complex)
        nnz = int(np.count_nonzero(m))
    if nnz / float(n * n) < SPARSE_FILL_THRESHOLD:
        return m if sp.issparse(m) else sp.csr_matrix(m)
    dense = m.toarray() if sp.issparse(m) else m
    dense.setflags(write=False)
    return dense


def _check_space(a: HilbertSpace, b: HilbertSpace, what: str = "operands") -> None:
    if a != b:
        raise SpaceMismatchError(f"{what} live on different spaces: {a} vs {b}")


@dataclass(frozen=True, eq=False)
class Operator:
    space: HilbertSpace
    matrix: Matrix
    label: str = ""

    def __post_init__(self):
        n = self.space.total_dim
        if self.matrix.shape != (n, n):
            raise DimensionError(f"matrix shape {self.matrix.shape} does not match space {self.space} (dim {n})")
        object.__setattr__(self, "matrix", _choose_storage(self.matrix))

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else self.matrix

    def sparse(self) -> sp.csr_matrix:
        return self.matrix if self.is_sparse else sp.csr_matrix(self.matrix)

    def dag(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T, f"{self.label}^dag" if self.label else "")

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return hermiticity_error(self.dense()) <= tol

    def norm(self) -> float:
        return float(np.linalg.norm(self.dense(), 2))

    def allclose(self, other: "Operator", atol: float = 1e-12) -> bool:
        _check_space(self.space, other.space)
        return bool(np.allclose(self.dense(), other.dense(), rtol=0.0, atol=atol))

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(self.matrix @ vec)

    def relabel(self, label: str) -> "Operator":
        return Operator(self.space, self.matrix, label)

    # algebra

    def __add__(self, other):
        if isinstance(other, Number) and other == 0:
            return self
        _check_space(self.space, other.space)
        return Operator(self.space, self.matrix + other.matrix)

    __radd__ = __add__

    def __sub__(self, other):
        _check_space(self.space, other.space)
        return Operator(self.space, self.matrix - other.matrix)

    def __neg__(self):
        return Operator(self.space, -self.matrix, self.label)

    def __mul__(self, scalar):
        if not isinstance(scalar, Number):
            return NotImplemented
        return Operator(self.space, self.matrix * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Operator(self.space, self.matrix / scalar)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            _check_space(self.space, other.space)
            return Operator(self.space, self.matrix @ other.matrix)
        return NotImplemented

    def __repr__(self) -> str:
        kind = "sparse" if self.is_sparse else "dense"
        return f"Operator({self.label or '?'}, space={self.space}, {kind})"


@dataclass(frozen=True, eq=False)
class PureState:
    space: HilbertSpace
    amplitudes: np.ndarray
    label: str = ""

    def __post_init__(self):
        vec = np.array(self.amplitudes, dtype=complex).ravel()
        if vec.shape[0] != self.space.total_dim:
            raise DimensionError(f"state length {vec.shape[0]} does not match space {self.space}")
        nrm = np.linalg.norm(vec)
        if not np.isfinite(nrm) or nrm == 0.0:
            raise ValueError("cannot normalize a zero or non-finite state vector")
        vec = vec / nrm
        vec.setflags(write=False)
        object.__setattr__(self, "amplitudes", vec)

    def dm(self) -> "DensityMatrix":
        return DensityMatrix.from_state(self)

    def inner(self, other: "PureState") -> complex:
        """<self|other>."""
        _check_space(self.space, other.space, "states")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def relabel(self, label: str) -> "PureState":
        return PureState(self.space, self.amplitudes, label)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    space: HilbertSpace
    matrix: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check: bool):
        m = np.array(self.matrix.toarray() if sp.issparse(self.matrix) else self.matrix, dtype=complex)
        n = self.space.total_dim
        if m.shape != (n, n):
            raise DimensionError(f"density matrix shape {m.shape} does not match space {self.space}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if check:
            problems = density_matrix_problems(m)
            if problems:
                raise ValueError("invalid density matrix: " + "; ".join(problems))

    @classmethod
    def from_state(cls, psi: PureState) -> "DensityMatrix":
        v = psi.amplitudes
        return cls(psi.space, np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls, space: HilbertSpace) -> "DensityMatrix":
        n = space.total_dim
        return cls(space, np.eye(n, dtype=complex) / n)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))

    def min_eigenvalue(self) -> float:
        return min_eigenvalue(self.matrix)

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()


def hermiticity_error(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


def min_eigenvalue(m: np.ndarray) -> float:
    herm = 0.5 * (m + m.conj().T)
    return float(np.linalg.eigvalsh(herm)[0])


def density_matrix_problems(m: np.ndarray,
                            trace_tol: float = TRACE_TOL,
                            herm_tol: float = HERMITIAN_TOL,
                            pos_tol: float = POSITIVITY_TOL) -> list[str]:
    problems = []
    tr = np.trace(m)
    if abs(tr - 1.0) > trace_tol:
        problems.append(f"trace {tr.real:.3e}{tr.imag:+.3e}j")
    herr = hermiticity_error(m)
    if herr > herm_tol:
        problems.append(f"hermiticity error {herr:.3e}")
    lam = min_eigenvalue(m)
    if lam < -pos_tol:
        problems.append(f"min eigenvalue {lam:.3e}")
    return problems


# --- single-mode constructors ---

def _check_dim(dim: int) -> int:
    if not isinstance(dim, (int, np.integer)) or dim < 2:
        raise DimensionError(f"dimension must be an integer >= 2, got {dim!r}")
    return int(dim)


def ladder(dim: int) -> Operator:
    """Annihilation operator with <n-1|a|n> = sqrt(n)."""
    dim = _check_dim(dim)
    m = sp.diags(np.sqrt(np.arange(1, dim, dtype=float)), offsets=1, shape=(dim, dim))
    return Operator(HilbertSpace((dim,)), m, "a")


def number(dim: int) -> Operator:
    dim = _check_dim(dim)
    return Operator(HilbertSpace((dim,)), sp.diags(np.arange(dim, dtype=float)), "n")


def identity(space: HilbertSpace | int) -> Operator:
    space = _as_space(space)
    return Operator(space, sp.identity(space.total_dim, format="csr"), "I")


def projector(dim: int, level: int) -> Operator:
    dim = _check_dim(dim)
    if not 0 <= level < dim:
        raise DimensionError(f"level {level} outside 0..{dim - 1}")
    m = sp.csr_matrix(([1.0], ([level], [level])), shape=(dim, dim))
    return Operator(HilbertSpace((dim,)), m, f"P{level}")


def parity(dim: int) -> Operator:
    """exp(i pi a^dag a) on a truncated mode; dim=1 keeps only the vacuum."""
    if isinstance(dim, (int, np.integer)) and dim == 1:
        return Operator(HilbertSpace.vacuum_only(), sp.identity(1, format="csr", dtype=complex), "parity")
    dim = _check_dim(dim)
    return Operator(HilbertSpace((dim,)), sp.diags((-1.0) ** np.arange(dim)), "parity")


def sigma_minus() -> Operator:
    return ladder(2).relabel("sm")


def sigma_plus() -> Operator:
    return ladder(2).dag().relabel("sp")


def sigma_x() -> Operator:
    a = ladder(2)
    return (a + a.dag()).relabel("sx")


def sigma_y() -> Operator:
    a = ladder(2)
    return (1j * (a.dag() - a)).relabel("sy")


def sigma_z() -> Operator:
    return (2.0 * number(2) - identity(2)).relabel("sz")


# --- composition ---

def embed(op: Operator, site: int, space: HilbertSpace) -> Operator:
    """Place a single-subsystem operator on factor `site`, identity elsewhere."""
    if not 0 <= site < space.n_sites:
        raise DimensionError(f"site {site} out of range for {space.n_sites} subsystems")
    d = space.subsystem_dims[site]
    if op.space.total_dim != d:
        raise DimensionError(f"operator dim {op.space.total_dim} != subsystem dim {d} at site {site}")
    left = math.prod(space.subsystem_dims[:site])
    right = math.prod(space.subsystem_dims[site + 1:])
    m = sp.kron(sp.kron(sp.identity(left), op.sparse()), sp.identity(right), format="csr")
    return Operator(space, m, f"{op.label}[{site}]" if op.label else "")


def tensor(*ops: Operator) -> Operator:
    if not ops:
        raise DimensionError("tensor needs at least one operator")
    space = HilbertSpace(tuple(d for op in ops for d in op.space.subsystem_dims))
    m = reduce(lambda x, y: sp.kron(x, y, format="csr"), (op.sparse() for op in ops))
    return Operator(space, m, "*".join(op.label for op in ops))


def commutator(a: Operator, b: Operator) -> Operator:
    return a @ b - b @ a


def anticommutator(a: Operator, b: Operator) -> Operator:
    return a @ b + b @ a


# --- states ---

def fock(dim: int, n: int) -> PureState:
    dim = _check_dim(dim)
    if not 0 <= n < dim:
        raise DimensionError(f"level {n} outside 0..{dim - 1}")
    vec = np.zeros(dim, dtype=complex)
    vec[n] = 1.0
    return PureState(HilbertSpace((dim,)), vec, f"|{n}>")


def basis_state(space: HilbertSpace, levels: Sequence[int], label: str = "") -> PureState:
    vec = np.zeros(space.total_dim, dtype=complex)
    vec[space.index(levels)] = 1.0
    return PureState(space, vec, label or "|" + ",".join(str(lv) for lv in levels) + ">")


def product_state(local: Iterable[np.ndarray], space: HilbertSpace, label: str = "") -> PureState:
    vecs = [np.asarray(v, dtype=complex) for v in local]
    if tuple(len(v) for v in vecs) != space.subsystem_dims:
        raise DimensionError(f"local vectors {[len(v) for v in vecs]} do not match space {space}")
    return PureState(space, reduce(np.kron, vecs), label)


def plus_minus(bit: int, dim: int = 2, upper: int = 1) -> np.ndarray:
    """(|0> + (-1)^bit |upper>)/sqrt(2) as a local vector; bit 0 -> |+>."""
    v = np.zeros(dim, dtype=complex)
    v[0] = 1.0
    v[upper] = -1.0 if bit else 1.0
    return v / math.sqrt(2.0)


def x_basis_state(bits: Sequence[int], label: str = "") -> PureState:
    """Qubit product of |+> (bit 0) and |-> (bit 1)."""
    space = HilbertSpace((2,) * len(bits))
    return product_state((plus_minus(b) for b in bits), space, label or "|" + "".join(map(str, bits)) + ">x")


def default_boson_dim(alpha: complex) -> int:
    r = abs(alpha)
    return int(math.ceil(r * r + 5.0 * r + 10.0))


def coherent_state(alpha: complex, dim: int | None = None) -> PureState:
    """Truncated coherent state; raises TruncationError if the dropped tail weight >= 1e-10."""
    dim = default_boson_dim(alpha) if dim is None else _check_dim(dim)
    mean = abs(alpha) ** 2
    tail = float(poisson.sf(dim - 1, mean)) if mean > 0 else 0.0
    if tail >= TAIL_TOL:
        raise TruncationError(
            f"dim={dim} too small for alpha={alpha}: truncated tail weight {tail:.3e} >= {TAIL_TOL:g}",
            tail_weight=tail,
        )
    n = np.arange(dim)
    if alpha == 0:
        amps = (n == 0).astype(complex)
    else:
        logmag = -0.5 * mean + n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1)
        amps = np.exp(logmag) * np.exp(1j * n * np.angle(alpha))
    return PureState(HilbertSpace((dim,)), amps, f"|alpha={alpha}>")


def expectation(op: Operator, state: PureState | DensityMatrix) -> complex:
    _check_space(op.space, state.space, "operator and state")
    if isinstance(state, PureState):
        psi = state.amplitudes
        return complex(np.vdot(psi, op.apply(psi)))
    rho = state.matrix
    if op.is_sparse:
        return complex(op.matrix.multiply(rho.T).sum())
    return complex(np.einsum("ij,ji->", op.matrix, rho))
