"""Circuit models: full Lindblad systems plus labeled states and operators.

Every builder returns a ModelBundle. Bundles with shadow elements also carry
the bare primary system and the shadow couplings, so `bundle.reduced()` gives
the shadow-eliminated system on the primary space.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

from dynamics import CollapseChannel, LindbladSystem
from errors import ConfigError, ModelError, TruncationError
from hilbert import (
    TAIL_TOL,
    HilbertSpace,
    Operator,
    PureState,
    basis_state,
    default_boson_dim,
    embed,
    identity,
    ladder,
    number,
    parity,
    plus_minus,
    product_state,
    projector,
    sigma_minus,
    sigma_plus,
    sigma_x,
    sigma_y,
    sigma_z,
)
from ratchet import ShadowCoupling, shadow_eliminate

log = logging.getLogger(__name__)

LOSS_CHANNELS = ("sigma_minus", "sigma_y")


@dataclass(frozen=True, eq=False)
class ModelBundle:
    name: str
    system: LindbladSystem
    labeled_states: dict[str, PureState]
    labeled_ops: dict[str, Operator]
    parameters: dict[str, object]
    primary: LindbladSystem | None = None
    couplings: tuple[ShadowCoupling, ...] = ()
    modes: dict[str, Operator] = field(default_factory=dict)
    initial: str | None = None
    logical: tuple[str, str] | None = None

    def __post_init__(self):
        space = self.system.space
        for kind, items in (("state", self.labeled_states), ("operator", self.labeled_ops), ("mode", self.modes)):
            for label, obj in items.items():
                if obj.space != space:
                    raise ModelError(f"{self.name}: {kind} {label!r} lives on {obj.space}, system on {space}")
        if self.initial is not None and self.initial not in self.labeled_states:
            raise ModelError(f"{self.name}: initial state {self.initial!r} is not labeled")
        if self.logical is not None:
            for label in self.logical:
                psi = self.state(label)
                if abs(np.linalg.norm(psi.amplitudes) - 1.0) > 1e-12:
                    raise ModelError(f"{self.name}: logical state {label!r} is not normalized")

    def state(self, label: str) -> PureState:
        try:
            return self.labeled_states[label]
        except KeyError:
            raise ConfigError(f"{self.name}: unknown state {label!r}; known: {sorted(self.labeled_states)}") from None

    def op(self, label: str) -> Operator:
        try:
            return self.labeled_ops[label]
        except KeyError:
            raise ConfigError(f"{self.name}: unknown operator {label!r}; known: {sorted(self.labeled_ops)}") from None

    def observables(self, labels) -> dict[str, Operator]:
        return {label: self.op(label) for label in labels}

    def reduced(self) -> LindbladSystem:
        if self.primary is None or not self.couplings:
            raise ConfigError(f"{self.name}: no shadow couplings to eliminate")
        return shadow_eliminate(self.primary, self.couplings)


def _rates(**values: float) -> None:
    for name, value in values.items():
        if not (math.isfinite(value) and value >= 0):
            raise ModelError(f"{name} must be finite and >= 0, got {value}")


def _shadow_loss(GammaS: float) -> None:
    if not (math.isfinite(GammaS) and GammaS > 0):
        raise ModelError(f"GammaS must be > 0, got {GammaS}")


def _hermitian(h: Operator, name: str) -> Operator:
    return (0.5 * (h + h.dag())).relabel(name)


# --- three-level refill ---

def three_level_refill(Delta: float, Omega: float, nu: float, GammaP: float, GammaS: float) -> ModelBundle:
    """Three-level primary P refilled to |1> through a two-level shadow S, space [P, S]."""
    _rates(GammaP=GammaP)
    _shadow_loss(GammaS)
    space = HilbertSpace((3, 2))
    aP, aS = embed(ladder(3), 0, space), embed(ladder(2), 1, space)
    P = {k: embed(projector(3, k), 0, space) for k in range(3)}
    nS = embed(number(2), 1, space)
    h = Delta * P[2] + Omega * (aP.dag() @ aS.dag() + aP @ aS) + nu * nS
    system = LindbladSystem(
        space,
        h.relabel("H"),
        (CollapseChannel(aP, GammaP, "loss_P"), CollapseChannel(aS, GammaS, "loss_S")),
        "three_level",
    )
    primary_space = HilbertSpace((3,))
    a = ladder(3)
    primary = LindbladSystem(primary_space, (Delta * projector(3, 2)).relabel("H_P"),
                             (CollapseChannel(a, GammaP, "loss_P"),), "three_level_primary")
    states = {f"{k}P0S": basis_state(space, (k, 0), f"|{k}P,0S>") for k in range(3)}
    ops = {
        "n_P": embed(number(3), 0, space).relabel("n_P"),
        "n_S": nS.relabel("n_S"),
        **{f"P{k}_P": P[k].relabel(f"P{k}_P") for k in range(3)},
    }
    return ModelBundle(
        name="three_level",
        system=system,
        labeled_states=states,
        labeled_ops=ops,
        parameters={"Delta": Delta, "Omega": Omega, "nu": nu, "GammaP": GammaP, "GammaS": GammaS},
        primary=primary,
        couplings=(ShadowCoupling(a.dag(), Omega, nu, GammaS, "S"),),
        modes={"P": aP},
        initial="0P0S",
    )


# --- bit-flip ring ---

def _x_projector(bits, sites, space: HilbertSpace) -> Operator:
    """Projector onto the x-basis string `bits` on `sites`, identity elsewhere."""
    out = identity(space)
    for bit, site in zip(bits, sites):
        sx = embed(sigma_x(), site, space)
        out = out @ (0.5 * (identity(space) + (-1.0 if bit else 1.0) * sx))
    return out


def _ring_ops(space: HilbertSpace, n_primary: int = 3) -> dict[str, Operator]:
    sites = range(n_primary)
    sx = [embed(sigma_x(), i, space) for i in sites]
    maj0 = sum(_x_projector(b, sites, space) for b in product((0, 1), repeat=n_primary) if sum(b) <= n_primary // 2)
    maj1 = sum(_x_projector(b, sites, space) for b in product((0, 1), repeat=n_primary) if sum(b) > n_primary // 2)
    code = _x_projector((0,) * n_primary, sites, space) + _x_projector((1,) * n_primary, sites, space)
    ops = {
        "Z_L": (maj0 - maj1).relabel("Z_L"),
        "P_maj0": maj0.relabel("P_maj0"),
        "P_maj1": maj1.relabel("P_maj1"),
        "P_code": code.relabel("P_code"),
        "X1X2X3": (sx[0] @ sx[1] @ sx[2]).relabel("X1X2X3"),
    }
    for i in sites:
        ops[f"X{i + 1}"] = sx[i].relabel(f"X{i + 1}")
        ops[f"n{i + 1}"] = embed(number(2), i, space).relabel(f"n{i + 1}")
    return ops


def _ring_hamiltonian(J: float, space: HilbertSpace) -> Operator:
    sx = [embed(sigma_x(), i, space) for i in range(3)]
    return -J * (sx[0] @ sx[1] + sx[1] @ sx[2] + sx[0] @ sx[2])


def _loss(loss_channel: str, site: int, space: HilbertSpace, GammaP: float) -> CollapseChannel:
    if loss_channel == "sigma_minus":
        return CollapseChannel(embed(sigma_minus(), site, space), GammaP, f"loss_{site + 1}")
    if loss_channel == "sigma_y":
        # the sigma_y part of sigma_minus = (sigma_x + i sigma_y) / 2
        return CollapseChannel(embed(sigma_y(), site, space), GammaP / 4.0, f"flip_y_{site + 1}")
    raise ModelError(f"unknown loss_channel {loss_channel!r}, expected one of {LOSS_CHANNELS}")


def _ring_states(space: HilbertSpace, n_shadow: int) -> dict[str, PureState]:
    ground = [np.array([1.0, 0.0])] * n_shadow
    states = {}
    for bits in product((0, 1), repeat=3):
        key = "".join(map(str, bits)) + "x"
        states[key] = product_state([plus_minus(b) for b in bits] + ground, space, f"|{key}>")
    states["0_L"] = states["000x"].relabel("0_L")
    states["1_L"] = states["111x"].relabel("1_L")
    return states


def bitflip_ring(J: float, Omega: float, GammaP: float, GammaS: float, loss_channel: str = "sigma_minus") -> ModelBundle:
    """Three-qubit bit-flip ring with one shadow qubit per primary, space [P1, P2, P3, S1, S2, S3].

    H_P = -J (X1X2 + X2X3 + X1X3), H_S = 2J sum Z_S, H_PS = Omega sum (sm sp_S + sp sm_S).
    The shadow splitting 4J matches the single-flip gap of H_P.
    """
    _rates(GammaP=GammaP)
    _shadow_loss(GammaS)
    space = HilbertSpace((2,) * 6)
    hp = _ring_hamiltonian(J, space)
    hs = sum(2.0 * J * embed(sigma_z(), 3 + i, space) for i in range(3))
    hps = sum(
        Omega * (embed(sigma_minus(), i, space) @ embed(sigma_plus(), 3 + i, space)
                 + embed(sigma_plus(), i, space) @ embed(sigma_minus(), 3 + i, space))
        for i in range(3)
    )
    channels = tuple(_loss(loss_channel, i, space, GammaP) for i in range(3)) + tuple(
        CollapseChannel(embed(sigma_minus(), 3 + i, space), GammaS, f"loss_S{i + 1}") for i in range(3)
    )
    system = LindbladSystem(space, _hermitian(hp + hs + hps, "H"), channels, "bitflip_ring")

    pspace = HilbertSpace((2,) * 3)
    primary = LindbladSystem(
        pspace,
        _hermitian(_ring_hamiltonian(J, pspace), "H_P"),
        tuple(_loss(loss_channel, i, pspace, GammaP) for i in range(3)),
        "bitflip_ring_primary",
    )
    # hopping Omega: the shadow is raised together with sm on the primary
    couplings = tuple(
        ShadowCoupling(embed(sigma_minus(), i, pspace), Omega, 4.0 * J, GammaS, f"S{i + 1}") for i in range(3)
    )
    ops = _ring_ops(space)
    ops["n_S"] = sum(embed(number(2), 3 + i, space) for i in range(3)).relabel("n_S")
    return ModelBundle(
        name="bitflip_ring",
        system=system,
        labeled_states=_ring_states(space, 3),
        labeled_ops=ops,
        parameters={"J": J, "Omega": Omega, "GammaP": GammaP, "GammaS": GammaS, "loss_channel": loss_channel},
        primary=primary,
        couplings=couplings,
        modes={f"q{i + 1}": embed(sigma_minus(), i, space) for i in range(3)},
        initial="1_L",
        logical=("0_L", "1_L"),
    )


def reduced_bitflip_ring(J: float, Omega: float, GammaP: float, GammaS: float, loss_channel: str = "sigma_minus") -> ModelBundle:
    """Bit-flip ring with the shadows eliminated: 8-dim primary, one a~ channel per shadow."""
    full = bitflip_ring(J, Omega, GammaP, GammaS, loss_channel)
    system = full.reduced()
    space = system.space
    return ModelBundle(
        name="bitflip_ring_reduced",
        system=system,
        labeled_states=_ring_states(space, 0),
        labeled_ops=_ring_ops(space),
        parameters=dict(full.parameters),
        primary=full.primary,
        couplings=full.couplings,
        modes={f"q{i + 1}": embed(sigma_minus(), i, space) for i in range(3)},
        initial="1_L",
        logical=("0_L", "1_L"),
    )


# --- VSLQ ---

def x_tilde(dim: int = 3) -> Operator:
    """|0><2| + |2><0| on a transmon."""
    return (Operator(HilbertSpace((dim,)), _outer(dim, 0, 2) + _outer(dim, 2, 0))).relabel("Xt")


def z_tilde(dim: int = 3) -> Operator:
    return (projector(dim, 2) - projector(dim, 0)).relabel("Zt")


def _outer(dim: int, i: int, j: int) -> np.ndarray:
    m = np.zeros((dim, dim))
    m[i, j] = 1.0
    return m


def vslq(W: float, delta: float, Omega: float, GammaP: float, GammaS: float, dim: int = 3) -> ModelBundle:
    """Two transmons l, r with shadows lS, rS; space [l, r, lS, rS].

    H_P = -W Xt_l Xt_r + delta/2 (P1_l + P1_r); shadows at omega_S = delta/2 + W,
    coupled by Omega (a_i^dag a_iS^dag + a_i a_iS).
    """
    _rates(GammaP=GammaP)
    _shadow_loss(GammaS)
    if dim < 3:
        raise ModelError(f"vslq transmons need dim >= 3, got {dim}")
    space = HilbertSpace((dim, dim, 2, 2))
    xt, zt = x_tilde(dim), z_tilde(dim)
    a = [embed(ladder(dim), i, space) for i in range(2)]
    aS = [embed(ladder(2), 2 + i, space) for i in range(2)]
    omega_s = delta / 2.0 + W

    def hp(sp_: HilbertSpace) -> Operator:
        x = [embed(xt, i, sp_) for i in range(2)]
        p1 = [embed(projector(dim, 1), i, sp_) for i in range(2)]
        return -W * (x[0] @ x[1]) + (delta / 2.0) * (p1[0] + p1[1])

    h = hp(space) + omega_s * (aS[0].dag() @ aS[0] + aS[1].dag() @ aS[1])
    h = h + sum(Omega * (a[i].dag() @ aS[i].dag() + a[i] @ aS[i]) for i in range(2))
    channels = (
        CollapseChannel(a[0], GammaP, "loss_l"),
        CollapseChannel(a[1], GammaP, "loss_r"),
        CollapseChannel(aS[0], GammaS, "loss_lS"),
        CollapseChannel(aS[1], GammaS, "loss_rS"),
    )
    system = LindbladSystem(space, _hermitian(h, "H"), channels, "vslq")

    XL = embed(xt, 0, space)
    ZL = embed(zt, 0, space) @ embed(zt, 1, space)
    YL = 1j * (XL @ ZL)
    ops = {
        "X_L": XL.relabel("X_L"),
        "Z_L": ZL.relabel("Z_L"),
        "Y_L": _hermitian(YL, "Y_L"),
        "Xt_l": XL.relabel("Xt_l"),
        "Xt_r": embed(xt, 1, space).relabel("Xt_r"),
        "n_l": (a[0].dag() @ a[0]).relabel("n_l"),
        "n_r": (a[1].dag() @ a[1]).relabel("n_r"),
        "n_S": (aS[0].dag() @ aS[0] + aS[1].dag() @ aS[1]).relabel("n_S"),
        "P1_l": embed(projector(dim, 1), 0, space).relabel("P1_l"),
        "P1_r": embed(projector(dim, 1), 1, space).relabel("P1_r"),
    }
    manifold = [embed(projector(dim, k), 0, space) @ embed(projector(dim, m), 1, space) for k in (0, 2) for m in (0, 2)]
    shadows_empty = embed(projector(2, 0), 2, space) @ embed(projector(2, 0), 3, space)
    ops["P_code"] = (sum(manifold) @ shadows_empty).relabel("P_code")

    g = np.array([1.0, 0.0])
    one = np.zeros(dim)
    one[1] = 1.0

    def st(l, r, label):
        return product_state([l, r, g, g], space, label)

    plus, minus = plus_minus(0, dim, 2), plus_minus(1, dim, 2)
    states = {
        "0_L": st(plus, plus, "0_L"),
        "1_L": st(minus, minus, "1_L"),
        "+Z": PureState(space, np.kron(np.kron(plus, plus) + np.kron(minus, minus), np.kron(g, g)), "+Z"),
        "-Z": PureState(space, np.kron(np.kron(plus, plus) - np.kron(minus, minus), np.kron(g, g)), "-Z"),
        "1_l+_r": st(one, plus, "1_l+_r"),
        "1_l-_r": st(one, minus, "1_l-_r"),
        "+_l1_r": st(plus, one, "+_l1_r"),
        "-_l1_r": st(minus, one, "-_l1_r"),
    }

    pspace = HilbertSpace((dim, dim))
    primary = LindbladSystem(
        pspace,
        _hermitian(hp(pspace), "H_P"),
        (CollapseChannel(embed(ladder(dim), 0, pspace), GammaP, "loss_l"),
         CollapseChannel(embed(ladder(dim), 1, pspace), GammaP, "loss_r")),
        "vslq_primary",
    )
    couplings = tuple(
        ShadowCoupling(embed(ladder(dim), i, pspace).dag(), Omega, omega_s, GammaS, side) for i, side in enumerate("lr")
    )
    return ModelBundle(
        name="vslq",
        system=system,
        labeled_states=states,
        labeled_ops=ops,
        parameters={"W": W, "delta": delta, "Omega": Omega, "GammaP": GammaP, "GammaS": GammaS, "dim": dim},
        primary=primary,
        couplings=couplings,
        modes={"l": a[0], "r": a[1]},
        initial="0_L",
        logical=("0_L", "1_L"),
    )


# --- cat codes ---

def two_photon_alpha(Omega2: float, Gamma2: float) -> complex:
    """Steady coherent amplitude of the two-photon drive: alpha^2 = -2i Omega2 / Gamma2."""
    if Omega2 == 0:
        return 0j
    if not Gamma2 > 0:
        raise ModelError("a two-photon drive needs Gamma2 > 0 to settle")
    return math.sqrt(2.0 * abs(Omega2) / Gamma2) * np.exp(-1j * math.pi / 4) * (1 if Omega2 > 0 else 1j)


def _mod4_state(alpha: complex, dim: int, residue: int, top: int, space: HilbertSpace, label: str) -> PureState:
    n = np.arange(dim)
    keep = (n % 4 == residue) & (n <= top)
    amps = np.zeros(dim, dtype=complex)
    if alpha == 0:
        if residue != 0:
            raise ModelError(f"{label} is empty for alpha = 0")
        amps[0] = 1.0
    else:
        k = n[keep]
        amps[keep] = np.exp(k * math.log(abs(alpha)) - 0.5 * gammaln(k + 1)) * np.exp(1j * k * np.angle(alpha))
    return PureState(space, amps, label)


def cat_states(alpha: complex, dim: int | None = None) -> ModelBundle:
    """Four-component cat code words and their single-loss error states.

    Code words sit on levels 4n (0_L) and 4n+2 (1_L); error states on 4n+3 (0_E)
    and 4n+1 (1_E), restricted to levels one loss can reach from the truncated
    code words, so normalized a|i_L> equals |i_E> exactly.
    """
    dim = default_boson_dim(alpha) if dim is None else dim
    if dim < 4:
        raise ModelError(f"cat states need dim >= 4, got {dim}")
    mean = abs(alpha) ** 2
    tail = float(poisson.sf(dim - 1, mean)) if mean > 0 else 0.0
    if tail >= TAIL_TOL:
        raise TruncationError(f"dim={dim} too small for alpha={alpha}: tail weight {tail:.3e}", tail_weight=tail)
    space = HilbertSpace((dim,))
    states = {
        "0_L": _mod4_state(alpha, dim, 0, dim - 1, space, "0_L"),
        "1_L": _mod4_state(alpha, dim, 2, dim - 1, space, "1_L"),
        "0_E": _mod4_state(alpha, dim, 3, dim - 2, space, "0_E"),
        "1_E": _mod4_state(alpha, dim, 1, dim - 2, space, "1_E"),
    }
    a = ladder(dim)
    ops = {"n": number(dim).relabel("n"), "parity": parity(dim), "a": a}
    system = LindbladSystem(space, (0.0 * number(dim)).relabel("H"), (), "cat_states")
    return ModelBundle(
        name="cat_states",
        system=system,
        labeled_states=states,
        labeled_ops=ops,
        parameters={"alpha": alpha, "dim": dim},
        modes={"a": a},
        initial="0_L",
        logical=("0_L", "1_L"),
    )


def cat_two_photon(Omega2: float, GammaP: float, Gamma2: float, dim: int | None = None) -> ModelBundle:
    """Single mode with drive Omega2 (a^dag a^dag + a a), loss sqrt(GammaP) a and sqrt(Gamma2) a a."""
    _rates(GammaP=GammaP, Gamma2=Gamma2)
    alpha = two_photon_alpha(Omega2, Gamma2)
    nbar = abs(alpha) ** 2
    if dim is None:
        dim = int(math.ceil(nbar + 5.0 * math.sqrt(nbar) + 10.0))
    floor = nbar + 4.0 * math.sqrt(nbar) + 4.0
    if dim < floor:
        raise TruncationError(f"dim={dim} too small for steady <n>={nbar:.3g}; need >= {math.ceil(floor)}",
                              tail_weight=None)
    a = ladder(dim)
    h = Omega2 * (a.dag() @ a.dag() + a @ a)
    system = LindbladSystem(
        a.space,
        _hermitian(h, "H"),
        (CollapseChannel(a, GammaP, "loss"), CollapseChannel(a @ a, Gamma2, "two_photon_loss")),
        "cat_two_photon",
    )
    vac = np.zeros(dim, dtype=complex)
    vac[0] = 1.0
    states = {"vacuum": PureState(a.space, vac, "vacuum")}
    if nbar > 0:
        n = np.arange(dim)
        coh = np.exp(-0.5 * nbar + n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1)) * np.exp(1j * n * np.angle(alpha))
        states["cat+"] = PureState(a.space, np.where(n % 2 == 0, coh, 0), "cat+")
        states["cat-"] = PureState(a.space, np.where(n % 2 == 1, coh, 0), "cat-")
    ops = {"n": number(dim).relabel("n"), "parity": parity(dim), "a": a}
    return ModelBundle(
        name="cat_two_photon",
        system=system,
        labeled_states=states,
        labeled_ops=ops,
        parameters={"Omega2": Omega2, "GammaP": GammaP, "Gamma2": Gamma2, "dim": dim, "alpha": alpha},
        modes={"a": a},
        initial="vacuum",
        logical=("cat+", "cat-") if nbar > 0 else None,
    )


MODEL_BUILDERS: dict[str, Callable[..., ModelBundle]] = {
    "three_level": three_level_refill,
    "bitflip_ring": bitflip_ring,
    "bitflip_ring_reduced": reduced_bitflip_ring,
    "vslq": vslq,
    "cat_two_photon": cat_two_photon,
    "cat_states": cat_states,
}


def build_model(name: str, **params) -> ModelBundle:
    try:
        builder = MODEL_BUILDERS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; known: {sorted(MODEL_BUILDERS)}") from None
    bundle = builder(**params)
    log.debug("model %s: dim=%d channels=%d", name, bundle.system.dim, len(bundle.system.collapse_ops))
    return bundle
