"""Golden-rule rates for shadow-element ratchets and adiabatic elimination of the shadows.

A lossy shadow element with excitation energy nu and loss GammaS, driven at
strength Omega through a primary operator with matrix element M, turns a
primary transition of energy deltaE into an incoherent rate

    gamma = Omega^2 M^2 GammaS / ((deltaE + nu)^2 + GammaS^2 / 4)

capped by the shadow's own loss: Gamma = (1/gamma + 1/GammaS)^-1.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from dynamics import CollapseChannel, LindbladSystem
from errors import ModelError, SpaceMismatchError
from hilbert import Operator

log = logging.getLogger(__name__)

HIERARCHY_FACTOR = 10.0
ZERO_TOL = 1e-14


def _positive(name: str, value: float) -> float:
    if not value > 0:
        raise ModelError(f"{name} must be > 0, got {value}")
    return float(value)


def _nonnegative(name: str, value: float) -> float:
    if not (value >= 0):
        raise ModelError(f"{name} must be >= 0, got {value}")
    return float(value)


@dataclass(frozen=True)
class RateReport:
    repair: float
    errors_induced: dict[str, float] = field(default_factory=dict)
    logical: float | None = None
    gamma_raw: float | None = None
    gamma_total: float | None = None
    inputs: dict[str, float] = field(default_factory=dict)
    extra: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        rates = {"GammaR": self.repair, **self.errors_induced}
        for key in ("logical", "gamma_raw", "gamma_total"):
            if getattr(self, key) is not None:
                rates[key] = getattr(self, key)
        for name, value in rates.items():
            if not value >= 0:
                raise ValueError(f"rate {name} must be >= 0, got {value}")
        if self.gamma_total is not None and self.gamma_raw is not None:
            cap = min(self.gamma_raw, self.inputs.get("GammaS", math.inf))
            if self.gamma_total > cap * (1 + 1e-12):
                raise ValueError(f"gamma_total {self.gamma_total} exceeds min(gamma_raw, GammaS) = {cap}")

    def as_dict(self) -> dict[str, float]:
        out: dict[str, float] = {}
        if self.gamma_raw is not None:
            out["gamma_raw"] = self.gamma_raw
        if self.gamma_total is not None:
            out["gamma_total"] = self.gamma_total
        out["GammaR"] = self.repair
        out.update(self.errors_induced)
        if self.logical is not None:
            out["GammaL"] = self.logical
        out.update(self.extra)
        out.update({f"input.{k}": v for k, v in self.inputs.items()})
        return out

    def as_table(self) -> str:
        """Flat key=value lines, shortest round-trip float repr."""
        return "".join(f"{k}={float(v)!r}\n" for k, v in self.as_dict().items())


# --- closed forms ---

def golden_rule_rate(deltaE: float, M: float, Omega: float, nu: float, GammaS: float) -> tuple[float, float]:
    GammaS = _positive("GammaS", GammaS)
    raw = Omega ** 2 * M ** 2 * GammaS / ((deltaE + nu) ** 2 + GammaS ** 2 / 4.0)
    total = 0.0 if raw == 0 else 1.0 / (1.0 / raw + 1.0 / GammaS)
    return raw, total


def repair_error_rates(Omega: float, nu: float, Delta: float, GammaS: float) -> tuple[float, float]:
    GammaS = _positive("GammaS", GammaS)
    GR = Omega ** 2 * GammaS / (nu ** 2 + Omega ** 2 + GammaS ** 2 / 4.0)
    GE = 2.0 * Omega ** 2 * GammaS / ((nu + Delta) ** 2 + 2.0 * Omega ** 2 + GammaS ** 2 / 4.0)
    return GR, GE


def dispersive_rates(kappa: float, chi: float, nbar: float, OmegaR: float, Delta_c: float, T2: float) -> tuple[float, float]:
    """Heating and cooling rates of a qubit dispersively coupled to a lossy driven cavity."""
    kappa = _positive("kappa", kappa)
    T2 = _positive("T2", T2)
    _nonnegative("nbar", nbar)
    floor = 1.0 / (2.0 * T2)
    num = kappa * chi ** 2 * nbar
    plus = num / ((OmegaR + Delta_c) ** 2 + kappa ** 2 / 4.0) + floor
    minus = num / ((OmegaR - Delta_c) ** 2 + kappa ** 2 / 4.0) + floor
    return plus, minus


def dispersive_steady_population(GammaPlus: float, GammaMinus: float) -> float:
    total = GammaPlus + GammaMinus
    if not total > 0:
        raise ModelError("dispersive rates must not both vanish")
    return GammaPlus / total


def dispersive_report(kappa: float, chi: float, nbar: float, OmegaR: float, Delta_c: float, T2: float) -> RateReport:
    """Cooling counts as the repair, heating as the induced error."""
    plus, minus = dispersive_rates(kappa, chi, nbar, OmegaR, Delta_c, T2)
    return RateReport(
        repair=minus,
        errors_induced={"GammaPlus": plus},
        inputs={"kappa": kappa, "chi": chi, "nbar": nbar, "OmegaR": OmegaR, "Delta_c": Delta_c, "T2": T2},
        extra={"GammaMinus": minus, "P_excited": dispersive_steady_population(plus, minus)},
    )


@dataclass
class HierarchyCheck:
    ok: bool
    reasons: list[str]


def check_hierarchy(J: float, Omega: float, GammaS: float, GammaP: float, factor: float = HIERARCHY_FACTOR) -> HierarchyCheck:
    """J >> Omega ~ GammaS >> GammaP, each '>>' meaning at least `factor`."""
    reasons: list[str] = []
    fast = max(Omega, GammaS)
    slow = min(Omega, GammaS)
    if J < factor * fast:
        reasons.append(f"J={J:g} not >> max(Omega, GammaS)={fast:g}")
    if slow > 0 and fast / slow > factor:
        reasons.append(f"Omega={Omega:g} and GammaS={GammaS:g} differ by more than {factor:g}x")
    if slow < factor * GammaP:
        reasons.append(f"min(Omega, GammaS)={slow:g} not >> GammaP={GammaP:g}")
    return HierarchyCheck(not reasons, reasons)


def bitflip_rates(J: float, Omega: float, GammaS: float, GammaP: float) -> RateReport:
    _positive("J", J)
    _positive("GammaS", GammaS)
    _nonnegative("GammaP", GammaP)
    check = check_hierarchy(J, Omega, GammaS, GammaP)
    for reason in check.reasons:
        log.warning("bitflip_rates: hierarchy violated: %s", reason)
    GR = Omega ** 2 * GammaS / (Omega ** 2 + GammaS ** 2 / 4.0)
    GE0 = Omega ** 2 * GammaS / (16.0 * J ** 2)
    GE1 = Omega ** 2 * GammaS / (64.0 * J ** 2)
    GL = 6.0 * (GammaP + GE1) * (GammaP + GE0) / (GammaP + GE0 + GR)
    raw, total = golden_rule_rate(0.0, 1.0, Omega, 0.0, GammaS)
    return RateReport(
        repair=GR,
        errors_induced={"GammaE0": GE0, "GammaE1": GE1},
        logical=GL,
        gamma_raw=raw,
        gamma_total=total,
        inputs={"J": J, "Omega": Omega, "GammaS": GammaS, "GammaP": GammaP, "M": 1.0},
        extra={"hierarchy_ok": float(check.ok)},
    )


def three_level_steady_population(GammaP: float, GammaR: float, GammaE: float) -> tuple[float, bool]:
    """1 - GammaP/GammaR - GammaE/(2 GammaP), clamped to [0, 1]; second item flags clamping."""
    _positive("GammaP", GammaP)
    _positive("GammaR", GammaR)
    _nonnegative("GammaE", GammaE)
    p1 = 1.0 - GammaP / GammaR - GammaE / (2.0 * GammaP)
    clamped = not 0.0 <= p1 <= 1.0
    if clamped:
        log.warning("three-level P1 estimate %.4g outside [0, 1]; clamped", p1)
    return min(max(p1, 0.0), 1.0), clamped


def three_level_rate_population(GammaP: float, GammaR: float, GammaE: float) -> float:
    """Stationary P1 of the 0 <-> 1 <-> 2 rate chain (repair GammaR, loss GammaP, induced error GammaE)."""
    _positive("GammaP", GammaP)
    _positive("GammaR", GammaR)
    _nonnegative("GammaE", GammaE)
    return 1.0 / (1.0 + GammaP / GammaR + GammaE / (2.0 * GammaP))


def three_level_rates(Delta: float, Omega: float, nu: float, GammaS: float, GammaP: float) -> RateReport:
    GR, GE = repair_error_rates(Omega, nu, Delta, GammaS)
    raw, total = golden_rule_rate(0.0, 1.0, Omega, nu, GammaS)
    extra: dict[str, float] = {}
    if GammaP > 0 and GR > 0:
        p1, clamped = three_level_steady_population(GammaP, GR, GE)
        extra = {"P1_formula": p1, "P1_clamped": float(clamped), "P1_rates": three_level_rate_population(GammaP, GR, GE)}
    return RateReport(
        repair=GR,
        errors_induced={"GammaE": GE},
        gamma_raw=raw,
        gamma_total=total,
        inputs={"Delta": Delta, "Omega": Omega, "nu": nu, "GammaS": GammaS, "GammaP": GammaP, "M": 1.0},
        extra=extra,
    )


def vslq_rates(W: float, delta: float, Omega: float, GammaS: float, GammaP: float) -> RateReport:
    """Repair at resonance (shadow energy delta/2 + W), wrong-parity repair detuned by 2W.

    The logical figure is a second-loss estimate, (3 GammaP^2 + GammaW GammaP) / GammaR:
    a second loss, or a wrong-parity repair, while an error is still waiting
    for its repair.
    """
    _positive("W", W)
    _positive("delta", delta)
    _nonnegative("GammaP", GammaP)
    GR, _ = repair_error_rates(Omega, 0.0, 0.0, GammaS)
    GW, _ = repair_error_rates(Omega, 2.0 * W, 0.0, GammaS)
    raw, total = golden_rule_rate(0.0, 1.0, Omega, 0.0, GammaS)
    logical = (3.0 * GammaP ** 2 + GW * GammaP) / GR if GR > 0 else math.inf
    return RateReport(
        repair=GR,
        errors_induced={"GammaW": GW},
        logical=logical,
        gamma_raw=raw,
        gamma_total=total,
        inputs={"W": W, "delta": delta, "Omega": Omega, "GammaS": GammaS, "GammaP": GammaP,
                "omega_S": delta / 2.0 + W, "M": 1.0},
        extra={"T_L_over_T1P": GammaP / logical if logical > 0 and GammaP > 0 else math.inf},
    )


# --- adiabatic elimination ---

@dataclass(frozen=True, eq=False)
class ShadowCoupling:
    """One shadow element: primary operator raising the shadow, drive, shadow energy, loss."""
    operator: Operator
    omega: float
    nu: float
    gamma_s: float
    label: str = ""


def shadow_eliminate(
    primary: LindbladSystem,
    couplings: Sequence[ShadowCoupling],
    energies: tuple[np.ndarray, np.ndarray] | None = None,
) -> LindbladSystem:
    """Replace each shadow by a channel sqrt(GammaS) a~ on the primary space.

    In the eigenbasis of the primary Hamiltonian
        a~_ij = Omega / sqrt((E_i - E_j + nu)^2 + GammaS^2/4 + Omega^2) * A_ij,
    with A the coupling operator. The factor depends only on E_i - E_j, so the
    result does not depend on the basis chosen inside degenerate blocks.
    """
    if primary.time_dependent:
        raise ModelError("shadow elimination needs a time-independent primary Hamiltonian")
    if not couplings:
        raise ModelError("shadow elimination needs at least one coupling")
    if energies is None:
        E, V = np.linalg.eigh(primary.hamiltonian_at(0.0))
    else:
        E, V = (np.asarray(x) for x in energies)
        if V.shape != (primary.dim, primary.dim):
            raise ModelError(f"eigenvectors have shape {V.shape}, expected {(primary.dim, primary.dim)}")
    dE = E[:, None] - E[None, :]
    channels = []
    for k, c in enumerate(couplings):
        if c.operator.space != primary.space:
            raise ModelError(f"coupling {c.label or k} is not on the primary space {primary.space}")
        _positive("GammaS", c.gamma_s)
        A = V.conj().T @ c.operator.dense() @ V
        factor = c.omega / np.sqrt((dE + c.nu) ** 2 + c.gamma_s ** 2 / 4.0 + c.omega ** 2)
        tilde = V @ (factor * A) @ V.conj().T
        if np.max(np.abs(tilde)) < ZERO_TOL:
            continue
        name = f"shadow:{c.label or k}"
        channels.append(CollapseChannel(Operator(primary.space, tilde, name), c.gamma_s, name))
    log.debug("shadow_eliminate: %d couplings -> %d channels on dim %d", len(couplings), len(channels), primary.dim)
    return primary.with_channels(channels, label=f"{primary.label}:reduced")


def eliminate_from_full(
    full_sys: LindbladSystem,
    primary_ops: Sequence[CollapseChannel],
    energies: tuple[np.ndarray, np.ndarray] | None,
    couplings: Sequence[ShadowCoupling],
) -> LindbladSystem:
    """shadow_eliminate starting from the full primary+shadow system.

    The primary factors lead full_sys.space and span the couplings' space. The
    primary Hamiltonian is the block of H with every shadow in level 0; any
    constant offset it carries drops out of the dynamics. primary_ops are the
    primary loss channels kept next to the new shadow channels.
    """
    if full_sys.time_dependent:
        raise ModelError("shadow elimination needs a time-independent full Hamiltonian")
    if not couplings:
        raise ModelError("shadow elimination needs at least one coupling")
    pspace = couplings[0].operator.space
    dims = full_sys.space.subsystem_dims
    if dims[: pspace.n_sites] != pspace.subsystem_dims or len(dims) == pspace.n_sites:
        raise SpaceMismatchError(f"primary space {pspace} is not a leading factor of {full_sys.space}")
    n_p = pspace.total_dim
    n_s = full_sys.dim // n_p
    h = full_sys.hamiltonian_at(0.0).reshape(n_p, n_s, n_p, n_s)[:, 0, :, 0].copy()
    primary = LindbladSystem(pspace, Operator(pspace, h, "H_P"), tuple(primary_ops), f"{full_sys.label}_primary")
    return shadow_eliminate(primary, couplings, energies)
