import math

import numpy as np
import pytest

from conftest import decaying_mode, driven_qubit
from dynamics import (
    CollapseChannel,
    LindbladSystem,
    TimeSeries,
    evolve,
    lindblad_rhs,
    steady_state,
)
from errors import DegenerateSteadyStateError, ModelError, PositivityError, SpaceMismatchError
from hilbert import DensityMatrix, HilbertSpace, Operator, embed, fock, ladder, number, projector, sigma_x, sigma_z


def p1(dim: int = 2) -> Operator:
    return projector(dim, 1).relabel("P1")


class TestLindbladSystem:
    def test_rejects_negative_rate(self):
        a = ladder(2)
        with pytest.raises(ModelError, match=">= 0"):
            LindbladSystem(a.space, 0 * sigma_x(), (CollapseChannel(a, -1.0),))

    def test_rejects_non_hermitian_hamiltonian(self):
        a = ladder(2)
        with pytest.raises(ModelError, match="Hermitian"):
            LindbladSystem(a.space, a, ())

    def test_time_dependent_hamiltonian_checked_when_sampled(self):
        a = ladder(2)
        sys = LindbladSystem(a.space, lambda t: a * t, ())
        with pytest.raises(ModelError, match="Hermitian"):
            sys.hamiltonian_at(1.0)


class TestLindbladRhs:
    def test_pure_decay(self, decay_system, excited_qubit):
        d = lindblad_rhs(decay_system, excited_qubit)
        assert d[1, 1].real == pytest.approx(-1.0)
        assert d[0, 0].real == pytest.approx(1.0)

    def test_unitary_limit_keeps_purity(self):
        sz = sigma_z()
        sys = LindbladSystem(sz.space, sz, ())
        psi = np.array([1, 1j]) / math.sqrt(2)
        rho = DensityMatrix(sz.space, np.outer(psi, psi.conj()))
        d = lindblad_rhs(sys, rho)
        expected = -1j * (sz.dense() @ rho.matrix - rho.matrix @ sz.dense())
        np.testing.assert_allclose(d, expected, atol=1e-15)
        # d Tr(rho^2)/dt = 2 Tr(rho drho)
        assert abs(np.trace(rho.matrix @ d)) < 1e-14

    def test_trace_free(self):
        sys = driven_qubit(0.7, 0.3)
        rho = DensityMatrix(HilbertSpace((2,)), np.array([[0.6, 0.2 + 0.1j], [0.2 - 0.1j, 0.4]]))
        assert abs(np.trace(lindblad_rhs(sys, rho))) < 1e-12

    def test_space_mismatch(self, decay_system):
        with pytest.raises(SpaceMismatchError):
            lindblad_rhs(decay_system, DensityMatrix.from_state(fock(3, 1)))


class TestEvolve:
    def test_decay_closed_form(self, decay_system, excited_qubit):
        ts = evolve(decay_system, excited_qubit, np.linspace(0, 1, 11), [p1()])
        assert ts["P1"][-1] == pytest.approx(math.exp(-1.0), abs=1e-6)
        assert ts.metadata["max_trace_drift"] < 1e-8
        assert ts.metadata["max_hermiticity_drift"] < 1e-9
        assert ts.metadata["min_eigenvalue"] >= -1e-7

    def test_resonant_rabi(self):
        omega = 1.3
        sys = driven_qubit(omega, 0.0)
        t = np.linspace(0, 6, 61)
        ts = evolve(sys, DensityMatrix.from_state(fock(2, 0)), t, [p1()])
        np.testing.assert_allclose(ts["P1"], np.sin(omega * t / 2) ** 2, atol=1e-6)

    @pytest.mark.parametrize("method", ["dop853", "rk4", "propagator"])
    def test_methods_agree(self, method):
        sys = driven_qubit(1.0, 0.4)
        rho0 = DensityMatrix.from_state(fock(2, 0))
        t = np.linspace(0, 5, 26)
        ref = evolve(sys, rho0, t, [p1()])
        other = evolve(sys, rho0, t, [p1()], method=method)
        np.testing.assert_allclose(other["P1"], ref["P1"], atol=1e-6)

    def test_purity_conserved_without_loss(self):
        sp = HilbertSpace((3, 2))
        h = embed(number(3), 0, sp) * 0.3 + embed(sigma_x(), 1, sp) + embed(ladder(3), 0, sp) @ embed(ladder(2).dag(), 1, sp)
        h = 0.5 * (h + h.dag())
        sys = LindbladSystem(sp, h, ())
        rho0 = DensityMatrix(sp, np.diag([0, 0, 0, 1, 0, 0]).astype(complex))
        ts = evolve(sys, rho0, np.linspace(0, 10, 21), keep_states=True)
        purities = [s.purity() for s in ts.states]
        np.testing.assert_allclose(purities, 1.0, atol=1e-8)

    def test_refill_initial_slope(self):
        from models import three_level_refill

        b = three_level_refill(Delta=20.0, Omega=1.0, nu=0.0, GammaP=0.01, GammaS=2.0)
        rho0 = b.labeled_states["0P0S"].dm()
        nP = b.labeled_ops["n_P"]
        d = lindblad_rhs(b.system, rho0)
        assert abs(np.trace(nP.dense() @ d)) < 1e-14
        h = 1e-3
        ts = evolve(b.system, rho0, [0.0, h, 2 * h], [nP])
        second = (ts["n_P"][2] - 2 * ts["n_P"][1] + ts["n_P"][0]) / h ** 2
        # d^2<n_P>/dt^2 at t=0 equals 2 Omega^2 for the a_P^dag a_S^dag coupling
        assert second == pytest.approx(2.0, rel=2e-2)

    def test_error_estimate_bounds_halving(self):
        sys = driven_qubit(2.0, 0.1)
        rho0 = DensityMatrix.from_state(fock(2, 0))
        t = np.linspace(0, 20, 5)
        ts = evolve(sys, rho0, t, [p1()], rtol=1e-6, atol=1e-9, estimate_error=True)
        half = evolve(sys, rho0, t, [p1()], rtol=5e-7, atol=5e-10)
        assert abs(half["P1"][-1] - ts["P1"][-1]) < ts.metadata["error_estimate"]["P1"]

    def test_positivity_abort(self):
        a = ladder(2)
        sys = LindbladSystem(a.space, 0 * sigma_x(), (CollapseChannel(a, 1.0),))
        bad = DensityMatrix(a.space, np.array([[0.5, 0.9], [0.9, 0.5]]), check=False)
        with pytest.raises(PositivityError) as exc:
            evolve(sys, bad, [0.0, 0.1])
        assert exc.value.eigenvalue < -1e-6

    def test_time_series_frame(self, decay_system, excited_qubit):
        ts = evolve(decay_system, excited_qubit, np.linspace(0, 1, 5), [p1()])
        df = ts.to_frame()
        assert list(df.columns) == ["t", "P1"]
        assert len(df) == 5

    def test_time_series_rejects_unordered_grid(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            TimeSeries(np.array([0.0, 1.0, 1.0]), {})


class TestSteadyState:
    def test_undriven_lossy_mode_is_vacuum(self):
        ss = steady_state(decaying_mode(0.5, dim=4))
        np.testing.assert_allclose(ss.rho.populations(), [1, 0, 0, 0], atol=1e-10)
        assert ss.residual <= 1e-9

    def test_optical_bloch(self):
        omega, gamma = 0.8, 0.5
        ss = steady_state(driven_qubit(omega, gamma))
        assert ss.rho.populations()[1] == pytest.approx(omega ** 2 / (2 * omega ** 2 + gamma ** 2), abs=1e-10)

    def test_direct_and_evolve_agree(self):
        sys = driven_qubit(0.8, 0.5)
        a = steady_state(sys, method="direct")
        b = steady_state(sys, method="evolve")
        np.testing.assert_allclose(a.rho.matrix, b.rho.matrix, atol=1e-6)

    def test_three_level_refill_population(self):
        from models import three_level_refill
        from ratchet import repair_error_rates, three_level_steady_population

        Delta, Omega, GammaS, GammaP = 40.0, 1.0, 1.0, 0.01
        b = three_level_refill(Delta=Delta, Omega=Omega, nu=0.0, GammaP=GammaP, GammaS=GammaS)
        ss = steady_state(b.system)
        GR, GE = repair_error_rates(Omega, 0.0, Delta, GammaS)
        P1, _ = three_level_steady_population(GammaP, GR, GE)
        sim = ss.rho.populations() @ np.diag(b.labeled_ops["P1_P"].dense()).real
        assert sim == pytest.approx(P1, rel=0.02)

    def test_degenerate_manifold(self):
        sp = HilbertSpace((2,))
        sys = LindbladSystem(sp, 0 * sigma_z(), ())
        with pytest.raises(DegenerateSteadyStateError) as exc:
            steady_state(sys)
        assert exc.value.multiplicity == 4

    def test_degenerate_manifold_projection(self):
        sp = HilbertSpace((2,))
        sys = LindbladSystem(sp, sigma_z(), ())
        psi = np.array([0.6, 0.8])
        rho0 = DensityMatrix(sp, np.outer(psi, psi))
        ss = steady_state(sys, rho0)
        assert ss.degenerate and ss.multiplicity == 2
        np.testing.assert_allclose(ss.rho.matrix, np.diag([0.36, 0.64]), atol=1e-10)
