import math

import numpy as np
import pytest
from scipy.signal import periodogram
from scipy.stats import kstest

from conftest import decaying_mode, driven_qubit
from dynamics import LindbladSystem, evolve
from errors import RamseyError
from hilbert import DensityMatrix, HilbertSpace, fock, number, projector, sigma_x
from trajectories import (
    NoiseRealization,
    RamseyParams,
    SpectrumParams,
    TrajectoryRecord,
    calibrate_dephasing,
    dephasing_ensemble,
    ensemble_average,
    ramsey_envelope,
    ramsey_phases,
    run_trajectory,
    sample_low_freq_noise,
    t_one_over_e,
)


def p1():
    return projector(2, 1).relabel("P1")


class TestSpectrumParams:
    def test_invalid_band(self):
        with pytest.raises(ValueError, match="invalid band"):
            SpectrumParams(1.0, 1.0, 0.5)
        with pytest.raises(ValueError, match="invalid band"):
            SpectrumParams(1.0, 0.0, 1.0)

    def test_alpha_range(self):
        with pytest.raises(ValueError, match="alpha"):
            SpectrumParams(1.0, 0.01, 1.0, alpha=2.0)

    def test_three_processes_per_decade(self):
        rates, sigmas = SpectrumParams(2.0, 1e-3, 1.0).components()
        assert len(rates) == 10
        np.testing.assert_allclose(rates[[0, -1]], [math.pi * 1e-3, math.pi])
        assert np.sum(sigmas ** 2) == pytest.approx(4.0)

    def test_alpha_one_gives_equal_variance(self):
        _, sigmas = SpectrumParams(1.0, 1e-2, 1e2).components()
        np.testing.assert_allclose(sigmas, sigmas[0])

    def test_telegraph_fraction_adds_fluctuator(self):
        rates, sigmas = SpectrumParams(1.0, 1e-2, 1.0, telegraph_fraction=0.25).components()
        assert len(rates) == 8
        assert sigmas[-1] ** 2 == pytest.approx(0.25)
        assert np.sum(sigmas ** 2) == pytest.approx(1.0)

    def test_window_rule(self):
        s = SpectrumParams.for_window(1.0, total_time=100.0, min_step=0.1)
        assert s.f_min == pytest.approx(1e-3)
        assert s.f_max == pytest.approx(100.0)
        assert s.resolution == pytest.approx(5e-4)


class TestSampleNoise:
    spectrum = SpectrumParams(0.5, 0.01, 2.0)

    def test_zero_amplitude(self):
        noise = sample_low_freq_noise(self.spectrum.scaled(0.0), [0.0, 10.0], seed=3)
        assert not np.any(noise.h_values)

    def test_reproducible(self):
        a = sample_low_freq_noise(self.spectrum, [0.0, 10.0], seed=11, n_qubits=2)
        b = sample_low_freq_noise(self.spectrum, [0.0, 10.0], seed=11, n_qubits=2)
        np.testing.assert_array_equal(a.h_values, b.h_values)
        c = sample_low_freq_noise(self.spectrum, [0.0, 10.0], seed=12, n_qubits=2)
        assert not np.array_equal(a.h_values, c.h_values)

    def test_grid_resolves_fastest_process(self):
        noise = sample_low_freq_noise(self.spectrum, [0.0, 10.0], seed=0)
        assert np.max(np.diff(noise.times)) <= self.spectrum.resolution * (1 + 1e-9)
        assert noise.times[-1] >= 10.0

    def test_paired_signals_are_distinct(self):
        noise = sample_low_freq_noise(self.spectrum, [0.0, 50.0], seed=5, n_qubits=2)
        assert not np.array_equal(noise.h_values[0], noise.h_values[1])

    def test_ensemble_mean_vanishes(self):
        vals = np.array([sample_low_freq_noise(self.spectrum, [0.0, 5.0], seed=s).value_at(2.5) for s in range(300)])
        assert abs(vals.mean()) < 4 * self.spectrum.amplitude / math.sqrt(len(vals))
        assert vals.std() == pytest.approx(self.spectrum.amplitude, rel=0.2)

    def test_phase_is_exact_integral(self):
        noise = NoiseRealization(np.array([0.0, 1.0, 2.0]), np.array([[1.0, -2.0, 5.0]]), 0, self.spectrum)
        np.testing.assert_allclose(noise.phase([0.0, 0.5, 1.0, 1.5, 2.0, 2.5]), [0.0, 0.5, 1.0, 0.0, -1.0, 1.5])
        assert noise.value_at(1.2) == -2.0

    @staticmethod
    def averaged_slope(n_seeds, t_final, n_qubits=1):
        spectrum = SpectrumParams(1.0, 1e-3, 10.0)
        psd = 0.0
        for seed in range(n_seeds):
            noise = sample_low_freq_noise(spectrum, [0.0, t_final], seed, n_qubits=n_qubits)
            f, s = periodogram(noise.h_values, fs=1.0 / spectrum.resolution, axis=-1)
            psd = psd + s.sum(axis=0)
        band = (f >= 0.03) & (f <= 1.0)
        return np.polyfit(np.log(f[band]), np.log(psd[band]), 1)[0]

    def test_spectral_slope_small_ensemble(self):
        assert self.averaged_slope(20, 40.0, n_qubits=2) == pytest.approx(-1.0, abs=0.2)

    @pytest.mark.slow
    def test_spectral_slope(self):
        assert self.averaged_slope(200, 100.0) == pytest.approx(-1.0, abs=0.15)


class TestRunTrajectory:
    def test_no_loss_is_schrodinger(self):
        omega = 1.3
        sys = driven_qubit(omega, 0.0)
        t = np.linspace(0, 6, 31)
        rec = run_trajectory(sys, fock(2, 0), t, seed=1, observables=[p1()])
        assert rec.n_jumps == 0
        np.testing.assert_allclose(rec.values["P1"], np.sin(omega * t / 2) ** 2, atol=1e-10)

    def test_reproducible_from_seed(self):
        sys = driven_qubit(1.0, 0.5)
        t = np.linspace(0, 10, 21)
        a = run_trajectory(sys, fock(2, 0), t, seed=7, observables=[p1()])
        b = run_trajectory(sys, fock(2, 0), t, seed=7, observables=[p1()])
        np.testing.assert_array_equal(a.jump_times, b.jump_times)
        np.testing.assert_array_equal(a.values["P1"], b.values["P1"])

    def test_jumps_within_window_and_increasing(self):
        sys = driven_qubit(2.0, 1.0)
        rec = run_trajectory(sys, fock(2, 0), np.linspace(0, 20, 11), seed=3)
        assert rec.n_jumps > 0
        assert np.all(np.diff(rec.jump_times) > 0)
        assert 0 <= rec.jump_times[0] and rec.jump_times[-1] <= 20
        assert set(rec.jump_channels) == {0}

    def test_time_dependent_path_matches_propagator(self):
        sys = driven_qubit(1.0, 0.5)
        h = sys.hamiltonian_at(0.0)
        timed = sys.with_hamiltonian(lambda t: h)
        t = np.linspace(0, 10, 11)
        a = run_trajectory(sys, fock(2, 0), t, seed=21, observables=[p1()])
        b = run_trajectory(timed, fock(2, 0), t, seed=21, observables=[p1()], rtol=1e-10, atol=1e-12)
        assert a.n_jumps == b.n_jumps
        np.testing.assert_allclose(a.jump_times, b.jump_times, atol=1e-5)
        np.testing.assert_allclose(a.values["P1"], b.values["P1"], atol=1e-4)

    def test_jump_times_exponential(self):
        sys = decaying_mode(1.0)
        times = [run_trajectory(sys, fock(2, 1), [0.0, 30.0], seed=s).jump_times[0] for s in range(1000)]
        assert kstest(times, "expon", args=(0.0, 1.0)).pvalue > 0.01

    @pytest.mark.slow
    def test_jump_times_exponential_large_sample(self):
        gamma = 0.4
        sys = decaying_mode(gamma)
        times = [run_trajectory(sys, fock(2, 1), [0.0, 100.0], seed=s).jump_times[0] for s in range(10_000)]
        assert kstest(times, "expon", args=(0.0, 1.0 / gamma)).pvalue > 0.01

    def test_record_rejects_unordered_jumps(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            TrajectoryRecord(np.array([0.0, 1.0]), np.array([0.5, 0.4]), np.array([0, 0]), {}, fock(2, 0), 0)


class TestEnsembleAverage:
    def test_single_trajectory_matches_run(self):
        sys = driven_qubit(1.0, 0.5)
        t = np.linspace(0, 5, 11)
        ts = ensemble_average(sys, fock(2, 0), t, 1, 40, [p1()])
        rec = run_trajectory(sys, fock(2, 0), t, seed=40, observables=[p1()])
        np.testing.assert_array_equal(ts["P1"], rec.values["P1"])
        assert not np.any(ts.errors["P1"])

    def test_decay_within_standard_errors(self):
        t = np.linspace(0, 3, 7)
        ts = ensemble_average(decaying_mode(1.0), fock(2, 1), t, 1000, 0, [p1()])
        assert np.all(np.abs(ts["P1"] - np.exp(-t)) <= 3 * ts.errors["P1"] + 1e-12)

    def test_standard_error_scaling(self):
        t = np.array([0.0, math.log(2.0)])
        small = ensemble_average(decaying_mode(1.0), fock(2, 1), t, 100, 0, [p1()])
        large = ensemble_average(decaying_mode(1.0), fock(2, 1), t, 400, 1000, [p1()])
        assert small.errors["P1"][1] / large.errors["P1"][1] == pytest.approx(2.0, rel=0.2)

    def test_density_average_matches_lindblad(self):
        sys = driven_qubit(1.0, 0.5)
        t = np.linspace(0, 5, 6)
        ts = ensemble_average(sys, fock(2, 0), t, 1000, 0, keep_density=True)
        ref = evolve(sys, DensityMatrix.from_state(fock(2, 0)), t, keep_states=True)
        for k in (2, 5):
            mean, exact = ts.states[k].matrix, ref.states[k].matrix
            tol = 3 * ts.metadata["density_se_re"][k] + 1e-12
            assert np.all(np.abs(mean.real - exact.real) <= tol)
            tol = 3 * ts.metadata["density_se_im"][k] + 1e-12
            assert np.all(np.abs(mean.imag - exact.imag) <= tol)

    def test_worker_pool_is_order_independent(self):
        sys = driven_qubit(1.0, 0.5)
        t = np.linspace(0, 4, 5)
        serial = ensemble_average(sys, fock(2, 0), t, 8, 100, [p1()])
        pooled = ensemble_average(sys, fock(2, 0), t, 8, 100, [p1()], threads=2)
        np.testing.assert_array_equal(serial["P1"], pooled["P1"])

    def test_needs_a_trajectory(self):
        with pytest.raises(ValueError, match="n_traj"):
            ensemble_average(decaying_mode(), fock(2, 1), [0.0, 1.0], 0, 0)


class TestRamsey:
    def test_one_over_e_interpolation(self):
        t = np.linspace(0, 3, 301)
        assert t_one_over_e(t, np.exp(-t)) == pytest.approx(1.0, abs=1e-4)

    def test_envelope_never_crosses(self):
        with pytest.raises(RamseyError, match="1/e"):
            t_one_over_e([0.0, 1.0, 2.0], [1.0, 0.9, 0.8])

    def test_zero_noise_keeps_contrast(self):
        t = np.linspace(0, 10, 11)
        env = ramsey_envelope(SpectrumParams(0.0, 0.01, 1.0), t, n_realizations=5)
        np.testing.assert_allclose(env, 1.0)

    def test_t1_only_envelope(self):
        t = np.linspace(0, 10, 501)
        env = ramsey_envelope(SpectrumParams(0.0, 0.01, 1.0), t, n_realizations=2, T1=2.0)
        assert t_one_over_e(t, env) == pytest.approx(4.0, rel=1e-3)

    def test_phases_scale_with_amplitude(self):
        t = np.linspace(0, 5, 6)
        unit = ramsey_phases(SpectrumParams(1.0, 0.01, 1.0), t, 3, seed_base=9)
        triple = ramsey_phases(SpectrumParams(3.0, 0.01, 1.0), t, 3, seed_base=9)
        np.testing.assert_allclose(triple, 3.0 * unit, atol=1e-12)

    def test_huge_target_needs_almost_no_noise(self):
        amp = calibrate_dephasing(1e9, RamseyParams(n_realizations=50, n_times=100))
        assert 0 < amp < 1e-6

    def test_larger_amplitude_shortens_t2(self):
        t = np.linspace(0, 40, 400)
        t2 = [t_one_over_e(t, ramsey_envelope(SpectrumParams(a, 1e-3, 10.0), t, 100)) for a in (0.2, 0.4)]
        assert t2[1] < t2[0]

    @pytest.mark.slow
    def test_calibration_round_trip(self):
        target = 10.0
        params = RamseyParams(n_realizations=1600, f_min=1e-3, f_max=10.0)
        amp = calibrate_dephasing(target, params)
        t = params.times(target)
        env = ramsey_envelope(SpectrumParams(amp, 1e-3, 10.0), t, 1600, seed_base=50_000)
        assert t_one_over_e(t, env) == pytest.approx(target, rel=0.1)

    def test_calibration_rejects_bad_target(self):
        with pytest.raises(ValueError, match="target_T2R"):
            calibrate_dephasing(0.0)


class TestDephasingEnsemble:
    def test_qubit_coherence_follows_phase_average(self):
        sp_ = HilbertSpace((2,))
        n = number(2).relabel("n")
        sys = LindbladSystem(sp_, 0 * sigma_x(), ())
        plus = DensityMatrix(sp_, 0.5 * np.ones((2, 2)))
        spectrum = SpectrumParams(0.3, 0.01, 1.0)
        t = np.linspace(0, 20, 21)
        ts = dephasing_ensemble(sys, plus, t, [n], spectrum, 20, 0, {"sx": sigma_x()})
        phases = ramsey_phases(spectrum, t, 20, seed_base=0)
        np.testing.assert_allclose(ts["sx"], np.cos(phases).mean(axis=0), atol=1e-4)
        assert ts.metadata["max_trace_drift"] < 1e-8
        assert ts.metadata["min_eigenvalue"] >= -1e-7

    def test_rejects_time_dependent_base(self):
        sys = driven_qubit(1.0, 0.1)
        timed = sys.with_hamiltonian(lambda t: sys.hamiltonian_at(0.0))
        with pytest.raises(ValueError, match="time-independent"):
            dephasing_ensemble(timed, DensityMatrix.from_state(fock(2, 0)), [0.0, 1.0], [number(2)],
                               SpectrumParams(0.1, 0.1, 1.0), 1, 0)
