import logging
import math

import numpy as np
import pytest

from analysis import (
    default_window_start,
    fidelity,
    fit_decay,
    logical_decay,
    qec_condition_check,
    ramsey_t2,
    window_sensitivity,
)
from dynamics import TimeSeries
from errors import ConfigError, FitError, RamseyError, SpaceMismatchError
from hilbert import DensityMatrix, fock
from models import bitflip_ring, cat_states, three_level_refill, vslq
from ratchet import vslq_rates
from trajectories import SpectrumParams


def series(t, y, name="z", se=None):
    errors = {} if se is None else {name: se}
    return TimeSeries(np.asarray(t), {name: np.asarray(y)}, errors=errors)


class TestFitDecay:
    def test_exact_exponential(self):
        t = np.linspace(0, 500, 201)
        fit = fit_decay(series(t, 0.8 * np.exp(-0.01 * t) + 0.1), "z")
        assert fit.rate == pytest.approx(0.01, rel=1e-6)
        assert fit.offset == pytest.approx(0.1, abs=1e-6)
        assert fit.lifetime == pytest.approx(100.0, rel=1e-6)
        assert fit.monotone

    def test_window_skips_fast_transient(self):
        GP, GL = 1e-3, 2e-5
        t = np.linspace(0, 40000, 801)
        y = 0.3 * np.exp(-3 * GP * t) + 0.7 * np.exp(-GL * t)
        fit = fit_decay(series(t, y), "z", repair_rate=1e-3)
        assert fit.fit_window[0] == pytest.approx(5000.0)
        assert fit.rate == pytest.approx(GL, rel=0.05)

    def test_default_window_start(self):
        assert default_window_start(0.05, 0.05) == pytest.approx(100.0)
        assert default_window_start(None, 0.1) == pytest.approx(30.0)
        assert default_window_start() == 0.0

    def test_confidence_interval_coverage(self):
        t = np.linspace(0, 10, 101)
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            y = np.exp(-0.5 * t) + rng.normal(0.0, 0.01, t.size)
            fit = fit_decay(series(t, y), "z")
            hits += abs(fit.rate - 0.5) <= fit.half_width
        assert hits >= 88

    def test_fixed_offset(self):
        t = np.linspace(0, 50, 101)
        fit = fit_decay(series(t, -np.exp(-0.2 * t)), "z", fixed_offset=0.0)
        assert fit.fixed_offset
        assert fit.offset == 0.0
        assert fit.rate == pytest.approx(0.2, rel=1e-6)

    def test_too_few_points(self):
        t = np.linspace(0, 10, 11)
        with pytest.raises(FitError, match="points"):
            fit_decay(series(t, np.exp(-t)), "z", (5.0, 10.0))

    def test_window_outside_series(self):
        t = np.linspace(0, 10, 101)
        with pytest.raises(FitError, match="outside"):
            fit_decay(series(t, np.exp(-t)), "z", (2.0, 20.0))

    def test_unknown_observable(self):
        t = np.linspace(0, 10, 101)
        with pytest.raises(ConfigError, match="not in series"):
            fit_decay(series(t, np.exp(-t)), "Z_L")

    def test_non_monotone_is_flagged(self, caplog):
        t = np.linspace(0, 20, 201)
        y = np.exp(-0.3 * t)
        y[50] += 0.2
        with caplog.at_level(logging.WARNING, logger="analysis"):
            fit = fit_decay(series(t, y), "z")
        assert not fit.monotone
        assert "not monotone" in caplog.text

    def test_as_dict(self):
        t = np.linspace(0, 10, 101)
        d = fit_decay(series(t, np.exp(-t)), "z").as_dict()
        assert {"rate", "half_width", "t_start", "t_end", "residual_rms"} <= set(d)


class TestWindowSensitivity:
    def test_rows_and_skips(self):
        t = np.linspace(0, 20, 201)
        frame = window_sensitivity(series(t, np.exp(-0.3 * t) + 0.05), "z", [0.0, 5.0, 19.5])
        assert list(frame["t_start"]) == [0.0, 5.0, 19.5]
        np.testing.assert_allclose(frame["rate"][:2], 0.3, rtol=1e-5)
        assert math.isnan(frame["rate"][2])


class TestFidelity:
    def test_pure_and_mixed(self):
        g, e = fock(2, 0), fock(2, 1)
        assert fidelity(DensityMatrix.from_state(g), g) == pytest.approx(1.0)
        assert fidelity(g, e) == pytest.approx(0.0)
        assert fidelity(DensityMatrix.maximally_mixed(g.space), e) == pytest.approx(0.5)

    def test_space_mismatch(self):
        with pytest.raises(SpaceMismatchError):
            fidelity(fock(2, 0), fock(3, 0))


class TestQecConditions:
    def test_vslq_satisfies_conditions(self):
        report = qec_condition_check(vslq(W=1.0, delta=12.0, Omega=0.1, GammaP=1e-3, GammaS=0.2))
        assert report.ok, report.flags
        assert len(report.rows) == 2
        assert report.degeneracy_gap == pytest.approx(0.0, abs=1e-12)
        assert report.logical_coupling == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("alpha", [2.0, 2.5])
    def test_cat_diagonal_residual_shrinks(self, alpha):
        report = qec_condition_check(cat_states(alpha))
        assert report.max_residual("diag_rel") < 10 * math.exp(-alpha ** 2)
        assert report.max_residual("kl_diag") < 1e-12
        assert report.max_residual("offdiag") < 1e-12

    def test_bitflip_first_order_residual_flagged(self):
        report = qec_condition_check(bitflip_ring(J=1.0, Omega=0.05, GammaP=1e-3, GammaS=0.1))
        assert not report.ok
        assert any("kl_diag" in flag for flag in report.flags)
        assert report.max_residual("diag") < 1e-12
        assert report.max_residual("kl_diag") == pytest.approx(1.0)
        assert list(report.to_frame()["error"]) == ["q1", "q2", "q3"]

    def test_needs_logical_pair(self):
        with pytest.raises(ConfigError, match="logical"):
            qec_condition_check(three_level_refill(Delta=20.0, Omega=1.0, nu=0.0, GammaP=0.01, GammaS=2.0))


class TestRamseyT2:
    times = np.linspace(0.0, 10.0, 401)

    def test_no_noise_never_decays(self):
        spectrum = SpectrumParams(amplitude=0.0, f_min=1e-3, f_max=10.0)
        with pytest.raises(RamseyError, match="above 1/e"):
            ramsey_t2(spectrum, self.times, n_realizations=20)

    def test_quadrupled_power_halves_t2(self):
        weak = SpectrumParams(amplitude=1.0, f_min=1e-3, f_max=10.0)
        strong = weak.scaled(2.0)
        t_weak = ramsey_t2(weak, self.times, n_realizations=400, seed_base=7)
        t_strong = ramsey_t2(strong, self.times, n_realizations=400, seed_base=7)
        assert t_strong == pytest.approx(t_weak / 2, rel=0.15)

    def test_t1_shortens_envelope(self):
        spectrum = SpectrumParams(amplitude=1.0, f_min=1e-3, f_max=10.0)
        free = ramsey_t2(spectrum, self.times, n_realizations=100, seed_base=3)
        damped = ramsey_t2(spectrum, self.times, T1=1.0, n_realizations=100, seed_base=3)
        assert damped < free


@pytest.mark.slow
class TestLifetimeStudies:
    def test_vslq_lifetime_improves_as_loss_shrinks(self):
        gains = []
        for GP in (2e-3, 1e-3):
            expected = vslq_rates(W=1.0, delta=12.0, Omega=0.1, GammaS=0.2, GammaP=GP)
            bundle = vslq(W=1.0, delta=12.0, Omega=0.1, GammaP=GP, GammaS=0.2)
            _, fit = logical_decay(bundle, "X_L", "0_L", t_final=0.5 / expected.logical, method="propagator",
                                   repair_rate=expected.repair, omega=0.1, fixed_offset=0.0)
            gains.append(fit.lifetime * GP)
        assert gains[1] > 5
        assert gains[1] > gains[0]

    def test_bitflip_logical_rate_is_near_quadratic(self):
        loss = [1e-3, 5e-4, 2.5e-4]
        reference = [4.6e-5, 1.3e-5, 3.8e-6]
        t_final = [3e4, 1e5, 4e5]
        rates = []
        for GP, tf in zip(loss, t_final):
            bundle = bitflip_ring(J=1.0, Omega=0.05, GammaP=GP, GammaS=0.1)
            _, fit = logical_decay(bundle, "Z_L", "1_L", t_final=tf, method="propagator",
                                   repair_rate=0.05, omega=0.05, fixed_offset=0.0)
            rates.append(fit.rate)
        slope = np.polyfit(np.log(loss), np.log(rates), 1)[0]
        assert 1.7 <= slope <= 2.2
        for got, ref in zip(rates, reference):
            assert ref / 1.5 <= got <= ref * 1.5
