import numpy as np
import pytest

from renewal_mcmc import (
    DelayKernel,
    DivergenceError,
    EpidemicState,
    InfectivityProfile,
    NumericalError,
    ParameterError,
    StateError,
    TimeVaryingDelay,
    discretize_gamma,
    growth_rate,
    predictive_step,
    renewal_intensity,
    renewal_load,
    simulate_infections,
    simulate_path,
    variance_growth_check,
)
from renewal_mcmc.model import VarianceGrowthReport


@pytest.fixture(scope="module")
def profile():
    return InfectivityProfile(discretize_gamma(4.8, 2.3, 12))


@pytest.fixture(scope="module")
def small_delay():
    return TimeVaryingDelay.from_kernel(
        DelayKernel(np.array([0.5, 0.3, 0.1]), nondetect=0.1))


def companion_growth(r_e: float, w: np.ndarray) -> float:
    """Largest real eigenvalue of lambda^K = R_e sum_k w_k lambda^{K-k}."""
    coeffs = np.concatenate([[1.0], -r_e * w])
    roots = np.roots(coeffs)
    real = roots[np.abs(roots.imag) < 1e-9].real
    return float(real.max())


class TestRenewalLoad:
    def test_weighted_sum(self, profile):
        hist = np.arange(1, 13, dtype=float)  # most recent = 12
        expect = float(np.dot(profile.weights, hist[::-1]))
        assert renewal_load(hist, profile) == pytest.approx(expect)

    def test_constant_history_gives_constant(self, profile):
        assert renewal_load(np.full(12, 7.0), profile) == pytest.approx(7.0)

    def test_intensity_scales(self, profile):
        hist = np.full(12, 10.0)
        assert renewal_intensity(hist, 1.3, profile) == pytest.approx(13.0)

    def test_short_history_rejected(self, profile):
        with pytest.raises(ParameterError):
            renewal_load(np.ones(5), profile)


class TestGrowthRate:
    def test_unit_reproduction_is_unit_growth(self, profile):
        assert growth_rate(1.0, profile) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("r_e", [0.8, 1.0, 1.3, 2.0])
    def test_matches_companion_matrix(self, profile, r_e):
        rho = growth_rate(r_e, profile)
        assert rho == pytest.approx(companion_growth(r_e, profile.weights),
                                    abs=1e-9)

    def test_monotone_in_r(self, profile):
        rhos = [growth_rate(r, profile) for r in (0.5, 0.9, 1.0, 1.5, 3.0)]
        assert np.all(np.diff(rhos) > 0)

    def test_monte_carlo_slope(self, profile):
        # log E(I_t) should grow at log rho per day
        r_e = 1.3
        rho = growth_rate(r_e, profile)
        paths = simulate_infections(np.full(30, r_e), np.full(12, 200.0),
                                    profile, seed=11, replicates=2_000)
        mean = paths.mean(axis=0)
        slope = np.polyfit(np.arange(10, 30), np.log(mean[10:30]), 1)[0]
        assert slope == pytest.approx(np.log(rho), rel=0.02)

    def test_unbracketed_raises(self, profile):
        with pytest.raises(NumericalError):
            growth_rate(2.0, profile, bracket=(1e-6, 1.0000001))


class TestSimulate:
    def test_deterministic_given_seed(self, profile):
        a = simulate_infections(np.full(10, 1.1), np.full(12, 20.0), profile,
                                seed=5, replicates=3)
        b = simulate_infections(np.full(10, 1.1), np.full(12, 20.0), profile,
                                seed=5, replicates=3)
        assert np.array_equal(a, b)

    def test_zero_history_stays_zero(self, profile):
        out = simulate_infections(np.full(10, 2.0), np.zeros(12), profile, seed=0)
        assert np.all(out == 0)

    def test_divergence_guard(self, profile):
        with pytest.raises(DivergenceError):
            simulate_infections(np.full(300, 3.0), np.full(12, 1e6), profile,
                                seed=0, intensity_cap=1e7)

    def test_path_accounting(self, profile, small_delay):
        r = np.full(20 + small_delay.k_max - 1, 1.05)
        path = simulate_path(r, np.full(12, 30.0), profile, small_delay,
                             seed=3, sim_start=1 - small_delay.k_max, t_obs=20)
        path.check_accounting()
        assert path.detections.size == 20
        assert path.infections.size == r.size

    def test_path_detection_mass(self, profile):
        # with full detection at lag 1, detections reproduce infections
        delay = TimeVaryingDelay.from_kernel(DelayKernel(np.array([1.0])))
        r = np.full(15, 1.0)
        path = simulate_path(r, np.full(12, 50.0), profile, delay, seed=9,
                             sim_start=0, t_obs=15)
        assert np.array_equal(path.detections[:-1], path.infections[:-1])


class TestVarianceGrowth:
    def test_supercritical_quadratic_variance(self, profile):
        rep = variance_growth_check(1.4, profile, horizon=40, replicates=3_000,
                                    seed=2)
        assert isinstance(rep, VarianceGrowthReport)
        assert rep.rho > 1
        # Var/E^2 stabilizes: tail coefficient of variation is small
        assert rep.tail_cv < 0.2
        # and the Fano factor keeps growing (variance beyond Poisson)
        assert rep.fano[-1] > 5 * rep.fano[4]


class TestPredictiveStep:
    def test_counts_conserved(self, profile, small_delay):
        rng = np.random.default_rng(0)
        k_m = small_delay.k_max
        state = EpidemicState(day=10, log_r_prev=0.1,
                              recent_infections=np.full(12, 40),
                              detected_today=np.zeros(k_m, dtype=int),
                              pending=np.array([5, 9]))
        new, d_next = predictive_step(state, 0.025, profile, small_delay, rng)
        assert new.day == 11
        assert d_next == new.detected_today.sum()
        # backlog mass is either detected now or still pending
        total_before = state.pending[1] + new.recent_infections[-1]
        # day-9 backlog (5) leaves the window: detected or dropped
        assert new.detected_today[k_m - 3] <= 5
        assert (new.pending[k_m - 3] + new.detected_today[k_m - 2]
                == state.pending[1])
        assert (new.pending[k_m - 2] + new.detected_today[k_m - 1]
                == new.recent_infections[-1])
        assert total_before >= 0

    def test_deterministic_given_rng(self, profile, small_delay):
        def run():
            rng = np.random.default_rng(42)
            state = EpidemicState(day=0, log_r_prev=0.0,
                                  recent_infections=np.full(12, 25),
                                  detected_today=np.zeros(3, dtype=int),
                                  pending=np.array([2, 3]))
            out = []
            for _ in range(5):
                state, d = predictive_step(state, 0.025, profile, small_delay, rng)
                out.append(d)
            return out
        assert run() == run()

    def test_zero_state_stays_zero(self, profile, small_delay):
        rng = np.random.default_rng(1)
        state = EpidemicState(day=0, log_r_prev=0.0,
                              recent_infections=np.zeros(12, dtype=int),
                              detected_today=np.zeros(3, dtype=int),
                              pending=np.zeros(2, dtype=int))
        state, d = predictive_step(state, 0.025, profile, small_delay, rng)
        assert d == 0
        assert np.all(state.recent_infections == 0)

    def test_negative_counts_rejected(self):
        with pytest.raises(StateError):
            EpidemicState(day=0, log_r_prev=0.0,
                          recent_infections=np.array([-1]),
                          detected_today=np.array([0]),
                          pending=np.array([], dtype=int))
