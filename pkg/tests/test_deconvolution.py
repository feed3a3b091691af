import numpy as np
import pytest

from renewal_mcmc import (
    DataError,
    DeconvolutionConfig,
    DelayKernel,
    ParameterError,
    TimeVaryingDelay,
    em_deconvolve,
    em_step,
    expected_detections,
)
from renewal_mcmc.deconvolution import (
    build_convolution_matrix,
    chi_squared,
    pseudo_loglik,
    shifted_start,
)
from renewal_mcmc.distributions import convolve_gamma_delay


@pytest.fixture(scope="module")
def delay():
    return TimeVaryingDelay.from_kernel(
        DelayKernel(np.array([0.4, 0.3, 0.2]), nondetect=0.1))


def random_instance(rng, t_obs, delay):
    inc = rng.uniform(1.0, 50.0, t_obs + delay.k_max - 1)
    d = rng.poisson(expected_detections(inc, delay)).astype(float)
    return inc, d


class TestConvolutionMatrix:
    def test_expected_detections_direct(self, delay):
        t_obs = 6
        k_m = delay.k_max
        inc = np.arange(1.0, t_obs + k_m)
        e = expected_detections(inc, delay)
        # direct double loop
        for t in range(1, t_obs + 1):
            total = 0.0
            for j, s in enumerate(range(1 - k_m, t_obs)):
                total += inc[j] * delay.prob(s, t)
            assert e[t - 1] == pytest.approx(total)

    def test_mass_is_window_truncated(self, delay):
        t_obs = 6
        conv, mass = build_convolution_matrix(delay, t_obs)
        k_m = delay.k_max
        for j, s in enumerate(range(1 - k_m, t_obs)):
            assert mass[j] == pytest.approx(delay.mass_in_window(s, t_obs))


class TestEMStep:
    def test_pseudo_loglik_nondecreasing(self, delay):
        rng = np.random.default_rng(3)
        for _ in range(100):
            inc, d = random_instance(rng, int(rng.integers(5, 25)), delay)
            est = shifted_start(d, delay.k_max)
            prev = pseudo_loglik(est, d, delay)
            for _ in range(50):
                est = em_step(est, d, delay)
                cur = pseudo_loglik(est, d, delay)
                assert cur >= prev - 1e-10
                prev = cur

    def test_fixed_point_at_exact_fit(self, delay):
        # if E(D|I) == D the update leaves I unchanged
        inc = np.full(10 + delay.k_max - 1, 20.0)
        d = expected_detections(inc, delay)
        out = em_step(inc, d, delay)
        assert np.allclose(out, inc, atol=1e-12)

    def test_unit_delay_exact_recovery(self):
        delay1 = TimeVaryingDelay.from_kernel(DelayKernel(np.array([1.0])))
        d = np.array([5.0, 9.0, 3.0, 12.0])
        res = em_deconvolve(d, delay1,
                            DeconvolutionConfig(stopping="fixed", fixed_iters=1))
        assert np.allclose(res.incidence, d)
        assert res.first_day == 0

    def test_zero_expected_with_positive_counts(self, delay):
        inc = np.zeros(4 + delay.k_max - 1)
        inc += 1e-320  # effectively zero expected detections
        with pytest.raises(DataError):
            em_step(inc, np.array([3.0, 0, 0, 0]), delay)


class TestShiftedStart:
    def test_constant_extension(self):
        d = np.arange(1.0, 21.0)
        out = shifted_start(d, k_max=3, shift=10)
        # day s takes the count of day s+10, clipped into range
        assert out[0] == d[7]  # s = -2 -> day 8
        assert out[-1] == d[-1]

    def test_linear_extension_extrapolates(self):
        d = np.arange(1.0, 21.0)
        out = shifted_start(d, k_max=3, shift=10, right="linear")
        # beyond the data the final week's slope (1/day) continues
        assert out[-1] == pytest.approx(d[-1] + 9, abs=1e-8)

    def test_floor(self):
        out = shifted_start(np.zeros(10), k_max=3)
        assert np.all(out == 1e-3)


class TestEmDeconvolve:
    def test_chi_squared_stopping(self, delay):
        rng = np.random.default_rng(8)
        inc, d = random_instance(rng, 30, delay)
        res = em_deconvolve(d, delay)
        assert res.converged
        assert res.chi2_trace[-1] < d.size
        e = expected_detections(res.incidence, delay)
        assert chi_squared(d, e) == pytest.approx(res.chi2_trace[-1])

    def test_non_uniqueness_near_edges(self, delay):
        # two different starts both reach the stopping region but disagree
        # near the window edges while agreeing in the interior
        rng = np.random.default_rng(15)
        inc, d = random_instance(rng, 40, delay)
        res_a = em_deconvolve(d, delay, DeconvolutionConfig(start="shifted_constant"))
        res_b = em_deconvolve(d, delay, DeconvolutionConfig(start="shifted_linear"))
        assert res_a.converged and res_b.converged
        a, b = res_a.incidence, res_b.incidence
        k_m = delay.k_max
        interior = slice(k_m, a.size - k_m)
        rel_interior = np.abs(a[interior] - b[interior]) / np.maximum(a[interior], 1.0)
        edge = np.abs(a[-1] - b[-1]) / max(a[-1], 1.0)
        assert np.median(rel_interior) < edge

    def test_nonconvergence_flagged(self, delay):
        d = np.array([100.0, 0.0, 100.0, 0.0, 100.0, 0.0])
        res = em_deconvolve(d, delay, DeconvolutionConfig(max_iters=2,
                                                          chi2_threshold=1e-6))
        assert not res.converged
        assert res.iterations == 2

    def test_bad_config(self):
        with pytest.raises(ParameterError):
            DeconvolutionConfig(stopping="nope")
        with pytest.raises(ParameterError):
            DeconvolutionConfig(max_iters=0)

    def test_full_scale_kernel_runs(self):
        delay = TimeVaryingDelay.from_kernel(convolve_gamma_delay(5.3, 3.2, 5.5, 3.8, 28))
        rng = np.random.default_rng(0)
        inc = 50 + 30 * np.sin(np.arange(60 + 27) / 9.0)
        d = rng.poisson(expected_detections(inc, delay)).astype(float)
        res = em_deconvolve(d, delay)
        assert res.converged
        interior = slice(28, res.incidence.size - 28)
        rel = np.abs(res.incidence[interior] - inc[interior]) / inc[interior]
        assert np.median(rel) < 0.35
