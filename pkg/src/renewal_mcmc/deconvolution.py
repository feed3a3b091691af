"""Multiplicative (Richardson-Lucy style) deconvolution of detection counts
into daily infection incidence, with chi-squared stopping and the Poisson
pseudo-likelihood diagnostic.

Detections cover days 1..T; the recovered incidence covers days
(1 - k_max_delay) .. (T - 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import TimeVaryingDelay
from .errors import DataError, DimensionError, ParameterError

__all__ = [
    "DeconvolutionConfig",
    "DeconvolutionResult",
    "build_convolution_matrix",
    "expected_detections",
    "em_step",
    "em_deconvolve",
    "pseudo_loglik",
    "chi_squared",
    "shifted_start",
]

_EPS = 1e-300


def build_convolution_matrix(delay: TimeVaryingDelay, t_obs: int
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Matrix M with M[t-1, j] = m(s_j, t) for incidence days s_j = 1-K_m .. T-1,
    and the per-day detectable mass b_s within the observation window."""
    if t_obs < 1:
        raise ParameterError("observation length must be >= 1")
    k_m = delay.k_max
    n = t_obs + k_m - 1
    m = np.zeros((t_obs, n))
    s0 = 1 - k_m
    for j, s in enumerate(range(s0, t_obs)):
        row = delay.row(s)
        lo = max(1, 1 - s)
        hi = min(k_m, t_obs - s)
        if hi >= lo:
            m[s + lo - 1 : s + hi, j] = row[lo - 1 : hi]
    return m, m.sum(axis=0)


def expected_detections(incidence: np.ndarray, delay: TimeVaryingDelay,
                        conv: np.ndarray | None = None) -> np.ndarray:
    """E(D_t | I) = sum_s I_s m(s, t) for t = 1..T.

    ``incidence`` covers days (1 - k_max) .. (T - 1); T is inferred from its
    length. A precomputed convolution matrix may be passed to avoid rebuilds.
    """
    inc = np.asarray(incidence, dtype=float)
    t_obs = inc.size - delay.k_max + 1
    if t_obs < 1:
        raise DimensionError(
            f"incidence vector of length {inc.size} is shorter than the delay horizon"
        )
    if conv is None:
        conv, _ = build_convolution_matrix(delay, t_obs)
    elif conv.shape != (t_obs, inc.size):
        raise DimensionError("convolution matrix does not match the incidence window")
    return conv @ inc


def pseudo_loglik(incidence: np.ndarray, detections: np.ndarray,
                  delay: TimeVaryingDelay, conv: np.ndarray | None = None) -> float:
    """Poisson pseudo-log-likelihood sum_t (-E_t + D_t log E_t); the EM
    iteration never decreases it."""
    e = expected_detections(incidence, delay, conv)
    d = np.asarray(detections, dtype=float)
    with np.errstate(divide="ignore"):
        logs = np.where(d > 0, d * np.log(np.maximum(e, _EPS)), 0.0)
    return float(np.sum(-e + logs))


def chi_squared(detections: np.ndarray, expected: np.ndarray) -> float:
    """Goodness-of-fit statistic sum_t (D_t - E_t)^2 / E_t."""
    d = np.asarray(detections, dtype=float)
    e = np.asarray(expected, dtype=float)
    mask = e > 0
    return float(np.sum((d[mask] - e[mask]) ** 2 / e[mask]))


def em_step(incidence: np.ndarray, detections: np.ndarray,
            delay: TimeVaryingDelay, conv: np.ndarray | None = None,
            mass: np.ndarray | None = None) -> np.ndarray:
    """One multiplicative update of the incidence estimate.

    Each day is rescaled by the detection-mass-weighted average of the
    ratios D_t / E(D_t | I); positivity is preserved. Days whose detections
    cannot reach the window (b_s = 0) are left unchanged.
    """
    inc = np.asarray(incidence, dtype=float)
    d = np.asarray(detections, dtype=float)
    t_obs = d.size
    if inc.size != t_obs + delay.k_max - 1:
        raise DimensionError("incidence window does not match the detections")
    if conv is None or mass is None:
        conv, mass = build_convolution_matrix(delay, t_obs)
    e = conv @ inc
    bad = (e < _EPS) & (d > 0)
    if np.any(bad):
        days = np.nonzero(bad)[0] + 1
        raise DataError(
            f"expected detections vanish on days {days.tolist()} where counts are positive"
        )
    ratio = np.where(e > _EPS, d / np.maximum(e, _EPS), 0.0)
    weight = conv.T @ ratio
    out = inc.copy()
    pos = mass > 0
    out[pos] = inc[pos] * weight[pos] / mass[pos]
    return out


def shifted_start(detections: np.ndarray, k_max: int, shift: int = 10,
                  right: str = "constant") -> np.ndarray:
    """Starting incidence built by shifting the detections back in time.

    The series is shifted back by ``shift`` days and extended to cover days
    (1 - k_max)..(T - 1); the left end is extended with a constant, the right
    end either with a constant or by linear extrapolation of the final week.
    """
    d = np.asarray(detections, dtype=float)
    t_obs = d.size
    s_days = np.arange(1 - k_max, t_obs)
    idx = s_days + shift  # day whose detection count seeds day s
    out = np.empty(s_days.size)
    if right == "constant":
        out = d[np.clip(idx - 1, 0, t_obs - 1)]
    elif right == "linear":
        out = d[np.clip(idx - 1, 0, t_obs - 1)].astype(float)
        tail = min(7, t_obs)
        x = np.arange(tail, dtype=float)
        slope, intercept = np.polyfit(x, d[-tail:], 1)
        over = idx > t_obs
        out[over] = intercept + slope * (tail - 1 + (idx[over] - t_obs))
    else:
        raise ParameterError(f"unknown right extension {right!r}")
    return np.maximum(out, 1e-3)


@dataclass
class DeconvolutionConfig:
    """Iteration control for the multiplicative deconvolution.

    stopping: "chi_squared" stops once the chi-squared statistic drops below
    ``chi2_threshold`` (default: the number of observation days); "fixed"
    runs exactly ``fixed_iters`` updates. ``start`` selects the starting
    incidence: "shifted_constant", "shifted_linear", or an explicit vector.
    """

    max_iters: int = 10_000
    stopping: str = "chi_squared"
    chi2_threshold: float | None = None
    fixed_iters: int = 10
    start: str | np.ndarray = "shifted_constant"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")
        if self.stopping not in ("chi_squared", "fixed"):
            raise ParameterError(f"unknown stopping rule {self.stopping!r}")
        if self.chi2_threshold is not None and self.chi2_threshold <= 0:
            raise ParameterError("chi-squared threshold must be positive")
        if self.fixed_iters < 1:
            raise ParameterError("fixed_iters must be >= 1")


@dataclass
class DeconvolutionResult:
    incidence: np.ndarray       # days (1 - k_max) .. (T - 1)
    first_day: int
    iterations: int
    chi2_trace: np.ndarray
    converged: bool             # False if max_iters hit before the threshold


def em_deconvolve(detections: np.ndarray, delay: TimeVaryingDelay,
                  config: DeconvolutionConfig | None = None) -> DeconvolutionResult:
    """Iterate the multiplicative update from the configured start until the
    stopping rule fires.

    Non-convergence within max_iters is flagged in the result, not raised;
    the iteration is known to converge slowly on flat stretches.
    """
    if config is None:
        config = DeconvolutionConfig()
    d = np.asarray(detections, dtype=float)
    if np.any(d < 0):
        raise DataError("detection counts must be nonnegative")
    t_obs = d.size
    k_m = delay.k_max
    conv, mass = build_convolution_matrix(delay, t_obs)

    if isinstance(config.start, str):
        right = "linear" if config.start == "shifted_linear" else "constant"
        if config.start not in ("shifted_constant", "shifted_linear"):
            raise ParameterError(f"unknown start {config.start!r}")
        inc = shifted_start(d, k_m, right=right)
    else:
        inc = np.asarray(config.start, dtype=float).copy()
        if inc.size != t_obs + k_m - 1:
            raise DimensionError("explicit start does not match the incidence window")
        if np.any(inc <= 0):
            raise ParameterError("explicit start must be strictly positive")

    threshold = config.chi2_threshold if config.chi2_threshold is not None else float(t_obs)
    n_iters = config.fixed_iters if config.stopping == "fixed" else config.max_iters

    trace = []
    converged = False
    it = 0
    for it in range(1, n_iters + 1):
        inc = em_step(inc, d, delay, conv, mass)
        trace.append(chi_squared(d, conv @ inc))
        if config.stopping == "chi_squared" and trace[-1] < threshold:
            converged = True
            break
    if config.stopping == "fixed":
        converged = True
    return DeconvolutionResult(
        incidence=inc,
        first_day=1 - k_m,
        iterations=it,
        chi2_trace=np.asarray(trace),
        converged=converged,
    )
