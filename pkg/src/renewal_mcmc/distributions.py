"""Infectivity profiles and infection-to-detection delay distributions.

Provides discretization of Gamma distributions onto daily lags, the
Gamma-sum delay used for incubation plus reporting, and two constructions
that introduce weekday structure into a time-invariant delay kernel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy import stats

from .errors import NumericalError, ParameterError

__all__ = [
    "InfectivityProfile",
    "DelayKernel",
    "TimeVaryingDelay",
    "WeekdayWeights",
    "discretize_gamma",
    "convolve_gamma_delay",
    "weekday_shift_delay",
    "weekday_multiplicative_delay",
    "round_to_sum",
]

_NORM_TOL = 1e-12


@dataclass(frozen=True)
class InfectivityProfile:
    """Normalized transmission weights by lag k = 1..k_max.

    ``weights[k-1]`` is the probability that a secondary infection caused by
    an individual infected k days earlier; the weights sum to one.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size < 1:
            raise ParameterError("profile weights must be a non-empty 1-d vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ParameterError("profile weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > _NORM_TOL:
            raise ParameterError(
                f"profile weights must sum to 1 (got {w.sum():.15f})"
            )

    @property
    def k_max(self) -> int:
        return self.weights.size

    def to_json(self) -> str:
        return json.dumps({"weights": self.weights.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "InfectivityProfile":
        return cls(np.asarray(json.loads(text)["weights"], dtype=float))


@dataclass(frozen=True)
class DelayKernel:
    """Time-invariant detection probabilities by lag, possibly defective.

    ``kernel[k-1]`` is the probability that an infection is detected k days
    later (k = 1..k_max); ``nondetect`` is the probability of never being
    detected. Together they sum to one.
    """

    kernel: np.ndarray
    nondetect: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.kernel, dtype=float)
        object.__setattr__(self, "kernel", m)
        if m.ndim != 1 or m.size < 1:
            raise ParameterError("delay kernel must be a non-empty 1-d vector")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ParameterError("delay kernel entries must be finite and nonnegative")
        if not (0.0 <= self.nondetect <= 1.0):
            raise ParameterError("nondetection probability must lie in [0, 1]")
        if abs(m.sum() + self.nondetect - 1.0) > _NORM_TOL:
            raise ParameterError(
                "delay kernel plus nondetection mass must sum to 1 "
                f"(got {m.sum() + self.nondetect:.15f})"
            )

    @property
    def k_max(self) -> int:
        return self.kernel.size

    def mean(self) -> float:
        """Mean delay conditional on detection within the horizon."""
        k = np.arange(1, self.k_max + 1)
        return float(np.dot(k, self.kernel) / self.kernel.sum())

    def to_json(self) -> str:
        return json.dumps(
            {"kernel": self.kernel.tolist(), "nondetect": self.nondetect}
        )

    @classmethod
    def from_json(cls, text: str) -> "DelayKernel":
        obj = json.loads(text)
        return cls(np.asarray(obj["kernel"], dtype=float), float(obj.get("nondetect", 0.0)))


class TimeVaryingDelay:
    """Detection probabilities m(s, s+k) that may depend on the infection day s.

    Stored as a row function evaluated lazily and cached per day; rows are
    vectors over lags k = 1..k_max plus a nondetection mass. Each row sums
    to one within 1e-10.
    """

    _ROW_TOL = 1e-10

    def __init__(self, k_max: int,
                 row_fn: Callable[[int], np.ndarray],
                 nondetect_fn: Callable[[int], float]):
        if k_max < 1:
            raise ParameterError("k_max must be >= 1")
        self.k_max = int(k_max)
        self._row_fn = row_fn
        self._nondetect_fn = nondetect_fn
        self._rows: dict[int, np.ndarray] = {}
        self._nondet: dict[int, float] = {}

    @classmethod
    def from_kernel(cls, kernel: DelayKernel) -> "TimeVaryingDelay":
        row = kernel.kernel.copy()
        row.setflags(write=False)
        return cls(kernel.k_max, lambda s: row, lambda s: kernel.nondetect)

    def row(self, s: int) -> np.ndarray:
        """Vector (m(s, s+1), ..., m(s, s+k_max))."""
        if s not in self._rows:
            r = np.asarray(self._row_fn(s), dtype=float)
            nd = float(self._nondetect_fn(s))
            if r.size != self.k_max:
                raise ParameterError("row function returned wrong length")
            if abs(r.sum() + nd - 1.0) > self._ROW_TOL:
                raise ParameterError(
                    f"delay row for day {s} plus nondetection mass is "
                    f"{r.sum() + nd:.12f}, expected 1"
                )
            r.setflags(write=False)
            self._rows[s] = r
            self._nondet[s] = nd
        return self._rows[s]

    def nondetect(self, s: int) -> float:
        self.row(s)
        return self._nondet[s]

    def prob(self, s: int, t: int) -> float:
        """m(s, t): probability an infection on day s is detected on day t."""
        k = t - s
        if k < 1 or k > self.k_max:
            return 0.0
        return float(self.row(s)[k - 1])

    def mass_in_window(self, s: int, t_max: int, t_min: int = 1) -> float:
        """Total detection probability of day-s infections within days t_min..t_max."""
        lo = max(1, t_min - s)
        hi = min(self.k_max, t_max - s)
        if hi < lo:
            return 0.0
        return float(self.row(s)[lo - 1 : hi].sum())

    def tail_mass(self, s: int, t: int) -> float:
        """Probability a day-s infection is detected on day >= t or never."""
        lo = max(1, t - s)
        r = self.row(s)
        return float(r[lo - 1 :].sum() + self.nondetect(s))


@dataclass(frozen=True)
class WeekdayWeights:
    """Weekday modification of a delay kernel.

    Either multiplicative weights per weekday of detection (``scale`` of
    length 7) or a 7x7 row-stochastic shift matrix ``shift`` where
    ``shift[i, k]`` is the probability that a detection nominally due on
    weekday i happens k days later (k = 0..6).
    """

    scale: np.ndarray | None = None
    shift: np.ndarray | None = None

    def __post_init__(self):
        if (self.scale is None) == (self.shift is None):
            raise ParameterError("specify exactly one of scale or shift")
        if self.scale is not None:
            w = np.asarray(self.scale, dtype=float)
            object.__setattr__(self, "scale", w)
            if w.shape != (7,) or np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise ParameterError("scale must be 7 positive finite weights")
        else:
            v = np.asarray(self.shift, dtype=float)
            object.__setattr__(self, "shift", v)
            if v.shape != (7, 7) or np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ParameterError("shift must be a nonnegative 7x7 matrix")
            if np.max(np.abs(v.sum(axis=1) - 1.0)) > _NORM_TOL:
                raise ParameterError("shift matrix rows must sum to 1")

    @classmethod
    def multiplicative(cls, scale) -> "WeekdayWeights":
        return cls(scale=np.asarray(scale, dtype=float))

    @classmethod
    def shifted(cls, shift) -> "WeekdayWeights":
        return cls(shift=np.asarray(shift, dtype=float))


def _check_gamma_params(*params) -> None:
    for p in params:
        if not np.isfinite(p) or p <= 0:
            raise ParameterError(f"Gamma parameters must be positive and finite, got {p!r}")


def discretize_gamma(mean: float, sd: float, k_max: int) -> np.ndarray:
    """Discretize a Gamma(mean, sd) distribution onto integer lags 1..k_max.

    Cell k receives the probability mass of [k - 0.5, k + 0.5]; the result
    is renormalized over the window [0.5, k_max + 0.5] so it sums to one.
    Shape and rate follow the moment parameterization (mean/sd)^2, mean/sd^2.
    """
    _check_gamma_params(mean, sd)
    k_max = int(k_max)
    if k_max < 1:
        raise ParameterError("k_max must be >= 1")
    shape = (mean / sd) ** 2
    rate = mean / sd**2
    cdf = stats.gamma(a=shape, scale=1.0 / rate).cdf
    edges = cdf(np.arange(0, k_max + 1) + 0.5)
    p = np.diff(edges)
    total = edges[-1] - edges[0]
    if total <= 0:
        raise NumericalError("no probability mass inside the discretization window")
    return p / total


def _gamma_sum_cdf(x: float, shape1: float, rate1: float,
                   shape2: float, rate2: float, epsabs: float = 1e-10) -> float:
    """CDF at x of the sum of two independent Gamma variables, by quadrature."""
    if x <= 0:
        return 0.0
    f1 = stats.gamma(a=shape1, scale=1.0 / rate1)
    cdf2 = stats.gamma(a=shape2, scale=1.0 / rate2).cdf
    val, err = integrate.quad(
        lambda y: cdf2(x - y) * f1.pdf(y), 0.0, x, epsabs=epsabs, limit=400
    )
    if err > max(100 * epsabs, 1e-7):
        raise NumericalError(
            f"quadrature for the Gamma-sum CDF did not converge at x={x} "
            f"(error estimate {err:.2e})"
        )
    return float(val)


def convolve_gamma_delay(mean1: float, sd1: float, mean2: float, sd2: float,
                         k_max: int, epsabs: float = 1e-10) -> DelayKernel:
    """Delay kernel from the sum of two independent Gamma delays.

    The sum's CDF is computed by numerical integration of the convolution
    and discretized as in :func:`discretize_gamma`. The returned kernel has
    zero nondetection mass.
    """
    _check_gamma_params(mean1, sd1, mean2, sd2)
    k_max = int(k_max)
    if k_max < 1:
        raise ParameterError("k_max must be >= 1")
    shape1, rate1 = (mean1 / sd1) ** 2, mean1 / sd1**2
    shape2, rate2 = (mean2 / sd2) ** 2, mean2 / sd2**2
    xs = np.arange(0, k_max + 1) + 0.5
    g = np.array([
        _gamma_sum_cdf(x, shape1, rate1, shape2, rate2, epsabs=epsabs) for x in xs
    ])
    p = np.diff(g)
    total = g[-1] - g[0]
    if total <= 0:
        raise NumericalError("no probability mass inside the discretization window")
    p = np.clip(p / total, 0.0, None)
    p = p / p.sum()
    return DelayKernel(kernel=p, nondetect=0.0)


def weekday_shift_delay(base: DelayKernel, weights: WeekdayWeights,
                        phase: int = 0) -> TimeVaryingDelay:
    """Delay with detections postponed by 0..6 days depending on weekday.

    A detection that would nominally occur on weekday i is shifted k days
    later with probability ``weights.shift[i, k]``. The weekday of day s is
    ``(s + phase) % 7``. Total detection mass per infection day is preserved.
    """
    if weights.shift is None:
        raise ParameterError("weekday_shift_delay requires shift-form weights")
    v = weights.shift
    m0 = base.kernel
    k_m = base.k_max
    k_out = k_m + 6

    def row(s: int) -> np.ndarray:
        r = np.zeros(k_out)
        for j in range(1, k_m + 1):
            wd = (s + j + phase) % 7
            # original lag j shifted by 0..6 days
            r[j - 1 : j + 6] += m0[j - 1] * v[wd, :]
        return r

    return TimeVaryingDelay(k_out, row, lambda s: base.nondetect)


def weekday_multiplicative_delay(base: DelayKernel, weights: WeekdayWeights,
                                 phase: int = 0) -> TimeVaryingDelay:
    """Delay rescaled per weekday of detection, preserving per-day total mass.

    Requires the seven weights to sum to the base kernel's detected mass;
    each lag k is rescaled by the weight of the detection weekday divided by
    the base mass of k's residue class mod 7.
    """
    if weights.scale is None:
        raise ParameterError("weekday_multiplicative_delay requires multiplicative weights")
    w = weights.scale
    m0 = base.kernel
    k_m = base.k_max
    detected = m0.sum()
    if abs(w.sum() - detected) > 1e-10:
        raise ParameterError(
            f"weekday weights must sum to the base detected mass {detected:.12f} "
            f"(got {w.sum():.12f})"
        )
    ks = np.arange(1, k_m + 1)
    class_mass = np.zeros(7)
    for i in range(7):
        class_mass[i] = m0[ks % 7 == i].sum()

    def row(s: int) -> np.ndarray:
        r = np.zeros(k_m)
        for k in ks:
            cm = class_mass[k % 7]
            if cm > 0:
                r[k - 1] = w[(s + k + phase) % 7] * m0[k - 1] / cm
        return r

    return TimeVaryingDelay(k_m, row, lambda s: base.nondetect)


def round_to_sum(p: np.ndarray, total: int = 1000) -> np.ndarray:
    """Round total * p to integers that sum exactly to total (largest remainder)."""
    x = np.asarray(p, dtype=float) * total
    if np.any(x < 0):
        raise ParameterError("probabilities must be nonnegative")
    fl = np.floor(x).astype(int)
    shortfall = int(round(total - fl.sum()))
    out = fl.copy()
    if shortfall > 0:
        idx = np.argsort(-(x - fl), kind="stable")[:shortfall]
        out[idx] += 1
    return out
