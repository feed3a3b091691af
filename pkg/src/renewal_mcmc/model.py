"""Generative epidemic model: renewal intensity, forward simulation,
asymptotic growth rate, and the Markov one-step transition used for
posterior prediction.

Day indices are absolute integers; observations live on days 1..T and
infections may start on negative days preceding the observation window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import InfectivityProfile, TimeVaryingDelay
from .errors import DivergenceError, NumericalError, ParameterError, StateError

__all__ = [
    "EpidemicPath",
    "EpidemicState",
    "renewal_load",
    "renewal_intensity",
    "growth_rate",
    "simulate_infections",
    "simulate_path",
    "variance_growth_check",
    "predictive_step",
]

DEFAULT_INTENSITY_CAP = 1e9


def renewal_load(i_history: np.ndarray, profile: InfectivityProfile) -> float:
    """Weighted sum of recent infections: kappa_t = sum_k w_k I_{t-k}.

    ``i_history`` is ordered by day, most recent last, and must cover at
    least the profile horizon.
    """
    h = np.asarray(i_history, dtype=float)
    k_w = profile.k_max
    if h.size < k_w:
        raise ParameterError(f"history must cover at least {k_w} days")
    if np.any(h < 0):
        raise ParameterError("infection history must be nonnegative")
    return float(np.dot(profile.weights, h[-1 : -k_w - 1 : -1]))


def renewal_intensity(i_history: np.ndarray, r_e: float,
                      profile: InfectivityProfile) -> float:
    """Conditional Poisson intensity lambda_t = R_e * kappa_t."""
    if not np.isfinite(r_e) or r_e < 0:
        raise ParameterError("reproduction number must be finite and nonnegative")
    return r_e * renewal_load(i_history, profile)


def growth_rate(r_e: float, profile: InfectivityProfile,
                bracket: tuple[float, float] = (1e-6, 10.0),
                tol: float = 1e-12) -> float:
    """Asymptotic daily growth factor rho for a constant reproduction number.

    rho is the unique positive solution of 1/R_e = sum_k w_k rho^{-k},
    located by bisection; strictly increasing in R_e and rho(1) = 1.
    """
    if not np.isfinite(r_e) or r_e <= 0:
        raise ParameterError("reproduction number must be positive")
    w = profile.weights
    ks = np.arange(1, profile.k_max + 1)

    def h(rho: float) -> float:
        return float(np.dot(w, rho ** (-ks.astype(float)))) - 1.0 / r_e

    lo, hi = bracket
    h_lo, h_hi = h(lo), h(hi)
    if not (h_lo > 0 > h_hi):
        raise NumericalError(
            f"growth-rate root not bracketed by {bracket} for R_e={r_e}"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if h(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_counts(x: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(x)
    if np.any(a < 0):
        raise ParameterError(f"{name} must be nonnegative")
    return a


def simulate_infections(r_series: np.ndarray, init_infections: np.ndarray,
                        profile: InfectivityProfile, seed,
                        replicates: int = 1,
                        intensity_cap: float = DEFAULT_INTENSITY_CAP) -> np.ndarray:
    """Simulate infection counts only (no detection step), vectorized
    across independent replicates.

    Returns an integer array of shape (replicates, len(r_series)); replicate
    rows are driven by one shared generator, so results are deterministic
    given the seed but individual rows are exchangeable, not seed-addressable.
    """
    r = np.asarray(r_series, dtype=float)
    init = _check_counts(init_infections, "initial infections").astype(float)
    k_w = profile.k_max
    if init.size < k_w:
        raise ParameterError(f"need at least {k_w} initial infection days")
    rng = np.random.default_rng(seed)
    n = r.size
    hist = np.tile(init[-k_w:], (replicates, 1)).astype(float)
    w_rev = profile.weights[::-1].copy()
    out = np.empty((replicates, n), dtype=np.int64)
    for t in range(n):
        lam = r[t] * (hist @ w_rev)
        if np.any(lam > intensity_cap):
            raise DivergenceError(
                f"intensity exceeded cap {intensity_cap:.3g} on step {t}"
            )
        draws = rng.poisson(lam)
        out[:, t] = draws
        hist = np.concatenate([hist[:, 1:], draws[:, None].astype(float)], axis=1)
    return out


@dataclass
class EpidemicPath:
    """One simulated realization of infections, allocations, and detections.

    Infections are simulated on days ``sim_start .. sim_start + n - 1``;
    ``allocations[i, k-1]`` counts infections of day ``sim_start + i``
    detected k days later, ``undetected[i]`` those never detected.
    Detections cover days 1..T.
    """

    sim_start: int
    init_infections: np.ndarray
    infections: np.ndarray
    allocations: np.ndarray
    undetected: np.ndarray
    detections: np.ndarray

    def infection_day(self, s: int) -> int:
        return int(self.infections[s - self.sim_start])

    def check_accounting(self) -> None:
        """Verify the exact counting identities between I, A, and D."""
        if not np.array_equal(
            self.infections, self.allocations.sum(axis=1) + self.undetected
        ):
            raise StateError("row sums of allocations do not reproduce infections")
        k_max = self.allocations.shape[1]
        t_obs = self.detections.size
        d = np.zeros(t_obs, dtype=np.int64)
        for i, s in enumerate(range(self.sim_start, self.sim_start + self.infections.size)):
            for k in range(1, k_max + 1):
                t = s + k
                if 1 <= t <= t_obs:
                    d[t - 1] += self.allocations[i, k - 1]
        if not np.array_equal(d, self.detections):
            raise StateError("diagonal sums of allocations do not reproduce detections")


def simulate_path(r_series: np.ndarray, init_infections: np.ndarray,
                  profile: InfectivityProfile, delay: TimeVaryingDelay,
                  seed, sim_start: int | None = None,
                  t_obs: int | None = None,
                  intensity_cap: float = DEFAULT_INTENSITY_CAP) -> EpidemicPath:
    """Simulate infections, detection allocations, and daily detections.

    ``r_series`` gives reproduction numbers for days sim_start..sim_start+n-1
    (default sim_start = 1 - k_max of the delay, so that detections on days
    1..T are fully generated). ``init_infections`` covers the profile horizon
    immediately before sim_start. Deterministic given the seed.
    """
    r = np.asarray(r_series, dtype=float)
    if np.any(~np.isfinite(r)) or np.any(r < 0):
        raise ParameterError("reproduction numbers must be finite and nonnegative")
    if sim_start is None:
        sim_start = 1 - delay.k_max
    init = _check_counts(init_infections, "initial infections").astype(np.int64)
    k_w = profile.k_max
    if init.size < k_w:
        raise ParameterError(f"need at least {k_w} initial infection days")
    n = r.size
    if t_obs is None:
        t_obs = sim_start + n  # one day past the last simulated infection day
    rng = np.random.default_rng(seed)
    w_rev = profile.weights[::-1].copy()
    k_m = delay.k_max

    hist = init[-k_w:].astype(float)
    infections = np.empty(n, dtype=np.int64)
    allocations = np.zeros((n, k_m), dtype=np.int64)
    undetected = np.zeros(n, dtype=np.int64)
    detections = np.zeros(t_obs, dtype=np.int64)

    for i, s in enumerate(range(sim_start, sim_start + n)):
        lam = r[i] * float(np.dot(w_rev, hist))
        if lam > intensity_cap:
            raise DivergenceError(
                f"intensity {lam:.3g} exceeded cap {intensity_cap:.3g} on day {s}"
            )
        i_s = int(rng.poisson(lam))
        infections[i] = i_s
        hist = np.append(hist[1:], float(i_s))
        probs = np.append(delay.row(s), delay.nondetect(s))
        probs = np.clip(probs, 0.0, None)
        probs = probs / probs.sum()
        alloc = rng.multinomial(i_s, probs)
        allocations[i] = alloc[:k_m]
        undetected[i] = alloc[k_m]
        for k in range(1, k_m + 1):
            t = s + k
            if 1 <= t <= t_obs:
                detections[t - 1] += alloc[k - 1]

    return EpidemicPath(
        sim_start=sim_start,
        init_infections=init,
        infections=infections,
        allocations=allocations,
        undetected=undetected,
        detections=detections,
    )


@dataclass
class VarianceGrowthReport:
    """Monte Carlo diagnostics of the quadratic variance growth regime."""

    ratios: np.ndarray        # Var(I_t) / E(I_t)^2 per simulated day
    fano: np.ndarray          # Var(I_t) / E(I_t) per simulated day
    tail_cv: float            # coefficient of variation of ratios in the tail window
    rho: float                # asymptotic growth factor for the given R_e


def variance_growth_check(r_e: float, profile: InfectivityProfile,
                          horizon: int, replicates: int, seed,
                          init_infections: np.ndarray | None = None,
                          intensity_cap: float = DEFAULT_INTENSITY_CAP) -> VarianceGrowthReport:
    """Monte Carlo check that Var(I_t) grows like E(I_t)^2 when R_e > 1.

    Returns per-day ratios Var/E^2 and the coefficient of variation of the
    ratio over the final fifth of the horizon, which should stabilize.
    """
    if horizon < 5:
        raise ParameterError("horizon must be at least 5")
    if init_infections is None:
        init_infections = np.full(profile.k_max, 10.0)
    paths = simulate_infections(
        np.full(horizon, float(r_e)), init_infections, profile, seed,
        replicates=replicates, intensity_cap=intensity_cap,
    ).astype(float)
    mean = paths.mean(axis=0)
    var = paths.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(mean > 0, var / mean**2, np.nan)
        fano = np.where(mean > 0, var / mean, np.nan)
    tail = ratios[-max(2, horizon // 5):]
    tail = tail[np.isfinite(tail)]
    tail_cv = float(np.std(tail) / np.mean(tail)) if tail.size and np.mean(tail) > 0 else np.nan
    rho = growth_rate(r_e, profile) if r_e > 0 else np.nan
    return VarianceGrowthReport(ratios=ratios, fano=fano, tail_cv=tail_cv, rho=rho)


@dataclass
class EpidemicState:
    """Markov state at day t for posterior prediction.

    Fields cover, in order: the latest log reproduction number L_{t-1},
    infections on the last profile-horizon days, allocations detected on
    day t by infection day (t - k_max_delay .. t - 1), and the counts of
    infections on days t+1-k_max_delay .. t-1 not yet detected by day t.
    """

    day: int
    log_r_prev: float
    recent_infections: np.ndarray   # days day-K_w .. day-1
    detected_today: np.ndarray      # A_{s, day} for s = day-K_m .. day-1
    pending: np.ndarray             # U_{s, day} for s = day+1-K_m .. day-1

    def __post_init__(self):
        self.recent_infections = np.asarray(self.recent_infections, dtype=np.int64)
        self.detected_today = np.asarray(self.detected_today, dtype=np.int64)
        self.pending = np.asarray(self.pending, dtype=np.int64)
        if np.any(self.recent_infections < 0) or np.any(self.detected_today < 0):
            raise StateError("state counts must be nonnegative")
        if np.any(self.pending < 0):
            raise StateError("pending (not-yet-detected) counts must be nonnegative")


def predictive_step(state: EpidemicState, tau: float,
                    profile: InfectivityProfile, delay: TimeVaryingDelay,
                    rng: np.random.Generator,
                    intensity_cap: float = DEFAULT_INTENSITY_CAP
                    ) -> tuple[EpidemicState, int]:
    """Draw the next state of the prediction chain and the detections it implies.

    Samples the log reproduction number as a random-walk step, new infections
    from the renewal intensity, and next-day detections as binomial thinnings
    of new infections and of the not-yet-detected backlog. Returns the state
    at day t+1 and the predicted detection count on day t+1.
    """
    if tau <= 0:
        raise ParameterError("random-walk standard deviation must be positive")
    t = state.day
    k_m = delay.k_max
    k_w = profile.k_max
    if state.recent_infections.size != k_w:
        raise StateError(f"state must carry {k_w} recent infection days")
    if state.pending.size != k_m - 1:
        raise StateError(f"state must carry {k_m - 1} pending counts")

    log_r = rng.normal(state.log_r_prev, tau)
    kappa = float(np.dot(profile.weights, state.recent_infections[::-1]))
    lam = np.exp(log_r) * kappa
    if lam > intensity_cap:
        raise DivergenceError(f"predictive intensity {lam:.3g} exceeded cap")
    i_t = int(rng.poisson(lam))

    a_new = np.zeros(k_m, dtype=np.int64)     # A_{s, t+1} for s = t+1-K_m .. t
    pending_new = np.zeros(k_m - 1, dtype=np.int64)  # U_{s, t+1} for s = t+2-K_m .. t
    # backlog thinning for s = t+1-K_m .. t-1 (state.pending order)
    for idx, s in enumerate(range(t + 1 - k_m, t)):
        u = int(state.pending[idx])
        if u == 0:
            continue
        tail = delay.tail_mass(s, t + 1)
        p = min(delay.prob(s, t + 1) / tail, 1.0) if tail > 0 else 0.0
        a = int(rng.binomial(u, p)) if p > 0 else 0
        a_new[idx] = a
        if s > t + 1 - k_m:  # s = t+1-K_m leaves the pending window
            pending_new[idx - 1] = u - a
    # today's infections detected tomorrow
    a_t = int(rng.binomial(i_t, min(delay.prob(t, t + 1), 1.0))) if i_t else 0
    a_new[k_m - 1] = a_t
    if k_m >= 2:
        pending_new[k_m - 2] = i_t - a_t

    new_state = EpidemicState(
        day=t + 1,
        log_r_prev=float(log_r),
        recent_infections=np.append(state.recent_infections[1:], i_t),
        detected_today=a_new,
        pending=pending_new,
    )
    return new_state, int(a_new.sum())
