"""Two-block MCMC sampler for the joint posterior of daily infections and
log reproduction numbers given (smoothed) detection counts.

One sweep alternates an independence Metropolis-Hastings update of the
infection/allocation block given the log reproduction numbers with a
Gaussian Metropolis-Hastings update of the log reproduction numbers given
the infections. The Gaussian proposal comes from a second-order expansion
of the conditional log density, whose precision matrix is tridiagonal.

Day conventions: detections on days 1..T; log reproduction numbers and
detected totals on days (1-K_m)..(T-1); infections additionally cover the
K_w initialization days (1-K_m-K_w)..(-K_m).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky_banded, solve_banded

from .deconvolution import DeconvolutionConfig, em_deconvolve, em_step, build_convolution_matrix
from .distributions import InfectivityProfile, TimeVaryingDelay
from .errors import NumericalError, ParameterError, StateError
from .model import EpidemicState, predictive_step

__all__ = [
    "Hyperparams",
    "LatentState",
    "ProposalScaffold",
    "PosteriorSamples",
    "PredictiveSummary",
    "make_lambda0",
    "RenewalSampler",
    "run_mcmc",
    "posterior_quantiles",
    "posterior_predict",
    "gelman_rubin",
]

_PSI_FLOOR = 1e-12
DEFAULT_SIGMA = 1.5
DEFAULT_TAU = 0.025


@dataclass
class Hyperparams:
    """Prior hyperparameters of the sampler.

    ``sigma`` is the prior standard deviation of the first log reproduction
    number, ``tau`` the daily random-walk standard deviation, and
    ``lambda0`` the Poisson prior means for the initialization days.
    """

    lambda0: np.ndarray
    sigma: float = DEFAULT_SIGMA
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lambda0, dtype=float))
        object.__setattr__(self, "lambda0", lam)
        if self.sigma <= 0 or self.tau <= 0:
            raise ParameterError("sigma and tau must be positive")
        if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
            raise ParameterError("initialization prior means must be positive")


@dataclass
class ProposalScaffold:
    """Positive shaping intensities for the allocation proposal.

    ``psi`` covers days (1-K_m)..(T-1); ``pi[t-1] = sum_s psi_s m(s,t)`` is
    the implied detection intensity. The implicit allocation probabilities
    psi_s m(s,t) / pi_t are column-stochastic over infection days.
    """

    psi: np.ndarray
    pi: np.ndarray
    floored: int = 0  # number of entries clipped at the underflow floor


@dataclass
class LatentState:
    """One sampler configuration.

    ``detected[j]`` is B_s, the total of day-s infections detected inside
    the observation window; ``final_column`` holds the allocations detected
    on the last observation day, needed to assemble the prediction state.
    ``kappa`` and ``lam`` cache the renewal load and intensity per day.
    """

    log_r: np.ndarray          # days (1-K_m)..(T-1)
    infections: np.ndarray     # days (1-K_m-K_w)..(T-1), integer
    detected: np.ndarray       # days (1-K_m)..(T-1), integer
    final_column: np.ndarray   # A_{s,T} for s = T-K_m..T-1, integer
    kappa: np.ndarray
    lam: np.ndarray


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in draws from the joint posterior."""

    log_r_draws: np.ndarray    # (n_draws, T+K_m-1)
    infection_draws: np.ndarray  # (n_draws, T+K_m+K_w-1), integer
    detected_draws: np.ndarray   # (n_draws, T+K_m-1), integer
    final_column_draws: np.ndarray  # (n_draws, K_m), integer
    t_obs: int
    k_m: int
    k_w: int
    chain_ids: np.ndarray
    accept_rate_ia: float
    accept_rate_l: float
    accept_rate_ia_burnin: float
    rhat_log_r: np.ndarray | None
    seed: object
    d_int: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.log_r_draws.shape[0]

    @property
    def first_log_r_day(self) -> int:
        return 1 - self.k_m

    @property
    def first_infection_day(self) -> int:
        return 1 - self.k_m - self.k_w


def make_lambda0(k_w: int, pre_window_counts=None, fallback_counts=None,
                 delay: TimeVaryingDelay | None = None,
                 floor: float = 1e-3) -> np.ndarray:
    """Constant prior means for the initialization days.

    Uses the mean of the seven observations immediately preceding the window
    when available; otherwise the mean over the first seven days of the
    deconvolution-based starting construction applied to ``fallback_counts``.
    """
    if pre_window_counts is not None:
        pre = np.asarray(pre_window_counts, dtype=float)
        if pre.size < 1:
            raise ParameterError("pre-window counts must be non-empty")
        value = float(pre[-7:].mean())
    elif fallback_counts is not None:
        if delay is None:
            raise ParameterError("fallback construction needs the delay distribution")
        cfg = DeconvolutionConfig(stopping="fixed", fixed_iters=10,
                                  start="shifted_constant")
        res = em_deconvolve(np.asarray(fallback_counts, dtype=float), delay, cfg)
        value = float(res.incidence[:7].mean())
    else:
        raise ParameterError("need pre-window counts or fallback counts")
    if value < floor:
        warnings.warn(
            f"initialization prior mean {value:.3g} floored at {floor}; "
            "data may be all zero", stacklevel=2)
        value = floor
    return np.full(k_w, value)


def _ia_log_ratio(b_new, lam_new, psi_new, b_old, lam_old, psi_old, mass,
                  d=None, pi_new=None, pi_old=None) -> float:
    """Log acceptance ratio of the allocation block.

    ``psi_new``/``psi_old`` are the shaping intensities under which the
    candidate and the current state were proposed; the detection-side term
    sum_t D_t log(pi_new/pi_old) vanishes when they coincide and may be
    omitted by leaving ``d`` None. A candidate with positive detected total
    but zero intensity has zero posterior density and yields -inf; the same
    situation in the current state indicates a corrupted chain and raises.
    """
    b_new = np.asarray(b_new, dtype=float)
    b_old = np.asarray(b_old, dtype=float)
    lam_new = np.asarray(lam_new, dtype=float)
    lam_old = np.asarray(lam_old, dtype=float)
    if np.any((lam_old <= 0) & (b_old > 0)):
        raise StateError("current state has detections on days with zero intensity")
    if np.any((lam_new <= 0) & (b_new > 0)):
        return -np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        t_new = np.where(b_new > 0, b_new * np.log(lam_new / psi_new), 0.0)
        t_old = np.where(b_old > 0, b_old * np.log(lam_old / psi_old), 0.0)
    total = float(np.sum(t_new - t_old - mass * (lam_new - lam_old)))
    if d is not None and pi_new is not None and pi_old is not None:
        d = np.asarray(d, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            total += float(np.sum(np.where(d > 0, d * np.log(pi_new / pi_old), 0.0)))
    return total


def _poisson_llr(x, lam, psi) -> np.ndarray:
    """Elementwise x log(lam/psi) - (lam - psi) with the 0 log 0 convention."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    psi = np.asarray(psi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(x > 0, x * np.log(lam / psi), 0.0)
    return term - (lam - psi)


def _ia_log_ratio_alt(b_new, lam_new, psi_new, b_old, lam_old, psi_old, mass,
                      d, pi_new, pi_old) -> float:
    """Alternative form of the allocation-block log ratio, built from three
    sums of Poisson log-likelihood ratios; agrees with :func:`_ia_log_ratio`
    because the detection intensities satisfy sum_t pi_t = sum_s b_s psi_s."""
    mass = np.asarray(mass, dtype=float)
    s1 = _poisson_llr(b_new, mass * np.asarray(lam_new, float), mass * np.asarray(psi_new, float))
    s2 = _poisson_llr(b_old, mass * np.asarray(psi_old, float), mass * np.asarray(lam_old, float))
    s3 = _poisson_llr(d, pi_new, pi_old)
    return float(np.sum(s1) + np.sum(s2) + np.sum(s3))


class RenewalSampler:
    """Sampler context for one observation window.

    Holds the data, delay geometry, convolution matrix, and hyperparameters;
    exposes the individual block updates so they can be exercised and
    cross-checked in isolation.
    """

    def __init__(self, d_smooth: np.ndarray, hyper: Hyperparams,
                 delay: TimeVaryingDelay, profile: InfectivityProfile):
        d = np.asarray(d_smooth, dtype=float)
        if d.ndim != 1 or d.size < 1:
            raise ParameterError("need a non-empty detection series")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ParameterError("detection series must be finite and nonnegative")
        self.d_smooth = d
        self.d_int = np.rint(d).astype(np.int64)  # rounded once, used throughout
        self.t_obs = d.size
        self.delay = delay
        self.profile = profile
        self.k_m = delay.k_max
        self.k_w = profile.k_max
        if hyper.lambda0.size == 1:
            hyper = Hyperparams(np.full(self.k_w, float(hyper.lambda0[0])),
                                hyper.sigma, hyper.tau)
        if hyper.lambda0.size != self.k_w:
            raise ParameterError(
                f"lambda0 must have length {self.k_w} (one per initialization day)")
        self.hyper = hyper
        self.n_l = self.t_obs + self.k_m - 1
        self.n_i = self.n_l + self.k_w
        self.conv, self.mass = build_convolution_matrix(delay, self.t_obs)
        self._w_rev = profile.weights[::-1].copy()

    # -- geometry helpers -------------------------------------------------

    def log_r_days(self) -> np.ndarray:
        return np.arange(1 - self.k_m, self.t_obs)

    def infection_days(self) -> np.ndarray:
        return np.arange(1 - self.k_m - self.k_w, self.t_obs)

    def _renewal_loads(self, infections_full: np.ndarray) -> np.ndarray:
        """kappa_s for days (1-K_m)..(T-1) from the full infection vector."""
        kap = np.empty(self.n_l)
        x = np.asarray(infections_full, dtype=float)
        for j in range(self.n_l):
            kap[j] = np.dot(self._w_rev, x[j : j + self.k_w])
        return kap

    # -- allocation block --------------------------------------------------

    def build_scaffold(self, log_r: np.ndarray) -> ProposalScaffold:
        """Shaping intensities: prior means propagated through the renewal
        recursion under the given log reproduction numbers, then refined by
        one multiplicative deconvolution step against the data."""
        exp_l = np.exp(np.asarray(log_r, dtype=float))
        psi_full = np.empty(self.n_i)
        psi_full[: self.k_w] = self.hyper.lambda0
        for j in range(self.n_l):
            psi_full[self.k_w + j] = exp_l[j] * np.dot(
                self._w_rev, psi_full[j : j + self.k_w])
        psi = psi_full[self.k_w :]
        floored = int(np.sum(psi < _PSI_FLOOR))
        psi = np.maximum(psi, _PSI_FLOOR)
        psi = em_step(psi, self.d_int, self.delay, self.conv, self.mass)
        floored += int(np.sum(psi < _PSI_FLOOR))
        psi = np.maximum(psi, _PSI_FLOOR)
        return ProposalScaffold(psi=psi, pi=self.conv @ psi, floored=floored)

    def propose_allocation(self, scaffold: ProposalScaffold, log_r: np.ndarray,
                           rng: np.random.Generator
                           ) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[np.ndarray]]:
        """Draw a candidate (infections, detected totals, allocation columns).

        Allocation columns are multinomial with the data counts as sizes, so
        the candidate reproduces the observed detections exactly; infection
        remainders are Poisson with the renewal intensity scaled by the
        undetectable mass.
        """
        exp_l = np.exp(np.asarray(log_r, dtype=float))
        detected = np.zeros(self.n_l, dtype=np.int64)
        columns: list[np.ndarray] = []
        for t in range(1, self.t_obs + 1):
            size = int(self.d_int[t - 1])
            sl = slice(t - 1, t + self.k_m - 1)  # infection days t-K_m..t-1
            if size == 0:
                col = np.zeros(self.k_m, dtype=np.int64)
            else:
                p = scaffold.psi[sl] * self.conv[t - 1, sl]
                tot = p.sum()
                if tot <= 0:
                    raise NumericalError(
                        f"no allocation mass available for day {t} with positive counts")
                col = rng.multinomial(size, p / tot)
            detected[sl] += col
            columns.append(col)
        infections = np.empty(self.n_i, dtype=np.int64)
        infections[: self.k_w] = rng.poisson(self.hyper.lambda0)
        lam = np.empty(self.n_l)
        x = infections.astype(float)
        for j in range(self.n_l):
            kap = np.dot(self._w_rev, x[j : j + self.k_w])
            lam[j] = exp_l[j] * kap
            infections[self.k_w + j] = detected[j] + rng.poisson(
                (1.0 - self.mass[j]) * lam[j])
            x[self.k_w + j] = infections[self.k_w + j]
        return infections, detected, lam, columns

    def allocation_log_ratio(self, cand_detected, cand_lam, cur_detected,
                             cur_lam, scaffold: ProposalScaffold) -> float:
        """Log MH ratio for the allocation block under a shared scaffold."""
        return _ia_log_ratio(cand_detected, cand_lam, scaffold.psi,
                             cur_detected, cur_lam, scaffold.psi, self.mass)

    # -- log reproduction number block -------------------------------------

    def _l_quadratic(self, log_r: np.ndarray, kappa: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray]:
        """Banded precision (upper form) and linear term of the Gaussian
        proposal centered at the second-order expansion around ``log_r``."""
        sig2 = self.hyper.sigma**-2
        tau2 = self.hyper.tau**-2
        n = self.n_l
        exp_l = np.exp(log_r)
        curv = exp_l * kappa
        diag = np.full(n, 2.0 * tau2) + curv
        diag[0] = sig2 + tau2 + curv[0]
        if n > 1:
            diag[-1] = tau2 + curv[-1]
        ab = np.zeros((2, n))
        ab[0, 1:] = -tau2
        ab[1] = diag
        return ab, curv

    def _l_proposal_parts(self, log_r: np.ndarray, infections_main: np.ndarray,
                          kappa: np.ndarray):
        ab, curv = self._l_quadratic(log_r, kappa)
        b = infections_main - (1.0 - log_r) * curv
        try:
            cb = cholesky_banded(ab, lower=False, check_finite=False)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - diagonally dominant
            raise NumericalError("proposal precision is not positive definite") from exc
        ab_t = np.vstack([cb[1], np.concatenate([cb[0, 1:], [0.0]])])
        y = solve_banded((1, 0), ab_t, b, check_finite=False)  # U^{-T} b
        return cb, y

    @staticmethod
    def _banded_upper_mul(cb: np.ndarray, x: np.ndarray) -> np.ndarray:
        """U @ x for the bidiagonal Cholesky factor in banded storage."""
        out = cb[1] * x
        out[:-1] += cb[0, 1:] * x[1:]
        return out

    def _gauss_logpdf(self, cb: np.ndarray, y: np.ndarray, x: np.ndarray) -> float:
        quad = float(np.sum((self._banded_upper_mul(cb, x) - y) ** 2))
        logdet_half = float(np.sum(np.log(cb[1])))
        return logdet_half - 0.5 * self.n_l * np.log(2 * np.pi) - 0.5 * quad

    def propose_log_r(self, log_r: np.ndarray, infections_full: np.ndarray,
                      rng: np.random.Generator,
                      kappa: np.ndarray | None = None
                      ) -> tuple[np.ndarray, float, float]:
        """Draw a candidate log reproduction path and its forward log density.

        Returns (candidate, log q(candidate | current), ||z||^2) where z is
        the standard normal seed; the quadratic-form identity makes the
        forward density available without any explicit matrix inversion.
        """
        if kappa is None:
            kappa = self._renewal_loads(infections_full)
        infections_main = infections_full[self.k_w :].astype(float)
        cb, y = self._l_proposal_parts(np.asarray(log_r, float), infections_main, kappa)
        z = rng.standard_normal(self.n_l)
        cand = solve_banded((0, 1), cb, z + y, check_finite=False)
        logdet_half = float(np.sum(np.log(cb[1])))
        log_q = logdet_half - 0.5 * self.n_l * np.log(2 * np.pi) - 0.5 * float(z @ z)
        return cand, log_q, float(z @ z)

    def log_r_target(self, log_r: np.ndarray, infections_full: np.ndarray,
                     kappa: np.ndarray | None = None) -> float:
        """Unnormalized conditional log density of the log reproduction path."""
        if kappa is None:
            kappa = self._renewal_loads(infections_full)
        log_r = np.asarray(log_r, dtype=float)
        infections_main = infections_full[self.k_w :].astype(float)
        val = -0.5 * (log_r[0] / self.hyper.sigma) ** 2
        if self.n_l > 1:
            val -= 0.5 * float(np.sum(np.diff(log_r) ** 2)) / self.hyper.tau**2
        val += float(np.sum(infections_main * log_r - np.exp(log_r) * kappa))
        return val

    def log_r_accept(self, log_r: np.ndarray, cand: np.ndarray,
                     infections_full: np.ndarray, log_q_fwd: float,
                     kappa: np.ndarray | None = None) -> float:
        """Log MH ratio for the log reproduction number block."""
        if kappa is None:
            kappa = self._renewal_loads(infections_full)
        infections_main = infections_full[self.k_w :].astype(float)
        cb_rev, y_rev = self._l_proposal_parts(np.asarray(cand, float),
                                               infections_main, kappa)
        log_q_rev = self._gauss_logpdf(cb_rev, y_rev, np.asarray(log_r, float))
        return (self.log_r_target(cand, infections_full, kappa)
                - self.log_r_target(log_r, infections_full, kappa)
                + log_q_rev - log_q_fwd)

    # -- initialization -----------------------------------------------------

    def init_chain(self, rng: np.random.Generator) -> LatentState:
        """Starting configuration consistent with the observed series.

        Interior infections come from ten multiplicative deconvolution steps
        on the back-shifted data; the jump onto the prior-drawn
        initialization days is smoothed by interpolating log incidence over
        four days. Detected totals start at the expected detectable fraction.
        """
        infections = np.empty(self.n_i, dtype=np.int64)
        infections[: self.k_w] = rng.poisson(self.hyper.lambda0)
        cfg = DeconvolutionConfig(stopping="fixed", fixed_iters=10,
                                  start="shifted_constant")
        interior = em_deconvolve(self.d_smooth, self.delay, cfg).incidence
        if self.k_w >= 2 and self.n_l >= 2:
            # blend log incidence across the init/interior boundary
            lv0 = np.log(max(float(infections[self.k_w - 2]), 0.5))
            lv3 = np.log(max(float(interior[1]), 0.5))
            infections[self.k_w - 1] = int(round(np.exp(lv0 + (lv3 - lv0) / 3.0)))
            interior[0] = np.exp(lv0 + 2.0 * (lv3 - lv0) / 3.0)
        infections[self.k_w :] = np.maximum(np.rint(interior).astype(np.int64), 0)
        # detected totals must come from an allocation whose column sums
        # equal the observed counts; anything else is outside the support of
        # the marginalized density and can freeze the independence sampler
        # at an infeasible, artificially heavy starting state
        interior_i = infections[self.k_w :].astype(float)
        detected = np.zeros(self.n_l, dtype=np.int64)
        final_column = np.zeros(self.k_m, dtype=np.int64)
        for t in range(1, self.t_obs + 1):
            sl = slice(t - 1, t + self.k_m - 1)
            p = np.maximum(interior_i[sl], _PSI_FLOOR) * self.conv[t - 1, sl]
            tot = p.sum()
            if self.d_int[t - 1] > 0 and tot > 0:
                col = rng.multinomial(int(self.d_int[t - 1]), p / tot)
            else:
                col = np.zeros(self.k_m, dtype=np.int64)
            detected[sl] += col
            if t == self.t_obs:
                final_column = col.astype(np.int64)
        infections[self.k_w :] = np.maximum(infections[self.k_w :], detected)
        kappa = self._renewal_loads(infections)
        if np.any((kappa == 0) & (infections[self.k_w :] > 0)):
            infections = np.maximum(infections, 1)
            kappa = self._renewal_loads(infections)
        interior_i = infections[self.k_w :].astype(float)
        log_r = np.log(np.maximum(interior_i, 0.5) / np.maximum(kappa, 0.5))
        lam = np.exp(log_r) * kappa
        return LatentState(log_r=log_r, infections=infections, detected=detected,
                           final_column=final_column, kappa=kappa, lam=lam)

    # -- sweeps ------------------------------------------------------------

    def sweep(self, state: LatentState, rng: np.random.Generator
              ) -> tuple[LatentState, bool, bool]:
        """One full sweep: allocation block then log reproduction block."""
        scaffold = self.build_scaffold(state.log_r)
        infections, detected, lam, columns = self.propose_allocation(
            scaffold, state.log_r, rng)
        log_r_ia = self.allocation_log_ratio(detected, lam, state.detected,
                                             state.lam, scaffold)
        acc_ia = np.log(rng.uniform()) < log_r_ia
        if acc_ia:
            kappa = self._renewal_loads(infections)
            state = LatentState(log_r=state.log_r, infections=infections,
                                detected=detected,
                                final_column=columns[self.t_obs - 1],
                                kappa=kappa, lam=lam)
        cand, log_q_fwd, _ = self.propose_log_r(state.log_r, state.infections,
                                                rng, state.kappa)
        log_r_l = self.log_r_accept(state.log_r, cand, state.infections,
                                    log_q_fwd, state.kappa)
        acc_l = np.log(rng.uniform()) < log_r_l
        if acc_l:
            lam = np.exp(cand) * state.kappa
            state = LatentState(log_r=cand, infections=state.infections,
                                detected=state.detected,
                                final_column=state.final_column,
                                kappa=state.kappa, lam=lam)
        return state, bool(acc_ia), bool(acc_l)


def _run_chain(sampler: RenewalSampler, iters: int, burn_in: int, thin: int,
               seed) -> dict:
    rng = np.random.default_rng(seed)
    state = sampler.init_chain(rng)
    n_keep = (iters - burn_in) // thin
    log_r_draws = np.empty((n_keep, sampler.n_l))
    infection_draws = np.empty((n_keep, sampler.n_i), dtype=np.int64)
    detected_draws = np.empty((n_keep, sampler.n_l), dtype=np.int64)
    final_draws = np.empty((n_keep, sampler.k_m), dtype=np.int64)
    acc_ia = acc_l = 0
    acc_ia_burn = 0
    kept = 0
    for it in range(iters):
        state, a_ia, a_l = sampler.sweep(state, rng)
        acc_ia += a_ia
        acc_l += a_l
        if it < burn_in:
            acc_ia_burn += a_ia
        elif (it - burn_in) % thin == thin - 1 and kept < n_keep:
            log_r_draws[kept] = state.log_r
            infection_draws[kept] = state.infections
            detected_draws[kept] = state.detected
            final_draws[kept] = state.final_column
            kept += 1
    return {
        "log_r": log_r_draws[:kept],
        "infections": infection_draws[:kept],
        "detected": detected_draws[:kept],
        "final": final_draws[:kept],
        "acc_ia": acc_ia / iters,
        "acc_l": acc_l / iters,
        "acc_ia_burn": acc_ia_burn / max(burn_in, 1),
    }


def gelman_rubin(chains: list[np.ndarray]) -> np.ndarray:
    """Potential scale reduction factor per column across chains."""
    if len(chains) < 2:
        raise ParameterError("need at least two chains")
    arr = np.stack(chains)  # (m, n, dim)
    m, n = arr.shape[0], arr.shape[1]
    means = arr.mean(axis=1)
    w = arr.var(axis=1, ddof=1).mean(axis=0)
    b = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / w)
    return np.where(w > 0, rhat, 1.0)


def run_mcmc(d_smooth: np.ndarray, hyper: Hyperparams,
             delay: TimeVaryingDelay, profile: InfectivityProfile,
             iters: int = 20_000, burn_in: int = 5_000, thin: int = 10,
             seed=0, n_chains: int = 2) -> PosteriorSamples:
    """Run the two-block sampler and return thinned posterior draws.

    Chains use independent seed streams split from ``seed`` and are
    deterministic given it. A very low allocation-block acceptance rate over
    burn-in triggers a diagnostic warning but the run continues.
    """
    if burn_in < 0 or iters <= burn_in:
        raise ParameterError("need iters > burn_in >= 0")
    if thin < 1:
        raise ParameterError("thin must be >= 1")
    if (iters - burn_in) // thin < 1:
        raise ParameterError("no draws would remain after burn-in and thinning")
    if n_chains < 1:
        raise ParameterError("n_chains must be >= 1")
    sampler = RenewalSampler(d_smooth, hyper, delay, profile)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = ss.spawn(n_chains)
    results = [_run_chain(sampler, iters, burn_in, thin, s) for s in streams]
    for idx, res in enumerate(results):
        if res["acc_ia_burn"] < 0.001:
            warnings.warn(
                f"chain {idx}: allocation-block acceptance rate "
                f"{res['acc_ia_burn']:.2e} over burn-in; the proposal appears "
                "mistuned", stacklevel=2)
    rhat = gelman_rubin([r["log_r"] for r in results]) if n_chains >= 2 else None
    chain_ids = np.concatenate([
        np.full(r["log_r"].shape[0], i) for i, r in enumerate(results)])
    return PosteriorSamples(
        log_r_draws=np.concatenate([r["log_r"] for r in results]),
        infection_draws=np.concatenate([r["infections"] for r in results]),
        detected_draws=np.concatenate([r["detected"] for r in results]),
        final_column_draws=np.concatenate([r["final"] for r in results]),
        t_obs=sampler.t_obs, k_m=sampler.k_m, k_w=sampler.k_w,
        chain_ids=chain_ids,
        accept_rate_ia=float(np.mean([r["acc_ia"] for r in results])),
        accept_rate_l=float(np.mean([r["acc_l"] for r in results])),
        accept_rate_ia_burnin=float(np.mean([r["acc_ia_burn"] for r in results])),
        rhat_log_r=rhat, seed=seed, d_int=sampler.d_int,
    )


def posterior_quantiles(samples: PosteriorSamples,
                        probs=(0.025, 0.5, 0.975)) -> dict:
    """Per-day empirical quantiles of the reproduction numbers and infections.

    Quantiles use linear interpolation between order statistics. Returns a
    dict with day vectors and (n_days, n_probs) arrays for "R" and "I".
    """
    probs = np.asarray(probs, dtype=float)
    if np.any(probs <= 0) or np.any(probs >= 1):
        raise ParameterError("quantile probabilities must lie in (0, 1)")
    if samples.n_draws < 1:
        raise ParameterError("no posterior draws available")
    r = np.exp(samples.log_r_draws)
    q_r = np.quantile(r, probs, axis=0).T
    q_i = np.quantile(samples.infection_draws, probs, axis=0).T
    return {
        "probs": probs,
        "days_R": np.arange(samples.first_log_r_day, samples.t_obs),
        "R": q_r,
        "days_I": np.arange(samples.first_infection_day, samples.t_obs),
        "I": q_i,
    }


@dataclass
class PredictiveSummary:
    """Quantiles of the posterior predictive distribution over a horizon."""

    probs: np.ndarray
    days_state: np.ndarray     # days T .. T+h-1 (new R and I values)
    days_detect: np.ndarray    # days T+1 .. T+h (predicted detections)
    r_quantiles: np.ndarray
    i_quantiles: np.ndarray
    d_quantiles: np.ndarray


def posterior_predict(samples: PosteriorSamples, horizon: int, tau: float,
                      profile: InfectivityProfile, delay: TimeVaryingDelay,
                      seed=0, probs=(0.025, 0.5, 0.975)) -> PredictiveSummary:
    """Forward-simulate the prediction chain from each posterior draw.

    Requires the observation window to cover both delay and infectivity
    horizons so the final-day state can be assembled from the draws.
    """
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    t_obs, k_m, k_w = samples.t_obs, samples.k_m, samples.k_w
    if t_obs < max(k_m, k_w):
        raise ParameterError(
            "observation window shorter than the delay/infectivity horizon; "
            "prediction state cannot be assembled")
    probs = np.asarray(probs, dtype=float)
    if np.any(probs <= 0) or np.any(probs >= 1):
        raise ParameterError("quantile probabilities must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n = samples.n_draws
    r_path = np.empty((n, horizon))
    i_path = np.empty((n, horizon))
    d_path = np.empty((n, horizon))
    i0 = samples.first_infection_day
    l0 = samples.first_log_r_day
    for i in range(n):
        inf = samples.infection_draws[i]
        det = samples.detected_draws[i]
        pending = np.array([
            inf[s - i0] - det[s - l0] for s in range(t_obs + 1 - k_m, t_obs)
        ], dtype=np.int64)
        state = EpidemicState(
            day=t_obs,
            log_r_prev=float(samples.log_r_draws[i, -1]),
            recent_infections=inf[-k_w:],
            detected_today=samples.final_column_draws[i],
            pending=np.maximum(pending, 0),
        )
        for h in range(horizon):
            state, d_next = predictive_step(state, tau, profile, delay, rng)
            r_path[i, h] = np.exp(state.log_r_prev)
            i_path[i, h] = state.recent_infections[-1]
            d_path[i, h] = d_next
    return PredictiveSummary(
        probs=probs,
        days_state=np.arange(t_obs, t_obs + horizon),
        days_detect=np.arange(t_obs + 1, t_obs + horizon + 1),
        r_quantiles=np.quantile(r_path, probs, axis=0).T,
        i_quantiles=np.quantile(i_path, probs, axis=0).T,
        d_quantiles=np.quantile(d_path, probs, axis=0).T,
    )
