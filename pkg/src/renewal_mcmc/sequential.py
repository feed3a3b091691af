"""Rolling-window estimation.

Each new day triggers a fresh fit on the trailing fixed-length window; the
only information carried over is the prior mean of the initialization days,
taken from the previous window's posterior. Per-day quantile histories are
stitched so that days older than half a window are frozen.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError, ParameterError, RenewalError
from .distributions import InfectivityProfile, TimeVaryingDelay
from .mcmc import Hyperparams, PosteriorSamples, make_lambda0, posterior_quantiles, run_mcmc
from .preprocess import smooth_detections

__all__ = ["StitchedHistory", "stitch", "carry_prior", "rolling_fit"]

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 42
DEFAULT_TRANSITION = 3


@dataclass
class StitchedHistory:
    """Per-day quantile records assembled from overlapping window fits.

    Records map absolute stream days to (quantile row, producing window end).
    Days at least ``half_window`` before a window's end are frozen: later
    windows never change them. The newest ``transition`` days inside the
    takeover region are blended linearly between the old and new estimates.
    """

    probs: np.ndarray
    half_window: int
    transition: int = DEFAULT_TRANSITION
    records_r: dict[int, tuple[np.ndarray, int]] = field(default_factory=dict)
    records_i: dict[int, tuple[np.ndarray, int]] = field(default_factory=dict)

    def days(self, variable: str = "R") -> np.ndarray:
        rec = self.records_r if variable == "R" else self.records_i
        return np.array(sorted(rec))

    def to_frame(self, variable: str = "R") -> pd.DataFrame:
        rec = self.records_r if variable == "R" else self.records_i
        days = sorted(rec)
        data = {"day": days}
        for j, p in enumerate(self.probs):
            data[f"q{p:g}"] = [rec[d][0][j] for d in days]
        data["source_window_end"] = [rec[d][1] for d in days]
        return pd.DataFrame(data)

    def check_contiguous(self) -> None:
        for rec, name in ((self.records_r, "R"), (self.records_i, "I")):
            days = sorted(rec)
            if days and days != list(range(days[0], days[-1] + 1)):
                raise DataError(f"stitched {name} history has missing days")


def _stitch_variable(records: dict, days: np.ndarray, quants: np.ndarray,
                     window_end: int, half_window: int, transition: int) -> None:
    boundary = window_end - half_window
    for d, q in zip(days, quants):
        d = int(d)
        if d not in records:
            records[d] = (np.asarray(q, dtype=float), window_end)
        elif d >= boundary + transition:
            records[d] = (np.asarray(q, dtype=float), window_end)
        elif d >= boundary:
            # linear blend over the transition span just inside the takeover
            wgt = (d - boundary + 1) / (transition + 1)
            old = records[d][0]
            records[d] = ((1.0 - wgt) * old + wgt * np.asarray(q, float), window_end)
        # days older than the boundary stay frozen


def stitch(history: StitchedHistory, days_r: np.ndarray, quants_r: np.ndarray,
           days_i: np.ndarray, quants_i: np.ndarray,
           window_end: int) -> StitchedHistory:
    """Merge one window's quantiles into the history (in place, also returned).

    The first window populates everything it covers. Afterwards, days within
    ``half_window`` of the window end are replaced (the newest few blended),
    and previously unseen days are appended.
    """
    if len(days_r) != len(quants_r) or len(days_i) != len(quants_i):
        raise ParameterError("days and quantile rows must align")
    first = not history.records_r
    if first:
        for d, q in zip(days_r, quants_r):
            history.records_r[int(d)] = (np.asarray(q, float), window_end)
        for d, q in zip(days_i, quants_i):
            history.records_i[int(d)] = (np.asarray(q, float), window_end)
    else:
        _stitch_variable(history.records_r, days_r, quants_r, window_end,
                         history.half_window, history.transition)
        _stitch_variable(history.records_i, days_i, quants_i, window_end,
                         history.half_window, history.transition)
    history.check_contiguous()
    return history


def carry_prior(previous: PosteriorSamples, shift: int,
                floor: float = 1e-3) -> np.ndarray | None:
    """Initialization prior means for the next window.

    The new window's initialization days, shifted back into the previous
    window's time scale, must be covered by its infection draws; the carried
    prior is the posterior mean of those infections. Returns None when the
    previous samples cannot provide the required days.
    """
    if shift < 1:
        raise ParameterError("window shift must be >= 1")
    if previous.n_draws < 1:
        return None
    k_m, k_w = previous.k_m, previous.k_w
    # new-window days (1-K_m-K_w)..(-K_m) sit at these previous-window indices
    lo = (1 - k_m - k_w + shift) - previous.first_infection_day
    hi = lo + k_w
    if lo < 0 or hi > previous.infection_draws.shape[1]:
        return None
    means = previous.infection_draws[:, lo:hi].mean(axis=0)
    return np.maximum(means, floor)


def rolling_fit(counts: np.ndarray, delay: TimeVaryingDelay,
                profile: InfectivityProfile, window_len: int = DEFAULT_WINDOW,
                sigma: float = 1.5, tau: float = 0.025,
                iters: int = 20_000, burn_in: int = 5_000, thin: int = 10,
                n_chains: int = 2, probs=(0.025, 0.5, 0.975), seed=0,
                smooth_full: bool = False, smooth_kwargs: dict | None = None,
                phase: int = 0, transition: int = DEFAULT_TRANSITION
                ) -> tuple[StitchedHistory, list[dict]]:
    """Fit every trailing window of the stream and stitch the results.

    Each window is smoothed (per window unless ``smooth_full``), fitted from
    scratch, and merged into the history; the previous posterior only sets
    the initialization prior of the next window. A failed window fit is
    logged, the history keeps its prior values, and processing continues.
    """
    d = np.asarray(counts, dtype=float)
    n = d.size
    if window_len < 2:
        raise ParameterError("window length must be >= 2")
    if n < window_len:
        raise DataError(f"stream length {n} is shorter than the window {window_len}")
    smooth_kwargs = dict(smooth_kwargs or {})
    probs = np.asarray(probs, dtype=float)
    k_w = profile.k_max

    full_smooth = None
    if smooth_full:
        full_smooth = smooth_detections(d, phase=phase, **smooth_kwargs)

    history = StitchedHistory(probs=probs, half_window=window_len // 2,
                              transition=transition)
    metadata: list[dict] = []
    streams = np.random.SeedSequence(seed).spawn(n - window_len + 1)
    prev_samples: PosteriorSamples | None = None
    prev_end: int | None = None

    for idx, t in enumerate(range(window_len, n + 1)):
        start = t - window_len  # 0-based index of the window's first stream day
        window = d[start:t]
        record = {"window_end": t, "ok": False}
        try:
            if full_smooth is not None:
                d_smooth = full_smooth[start:t]
            else:
                d_smooth = smooth_detections(window, phase=(phase + start) % 7,
                                             **smooth_kwargs)
            lam0 = None
            if prev_samples is not None and prev_end is not None:
                lam0 = carry_prior(prev_samples, shift=t - prev_end)
            if lam0 is None:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    lam0 = make_lambda0(k_w, fallback_counts=d_smooth, delay=delay)
            hyper = Hyperparams(lam0, sigma, tau)
            samples = run_mcmc(d_smooth, hyper, delay, profile, iters=iters,
                               burn_in=burn_in, thin=thin,
                               seed=streams[idx], n_chains=n_chains)
            quants = posterior_quantiles(samples, probs)
            # shift window-relative days onto the stream time scale
            stitch(history,
                   quants["days_R"] + start, quants["R"],
                   quants["days_I"] + start, quants["I"],
                   window_end=t)
            prev_samples, prev_end = samples, t
            record.update(ok=True,
                          accept_rate_ia=samples.accept_rate_ia,
                          accept_rate_l=samples.accept_rate_l,
                          rhat_max=(float(np.max(samples.rhat_log_r))
                                    if samples.rhat_log_r is not None else None))
        except RenewalError as exc:
            logger.warning("window ending at day %d failed: %s", t, exc)
            record["error"] = str(exc)
        metadata.append(record)
    return history, metadata
