"""Command-line interface.

Subcommands wrap the library pipelines: distribution tables, preprocessing,
deconvolution, posterior fitting, rolling-window estimation, simulation,
the evaluation experiment, and posterior prediction. Every command writes a
``manifest.json`` (atomically, last) into its output directory recording the
resolved configuration, seeds, and input digests.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import sys
import time
from importlib import resources

import numpy as np
import pandas as pd

from . import __version__
from . import dataio
from .deconvolution import DeconvolutionConfig, em_deconvolve
from .distributions import (
    DelayKernel,
    InfectivityProfile,
    TimeVaryingDelay,
    WeekdayWeights,
    convolve_gamma_delay,
    discretize_gamma,
    round_to_sum,
    weekday_multiplicative_delay,
    weekday_shift_delay,
)
from .errors import (
    ConfigError,
    DataError,
    NumericalError,
    ParameterError,
    RenewalError,
)
from .evaluation import ExperimentConfig, run_experiment
from .mcmc import (
    Hyperparams,
    make_lambda0,
    posterior_predict,
    posterior_quantiles,
    run_mcmc,
)
from .preprocess import smooth_detections, weekday_effect_estimates
from .sequential import rolling_fit

# Default distribution parameters: infectivity profile and the two-stage
# (incubation plus reporting) detection delay.
PROFILE_MEAN, PROFILE_SD, PROFILE_KMAX = 4.8, 2.3, 12
DELAY_MEAN1, DELAY_SD1 = 5.3, 3.2
DELAY_MEAN2, DELAY_SD2 = 5.5, 3.8
DELAY_KMAX = 28


# ---------------------------------------------------------------------------
# configuration

def load_config(path: str | None) -> dict:
    """Load and schema-validate a JSON config; {} when no path given."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    import jsonschema

    schema = json.loads(
        resources.files("renewal_mcmc.schemas")
        .joinpath("config.schema.json")
        .read_text()
    )
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise ConfigError(f"{path}: at {pointer or '/'}: {err.message}")
    return cfg


def build_profile(cfg: dict) -> InfectivityProfile:
    sec = cfg.get("profile", {})
    w = discretize_gamma(sec.get("mean", PROFILE_MEAN),
                         sec.get("sd", PROFILE_SD),
                         sec.get("k_max", PROFILE_KMAX))
    return InfectivityProfile(w)


def build_delay(cfg: dict, phase: int = 0) -> TimeVaryingDelay:
    sec = cfg.get("delay", {})
    kernel = convolve_gamma_delay(
        sec.get("mean1", DELAY_MEAN1), sec.get("sd1", DELAY_SD1),
        sec.get("mean2", DELAY_MEAN2), sec.get("sd2", DELAY_SD2),
        sec.get("k_max", DELAY_KMAX))
    wk = sec.get("weekday")
    if wk is None:
        return TimeVaryingDelay.from_kernel(kernel)
    if wk["mode"] == "multiplicative":
        if "scale" not in wk:
            raise ConfigError("delay.weekday.scale required for multiplicative mode")
        weights = WeekdayWeights.multiplicative(wk["scale"])
        return weekday_multiplicative_delay(kernel, weights, phase=phase)
    if "shift" not in wk:
        raise ConfigError("delay.weekday.shift required for shift mode")
    weights = WeekdayWeights.shifted(wk["shift"])
    return weekday_shift_delay(kernel, weights, phase=phase)


def _mcmc_settings(cfg: dict) -> dict:
    sec = cfg.get("mcmc", {})
    return {
        "iters": sec.get("iters", 20_000),
        "burn_in": sec.get("burn_in", 5_000),
        "thin": sec.get("thin", 10),
        "n_chains": sec.get("n_chains", 2),
    }


def _hyper_settings(cfg: dict) -> dict:
    sec = cfg.get("hyperparams", {})
    return {
        "sigma": sec.get("sigma", 1.5),
        "tau": sec.get("tau", 0.025),
        "lambda0": sec.get("lambda0"),
    }


def _quantile_probs(cfg: dict) -> tuple:
    return tuple(cfg.get("quantiles", (0.025, 0.5, 0.975)))


def _threads(args) -> int:
    env = os.environ.get("RENEWAL_MCMC_THREADS")
    if args.threads is not None:
        return args.threads
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"RENEWAL_MCMC_THREADS={env!r} is not an integer") from exc
    return os.cpu_count() or 1


def _dates_for_days(first_date: dt.date, days) -> list[str]:
    """ISO date of each model day; day 1 maps to the first observation."""
    return [(first_date + dt.timedelta(days=int(d) - 1)).isoformat() for d in days]


def _read_input(path) -> tuple[np.ndarray, dt.date, int]:
    df = dataio.read_counts_csv(path)
    first = df["date"].iloc[0].date()
    return df["count"].to_numpy(dtype=float), first, first.weekday()


def _quantile_frame(first_date, days, quants, probs) -> pd.DataFrame:
    data = {"date": _dates_for_days(first_date, days)}
    for j, p in enumerate(probs):
        data[f"q{p:g}"] = quants[:, j]
    return pd.DataFrame(data)


def _write_manifest(args, command, cfg, seed, inputs, t0):
    digests = {os.path.basename(p): dataio.sha256_file(p) for p in inputs}
    dataio.write_manifest(args.output_dir, command, cfg, seed, digests,
                          time.perf_counter() - t0)


def _ensure_outdir(args):
    os.makedirs(args.output_dir, exist_ok=True)


# ---------------------------------------------------------------------------
# subcommands

def cmd_distributions(args) -> int:
    t0 = time.perf_counter()
    for name, val in (("--mean", args.mean), ("--sd", args.sd),
                      ("--delay-mean1", args.delay_mean1),
                      ("--delay-sd1", args.delay_sd1),
                      ("--delay-mean2", args.delay_mean2),
                      ("--delay-sd2", args.delay_sd2)):
        if val <= 0 or not np.isfinite(val):
            raise ConfigError(f"{name} must be a positive number (got {val})")
    if args.k_max < 1:
        raise ConfigError(f"--k-max must be >= 1 (got {args.k_max})")
    _ensure_outdir(args)
    w = discretize_gamma(args.mean, args.sd, args.k_max)
    kernel = convolve_gamma_delay(args.delay_mean1, args.delay_sd1,
                                  args.delay_mean2, args.delay_sd2,
                                  args.delay_k_max or args.k_max)
    for fname, vec in (("profile.csv", w), ("delay.csv", kernel.kernel)):
        pd.DataFrame({
            "k": np.arange(1, vec.size + 1),
            "probability": vec,
            "per_1000": round_to_sum(vec, 1000),
        }).to_csv(os.path.join(args.output_dir, fname), index=False)
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    _write_manifest(args, "distributions", flags, None, [], t0)
    return 0


def cmd_preprocess(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    counts, first_date, phase = _read_input(args.input)
    _ensure_outdir(args)
    sec = cfg.get("preprocess", {})
    kwargs = dict(trend_window=sec.get("trend_window", 15),
                  seasonal_mode=sec.get("seasonal_mode", "periodic"),
                  robust=sec.get("robust", True),
                  zero_offset=sec.get("zero_offset"))
    smooth = smooth_detections(counts, phase=phase, **kwargs)
    dates = _dates_for_days(first_date, np.arange(1, counts.size + 1))
    pd.DataFrame({"date": dates, "count": smooth}).to_csv(
        os.path.join(args.output_dir, "smoothed.csv"), index=False)
    effects = weekday_effect_estimates(counts, phase=phase, **kwargs)
    pd.DataFrame({"weekday": np.arange(7), "effect": effects}).to_csv(
        os.path.join(args.output_dir, "weekday_effects.csv"), index=False)
    _write_manifest(args, "preprocess", cfg, None, [args.input], t0)
    return 0


def cmd_deconvolve(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    counts, first_date, phase = _read_input(args.input)
    _ensure_outdir(args)
    delay = build_delay(cfg, phase)
    sec = cfg.get("deconvolve", {})
    dcfg = DeconvolutionConfig(
        max_iters=sec.get("max_iters", 10_000),
        stopping=sec.get("stopping", "chi_squared"),
        chi2_threshold=sec.get("chi2_threshold"),
        fixed_iters=sec.get("fixed_iters", 10),
        start=sec.get("start", "shifted_constant"))
    res = em_deconvolve(counts, delay, dcfg)
    days = np.arange(res.first_day, res.first_day + res.incidence.size)
    pd.DataFrame({
        "date": _dates_for_days(first_date, days),
        "incidence": res.incidence,
    }).to_csv(os.path.join(args.output_dir, "incidence.csv"), index=False)
    dataio.write_json_atomic(
        os.path.join(args.output_dir, "diagnostics.json"),
        {"iterations": res.iterations, "converged": res.converged,
         "chi2_final": (float(res.chi2_trace[-1]) if res.chi2_trace.size else None)})
    _write_manifest(args, "deconvolve", cfg, None, [args.input], t0)
    return 0


def cmd_simulate(args) -> int:
    from .model import simulate_path

    t0 = time.perf_counter()
    cfg = load_config(args.config)
    sec = cfg.get("simulate", {})
    t_obs = sec.get("t_obs", 63)
    start_date = dt.date.fromisoformat(sec.get("start_date", "2020-03-01"))
    profile = build_profile(cfg)
    delay = build_delay(cfg, phase=start_date.weekday())
    k_m, k_w = delay.k_max, profile.k_max
    n_days = t_obs + k_m - 1
    r = sec.get("r", 1.2)
    if np.isscalar(r):
        truth_r = np.full(n_days, float(r))
    else:
        truth_r = np.asarray(r, dtype=float)
        if truth_r.size != n_days:
            raise ConfigError(
                f"simulate.r must be scalar or cover {n_days} days "
                f"(got {truth_r.size})")
    init_level = sec.get("init_level", 100.0)
    _ensure_outdir(args)
    path = simulate_path(truth_r, np.full(k_w, init_level), profile, delay,
                         seed=args.seed, sim_start=1 - k_m, t_obs=t_obs)
    dataio.write_counts_csv(
        os.path.join(args.output_dir, "cases.csv"),
        [start_date + dt.timedelta(days=i) for i in range(t_obs)],
        path.detections)
    days = np.arange(1 - k_m, t_obs)
    pd.DataFrame({"date": _dates_for_days(start_date, days), "R": truth_r}).to_csv(
        os.path.join(args.output_dir, "truth_R.csv"), index=False)
    pd.DataFrame({
        "date": _dates_for_days(start_date, days),
        "I": path.infections,
    }).to_csv(os.path.join(args.output_dir, "truth_I.csv"), index=False)
    _write_manifest(args, "simulate", cfg, args.seed, [], t0)
    return 0


def _resolve_lambda0(hyp: dict, k_w: int, counts, delay) -> np.ndarray:
    lam = hyp["lambda0"]
    if lam is None:
        return make_lambda0(k_w, fallback_counts=counts, delay=delay)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    return np.full(k_w, lam[0]) if lam.size == 1 else lam


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    counts, first_date, phase = _read_input(args.input)
    _ensure_outdir(args)
    profile = build_profile(cfg)
    delay = build_delay(cfg, phase)
    if args.smooth:
        sec = cfg.get("preprocess", {})
        counts = smooth_detections(
            counts, trend_window=sec.get("trend_window", 15),
            seasonal_mode=sec.get("seasonal_mode", "periodic"),
            robust=sec.get("robust", True), phase=phase,
            zero_offset=sec.get("zero_offset"))
    hyp = _hyper_settings(cfg)
    lam0 = _resolve_lambda0(hyp, profile.k_max, counts, delay)
    hyper = Hyperparams(lam0, hyp["sigma"], hyp["tau"])
    samples = run_mcmc(counts, hyper, delay, profile, seed=args.seed,
                       **_mcmc_settings(cfg))
    probs = _quantile_probs(cfg)
    q = posterior_quantiles(samples, probs)
    _quantile_frame(first_date, q["days_R"], q["R"], probs).to_csv(
        os.path.join(args.output_dir, "quantiles_R.csv"), index=False)
    _quantile_frame(first_date, q["days_I"], q["I"], probs).to_csv(
        os.path.join(args.output_dir, "quantiles_I.csv"), index=False)
    horizon = cfg.get("predict", {}).get("horizon", 7)
    pred = posterior_predict(samples, horizon, hyp["tau"], profile, delay,
                             seed=args.seed, probs=probs)
    rows = []
    for var, days, quants in (("R", pred.days_state, pred.r_quantiles),
                              ("I", pred.days_state, pred.i_quantiles),
                              ("D", pred.days_detect, pred.d_quantiles)):
        dates = _dates_for_days(first_date, days)
        for i, date in enumerate(dates):
            row = {"variable": var, "date": date}
            row.update({f"q{p:g}": quants[i, j] for j, p in enumerate(probs)})
            rows.append(row)
    pd.DataFrame(rows).to_csv(
        os.path.join(args.output_dir, "predictive.csv"), index=False)
    dataio.write_json_atomic(
        os.path.join(args.output_dir, "diagnostics.json"),
        {"accept_rate_allocation": samples.accept_rate_ia,
         "accept_rate_log_r": samples.accept_rate_l,
         "accept_rate_allocation_burnin": samples.accept_rate_ia_burnin,
         "rhat_log_r_max": (float(np.max(samples.rhat_log_r))
                            if samples.rhat_log_r is not None else None),
         "n_draws": samples.n_draws,
         "thin": _mcmc_settings(cfg)["thin"],
         "version": __version__})
    if args.save_samples:
        dataio.write_samples_bin(
            os.path.join(args.output_dir, "samples.bin"), samples)
        dataio.save_prediction_states(
            os.path.join(args.output_dir, "states.npz"), samples)
    _write_manifest(args, "fit", cfg, args.seed, [args.input], t0)
    return 0


def cmd_sequential(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    counts, first_date, phase = _read_input(args.input)
    _ensure_outdir(args)
    profile = build_profile(cfg)
    delay = build_delay(cfg, phase)
    sec = cfg.get("sequential", {})
    hyp = _hyper_settings(cfg)
    probs = _quantile_probs(cfg)
    pre = cfg.get("preprocess", {})
    history, metadata = rolling_fit(
        counts, delay, profile,
        window_len=args.window or sec.get("window", 42),
        sigma=hyp["sigma"], tau=hyp["tau"],
        probs=probs, seed=args.seed,
        smooth_full=args.smooth_full or sec.get("smooth_full", False),
        smooth_kwargs={"trend_window": pre.get("trend_window", 15),
                       "seasonal_mode": pre.get("seasonal_mode", "periodic"),
                       "robust": pre.get("robust", True),
                       "zero_offset": pre.get("zero_offset")},
        phase=phase, transition=sec.get("transition", 3),
        **_mcmc_settings(cfg))
    for var, fname in (("R", "history_R.csv"), ("I", "history_I.csv")):
        frame = history.to_frame(var)
        frame.insert(0, "date", _dates_for_days(first_date, frame.pop("day")))
        frame.to_csv(os.path.join(args.output_dir, fname), index=False)
    dataio.write_json_atomic(
        os.path.join(args.output_dir, "windows.json"), {"windows": metadata})
    _write_manifest(args, "sequential", cfg, args.seed, [args.input], t0)
    return 0


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    sec = cfg.get("evaluate", {})
    _ensure_outdir(args)
    profile = build_profile(cfg)
    delay = build_delay(cfg)
    known = {f.name for f in ExperimentConfig.__dataclass_fields__.values()}
    kwargs = {k: v for k, v in sec.items() if k in known}
    if "methods" in kwargs:
        kwargs["methods"] = tuple(kwargs["methods"])
    if "truth_r" in kwargs:
        kwargs["truth_r"] = np.asarray(kwargs["truth_r"], dtype=float)
    kwargs.setdefault("t_obs", 63)
    kwargs.setdefault("seed", args.seed)
    table = run_experiment(ExperimentConfig(**kwargs), delay, profile)
    table.per_day.to_csv(os.path.join(args.output_dir, "metrics.csv"), index=False)
    table.summary.to_csv(
        os.path.join(args.output_dir, "metrics_summary.csv"), index=False)
    rep_dir = os.path.join(args.output_dir, "replicates")
    os.makedirs(rep_dir, exist_ok=True)
    for art in table.replicate_artifacts:
        if not art["ok"]:
            continue
        for method, res in art["results"].items():
            for var in ("r", "i"):
                pd.DataFrame(
                    np.column_stack([res[f"days_{var}"], res[var]]),
                    columns=["day", "lower", "point", "upper"],
                ).to_csv(os.path.join(
                    rep_dir,
                    f"replicate_{art['replicate']:03d}_{method}_{var.upper()}.csv",
                ), index=False)
    dataio.write_json_atomic(
        os.path.join(args.output_dir, "effective_n.json"),
        {"n_effective": table.n_effective,
         "common_days": table.common_days})
    _write_manifest(args, "evaluate", cfg, args.seed, [], t0)
    return 0


def cmd_predict(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    profile = build_profile(cfg)
    delay = build_delay(cfg)
    bin_path = os.path.join(args.samples_dir, "samples.bin")
    states_path = os.path.join(args.samples_dir, "states.npz")
    for p in (bin_path, states_path):
        if not os.path.exists(p):
            raise DataError(f"missing {p}; run `fit --save-samples` first")
    samples = dataio.samples_from_files(bin_path, states_path)
    _ensure_outdir(args)
    probs = _quantile_probs(cfg)
    tau = _hyper_settings(cfg)["tau"]
    pred = posterior_predict(samples, args.horizon, tau, profile, delay,
                             seed=args.seed, probs=probs)
    rows = []
    for var, days, quants in (("R", pred.days_state, pred.r_quantiles),
                              ("I", pred.days_state, pred.i_quantiles),
                              ("D", pred.days_detect, pred.d_quantiles)):
        for i, day in enumerate(days):
            row = {"variable": var, "day": int(day)}
            row.update({f"q{p:g}": quants[i, j] for j, p in enumerate(probs)})
            rows.append(row)
    pd.DataFrame(rows).to_csv(
        os.path.join(args.output_dir, "predictive.csv"), index=False)
    _write_manifest(args, "predict", cfg, args.seed, [bin_path, states_path], t0)
    return 0


# ---------------------------------------------------------------------------
# parser / entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="renewal-mcmc",
        description="Joint estimation of daily infections and effective "
                    "reproduction numbers from case counts.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True, needs_seed=True):
        if needs_input:
            p.add_argument("--input", required=True, help="CSV with date,count")
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--output-dir", required=True)
        if needs_seed:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (or RENEWAL_MCMC_THREADS)")

    p = sub.add_parser("distributions", help="emit the discretized "
                       "infectivity profile and delay tables")
    p.add_argument("--mean", type=float, default=PROFILE_MEAN)
    p.add_argument("--sd", type=float, default=PROFILE_SD)
    p.add_argument("--k-max", type=int, default=PROFILE_KMAX)
    p.add_argument("--delay-mean1", type=float, default=DELAY_MEAN1)
    p.add_argument("--delay-sd1", type=float, default=DELAY_SD1)
    p.add_argument("--delay-mean2", type=float, default=DELAY_MEAN2)
    p.add_argument("--delay-sd2", type=float, default=DELAY_SD2)
    p.add_argument("--delay-k-max", type=int, default=DELAY_KMAX)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_distributions)

    p = sub.add_parser("preprocess", help="weekday-adjust and smooth counts")
    common(p, needs_seed=False)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("deconvolve", help="recover incidence from counts")
    common(p, needs_seed=False)
    p.set_defaults(func=cmd_deconvolve)

    p = sub.add_parser("simulate", help="simulate a synthetic epidemic")
    common(p, needs_input=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="posterior sampling on one window")
    common(p)
    p.add_argument("--smooth", action="store_true",
                   help="apply weekday smoothing before fitting")
    p.add_argument("--save-samples", action="store_true",
                   help="also write samples.bin and states.npz")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sequential", help="rolling-window estimation")
    common(p)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--smooth-full", action="store_true",
                   help="smooth the full stream once instead of per window")
    p.set_defaults(func=cmd_sequential)

    p = sub.add_parser("evaluate", help="simulation experiment")
    common(p, needs_input=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="posterior predictive from saved samples")
    common(p, needs_input=False)
    p.add_argument("--samples-dir", required=True,
                   help="directory with samples.bin and states.npz")
    p.add_argument("--horizon", type=int, default=7)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _threads(args)  # validates the env override early
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, RenewalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
