"""File formats: dated count CSVs, run manifests, and the binary posterior
sample container.

All writes of manifest files go through an atomic rename so a directory
containing a manifest is guaranteed to hold complete outputs.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
import struct
import tempfile

import numpy as np
import pandas as pd

from .errors import DataError
from .mcmc import PosteriorSamples

__all__ = [
    "read_counts_csv",
    "write_counts_csv",
    "sha256_file",
    "write_json_atomic",
    "write_manifest",
    "write_samples_bin",
    "read_samples_bin",
    "save_prediction_states",
    "load_prediction_states",
    "samples_from_files",
]

_MAGIC = b"RNWM"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQQQ")  # magic, version, T, K_m, K_w, n_draws


def read_counts_csv(path) -> pd.DataFrame:
    """Load a `date,count` CSV of contiguous daily observations.

    Dates must be ISO-8601 and strictly consecutive; any gap aborts with the
    full list of missing dates. Counts must be nonnegative numbers. Errors
    carry the 1-based line number of the offending row.
    """
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except Exception as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if list(raw.columns) != ["date", "count"]:
        raise DataError(
            f"{path}: header must be exactly 'date,count' "
            f"(got {','.join(raw.columns)})")
    if raw.empty:
        raise DataError(f"{path}: no data rows")
    dates = []
    counts = []
    for i, row in enumerate(raw.itertuples(index=False), start=2):
        try:
            d = dt.date.fromisoformat(row.date)
        except ValueError as exc:
            raise DataError(f"{path}:{i}: invalid ISO date {row.date!r}") from exc
        try:
            c = float(row.count)
        except ValueError as exc:
            raise DataError(f"{path}:{i}: invalid count {row.count!r}") from exc
        if not np.isfinite(c) or c < 0:
            raise DataError(f"{path}:{i}: count must be finite and nonnegative")
        dates.append(d)
        counts.append(c)
    missing = []
    for prev, cur in zip(dates, dates[1:]):
        if cur <= prev:
            raise DataError(f"{path}: dates must be strictly increasing "
                            f"({prev} followed by {cur})")
        step = prev + dt.timedelta(days=1)
        while step < cur:
            missing.append(step.isoformat())
            step += dt.timedelta(days=1)
    if missing:
        raise DataError(f"{path}: missing dates: {', '.join(missing)}")
    return pd.DataFrame({"date": pd.to_datetime(dates), "count": counts})


def write_counts_csv(path, dates, counts) -> None:
    df = pd.DataFrame({
        "date": [pd.Timestamp(d).date().isoformat() for d in dates],
        "count": counts,
    })
    df.to_csv(path, index=False)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json_atomic(path, obj) -> None:
    """Serialize to JSON and rename into place so readers never see a
    partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def write_manifest(output_dir, command: str, config: dict, seed,
                   input_digests: dict, elapsed_seconds: float) -> str:
    """Write ``manifest.json`` describing one completed run."""
    from . import __version__

    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": input_digests,
        "version": __version__,
        "elapsed_seconds": elapsed_seconds,
    }
    path = os.path.join(output_dir, "manifest.json")
    write_json_atomic(path, manifest)
    return path


def write_samples_bin(path, samples: PosteriorSamples) -> None:
    """Binary posterior container.

    Layout (little endian): header ``magic 'RNWM', u32 version, u64 T,
    u64 K_m, u64 K_w, u64 n_draws`` followed by the row-major float64 log
    reproduction draws (n_draws x (T+K_m-1)) and the row-major int64
    infection draws (n_draws x (T+K_m+K_w-1)).
    """
    header = _HEADER.pack(_MAGIC, _VERSION, samples.t_obs, samples.k_m,
                          samples.k_w, samples.n_draws)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(samples.log_r_draws, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(samples.infection_draws, dtype="<i8").tobytes())


def read_samples_bin(path) -> dict:
    """Read the container written by :func:`write_samples_bin`.

    Returns a dict with keys t_obs, k_m, k_w, n_draws, log_r_draws,
    infection_draws.
    """
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise DataError(f"{path}: truncated header")
        magic, version, t_obs, k_m, k_w, n_draws = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        if version != _VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        n_l = t_obs + k_m - 1
        n_i = n_l + k_w
        l_bytes = fh.read(8 * n_draws * n_l)
        i_bytes = fh.read(8 * n_draws * n_i)
        if len(l_bytes) != 8 * n_draws * n_l or len(i_bytes) != 8 * n_draws * n_i:
            raise DataError(f"{path}: truncated payload")
    return {
        "t_obs": int(t_obs), "k_m": int(k_m), "k_w": int(k_w),
        "n_draws": int(n_draws),
        "log_r_draws": np.frombuffer(l_bytes, dtype="<f8").reshape(n_draws, n_l),
        "infection_draws": np.frombuffer(i_bytes, dtype="<i8").reshape(n_draws, n_i),
    }


def save_prediction_states(path, samples: PosteriorSamples) -> None:
    """Companion file carrying the extra per-draw state (detected totals and
    final-day allocation columns) that the binary container omits but the
    prediction chain needs."""
    np.savez(path,
             detected_draws=samples.detected_draws,
             final_column_draws=samples.final_column_draws,
             chain_ids=samples.chain_ids,
             d_int=samples.d_int)


def load_prediction_states(path) -> dict:
    with np.load(path) as z:
        return {k: z[k] for k in z.files}


def samples_from_files(bin_path, states_path) -> PosteriorSamples:
    """Reassemble a :class:`PosteriorSamples` from the two on-disk pieces."""
    core = read_samples_bin(bin_path)
    extra = load_prediction_states(states_path)
    return PosteriorSamples(
        log_r_draws=core["log_r_draws"],
        infection_draws=core["infection_draws"],
        detected_draws=extra["detected_draws"],
        final_column_draws=extra["final_column_draws"],
        t_obs=core["t_obs"], k_m=core["k_m"], k_w=core["k_w"],
        chain_ids=extra["chain_ids"],
        accept_rate_ia=float("nan"), accept_rate_l=float("nan"),
        accept_rate_ia_burnin=float("nan"), rhat_log_r=None,
        seed=None, d_int=extra["d_int"],
    )
