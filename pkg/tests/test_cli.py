import json
import os

import numpy as np
import pandas as pd
import pytest

from renewal_mcmc.cli import main

# Frozen per-1000 reference tables for the default infectivity profile and
# detection delay.
W_PER_1000 = [31, 114, 179, 190, 163, 122, 83, 53, 32, 18, 10, 5]
M_PER_1000 = [1, 7, 20, 38, 57, 73, 83, 88, 89, 85, 78, 69, 60, 51, 43,
              35, 28, 23, 18, 14, 11, 8, 6, 5, 4, 3, 2, 1]

SMALL_CONFIG = {
    "profile": {"mean": 2.0, "sd": 1.0, "k_max": 3},
    "delay": {"mean1": 1.5, "sd1": 1.0, "mean2": 1.5, "sd2": 1.0, "k_max": 4},
    "mcmc": {"iters": 300, "burn_in": 100, "thin": 4, "n_chains": 1},
}


def write_config(tmp_path, cfg=None, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg if cfg is not None else SMALL_CONFIG))
    return str(path)


def write_counts(tmp_path, counts, start="2021-02-01", name="cases.csv"):
    dates = pd.date_range(start, periods=len(counts))
    path = tmp_path / name
    frame = pd.DataFrame({"date": dates.strftime("%Y-%m-%d"),
                          "count": np.asarray(counts, dtype=int)})
    frame.to_csv(path, index=False)
    return str(path)


def poisson_counts(n=20, level=60.0, seed=11):
    rng = np.random.default_rng(seed)
    return np.maximum(rng.poisson(level, n), 1)


class TestDistributions:
    def test_reference_tables(self, tmp_path):
        out = tmp_path / "out"
        assert main(["distributions", "--output-dir", str(out)]) == 0
        prof = pd.read_csv(out / "profile.csv")
        delay = pd.read_csv(out / "delay.csv")
        assert prof["per_1000"].tolist() == W_PER_1000
        assert delay["per_1000"].tolist() == M_PER_1000
        assert prof["probability"].sum() == pytest.approx(1.0)
        assert (out / "manifest.json").exists()

    def test_invalid_mean_exits_2(self, tmp_path, capsys):
        code = main(["distributions", "--mean", "-1",
                     "--output-dir", str(tmp_path / "o")])
        assert code == 2
        assert "--mean" in capsys.readouterr().err


class TestInputValidation:
    def test_date_gap_exits_3_and_lists_missing(self, tmp_path, capsys):
        path = tmp_path / "gap.csv"
        path.write_text("date,count\n2021-02-01,5\n2021-02-02,6\n"
                        "2021-02-05,7\n")
        code = main(["preprocess", "--input", str(path),
                     "--output-dir", str(tmp_path / "o")])
        assert code == 3
        err = capsys.readouterr().err
        assert "2021-02-03" in err and "2021-02-04" in err

    def test_malformed_row_reports_line(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("date,count\n2021-02-01,5\n2021-02-02,not-a-number\n")
        code = main(["preprocess", "--input", str(path),
                     "--output-dir", str(tmp_path / "o")])
        assert code == 3
        assert ":3" in capsys.readouterr().err

    def test_wrong_header_exits_3(self, tmp_path):
        path = tmp_path / "hdr.csv"
        path.write_text("day,cases\n2021-02-01,5\n")
        code = main(["preprocess", "--input", str(path),
                     "--output-dir", str(tmp_path / "o")])
        assert code == 3

    def test_schema_violation_exits_2_with_pointer(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"mcmc": {"iters": "many"}})
        inp = write_counts(tmp_path, poisson_counts(30))
        code = main(["preprocess", "--input", inp, "--config", cfg,
                     "--output-dir", str(tmp_path / "o")])
        assert code == 2
        assert "/mcmc/iters" in capsys.readouterr().err

    def test_unknown_config_key_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, {"bogus_section": {}})
        inp = write_counts(tmp_path, poisson_counts(30))
        assert main(["preprocess", "--input", inp, "--config", cfg,
                     "--output-dir", str(tmp_path / "o")]) == 2

    def test_bad_thread_env_exits_2(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RENEWAL_MCMC_THREADS", "lots")
        assert main(["distributions",
                     "--output-dir", str(tmp_path / "o")]) == 2


class TestPreprocess:
    def test_outputs_and_sum_preserved(self, tmp_path):
        counts = poisson_counts(35)
        inp = write_counts(tmp_path, counts)
        out = tmp_path / "o"
        assert main(["preprocess", "--input", inp,
                     "--output-dir", str(out)]) == 0
        sm = pd.read_csv(out / "smoothed.csv")
        assert sm["count"].sum() == pytest.approx(counts.sum(), rel=1e-9)
        eff = pd.read_csv(out / "weekday_effects.csv")
        assert len(eff) == 7
        assert np.exp(np.log(eff["effect"]).mean()) == pytest.approx(1.0)
        manifest = json.loads((out / "manifest.json").read_text())
        assert "cases.csv" in manifest["inputs"]


class TestSimulate:
    def test_deterministic_given_seed(self, tmp_path):
        cfg = write_config(tmp_path, {"simulate": {"t_obs": 12,
                                                   "init_level": 40.0},
                                      **{k: SMALL_CONFIG[k]
                                         for k in ("profile", "delay")}})
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["simulate", "--config", cfg, "--seed", "5",
                         "--output-dir", str(out)]) == 0
            outs.append((out / "cases.csv").read_bytes())
        assert outs[0] == outs[1]
        out = tmp_path / "c"
        assert main(["simulate", "--config", cfg, "--seed", "6",
                     "--output-dir", str(out)]) == 0
        assert (out / "cases.csv").read_bytes() != outs[0]
        truth = pd.read_csv(tmp_path / "a" / "truth_R.csv")
        assert len(truth) == 12 + 4 - 1  # t_obs + delay support - 1


class TestFitAndPredict:
    def run_fit(self, tmp_path, out_name, seed="3", extra=()):
        cfg = write_config(tmp_path)
        inp = write_counts(tmp_path, poisson_counts(18))
        out = tmp_path / out_name
        code = main(["fit", "--input", inp, "--config", cfg,
                     "--seed", seed, "--output-dir", str(out), *extra])
        return code, out

    def test_outputs_and_byte_determinism(self, tmp_path):
        code1, out1 = self.run_fit(tmp_path, "f1")
        code2, out2 = self.run_fit(tmp_path, "f2")
        assert code1 == 0 and code2 == 0
        for fname in ("quantiles_R.csv", "quantiles_I.csv", "predictive.csv"):
            assert (out1 / fname).read_bytes() == (out2 / fname).read_bytes()
        diag = json.loads((out1 / "diagnostics.json").read_text())
        assert 0.0 <= diag["accept_rate_allocation"] <= 1.0
        assert diag["n_draws"] == 50  # (300 - 100) / 4
        qr = pd.read_csv(out1 / "quantiles_R.csv")
        assert len(qr) == 18 + 4 - 1
        assert list(qr.columns) == ["date", "q0.025", "q0.5", "q0.975"]

    def test_predict_from_saved_samples(self, tmp_path):
        code, out = self.run_fit(tmp_path, "f", extra=("--save-samples",))
        assert code == 0
        assert (out / "samples.bin").exists() and (out / "states.npz").exists()
        pout = tmp_path / "p"
        cfg = write_config(tmp_path)
        assert main(["predict", "--samples-dir", str(out), "--config", cfg,
                     "--horizon", "5", "--output-dir", str(pout)]) == 0
        pred = pd.read_csv(pout / "predictive.csv")
        for var in ("R", "I", "D"):
            assert (pred["variable"] == var).sum() == 5
        future = pred[pred["variable"] == "D"]
        assert future["day"].tolist() == list(range(19, 24))

    def test_predict_without_samples_exits_3(self, tmp_path):
        assert main(["predict", "--samples-dir", str(tmp_path),
                     "--output-dir", str(tmp_path / "o")]) == 3


class TestSequential:
    def test_window_count_and_history(self, tmp_path):
        cfg = write_config(tmp_path, {
            **SMALL_CONFIG,
            "preprocess": {"zero_offset": 0.5},
        })
        inp = write_counts(tmp_path, poisson_counts(20))
        out = tmp_path / "o"
        assert main(["sequential", "--input", inp, "--config", cfg,
                     "--window", "16", "--seed", "1",
                     "--output-dir", str(out)]) == 0
        windows = json.loads((out / "windows.json").read_text())["windows"]
        assert len(windows) == 5  # stream of 20 with window 16
        hist = pd.read_csv(out / "history_R.csv")
        # last reproduction-number day is the final transition, T - 1
        assert hist["date"].iloc[-1] == "2021-02-19"
        assert len(hist) == 20 + 4 - 1


class TestEvaluate:
    def test_small_experiment(self, tmp_path):
        cfg = write_config(tmp_path, {
            **{k: SMALL_CONFIG[k] for k in ("profile", "delay")},
            "evaluate": {"t_obs": 12, "n_replicates": 1, "init_level": 50.0,
                         "iters": 200, "burn_in": 80, "thin": 3, "n_boot": 8},
        })
        out = tmp_path / "o"
        assert main(["evaluate", "--config", cfg, "--seed", "0",
                     "--output-dir", str(out)]) == 0
        summary = pd.read_csv(out / "metrics_summary.csv")
        assert {"mcmc", "baseline"} <= set(summary["method"])
        eff = json.loads((out / "effective_n.json").read_text())
        assert eff["n_effective"] == 1
        reps = os.listdir(out / "replicates")
        assert any(f.endswith("_mcmc_R.csv") for f in reps)
