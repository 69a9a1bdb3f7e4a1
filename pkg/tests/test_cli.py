import csv
import json

import numpy as np
import pytest

import tsaa.cli as cli
from tsaa.cli import main
from tsaa.forecast import TrainingError
from tsaa.series import read_csv, relative_improvement

CONFIG = {
    "data": {"synth": {"kind": "trend-shift", "length": 480, "period": 12, "trend_slope": 0.01, "seed": 0}},
    "lookback": 24,
    "horizon": 12,
    "forecaster": {"kind": "linear", "lr": 0.05},
    "tsaa": {"T_max": 6},
}


def write_config(tmp_path, **overrides):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({**CONFIG, **overrides}))
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = write_config(tmp)
    assert main(["search", "--config", str(cfg), "--seed", "7", "--out", str(tmp / "a")]) == 0
    return tmp / "a"


class TestSearch:
    def test_layout(self, run_dir):
        for name in ("config.json", "trials.jsonl", "history.jsonl", "policy.json", "result.json", "ops_histogram.csv"):
            assert (run_dir / name).exists(), name
        assert (run_dir / "baseline" / "report.json").exists()
        assert len((run_dir / "trials.jsonl").read_text().splitlines()) == 6

    def test_byte_identical_rerun(self, run_dir, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["search", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "b" / "result.json").read_bytes() == (run_dir / "result.json").read_bytes()

    def test_seed_reaches_both_stages(self, run_dir):
        cfg = json.loads((run_dir / "config.json").read_text())
        assert cfg["forecaster"]["seed"] == 7 and cfg["tsaa"]["seed"] == 7

    def test_budget(self, run_dir):
        result = json.loads((run_dir / "result.json").read_text())
        assert result["epochs_spent"] <= result["budget_bound"]

    def test_baseline_only(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["search", "--config", str(cfg), "--mode", "baseline-only", "--out", str(tmp_path / "r")]) == 0
        result = json.loads((tmp_path / "r" / "result.json").read_text())
        assert result["final_test_mse"] == result["baseline_test_mse"] and result["n_trials"] == 0


class TestReport:
    def test_relative_improvement_recomputes(self, run_dir):
        assert main(["report", str(run_dir)]) == 0
        with (run_dir / "metrics.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        result = json.loads((run_dir / "result.json").read_text())
        for row in rows:
            e_b, e_n = float(row["baseline"]), float(row["tsaa"])
            assert float(row["relative_improvement"]) == pytest.approx(100 * (e_b - e_n) / e_b, rel=1e-12)
            key = row["metric"].lower()
            assert e_b == result[f"baseline_test_{key}"]
        assert "relative improvement" in (run_dir / "report.md").read_text()

    def test_histogram_percentages(self, run_dir):
        main(["report", str(run_dir), "--top", "1.0"])
        with (run_dir / "ops_histogram.csv").open() as fh:
            shares = [float(r["percent"]) for r in csv.DictReader(fh)]
        assert sum(shares) == pytest.approx(100.0)

    def test_missing_run(self, tmp_path):
        assert main(["report", str(tmp_path)]) == 2


class TestAugment:
    def test_identity_policy(self, tmp_path):
        assert main(["generate", "--kind", "seasonal", "--length", "200", "--period", "12", "--out", str(tmp_path / "s.csv")]) == 0
        policy = tmp_path / "identity.json"
        ops = [{"kind": "Identity", "m": 0.5}, {"kind": "Identity", "m": 1.0}]
        policy.write_text(json.dumps({"subpolicies": [{"ops": ops}], "n": 2}))
        out = tmp_path / "aug.csv"
        args = ["augment", "--policy", str(policy), "--data", str(tmp_path / "s.csv"), "--lookback", "24",
                "--horizon", "12", "--period", "12", "--out", str(out)]
        assert main(args) == 0
        series = read_csv(tmp_path / "s.csv").values[:, 0]
        with out.open() as fh:
            for row in csv.DictReader(fh):
                assert float(row["value"]) == series[int(row["origin"]) + int(row["step"])]

    def test_policy_applied(self, tmp_path):
        main(["generate", "--kind", "seasonal", "--length", "200", "--period", "12", "--out", str(tmp_path / "s.csv")])
        policy = tmp_path / "flip.json"
        policy.write_text(json.dumps({"subpolicies": [{"ops": [{"kind": "Flip", "m": 1.0}]}], "n": 1}))
        out = tmp_path / "aug.csv"
        main(["augment", "--policy", str(policy), "--data", str(tmp_path / "s.csv"), "--lookback", "24",
              "--horizon", "12", "--out", str(out)])
        series = read_csv(tmp_path / "s.csv").values[:, 0]
        with out.open() as fh:
            vals = [(float(r["value"]), series[int(r["origin"]) + int(r["step"])]) for r in csv.DictReader(fh)]
        assert any(a != b for a, b in vals)


class TestGenerate:
    def test_components_recompose(self, tmp_path):
        out = tmp_path / "rw.csv"
        assert main(["generate", "--kind", "with-rw", "--length", "300", "--out", str(out)]) == 0
        values = read_csv(out).values[:, 0]
        with (tmp_path / "rw.components.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        comp = {k: np.array([float(r[k]) for r in rows]) for k in ("x_s", "x_rw", "x_rw_hat")}
        np.testing.assert_array_equal(values, (comp["x_s"] + comp["x_rw"]) * comp["x_rw_hat"])
        assert json.loads((tmp_path / "rw.meta.json").read_text())["kind"] == "with-rw"


class TestExitCodes:
    def test_unknown_config_key(self, tmp_path):
        cfg = write_config(tmp_path, colour="blue")
        assert main(["search", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2

    def test_bad_value(self, tmp_path):
        cfg = write_config(tmp_path, tsaa={"beta": 1.5})
        assert main(["search", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2

    def test_missing_config(self, tmp_path):
        assert main(["search", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "r")]) == 2

    def test_malformed_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a\n1\nx\n")
        cfg = write_config(tmp_path, data={"path": str(bad)})
        assert main(["search", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2

    def test_no_output_directory(self, tmp_path):
        assert main(["search", "--config", str(write_config(tmp_path))]) == 2

    def test_compute_failure(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise TrainingError("diverged")

        monkeypatch.setattr(cli, "step1_shared_weights", boom)
        assert main(["search", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "r")]) == 1

    def test_argparse_usage(self):
        with pytest.raises(SystemExit) as exc:
            main(["search"])
        assert exc.value.code == 2


def test_relative_improvement_helper_matches_formula():
    assert relative_improvement(0.4, 0.3) == pytest.approx(25.0)
