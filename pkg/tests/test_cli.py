import csv
import json

import pytest

from cefl.cli import main, run, validate

from conftest import TINY_SPECS


def tiny_config(tmp_path, **overrides):
    config = {
        "dataset": {
            "type": "synthetic",
            "n_clients": 4,
            "profiles": [
                {"n_samples": 12, "class_weights": [0.25, 0.25, 0.25, 0.25,
                                                    0, 0, 0, 0]},
                {"n_samples": 12, "class_weights": [0, 0, 0, 0,
                                                    0.25, 0.25, 0.25, 0.25]},
                {"n_samples": 12, "class_weights": [0.125] * 8},
                {"n_samples": 12, "class_weights": [0.125] * 8},
            ],
        },
        "model": [
            {"input_dim": 1200, "output_dim": 8, "activation": "relu"},
            {"input_dim": 8, "output_dim": 8, "activation": "softmax"},
        ],
        "train": {"learning_rate": 0.001, "batch_size": 8},
        "protocols": [
            {"protocol": "individual", "individual_episodes": 2},
            {"protocol": "regular_fl", "T": 2, "epsilon": 1},
            {"protocol": "cefl", "T": 2, "K": 2, "epsilon": 1,
             "epsilon_init": 1, "eta": 1},
        ],
        "seeds": [0],
        "out_dir": str(tmp_path / "results"),
    }
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path, config


class TestValidate:
    def test_valid_config(self, tmp_path):
        path, _ = tiny_config(tmp_path)
        assert validate(path) == []

    def test_b_out_of_range(self, tmp_path):
        path, _ = tiny_config(
            tmp_path,
            protocols=[{"protocol": "cefl", "B": 3}],   # model has L=2
        )
        diags = validate(path)
        assert any("protocols[0]" in d and "B=3" in d for d in diags)

    def test_weight_sum_violation(self, tmp_path):
        path, _ = tiny_config(
            tmp_path,
            protocols=[{"protocol": "cefl", "K": 2, "a_k": [0.5, 0.4]}],
        )
        diags = validate(path)
        assert any("a_k" in d for d in diags)

    def test_k_exceeds_n(self, tmp_path):
        path, _ = tiny_config(tmp_path, protocols=[{"protocol": "cefl", "K": 9}])
        assert any("K=9" in d for d in validate(path))

    def test_missing_protocols(self, tmp_path):
        path, _ = tiny_config(tmp_path, protocols=[])
        assert any("protocols" in d for d in validate(path))

    def test_unreadable_file(self, tmp_path):
        diags = validate(tmp_path / "nope.json")
        assert diags and "unreadable" in diags[0]

    def test_cli_exit_codes(self, tmp_path):
        path, _ = tiny_config(tmp_path)
        assert main(["validate", str(path)]) == 0
        bad, _ = tiny_config(tmp_path, protocols=[])
        assert main(["validate", str(bad)]) == 2


@pytest.fixture(scope="module")
def executed(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli")
    path, config = tiny_config(tmp_path)
    code = run(path)
    return code, tmp_path / "results", config


class TestRun:
    def test_exit_code(self, executed):
        assert executed[0] == 0

    def test_run_directories(self, executed):
        _, out, _ = executed
        for name in ("individual_seed0", "regular_fl_seed0", "cefl_seed0"):
            assert (out / name / "metrics.csv").exists()
            assert (out / name / "ledger.csv").exists()
            assert (out / name / "summary.json").exists()

    def test_metrics_schema(self, executed):
        _, out, _ = executed
        with open(out / "cefl_seed0" / "metrics.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["round", "protocol", "mean_acc", "std_acc",
                           "cum_bits"]
        # init row + T rounds + transfer row
        assert len(rows) - 1 == 1 + 2 + 1

    def test_comparison_table(self, executed):
        _, out, _ = executed
        with open(out / "comparison.csv") as f:
            rows = {r["protocol"]: r for r in csv.DictReader(f)}
        assert set(rows) == {"individual", "regular_fl", "cefl"}
        assert rows["individual"]["cost_bits"] == "0"
        assert rows["individual"]["savings_vs_regular_fl"] == "1.0"
        cefl_cost = int(rows["cefl"]["cost_bits"])
        reg_cost = int(rows["regular_fl"]["cost_bits"])
        assert float(rows["cefl"]["savings_vs_regular_fl"]) == pytest.approx(
            1.0 - cefl_cost / reg_cost
        )
        assert (out / "comparison.txt").exists()

    def test_cost_column_matches_ledger(self, executed):
        _, out, _ = executed
        with open(out / "comparison.csv") as f:
            rows = {r["protocol"]: r for r in csv.DictReader(f)}
        summary = json.loads((out / "cefl_seed0" / "summary.json").read_text())
        assert int(rows["cefl"]["cost_bits"]) == summary["total_bits"]
        assert summary["matches_closed_form"] is True

    def test_invalid_config_nonzero_exit(self, tmp_path):
        path, _ = tiny_config(tmp_path, protocols=[{"protocol": "cefl",
                                                    "B": 9}])
        assert run(path) == 2


class TestDeterminism:
    def test_identical_runs_byte_identical(self, tmp_path):
        path, _ = tiny_config(tmp_path)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert run(path, out_dir=str(out_a)) == 0
        assert run(path, out_dir=str(out_b)) == 0
        for rel in sorted(p.relative_to(out_a) for p in out_a.rglob("*")
                          if p.is_file()):
            assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel

    def test_seed_override(self, tmp_path):
        path, _ = tiny_config(tmp_path, seeds=[0, 1])
        out = tmp_path / "override"
        assert run(path, seed_override=7, out_dir=str(out)) == 0
        assert (out / "cefl_seed7").exists()
        assert not (out / "cefl_seed0").exists()


class TestKSweep:
    def test_curve_per_k(self, tmp_path):
        path, _ = tiny_config(tmp_path, k_sweep=[2, 3])
        out = tmp_path / "sweep"
        assert run(path, out_dir=str(out)) == 0
        for k in (2, 3):
            curve = out / "ksweep" / f"accuracy_k{k}.csv"
            assert curve.exists()
            with open(curve) as f:
                rows = list(csv.reader(f))
            assert rows[0] == ["round", "mean_acc"]
            assert len(rows) > 2
            assert (out / f"cefl_k{k}_seed0" / "metrics.csv").exists()


def test_csv_dataset_roundtrip(tmp_path):
    import numpy as np

    rng = np.random.default_rng(0)
    lines = ["subject,activity,rate,ax,ay,az,gx,gy,gz"]
    for subject in (1, 2):
        for cls in (0, 1):
            for _ in range(400):
                vals = rng.normal(size=6)
                lines.append(f"{subject},{cls},40," + ",".join(
                    f"{v:.4f}" for v in vals))
    csv_path = tmp_path / "samples.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    config = {
        "dataset": {"type": "csv", "path": str(csv_path)},
        "model": [
            {"input_dim": 1200, "output_dim": 8, "activation": "relu"},
            {"input_dim": 8, "output_dim": 8, "activation": "softmax"},
        ],
        "train": {"learning_rate": 0.001, "batch_size": 2},
        "protocols": [{"protocol": "regular_fl", "T": 1, "epsilon": 1}],
        "seeds": [0],
        "out_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "csv_config.json"
    path.write_text(json.dumps(config))
    assert validate(path) == []
    assert run(path) == 0
    assert (tmp_path / "out" / "regular_fl_seed0" / "metrics.csv").exists()
