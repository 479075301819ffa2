import csv
import json

import pytest

from betavcl.cli import main, stats_rows
from betavcl.inference import UncertaintyRecord


def _task(name, C, seed, sep=6.0, n=30):
    return {"name": name, "synthetic": {"num_classes": C, "samples_per_class": n, "feature_dim": 4,
                                         "cluster_separation": sep, "cluster_scale": 1.0, "seed": seed}}


def _config(tmp_path, **over):
    cfg = {
        "tasks": [_task("A", 2, 1), _task("B", 3, 2)],
        "orders": [["A", "B"]],
        "hidden_sizes": [8],
        "hyper": {"learning_rate": 0.01, "epochs": 5, "batch_size": 64, "s_train": 2, "s_test": 10},
        "grid": {"learning_rates": [0.01], "betas": [0.1]},
        "seeds": [0],
    }
    cfg.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gen_writes_deterministic_csvs(tmp_path):
    cfg = _config(tmp_path)
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "g1")]) == 0
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "g2")]) == 0
    for name in ("A", "B"):
        first = (tmp_path / "g1" / f"{name}.csv").read_bytes()
        assert first == (tmp_path / "g2" / f"{name}.csv").read_bytes()
        assert first.splitlines()[0].endswith(b",label")


def test_invalid_config_names_the_field(tmp_path, caplog):
    cfg = _config(tmp_path, tasks=[_task("A", 0, 1)])
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 1
    assert "num_classes" in caplog.text


def test_unknown_key_and_missing_config(tmp_path):
    assert main(["run", "--config", str(_config(tmp_path, bogus=1)), "--out", str(tmp_path / "o")]) == 1
    assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 1


def test_missing_dataset_file_is_data_error(tmp_path):
    cfg = _config(tmp_path, tasks=[{"name": "A", "path": "missing.csv"}], orders=None)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_non_finite_loss_is_numeric_error(tmp_path):
    data = tmp_path / "huge.csv"
    rows = ["x,label"] + [f"{(1e300 if i % 2 else -1e300)!r},{i % 2}" for i in range(20)]
    data.write_text("\n".join(rows) + "\n")
    cfg = _config(tmp_path, tasks=[{"name": "H", "path": "huge.csv"}], orders=None, standardize=False)
    with pytest.warns(RuntimeWarning):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_run_single_task_base_case(tmp_path):
    cfg = _config(tmp_path, tasks=[_task("A", 2, 1)], orders=None)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "results.json").read_text())
    run = doc["runs"][0]
    assert len(run["test_accuracy"]) == 1 and len(run["test_accuracy"][0]) == 1
    assert run["test_metrics"]["A"][0] == run["test_accuracy"][0][0]
    assert (tmp_path / "o" / "checkpoints" / "A_seed0_final.json").exists()


def test_run_is_byte_identical_and_config_round_trips(tmp_path):
    cfg = _config(tmp_path)
    for out in ("o1", "o2"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
    first = (tmp_path / "o1" / "results.json").read_bytes()
    assert first == (tmp_path / "o2" / "results.json").read_bytes()
    embedded = tmp_path / "embedded.json"
    embedded.write_text(json.dumps(json.loads(first)["config"]))
    assert main(["run", "--config", str(embedded), "--out", str(tmp_path / "o3")]) == 0
    assert (tmp_path / "o3" / "results.json").read_bytes() == first


def test_singleton_grid_matches_run(tmp_path):
    cfg = _config(tmp_path)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    assert main(["grid", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    run = json.loads((tmp_path / "r" / "results.json").read_text())["runs"][0]
    best = _read_csv(tmp_path / "g" / "grid_best.csv")
    for k, row in enumerate(best):
        assert float(row["combined"]) == run["val_metrics"]["combined"][k]
        assert float(row["A"]) == run["val_metrics"]["A"][k]


def test_default_grid_has_thirty_cells_and_best_is_argmin(tmp_path):
    grid = {"learning_rates": [0.0001, 0.0005, 0.001, 0.005, 0.01], "betas": [0.001, 0.01, 0.05, 0.1, 0.5, 1.0]}
    hyper = {"epochs": 1, "batch_size": 64, "s_train": 1, "s_test": 5}
    cfg = _config(tmp_path, grid=grid, hyper=hyper, hidden_sizes=[4], reference_grid={"learning_rates": [0.01], "betas": [0.1]})
    assert main(["grid", "--config", str(cfg), "--out", str(tmp_path / "g"), "--threads", "2"]) == 0
    cells = _read_csv(tmp_path / "g" / "grid_cells.csv")
    assert len(cells) == 30
    for row in _read_csv(tmp_path / "g" / "grid_best.csv"):
        k = row["k"]
        assert all(float(row["combined"]) <= float(c[f"combined_{k}"]) for c in cells)


def test_grid_threads_do_not_change_outputs(tmp_path):
    cfg = _config(tmp_path, grid={"learning_rates": [0.005, 0.01], "betas": [0.01, 1.0]})
    for t in ("1", "8"):
        assert main(["grid", "--config", str(cfg), "--out", str(tmp_path / t), "--threads", t]) == 0
    for f in ("grid.json", "grid_best.csv", "grid_cells.csv", "grid_per_k.csv"):
        assert (tmp_path / "1" / f).read_bytes() == (tmp_path / "8" / f).read_bytes()


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("unc")
    cfg = {
        "tasks": [_task("A", 3, 4, sep=2.0, n=80)],
        "hidden_sizes": [16],
        "hyper": {"learning_rate": 0.01, "epochs": 30, "batch_size": 64, "s_train": 2, "s_test": 30},
        "seeds": [0],
    }
    (tmp / "cfg.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp / "cfg.json"), "--out", str(tmp / "o")]) == 0
    return tmp / "o"


def _uncertainty(run_dir, out, *extra):
    args = ["uncertainty", "--checkpoint", str(run_dir / "checkpoints" / "A_seed0_final.json"),
            "--testset", f"0={run_dir / 'splits' / 'A_test.csv'}", "--out", str(out), *extra]
    return main(args)


def test_uncertainty_gates(trained_run, tmp_path):
    assert _uncertainty(trained_run, tmp_path / "all", "--max-entropy", "inf") == 0
    gate = json.loads((tmp_path / "all" / "gate_summary.json").read_text())
    rows = _read_csv(tmp_path / "all" / "uncertainty.csv")
    assert gate["n_accepted"] == len(rows)
    assert gate["accuracy_accepted"] == pytest.approx(sum(int(r["correct"]) for r in rows) / len(rows))
    assert _uncertainty(trained_run, tmp_path / "none", "--max-entropy", "0") == 0
    assert json.loads((tmp_path / "none" / "gate_summary.json").read_text())["n_accepted"] == 0
    h = sorted(float(r["entropy_nats"]) for r in rows)
    mid = h[len(h) // 2]
    assert _uncertainty(trained_run, tmp_path / "mid", "--max-entropy", repr(mid)) == 0
    gate = json.loads((tmp_path / "mid" / "gate_summary.json").read_text())
    assert gate["accuracy_accepted"] >= gate["accuracy_all"]


def test_uncertainty_head_mismatch(trained_run, tmp_path):
    args = ["uncertainty", "--checkpoint", str(trained_run / "checkpoints" / "A_seed0_final.json"),
            "--testset", f"3={trained_run / 'splits' / 'A_test.csv'}", "--out", str(tmp_path)]
    assert main(args) == 2


def test_stats_is_idempotent(trained_run, tmp_path):
    assert _uncertainty(trained_run, tmp_path, "--samples", "50") == 0
    csv_path = str(tmp_path / "uncertainty.csv")
    assert main(["stats", "--input", csv_path, "--out", str(tmp_path / "s1"), "--order", "A"]) == 0
    assert main(["stats", "--input", csv_path, "--out", str(tmp_path / "s2"), "--order", "A"]) == 0
    first = (tmp_path / "s1" / "stats.csv").read_bytes()
    assert first == (tmp_path / "s2" / "stats.csv").read_bytes()
    rows = _read_csv(tmp_path / "s1" / "stats.csv")
    assert {r["measure"] for r in rows} == {"entropy", "mi"}
    assert all(r["order"] == "A" for r in rows)


def test_stats_marks_insufficient_data():
    recs = [UncertaintyRecord(i, "T", 1, 0, 0, True, 0.1 * i, 0.01 * i) for i in range(10)]
    rows = stats_rows(recs)
    assert all(r["status"].startswith("insufficient-data") for r in rows)
    assert rows[0]["n_wrong"] == 0


def test_stats_missing_and_malformed_input(tmp_path):
    assert main(["stats", "--input", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("sample_id,task\n1,T\n")
    assert main(["stats", "--input", str(bad), "--out", str(tmp_path)]) == 2
