import csv
import json

import pytest

import lcuqml.sweep as sw
from lcuqml.cli import main
from lcuqml.errors import ConfigError, InsufficientSamplesError
from lcuqml.hybrid import load_checkpoint
from lcuqml.sweep import (
    CSV_COLUMNS,
    ExperimentConfig,
    RunRecord,
    emit_reports,
    read_records,
    run_sweep,
    summarize,
)


def tiny_config(out, **overrides):
    doc = {
        "dataset": {"kind": "concentric_shells", "n_train": 80, "n_test": 30, "dim": 4},
        "variants": ["LCU", "NoLCU"],
        "classical_baseline": False,
        "qubit_scales": [2, 3],
        "runs_per_config": 3,
        "n_blocks": 2,
        "train": {"max_epochs": 2, "batch_size": 16},
        "extractor_hidden": [4],
        "head_hidden": 8,
        "output_dir": str(out),
    }
    doc.update(overrides)
    return ExperimentConfig.from_json(json.dumps(doc))


def record(variant, qubits, seed, metric, n_params=10):
    return RunRecord(f"{variant}-q{qubits}-s{seed}", variant, qubits, seed, "ok", "accuracy", metric=metric, n_params=n_params)


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    cfg = tiny_config(out)
    return cfg, run_sweep(cfg)


class TestConfig:
    def test_unknown_field(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json('{"learning_rate": 0.1}')

    def test_single_run_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(runs_per_config=1)

    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.train.learning_rate == 0.001 and cfg.train.beta2 == 0.999
        assert cfg.n_blocks == 4 and cfg.train.patience == 5

    def test_regression_forces_mse(self):
        cfg = ExperimentConfig.from_json('{"dataset": {"kind": "synthetic_regression"}}')
        assert cfg.train.loss == "mse"

    def test_cells(self):
        cfg = ExperimentConfig(runs_per_config=2, qubit_scales=[2, 4])
        ids = [c["id"] for c in cfg.cells()]
        assert len(ids) == 3 * 2 * 2 and len(set(ids)) == len(ids)
        assert ids[0] == "LCU-q2-s42"


class TestRunSweep:
    def test_cardinality(self, finished):
        _, records = finished
        assert len(records) == 12
        assert all(r.status == "ok" for r in records)
        assert all(0 < r.mean_success_prob <= 1 for r in records if r.variant == "LCU")

    def test_rerun_is_idempotent(self, finished, monkeypatch):
        cfg, records = finished
        monkeypatch.setattr(sw, "run_cell", lambda *a: pytest.fail("a completed cell was retrained"))
        again = run_sweep(cfg, resume=True)
        assert [r.canonical() for r in again] == [r.canonical() for r in records]
        assert summarize(again) == summarize(records)

    def test_refuses_overwrite(self, finished):
        with pytest.raises(ConfigError):
            run_sweep(finished[0], resume=False)

    def test_deterministic_and_resumable(self, finished, tmp_path):
        _, records = finished
        cfg = tiny_config(tmp_path / "b")
        partial = run_sweep(cfg, stop_after=5)
        assert len(partial) == 5
        resumed = run_sweep(cfg, resume=True)
        assert [r.canonical() for r in resumed] == [r.canonical() for r in records]

    def test_parallel_matches_serial(self, finished, tmp_path):
        _, records = finished
        parallel = run_sweep(tiny_config(tmp_path / "p"), workers=2)
        assert [r.canonical() for r in parallel] == [r.canonical() for r in records]

    def test_checkpoints_written(self, finished):
        cfg, _ = finished
        doc = load_checkpoint(f"{cfg.output_dir}/checkpoints/LCU-q2-s42.json")
        assert doc["initial_model"] is not None
        assert len(doc["extra"]["probe_features"]) == 8

    def test_iqp_embedding_extractor_width(self, tmp_path):
        cfg = tiny_config(tmp_path, variants=["IqpEmbedding"], qubit_scales=[2], runs_per_config=2)
        records = run_sweep(cfg)
        assert all(r.status == "ok" for r in records)
        model = load_checkpoint(tmp_path / "checkpoints" / "IqpEmbedding-q2-s42.json")["model"]
        assert model.extractor[-1].weights.shape[0] == 3

    def test_failed_cell_is_recorded(self, tmp_path, monkeypatch):
        real = sw.train

        def flaky(model, *a, **k):
            if model.quantum is not None and model.quantum.variant.value == "LCU":
                raise RuntimeError("boom")
            return real(model, *a, **k)

        monkeypatch.setattr(sw, "train", flaky)
        records = run_sweep(tiny_config(tmp_path, qubit_scales=[2], runs_per_config=2))
        status = {r.id: r.status for r in records}
        assert status["LCU-q2-s42"] == "error" and status["NoLCU-q2-s42"] == "ok"
        assert "boom" in [r for r in records if r.status == "error"][0].error


class TestSummary:
    def test_rows_and_columns(self, finished, tmp_path):
        cfg, records = finished
        rows = summarize(records)
        assert len(rows) == 4
        paths = emit_reports(rows, records, tmp_path, cfg)
        with open(paths["csv"]) as fh:
            table = list(csv.DictReader(fh))
        assert len(table) == 4 and list(table[0]) == CSV_COLUMNS
        doc = json.loads(paths["json"].read_text())
        assert doc["summary"] == json.loads(json.dumps(rows))
        assert len(doc["records"]) == 12

    def test_comparisons(self):
        recs = [record("LCU", 4, s, m, 50) for s, m in enumerate([90, 92, 94])]
        recs += [record("NoLCU", 4, s, m, 50) for s, m in enumerate([85, 88, 91])]
        recs += [record("classical", 4, s, m, 40) for s, m in enumerate([80, 82, 84])]
        rows = {r["variant"]: r for r in summarize(recs)}
        lcu = rows["LCU"]
        assert lcu["mean"] == 92 and lcu["std"] == pytest.approx(2.0)
        assert lcu["improvement"] == pytest.approx(4.0)
        assert lcu["variance_reduction"] == pytest.approx(1 - 2 / 3)
        assert lcu["eta_param"] == pytest.approx(-25.0)
        assert lcu["eta_perf"] == pytest.approx((92 - 88) / 82 * 100)
        assert rows["NoLCU"]["p_value"] is None and rows["NoLCU"]["eta_perf"] is None

    def test_missing_counterpart(self):
        rows = summarize([record("LCU", 2, s, 80 + s) for s in range(3)])
        assert rows[0]["improvement"] is None and rows[0]["p_value"] is None and rows[0]["eta_param"] is None

    def test_single_run_cell(self):
        with pytest.raises(InsufficientSamplesError):
            summarize([record("LCU", 2, 0, 80.0)])

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        rows = summarize([record("LCU", 2, s, 80 + s) for s in range(2)])
        with pytest.raises(OSError):
            emit_reports(rows, [], blocker / "sub")


class TestCli:
    def test_run_stats_qfi(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg = tiny_config(tmp_path / "out", qubit_scales=[2], runs_per_config=2, variants=["LCU"])
        cfg_path.write_text(json.dumps(cfg.to_dict()))
        assert main(["run", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "out" / "summary.csv").exists()
        assert main(["run", "--config", str(cfg_path)]) == 2
        assert main(["run", "--config", str(cfg_path), "--resume"]) == 0
        assert main(["stats", "--input", str(tmp_path / "out"), "--out", str(tmp_path / "rep")]) == 0
        assert len(read_records(tmp_path / "out")) == 2
        capsys.readouterr()
        ck = tmp_path / "out" / "checkpoints" / "LCU-q2-s42.json"
        assert main(["qfi", "--checkpoint", str(ck), "--at", "both"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert set(out) == {"init", "final"}
        assert out["final"]["n_probes"] == 8 and out["final"]["min_eigenvalue"] > -1e-9

    def test_output_dir_from_environment(self, tmp_path, monkeypatch):
        cfg_path = tmp_path / "cfg.json"
        cfg = tiny_config("ignored", qubit_scales=[2], runs_per_config=2, variants=["NoLCU"])
        cfg_path.write_text(json.dumps(cfg.to_dict()))
        monkeypatch.setenv("LCUQML_OUTPUT_DIR", str(tmp_path / "env"))
        assert main(["run", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "env" / "records.jsonl").exists()

    def test_verify(self, capsys):
        assert main(["verify"]) == 0
        assert capsys.readouterr().out.count("[PASS]") == 6

    def test_missing_config(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2
        assert "error" in capsys.readouterr().err
