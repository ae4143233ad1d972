"""Sweep orchestration: (variant x qubit scale x seed) cells, records, summaries, reports."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .circuits import QuantumLayerSpec, Variant
from .data import DatasetSpec, load_dataset
from .errors import ConfigError, InsufficientSamplesError
from .fisher import fisher_efficiency, fisher_efficiency_perf
from .hybrid import TrainConfig, evaluate, init_model, save_checkpoint, train
from .statevec import MAX_QUBITS
from .stats import mean, std_bessel, variance_reduction, welch_t_test

log = logging.getLogger(__name__)

CLASSICAL = "classical"
RECORDS_FILE = "records.jsonl"
# treatment -> counterpart used for improvement / Welch / variance reduction
COUNTERPART = {Variant.LCU.value: Variant.NOLCU.value, Variant.IQP_LAYER.value: CLASSICAL, Variant.IQP_EMBEDDING.value: CLASSICAL}
PROBE_SAMPLES = 8

ENV_OUTPUT_DIR = "LCUQML_OUTPUT_DIR"
ENV_WORKERS = "LCUQML_WORKERS"


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    variants: list[str] = field(default_factory=lambda: [Variant.LCU.value, Variant.NOLCU.value])
    classical_baseline: bool = True
    qubit_scales: list[int] = field(default_factory=lambda: [4])
    n_blocks: int = 4
    runs_per_config: int = 10
    base_seed: int = 42
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "results"
    extractor_hidden: list[int] = field(default_factory=lambda: [32])
    head_hidden: int = 128
    # multinomial shots for test-time expectations; None = exact
    shots: int | None = None

    def __post_init__(self):
        if isinstance(self.dataset, dict):
            self.dataset = DatasetSpec(**self.dataset)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        for v in self.variants:
            Variant(v)
        if self.runs_per_config < 2:
            raise ConfigError("runs_per_config must be at least 2 so a spread can be estimated")
        for n in self.qubit_scales:
            if not 1 <= n or n + 1 > MAX_QUBITS:
                raise ConfigError(f"qubit scale {n} outside simulator capacity")
        if self.dataset.task == "regression" and self.train.loss != "mse":
            self.train = dataclasses.replace(self.train, loss="mse")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        doc = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def cells(self) -> list[dict]:
        names = list(self.variants) + ([CLASSICAL] if self.classical_baseline else [])
        out = []
        for name in names:
            for n in self.qubit_scales:
                for r in range(self.runs_per_config):
                    seed = self.base_seed + r
                    out.append({"id": f"{name}-q{n}-s{seed}", "variant": name, "qubits": n, "seed": seed})
        return out


@dataclass
class RunRecord:
    id: str
    variant: str
    qubits: int
    seed: int
    status: str
    metric_name: str
    metric: float | None = None
    test_loss: float | None = None
    epochs_trained: int = 0
    best_epoch: int = -1
    mean_success_prob: float | None = None
    n_params: int = 0
    n_quantum_params: int = 0
    wall_time: float = 0.0
    error: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical(self) -> str:
        """JSON form without the wall-clock field, for determinism comparisons."""
        d = self.to_dict()
        d.pop("wall_time")
        return json.dumps(d, sort_keys=True)


# ---------------------------------------------------------------------------
# running


@lru_cache(maxsize=4)
def _cached_dataset(spec_json: str):
    return load_dataset(DatasetSpec(**json.loads(spec_json)))


def _layer_spec(variant: str, qubits: int, n_blocks: int) -> QuantumLayerSpec | None:
    return None if variant == CLASSICAL else QuantumLayerSpec(Variant(variant), qubits, n_blocks)


def run_cell(config: ExperimentConfig, cell: dict) -> RunRecord:
    """Train and test one (variant, qubits, seed) cell; failures become error records."""
    start = time.perf_counter()
    task = config.dataset.task
    metric_name = "accuracy" if task == "classification" else "mae"
    try:
        train_set, val_set, test_set = _cached_dataset(json.dumps(dataclasses.asdict(config.dataset), sort_keys=True))
        n_out = int(np.max(train_set.labels)) + 1 if task == "classification" else 1
        spec = _layer_spec(cell["variant"], cell["qubits"], config.n_blocks)
        model = init_model(
            train_set.features.shape[1],
            n_out,
            spec,
            cell["seed"],
            n_qubits=cell["qubits"],
            extractor_hidden=tuple(config.extractor_hidden),
            head_hidden=config.head_hidden,
        )
        tcfg = dataclasses.replace(config.train, seed=cell["seed"])
        best, history = train(model, train_set, val_set, tcfg)
        rng = np.random.default_rng(cell["seed"]) if config.shots else None
        result = evaluate(best, test_set, tcfg.loss, shots=config.shots, rng=rng)
        if not math.isfinite(result["metric"]):
            raise FloatingPointError("non-finite test metric")
        ckpt_dir = Path(config.output_dir) / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            ckpt_dir / f"{cell['id']}.json",
            best,
            seed=cell["seed"],
            epoch=history["best_epoch"],
            initial=model,
            extra={"history": history, "probe_features": test_set.features[:PROBE_SAMPLES].tolist()},
        )
        return RunRecord(
            id=cell["id"],
            variant=cell["variant"],
            qubits=cell["qubits"],
            seed=cell["seed"],
            status="ok",
            metric_name=metric_name,
            metric=result["metric"],
            test_loss=result["loss"],
            epochs_trained=len(history["epochs"]),
            best_epoch=history["best_epoch"],
            mean_success_prob=result["mean_success_prob"],
            n_params=best.n_trainable(),
            n_quantum_params=spec.n_params if spec is not None else 0,
            wall_time=time.perf_counter() - start,
        )
    except Exception as exc:  # one failed cell must not abort the sweep
        log.exception("cell %s failed", cell["id"])
        return RunRecord(
            id=cell["id"],
            variant=cell["variant"],
            qubits=cell["qubits"],
            seed=cell["seed"],
            status="error",
            metric_name=metric_name,
            wall_time=time.perf_counter() - start,
            error=f"{type(exc).__name__}: {exc}",
        )


def read_records(output_dir) -> list[RunRecord]:
    path = Path(output_dir) / RECORDS_FILE
    if not path.exists():
        return []
    out = []
    for line in path.read_text().splitlines():
        if line.strip():
            out.append(RunRecord(**json.loads(line)))
    return out


def run_sweep(config: ExperimentConfig, *, resume: bool = True, workers: int = 1, stop_after: int | None = None) -> list[RunRecord]:
    """Run every missing cell and return all records in cell order.

    Records are appended to ``records.jsonl`` as cells finish; completed cells
    found there are skipped.  ``stop_after`` caps the number of new trainings
    (used to simulate an interrupted sweep).
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    existing = {r.id: r for r in read_records(out_dir) if r.status == "ok"}
    if existing and not resume:
        raise ConfigError(f"{out_dir} already holds records; pass resume to continue it")
    (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    cells = config.cells()
    todo = [c for c in cells if c["id"] not in existing]
    if stop_after is not None:
        todo = todo[:stop_after]
    log.info("%d cells total, %d already complete, %d to run", len(cells), len(existing), len(todo))
    results = dict(existing)
    # single writer: only this process touches the records file
    with open(out_dir / RECORDS_FILE, "a") as sink:

        def write(rec: RunRecord):
            sink.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
            sink.flush()
            if rec.status == "ok":
                results[rec.id] = rec
            else:
                results.setdefault(rec.id, rec)

        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(run_cell, config, c) for c in todo]
                for fut in as_completed(futures):
                    write(fut.result())
        else:
            for c in todo:
                write(run_cell(config, c))
    return [results[c["id"]] for c in cells if c["id"] in results]


# ---------------------------------------------------------------------------
# summaries


def summarize(records: list[RunRecord]) -> list[dict]:
    """One row per (variant, qubits) cell with spread, Welch test and efficiency columns.

    Comparison fields are ``None`` when the counterpart cell is absent.
    """
    groups: dict[tuple[str, int], list[RunRecord]] = {}
    for r in records:
        if r.status == "ok":
            groups.setdefault((r.variant, r.qubits), []).append(r)
    rows = []
    for (variant, qubits), recs in sorted(groups.items()):
        values = [r.metric for r in recs]
        if len(values) < 2:
            raise InsufficientSamplesError(f"cell {variant} @ {qubits} qubits has {len(values)} completed run(s)")
        succ = [r.mean_success_prob for r in recs if r.mean_success_prob is not None]
        row = {
            "variant": variant,
            "qubits": qubits,
            "metric_name": recs[0].metric_name,
            "n_runs": len(values),
            "mean": mean(values),
            "std": std_bessel(values),
            "mean_success_prob": mean(succ) if succ else None,
            "n_params": recs[0].n_params,
            "n_quantum_params": recs[0].n_quantum_params,
            "counterpart": COUNTERPART.get(variant),
            "improvement": None,
            "welch_t": None,
            "welch_df": None,
            "p_value": None,
            "variance_reduction": None,
            "eta_param": None,
            "eta_perf": None,
        }
        other = groups.get((row["counterpart"], qubits)) if row["counterpart"] else None
        if other is not None and len(other) >= 2:
            base = [r.metric for r in other]
            w = welch_t_test(values, base)
            s_base = std_bessel(base)
            row.update(
                improvement=mean(values) - mean(base),
                welch_t=w.t,
                welch_df=w.df,
                p_value=w.p,
                variance_reduction=variance_reduction(row["std"], s_base) if s_base > 0 else None,
            )
        classical = groups.get((CLASSICAL, qubits))
        if variant != CLASSICAL and classical:
            row["eta_param"] = fisher_efficiency(classical[0].n_params, row["n_params"])
            nolcu = groups.get((Variant.NOLCU.value, qubits))
            if variant == Variant.LCU.value and nolcu:
                row["eta_perf"] = fisher_efficiency_perf(mean(values), mean([r.metric for r in nolcu]), mean([r.metric for r in classical]))
        rows.append(row)
    return rows


CSV_COLUMNS = [
    "variant",
    "qubits",
    "metric_name",
    "n_runs",
    "mean",
    "std",
    "mean_success_prob",
    "n_params",
    "n_quantum_params",
    "counterpart",
    "improvement",
    "welch_t",
    "welch_df",
    "p_value",
    "variance_reduction",
    "eta_param",
    "eta_perf",
]


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_reports(summary: list[dict], records: list[RunRecord], out_dir, config: ExperimentConfig | None = None) -> dict:
    """Write ``summary.csv`` and ``results.json``; return their paths."""
    if not summary:
        raise ValueError("nothing to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "summary.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in summary:
                writer.writerow([_csv_cell(row.get(c)) for c in CSV_COLUMNS])
        json_path = out / "results.json"
        json_path.write_text(json.dumps(results_document(summary, records, config), indent=2, sort_keys=True))
    except OSError as exc:
        raise OSError(f"cannot write reports to {out}: {exc}") from exc
    return {"csv": csv_path, "json": json_path}


def results_document(summary, records, config=None) -> dict:
    return {
        "summary": summary,
        "records": [r.to_dict() for r in records],
        "config": config.to_dict() if config is not None else None,
        "versions": {"lcuqml": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }


def default_workers() -> int:
    return int(os.environ.get(ENV_WORKERS, "1"))


def default_output_dir(fallback: str) -> str:
    return os.environ.get(ENV_OUTPUT_DIR, fallback)
