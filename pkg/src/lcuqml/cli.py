"""Command line entry point: ``lcuqml {run,stats,qfi,verify}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import LcuQmlError
from .fisher import qfi_matrix
from .hybrid import _dense_forward, load_checkpoint
from .sweep import (
    ExperimentConfig,
    default_output_dir,
    default_workers,
    emit_reports,
    read_records,
    run_sweep,
    summarize,
)


def cmd_run(args) -> int:
    config = ExperimentConfig.load(args.config)
    config.output_dir = args.output_dir or default_output_dir(config.output_dir)
    workers = args.workers if args.workers is not None else default_workers()
    records = run_sweep(config, resume=args.resume, workers=workers)
    failed = [r for r in records if r.status != "ok"]
    paths = emit_reports(summarize(records), records, config.output_dir, config)
    print(f"{len(records)} records ({len(failed)} failed); wrote {paths['csv']} and {paths['json']}")
    return 1 if failed else 0


def cmd_stats(args) -> int:
    records = read_records(args.input)
    if not records:
        print(f"no records found in {args.input}", file=sys.stderr)
        return 2
    # the newest record per id wins (a resumed sweep may have retried failures)
    latest = {}
    for r in records:
        if r.status == "ok" or r.id not in latest:
            latest[r.id] = r
    config_path = Path(args.input) / "config.json"
    config = ExperimentConfig.load(config_path) if config_path.exists() else None
    records = list(latest.values())
    paths = emit_reports(summarize(records), records, args.out, config)
    print(f"wrote {paths['csv']} and {paths['json']}")
    return 0


def cmd_qfi(args) -> int:
    doc = load_checkpoint(args.checkpoint)
    points = ["init", "final"] if args.at == "both" else [args.at]
    probes = np.asarray(doc["extra"].get("probe_features") or [], dtype=np.float64)
    out = {}
    for point in points:
        model = doc["model"] if point == "final" else doc.get("initial_model")
        if model is None:
            print("checkpoint carries no initial model", file=sys.stderr)
            return 2
        if model.quantum is None:
            print("checkpoint has no quantum layer", file=sys.stderr)
            return 2
        features = probes if probes.size else np.zeros((1, model.input_dim))
        angles = _dense_forward(model.extractor, features, [])
        mats = [qfi_matrix(model.quantum, model.quantum_params, a).matrix for a in angles]
        mean_f = np.mean(mats, axis=0)
        out[point] = {
            "n_probes": len(mats),
            "trace_mean": float(np.trace(mean_f)),
            "trace_per_probe": [float(np.trace(m)) for m in mats],
            "min_eigenvalue": float(np.linalg.eigvalsh(mean_f).min()),
            "matrix_mean": mean_f.tolist() if args.matrix else None,
        }
    print(json.dumps(out, indent=2))
    return 0


def cmd_verify(args) -> int:
    from .verify import run_checks

    return 0 if run_checks(seed=args.seed) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcuqml", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true", help="skip cells already recorded in the output dir")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("stats", help="summarise records from a sweep directory")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("qfi", help="quantum Fisher information of a checkpointed layer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--at", choices=["init", "final", "both"], default="final")
    p.add_argument("--matrix", action="store_true", help="include the averaged matrix")
    p.set_defaults(func=cmd_qfi)

    p = sub.add_parser("verify", help="run the oracle self-checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LcuQmlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
