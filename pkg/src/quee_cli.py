#!/usr/bin/env python3
"""Command line driver for the QuEE routing experiments."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Dict, List, Mapping, Optional

ROOT_DIR = Path(__file__).resolve().parent.parent
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from app.core import harness  # noqa: E402
from app.core.dataset import load_dataset, write_dataset  # noqa: E402
from app.core.discretizer import compute_ece  # noqa: E402
from app.core.evaluation import operating_point, predictor_rmse, read_curves, write_curves  # noqa: E402
from app.core.model_store import load_model, save_model, write_traces  # noqa: E402
from app.core.path_space import prefix_closure  # noqa: E402
from app.core.router import route_records  # noqa: E402
from app.db.models import store_experiment_run  # noqa: E402
from app.routes.routing import build_policy  # noqa: E402
from app.schemas.experiment import ExperimentConfig  # noqa: E402
from app.utils.config import cli_overrides, load_experiment_config  # noqa: E402
from app.utils.errors import QueeError, StageError  # noqa: E402
from app.utils.logging import configure_logging, stage_logger  # noqa: E402
from src.report_render import render_curves_pdf, render_summary_markdown  # noqa: E402

log = stage_logger("cli")

COMMANDS = ("gen", "cluster", "train", "route", "eval", "sweep", "ece-study", "degrade", "report")
MODES = ("quee", "next-best-step", "oracle", "threshold-exit", "fixed-path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Budgeted routing over quantized early-exit paths")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="YAML experiment config (defaults when omitted)")
    parser.add_argument("--seed", type=int, help="Reseed every stage")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--lambda", dest="lambdas", type=float, action="append", help="Cost importance; repeatable")
    parser.add_argument("--mode", choices=MODES, default="quee", help="Routing policy for 'route'")
    parser.add_argument("--k", type=int, action="append", help="Clusters per path; repeatable for 'ece-study'")
    parser.add_argument("--path-cap", dest="path_cap", type=int, help="Maximum number of paths")
    parser.add_argument("--threshold", type=float, action="append", help="Exit threshold; repeatable")
    parser.add_argument("--fixed-path", dest="fixed_path", help="Path key for --mode fixed-path, e.g. 8-4")
    parser.add_argument("--model", help="Model file written by 'train' or 'sweep'")
    parser.add_argument("--records", help="Record file to route instead of the config's test split")
    parser.add_argument("--dataset", help="Record file to use as the data source")
    parser.add_argument("--noise", type=float, action="append", help="Delegate noise level for 'degrade'; repeatable")
    parser.add_argument("--log-level", dest="log_level", help="Overrides QUEE_LOG_LEVEL")
    parser.add_argument("--no-registry", dest="registry", action="store_false", help="Do not record the run in sqlite")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    # --k/--threshold are lists for the studies; single-value commands take the last one
    overrides = cli_overrides(
        seed=args.seed,
        k=args.k[-1] if args.k and args.command != "ece-study" else None,
        path_cap=args.path_cap,
        out=args.out,
        lambdas=args.lambdas if args.command != "route" else None,
        thresholds=args.threshold if args.command != "route" else None,
        dataset_file=args.dataset,
    )
    if args.command == "ece-study" and args.k:
        overrides["k_list"] = args.k
    if args.command == "degrade" and args.noise:
        overrides["noise_levels"] = sorted(args.noise)
    return load_experiment_config(args.config, overrides)


def record_run(args: argparse.Namespace, config: ExperimentConfig, summary: Mapping[str, object], num_paths: int) -> None:
    if not args.registry:
        return
    run_id = store_experiment_run(
        command=args.command,
        config_hash=config.config_hash(),
        topology_hash=config.topology.topology().topology_hash(),
        num_paths=num_paths,
        summary=summary,
    )
    log.info("run {} recorded", run_id)


def cmd_gen(args: argparse.Namespace, config: ExperimentConfig) -> Dict[str, object]:
    ws = harness.prepare(config)
    out = write_dataset(ws.dataset, Path(config.output_dir) / "records.ndjson")
    log.info("wrote {} records to {}", len(ws.dataset), out)
    return {"records": str(out), "num_paths": len(ws.path_set), "samples": len(ws.dataset)}


def cmd_cluster(args: argparse.Namespace, config: ExperimentConfig) -> Dict[str, object]:
    ws = harness.prepare(config)
    discretizer = harness.fit_clusters(ws)
    report = compute_ece(discretizer, ws.dataset.test, ws.path_set, config.clusters.ece_bins)
    out_dir = Path(config.output_dir)
    harness.write_json(discretizer.to_dict(), out_dir / "clusters.json")
    summary = {"k": discretizer.k, "ece": report.overall, "ece_per_path": report.per_path, "num_paths": len(ws.path_set)}
    harness.write_json(summary, out_dir / "cluster_summary.json")
    return summary


def cmd_train(args: argparse.Namespace, config: ExperimentConfig) -> Dict[str, object]:
    ws = harness.prepare(config)
    discretizer = harness.fit_clusters(ws)
    model = harness.train_model(ws, discretizer)
    out = save_model(model, Path(config.output_dir) / "model.json")
    rmse = predictor_rmse(model.gates, harness.scoring_rows(ws, discretizer)) if model.gates else None
    return {"model": str(out), "num_paths": len(ws.path_set), "rmse": rmse.to_dict() if rmse else None}


def _model_path(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    return Path(args.model) if args.model else Path(config.output_dir) / "model.json"


def cmd_route(args: argparse.Namespace, config: ExperimentConfig) -> Dict[str, object]:
    model = load_model(_model_path(args, config), config.topology.topology())
    lam = args.lambdas[-1] if args.lambdas else 0.0
    threshold = args.threshold[-1] if args.threshold else None
    policy = build_policy(args.mode, lam, threshold, args.fixed_path)
    if policy.mode in ("quee", "next-best-step") and config.gate1_bits is not None:
        policy = policy.model_copy(update={"gate1_bits": config.gate1_bits})

    if args.records:
        dataset = load_dataset(args.records, model.topology, prefix_closure(model.path_set))
        records = dataset.train + dataset.validation + dataset.test
    else:
        records = harness.prepare(config, model.path_set).dataset.test
    gates = model.nbs_for(policy.lam) if policy.mode == "next-best-step" else model.gates
    traces = route_records(records, policy, model.path_set, model.topology, gates)

    out = write_traces(traces, Path(config.output_dir) / f"traces_{policy.mode}.ndjson", param=policy.label)
    lam_for_loss = policy.lam if policy.mode in ("quee", "oracle", "next-best-step") else None
    point = operating_point(traces, policy.mode, policy.label, model.topology, lam_for_loss, config.bootstrap_splits, config.seed)
    return {"traces": str(out), "point": point.to_dict(), "num_paths": len(model.path_set)}


def cmd_eval(args: argparse.Namespace, config: ExperimentConfig) -> Dict[str, object]:
    model = load_model(_model_path(args, config), config.topology.topology())
    ws = harness.prepare(config, model.path_set)
    rmse = predictor_rmse(model.gates, harness.scoring_rows(ws, model.discretizer)) if model.gates else None
    result = harness.sweep(ws, model)
    summary = harness.summarize(ws, model, result.points, rmse)
    out_dir = Path(config.output_dir)
    write_curves(result.points, out_dir / "curves.csv")
    harness.write_json(summary, out_dir / "summary.json")
    return summary


def cmd_sweep(args: argparse.Namespace, config: ExperimentConfig) -> Dict[str, object]:
    return harness.run_pipeline(config).summary


def cmd_ece_study(args: argparse.Namespace, config: ExperimentConfig) -> Dict[str, object]:
    rows = harness.ece_study(config)
    return {"ece": [r.to_dict() for r in rows]}


def cmd_degrade(args: argparse.Namespace, config: ExperimentConfig) -> Dict[str, object]:
    rows = [r.to_dict() for r in harness.degradation_study(config)]
    summary: Dict[str, object] = {"degradation": rows}
    summary["trend_checks"] = harness.trend_checks(summary)
    return summary


def _read_csv(path: Path) -> List[Dict[str, object]]:
    with path.open("r", encoding="utf-8", newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def collect_run(out_dir: Path) -> Dict[str, object]:
    """Merges the summary, ECE and degradation outputs found in one run directory."""
    summary_path = out_dir / "summary.json"
    summary: Dict[str, object] = json.loads(summary_path.read_text(encoding="utf-8")) if summary_path.exists() else {}
    if (out_dir / "ece.csv").exists():
        summary["ece"] = [{k: float(v) for k, v in row.items()} for row in _read_csv(out_dir / "ece.csv")]
    if (out_dir / "degradation.csv").exists():
        summary["degradation"] = _read_csv(out_dir / "degradation.csv")
    if "curves" not in summary and (out_dir / "curves.csv").exists():
        summary["curves"] = [p.to_dict() for p in read_curves(out_dir / "curves.csv")]
    if not summary:
        raise FileNotFoundError(f"no run outputs found in {out_dir}")
    summary["trend_checks"] = harness.trend_checks(summary)
    return summary


def cmd_report(args: argparse.Namespace, config: ExperimentConfig) -> Dict[str, object]:
    out_dir = Path(config.output_dir)
    summary = collect_run(out_dir)
    (out_dir / "summary.md").write_text(render_summary_markdown(summary), encoding="utf-8")
    points = read_curves(out_dir / "curves.csv") if (out_dir / "curves.csv").exists() else []
    if points:
        render_curves_pdf(points, out_dir / "curves.pdf")
    return {"markdown": str(out_dir / "summary.md"), "pdf": str(out_dir / "curves.pdf") if points else None}


HANDLERS = {
    "gen": cmd_gen,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "route": cmd_route,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ece-study": cmd_ece_study,
    "degrade": cmd_degrade,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        config = load_config(args)
        configure_logging(args.log_level, Path(config.output_dir) / "run.log")
        summary = HANDLERS[args.command](args, config)
        if args.command not in ("gen", "report"):
            record_run(args, config, summary, int(summary.get("num_paths", 0) or 0))
        print(json.dumps({k: v for k, v in summary.items() if k != "curves"}, indent=2, default=str))
        return 0
    except QueeError as exc:
        stage = exc.stage if isinstance(exc, StageError) else args.command
        print(f"[{stage}] {exc.cause if isinstance(exc, StageError) else exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"[{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
