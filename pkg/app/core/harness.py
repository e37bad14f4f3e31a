"""End-to-end experiment driver.

Stages run in order (paths, data, cluster, rows, train, sweep, write); each one
draws from its own named random stream, so re-running a config reproduces every
output file byte for byte. Failures surface as ``StageError`` carrying the stage.
"""

from __future__ import annotations

import csv
import json
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path as FilePath
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core import discretizer as clustering
from app.core.dataset import generate_synthetic, load_dataset, split_validation
from app.core.evaluation import (
    CURVE_COLUMNS,
    RmseReport,
    accuracy_at,
    curve,
    operating_point,
    predictor_rmse,
    write_curves,
)
from app.core.model_store import QueeModel, save_model, write_traces
from app.core.path_space import build_path_set, prefix_closure
from app.core.predictor import GatePredictor, build_next_step_rows, build_training_rows, train_gates
from app.core.router import route_records
from app.schemas.clusters import DiscretizerModel, EceReport
from app.schemas.experiment import ExperimentConfig, OperatingPoint
from app.schemas.gates import GateRows
from app.schemas.records import SampleRecord, SplitDataset
from app.schemas.routing import DecisionTrace, RoutingPolicy
from app.schemas.topology import NetworkTopology, PathSet
from app.utils.config import dump_config
from app.utils.errors import InvalidArgumentError, StageError
from app.utils.logging import stage_logger
from app.utils.seeding import stream_seed

log = stage_logger("harness")

STAGES = ("paths", "data", "cluster", "rows", "train", "sweep", "write")
TIE_RULE = "lower cost first, then lexicographically greater bit widths"


@contextmanager
def stage(name: str) -> Iterator[None]:
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def build_processing_trace() -> Dict[str, str]:
    return {f"step_{i}": name for i, name in enumerate(STAGES, start=1)}


@dataclass(frozen=True)
class Workspace:
    config: ExperimentConfig
    topology: NetworkTopology
    path_set: PathSet
    dataset: SplitDataset
    cluster_records: Tuple[SampleRecord, ...]
    stop_records: Tuple[SampleRecord, ...]


def load_records(config: ExperimentConfig, topology: NetworkTopology, path_set: PathSet) -> SplitDataset:
    """Records carry every classifier routing can evaluate, prefixes of sampled paths included."""
    evaluable = prefix_closure(path_set)
    if config.dataset_file is not None:
        return load_dataset(config.dataset_file, topology, evaluable)
    assert config.synthetic is not None
    return generate_synthetic(config.synthetic, topology, evaluable)


def prepare(config: ExperimentConfig, path_set: Optional[PathSet] = None) -> Workspace:
    with stage("paths"):
        topology = config.topology.topology()
        if path_set is None:
            path_set = build_path_set(
                topology, config.topology.path_cap, config.topology.seed, config.topology.monotone_only
            )
    with stage("data"):
        dataset = load_records(config, topology, path_set)
        if not dataset.validation:
            raise InvalidArgumentError("the dataset has no validation records")
        if len(dataset.test) < config.bootstrap_splits:
            raise InvalidArgumentError(f"{len(dataset.test)} test records cannot fill {config.bootstrap_splits} bootstrap subsets")
        cluster_records, stop_records = split_validation(dataset.validation, config.seed)
    return Workspace(config, topology, path_set, dataset, cluster_records, stop_records)


def fit_clusters(ws: Workspace, k: Optional[int] = None) -> DiscretizerModel:
    settings = ws.config.clusters
    with stage("cluster"):
        return clustering.fit(ws.cluster_records, ws.path_set, settings.k if k is None else k, settings.seed, settings.n_jobs)


def _rows(ws: Workspace, discretizer: DiscretizerModel, records: Sequence[SampleRecord], name: str) -> Dict[int, GateRows]:
    training = ws.config.training
    with stage("rows"):
        return build_training_rows(
            records,
            ws.path_set,
            discretizer,
            ws.topology,
            stream_seed(training.seed, name),
            training.n_prefix,
            training.n_candidates,
        )


def scoring_rows(ws: Workspace, discretizer: DiscretizerModel) -> Dict[int, GateRows]:
    return _rows(ws, discretizer, ws.dataset.test, "rows:test")


def train_quee_gates(ws: Workspace, discretizer: DiscretizerModel) -> Dict[int, GatePredictor]:
    rows = _rows(ws, discretizer, ws.dataset.train, "rows:train")
    held_out = _rows(ws, discretizer, ws.stop_records, "rows:stop")
    with stage("train"):
        return train_gates(rows, ws.config.training, held_out)


def train_next_step_gates(ws: Workspace, discretizer: DiscretizerModel, lam: float) -> Dict[int, GatePredictor]:
    training = ws.config.training

    def rows_for(records: Sequence[SampleRecord], name: str) -> Dict[int, GateRows]:
        seed = stream_seed(training.seed, name)
        return build_next_step_rows(records, ws.path_set, discretizer, ws.topology, lam, seed, training.n_prefix)

    with stage("rows"):
        rows = rows_for(ws.dataset.train, "nbs:train")
        held_out = rows_for(ws.stop_records, "nbs:stop")
    with stage("train"):
        return train_gates(rows, training, held_out, output="linear")


def train_model(ws: Workspace, discretizer: Optional[DiscretizerModel] = None, with_next_step: bool = True) -> QueeModel:
    discretizer = discretizer or fit_clusters(ws)
    gates = train_quee_gates(ws, discretizer)
    nbs_gates: Dict[float, Dict[int, GatePredictor]] = {}
    if with_next_step:
        for lam in ws.config.nbs_lambdas:
            nbs_gates[float(lam)] = train_next_step_gates(ws, discretizer, lam)
    return QueeModel(
        topology=ws.topology,
        path_set=ws.path_set,
        num_classes=ws.dataset.num_classes,
        discretizer=discretizer,
        gates=gates,
        nbs_gates=nbs_gates,
    )


def param_label(value: float) -> str:
    return format(value, ".6g")


@dataclass
class SweepResult:
    points: List[OperatingPoint] = field(default_factory=list)
    traces: Dict[str, Dict[str, List[DecisionTrace]]] = field(default_factory=dict)

    def add(self, point: OperatingPoint, traces: List[DecisionTrace], keep: bool) -> None:
        self.points.append(point)
        if keep:
            self.traces.setdefault(point.policy, {})[point.param] = traces


def _point(ws: Workspace, policy: str, param: str, traces: Sequence[DecisionTrace], lam: Optional[float]) -> OperatingPoint:
    return operating_point(traces, policy, param, ws.topology, lam, ws.config.bootstrap_splits, ws.config.seed)


def sweep_quee(ws: Workspace, gates: Mapping[int, GatePredictor], records: Optional[Sequence[SampleRecord]] = None, result: Optional[SweepResult] = None) -> SweepResult:
    records = ws.dataset.test if records is None else records
    result = result or SweepResult()
    for lam in ws.config.lambdas:
        policy = RoutingPolicy(mode="quee", lam=lam, gate1_bits=ws.config.gate1_bits)
        traces = route_records(records, policy, ws.path_set, ws.topology, gates)
        result.add(_point(ws, "quee", param_label(lam), traces, lam), traces, keep=True)
    return result


def sweep(ws: Workspace, model: QueeModel, records: Optional[Sequence[SampleRecord]] = None) -> SweepResult:
    """Operating points of every policy on the test split (or ``records``)."""
    records = ws.dataset.test if records is None else records
    with stage("sweep"):
        result = sweep_quee(ws, model.gates, records)
        for lam in ws.config.lambdas:
            traces = route_records(records, RoutingPolicy(mode="oracle", lam=lam), ws.path_set, ws.topology)
            result.add(_point(ws, "oracle", param_label(lam), traces, lam), traces, keep=False)
        for threshold in ws.config.thresholds:
            policy = RoutingPolicy(mode="threshold-exit", threshold=threshold)
            traces = route_records(records, policy, ws.path_set, ws.topology)
            result.add(_point(ws, "threshold-exit", param_label(threshold), traces, None), traces, keep=False)
        for path in ws.path_set:
            traces = route_records(records, RoutingPolicy(mode="fixed-path", fixed_path=path.key), ws.path_set, ws.topology)
            result.add(_point(ws, "fixed-path", path.key, traces, None), traces, keep=False)
        for lam, gates in sorted(model.nbs_gates.items()):
            policy = RoutingPolicy(mode="next-best-step", lam=lam, gate1_bits=ws.config.gate1_bits)
            traces = route_records(records, policy, ws.path_set, ws.topology, gates)
            result.add(_point(ws, "next-best-step", param_label(lam), traces, lam), traces, keep=True)
    for point in curve(result.points, "quee"):
        log.debug("quee {}: accuracy {:.4f} cost {:.4f}", point.param, point.accuracy, point.cost)
    log.info("sweep produced {} operating points on {} records", len(result.points), len(records))
    return result


@dataclass
class PipelineResult:
    workspace: Workspace
    model: QueeModel
    sweep: SweepResult
    rmse: Optional[RmseReport]
    summary: Dict[str, object]
    files: Dict[str, FilePath]


def summarize(ws: Workspace, model: QueeModel, points: Sequence[OperatingPoint], rmse: Optional[RmseReport]) -> Dict[str, object]:
    summary: Dict[str, object] = {
        "config_hash": ws.config.config_hash(),
        "topology_hash": ws.topology.topology_hash(),
        "num_paths": len(ws.path_set),
        "paths": list(ws.path_set.keys),
        "k": model.discretizer.k,
        "samples": {"train": len(ws.dataset.train), "validation": len(ws.dataset.validation), "test": len(ws.dataset.test)},
        "tie_rule": TIE_RULE,
        "curves": [p.to_dict() for p in points],
        "rmse": rmse.to_dict() if rmse else None,
    }
    summary["trend_checks"] = trend_checks(summary)
    return summary


def write_json(payload: Mapping[str, object], file_path: FilePath) -> FilePath:
    file_path.parent.mkdir(parents=True, exist_ok=True)
    file_path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return file_path


def write_outputs(ws: Workspace, model: QueeModel, result: SweepResult, summary: Mapping[str, object], out_dir: FilePath) -> Dict[str, FilePath]:
    with stage("write"):
        files = {
            "config": dump_config(ws.config, out_dir / "config.yaml"),
            "model": save_model(model, out_dir / "model.json"),
            "curves": write_curves(result.points, out_dir / "curves.csv"),
            "summary": write_json(summary, out_dir / "summary.json"),
        }
        for policy, by_param in sorted(result.traces.items()):
            target = out_dir / f"traces_{policy}.ndjson"
            for i, (param, traces) in enumerate(by_param.items()):
                write_traces(traces, target, param=param, append=i > 0)
            files[f"traces_{policy}"] = target
    return files


def run_pipeline(config: ExperimentConfig) -> PipelineResult:
    """gen/load -> paths -> clusters -> rows -> gates -> sweep, then writes the run directory."""
    ws = prepare(config)
    discretizer = fit_clusters(ws)
    model = train_model(ws, discretizer)
    rmse = predictor_rmse(model.gates, scoring_rows(ws, discretizer)) if model.gates else None
    result = sweep(ws, model)
    summary = summarize(ws, model, result.points, rmse)
    files = write_outputs(ws, model, result, summary, FilePath(config.output_dir))
    log.info("run written to {} ({} operating points)", config.output_dir, len(result.points))
    return PipelineResult(ws, model, result, rmse, summary, files)


@dataclass(frozen=True)
class DegradationRow:
    noise: float
    rmse: float
    point: OperatingPoint

    def to_dict(self) -> Dict[str, object]:
        return {
            "noise": self.noise,
            "rmse": self.rmse,
            "policy": self.point.policy,
            "param": self.point.param,
            "accuracy": self.point.accuracy,
            "cost": self.point.cost,
        }


def degradation_study(config: ExperimentConfig, noise_levels: Optional[Sequence[float]] = None, ws: Optional[Workspace] = None) -> List[DegradationRow]:
    """Retrains the gates on noisy delegates and scores them against the clean targets."""
    levels = sorted(set(float(s) for s in (noise_levels if noise_levels is not None else config.noise_levels)))
    if not levels or levels[0] < 0:
        raise InvalidArgumentError("noise levels must be a nonempty list of values >= 0")
    ws = ws or prepare(config)
    if ws.topology.num_exits < 2:
        raise InvalidArgumentError("degradation needs at least two exits")
    clean = fit_clusters(ws)
    clean_rows = scoring_rows(ws, clean)

    rows: List[DegradationRow] = []
    for sigma in levels:
        noisy = clustering.with_delegate_noise(clean, sigma, config.seed)
        gates = train_quee_gates(ws, noisy)
        rmse = predictor_rmse(gates, clean_rows).overall
        with stage("sweep"):
            points = sweep_quee(ws, gates).points
        log.info("noise {:g}: RMSE {:.4f}", sigma, rmse)
        rows.extend(DegradationRow(sigma, rmse, p) for p in points)

    out = FilePath(config.output_dir) / "degradation.csv"
    with stage("write"):
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=("noise", "rmse", "policy", "param", "accuracy", "cost"))
            writer.writeheader()
            writer.writerows(r.to_dict() for r in rows)
    return rows


@dataclass(frozen=True)
class EceRow:
    k: int
    report: EceReport
    ece_ci: float
    points: Tuple[OperatingPoint, ...] = ()

    def to_dict(self) -> Dict[str, object]:
        return {"k": self.k, "ece": self.report.overall, "ece_ci": self.ece_ci}


def ece_study(config: ExperimentConfig, k_list: Optional[Sequence[int]] = None, with_curves: bool = True, ws: Optional[Workspace] = None) -> List[EceRow]:
    """ECE of the delegates on the test split for every K, plus a quee curve per K."""
    ks = sorted(set(int(k) for k in (k_list if k_list is not None else config.k_list)))
    if not ks or ks[0] < 1:
        raise InvalidArgumentError("K list must be nonempty with every K >= 1")
    ws = ws or prepare(config)

    rows: List[EceRow] = []
    for k in ks:
        discretizer = fit_clusters(ws, k)
        with stage("cluster"):
            report = clustering.compute_ece(discretizer, ws.dataset.test, ws.path_set, config.clusters.ece_bins)
        per_path = np.array(list(report.per_path.values()))
        ece_ci = 1.96 * float(per_path.std()) / math.sqrt(len(per_path))
        points: Tuple[OperatingPoint, ...] = ()
        if with_curves and ws.topology.num_exits > 1:
            gates = train_quee_gates(ws, discretizer)
            with stage("sweep"):
                points = tuple(sweep_quee(ws, gates).points)
        rows.append(EceRow(k, report, ece_ci, points))

    out_dir = FilePath(config.output_dir)
    with stage("write"):
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "ece.csv").open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=("k", "ece", "ece_ci"))
            writer.writeheader()
            writer.writerows(r.to_dict() for r in rows)
        with (out_dir / "ece_per_path.csv").open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("k", "path", "ece"))
            for r in rows:
                writer.writerows((r.k, key, value) for key, value in r.report.per_path.items())
        if with_curves:
            with (out_dir / "ece_curves.csv").open("w", encoding="utf-8", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=("k",) + CURVE_COLUMNS)
                writer.writeheader()
                for r in rows:
                    writer.writerows({"k": r.k, **p.to_dict()} for p in r.points)
    return rows


def _points(payload: Sequence[Mapping[str, object]]) -> List[OperatingPoint]:
    return [OperatingPoint(**p) for p in payload]  # type: ignore[arg-type]


def _low_cost_wins(quee: Sequence[OperatingPoint], baseline: Sequence[OperatingPoint], samples: int = 5) -> Optional[int]:
    if not quee or not baseline:
        return None
    lo = max(min(p.cost for p in quee), min(p.cost for p in baseline))
    hi = min(max(p.cost for p in quee), max(p.cost for p in baseline))
    if hi <= lo:
        return None
    costs = np.linspace(lo, lo + (hi - lo) / 2.0, samples)
    return int(sum(accuracy_at(quee, c) >= accuracy_at(baseline, c) for c in costs))


def _degradation_curve(rows: Sequence[Mapping[str, object]]) -> List[OperatingPoint]:
    return [
        OperatingPoint("quee", str(r.get("param", "")), float(r["accuracy"]), 0.0, float(r["cost"]), 0.0)  # type: ignore[arg-type]
        for r in rows
    ]


def _gap_widens(clean_rows: Sequence[Mapping[str, object]], noisy_rows: Sequence[Mapping[str, object]]) -> Optional[bool]:
    """Accuracy lost to noise at the highest shared cost versus the lowest, read off both curves at equal cost."""
    clean, noisy = _degradation_curve(clean_rows), _degradation_curve(noisy_rows)
    if len(clean) < 2 or len(noisy) < 2:
        return None
    lo = max(min(p.cost for p in clean), min(p.cost for p in noisy))
    hi = min(max(p.cost for p in clean), max(p.cost for p in noisy))
    if hi <= lo:
        return None
    gap_high = accuracy_at(clean, hi) - accuracy_at(noisy, hi)
    gap_low = accuracy_at(clean, lo) - accuracy_at(noisy, lo)
    return gap_high > gap_low


def trend_checks(summary: Mapping[str, object]) -> Dict[str, Optional[bool]]:
    """Trend-level comparisons between curves; reported, never enforced."""
    points = _points(summary.get("curves") or [])  # type: ignore[arg-type]
    quee = curve(points, "quee")
    checks: Dict[str, Optional[bool]] = {}

    wins = _low_cost_wins(quee, curve(points, "threshold-exit"))
    checks["quee_beats_threshold_low_cost"] = None if wins is None else wins >= 3

    nbs = curve(points, "next-best-step")
    if quee and nbs:
        matched = sum(accuracy_at(quee, p.cost) >= p.accuracy for p in nbs)
        checks["quee_matches_next_best_step"] = matched >= math.ceil(len(nbs) / 2)
    else:
        checks["quee_matches_next_best_step"] = None

    degradation = summary.get("degradation") or []
    if degradation:
        by_noise: Dict[float, List[Mapping[str, object]]] = {}
        for row in degradation:  # type: ignore[union-attr]
            by_noise.setdefault(float(row["noise"]), []).append(row)
        levels = sorted(by_noise)
        rmse = [float(by_noise[s][0]["rmse"]) for s in levels]
        checks["degradation_rmse_monotone"] = all(a <= b for a, b in zip(rmse, rmse[1:]))
        checks["degradation_gap_widens"] = (
            _gap_widens(by_noise[levels[0]], by_noise[levels[-1]]) if len(levels) > 1 else None
        )
    else:
        checks["degradation_rmse_monotone"] = None
        checks["degradation_gap_widens"] = None
    return checks
