from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path as FilePath
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import mean_squared_error

from app.core.path_space import max_path_cost
from app.core.predictor import GatePredictor
from app.schemas.experiment import OperatingPoint
from app.schemas.gates import GateRows
from app.schemas.routing import DecisionTrace
from app.schemas.topology import NetworkTopology
from app.utils.errors import InvalidArgumentError
from app.utils.logging import stage_logger
from app.utils.seeding import stream

log = stage_logger("eval")

CI_MULTIPLIER = 1.96
CURVE_COLUMNS = ("policy", "param", "accuracy", "accuracy_ci", "cost", "cost_ci", "loss01c", "unnormalized_cost")


def bootstrap_ci(outcomes: Sequence[float] | np.ndarray, num_splits: int = 10, seed: int = 0, shuffle: bool = True) -> Tuple[float, float]:
    """Mean of ``outcomes`` and the 95% half-width from ``num_splits`` disjoint subsets."""
    values = np.asarray(outcomes, dtype=np.float64)
    if num_splits < 2:
        raise InvalidArgumentError("bootstrap needs at least 2 splits")
    if len(values) < num_splits:
        raise InvalidArgumentError(f"{len(values)} outcomes cannot fill {num_splits} subsets")
    order = stream(seed, "bootstrap").permutation(len(values)) if shuffle else np.arange(len(values))
    subset_means = np.array([values[part].mean() for part in np.array_split(order, num_splits)])
    half_width = CI_MULTIPLIER * float(subset_means.std()) / np.sqrt(num_splits)
    return float(values.mean()), half_width


def operating_point(
    traces: Sequence[DecisionTrace],
    policy: str,
    param: str,
    topology: NetworkTopology,
    lam: Optional[float] = None,
    num_splits: int = 10,
    seed: int = 0,
) -> OperatingPoint:
    if not traces:
        raise InvalidArgumentError(f"no traces for {policy} {param}")
    correct = np.array([t.correct for t in traces], dtype=np.float64)
    costs = np.array([t.cost for t in traces], dtype=np.float64)
    accuracy, accuracy_ci = bootstrap_ci(correct, num_splits, seed)
    cost, cost_ci = bootstrap_ci(costs, num_splits, seed)
    loss01c = float(np.mean((1.0 - correct) + lam * costs)) if lam is not None else None
    return OperatingPoint(
        policy=policy,
        param=param,
        accuracy=accuracy,
        accuracy_ci=accuracy_ci,
        cost=cost,
        cost_ci=cost_ci,
        loss01c=loss01c,
        unnormalized_cost=cost * max_path_cost(topology),
    )


@dataclass(frozen=True)
class RmseReport:
    per_gate: Dict[int, float]
    overall: float
    rows: int

    def to_dict(self) -> Dict[str, object]:
        return {"per_gate": {str(g): v for g, v in self.per_gate.items()}, "overall": self.overall, "rows": self.rows}


def rows_rmse(gates: Mapping[int, GatePredictor], rows: Mapping[int, GateRows]) -> RmseReport:
    per_gate: Dict[int, float] = {}
    predicted: List[np.ndarray] = []
    targets: List[np.ndarray] = []
    for gate, gate_rows in sorted(rows.items()):
        if len(gate_rows) == 0 or gate not in gates:
            continue
        y = gates[gate].predict(gate_rows.features, gate_rows.encodings)
        per_gate[gate] = float(np.sqrt(mean_squared_error(gate_rows.targets, y)))
        predicted.append(y)
        targets.append(gate_rows.targets)
    if not predicted:
        raise InvalidArgumentError("no rows to score")
    overall = float(np.sqrt(mean_squared_error(np.concatenate(targets), np.concatenate(predicted))))
    return RmseReport(per_gate=per_gate, overall=overall, rows=int(sum(len(t) for t in targets)))


def predictor_rmse(gates: Mapping[int, GatePredictor], test_rows: Mapping[int, GateRows]) -> RmseReport:
    """RMSE between predicted error probabilities and discretized targets on held-out rows."""
    report = rows_rmse(gates, test_rows)
    log.info(
        "predictor RMSE {:.4f} over {} rows ({})",
        report.overall, report.rows, ", ".join(f"gate {g}: {v:.4f}" for g, v in report.per_gate.items()),
    )
    return report


def write_curves(points: Iterable[OperatingPoint], file_path: str | FilePath) -> FilePath:
    path = FilePath(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        for point in points:
            row = point.to_dict()
            writer.writerow({k: "" if row[k] is None else row[k] for k in CURVE_COLUMNS})
    return path


def read_curves(file_path: str | FilePath) -> List[OperatingPoint]:
    path = FilePath(file_path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    points: List[OperatingPoint] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            points.append(
                OperatingPoint(
                    policy=row["policy"],
                    param=row["param"],
                    accuracy=float(row["accuracy"]),
                    accuracy_ci=float(row["accuracy_ci"]),
                    cost=float(row["cost"]),
                    cost_ci=float(row["cost_ci"]),
                    loss01c=float(row["loss01c"]) if row["loss01c"] else None,
                    unnormalized_cost=float(row["unnormalized_cost"]) if row["unnormalized_cost"] else None,
                )
            )
    return points


def curve(points: Sequence[OperatingPoint], policy: str) -> List[OperatingPoint]:
    return sorted((p for p in points if p.policy == policy), key=lambda p: (p.cost, p.accuracy))


def accuracy_at(points: Sequence[OperatingPoint], cost: float) -> float:
    """Linear interpolation of a curve's accuracy at ``cost``, clamped at the ends."""
    if not points:
        raise InvalidArgumentError("empty curve")
    costs = np.array([p.cost for p in points])
    accuracy = np.array([p.accuracy for p in points])
    order = np.argsort(costs, kind="stable")
    return float(np.interp(cost, costs[order], accuracy[order]))
