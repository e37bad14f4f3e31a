from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path as FilePath
from typing import Dict, Iterable, Mapping

from app.core.predictor import GatePredictor
from app.schemas.clusters import DiscretizerModel
from app.schemas.routing import DecisionTrace
from app.schemas.topology import NetworkTopology, PathSet
from app.utils.errors import ModelMismatchError, SchemaError
from app.utils.logging import stage_logger

log = stage_logger("store")

MODEL_FORMAT = "quee-model"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class QueeModel:
    """Everything routing needs at inference: paths, clusters and the trained gates."""

    topology: NetworkTopology
    path_set: PathSet
    num_classes: int
    discretizer: DiscretizerModel
    gates: Dict[int, GatePredictor]
    nbs_gates: Dict[float, Dict[int, GatePredictor]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "topology": self.topology.model_dump(mode="json"),
            "topology_hash": self.topology.topology_hash(),
            "num_classes": self.num_classes,
            "paths": list(self.path_set.keys),
            "discretizer": self.discretizer.to_dict(),
            "gates": {str(g): p.to_dict() for g, p in sorted(self.gates.items())},
            "nbs_gates": {
                repr(lam): {str(g): p.to_dict() for g, p in sorted(gates.items())}
                for lam, gates in sorted(self.nbs_gates.items())
            },
        }

    def nbs_for(self, lam: float) -> Dict[int, GatePredictor]:
        if lam not in self.nbs_gates:
            raise ModelMismatchError(f"no next-best-step predictors trained for lambda={lam:g}; have {sorted(self.nbs_gates)}")
        return self.nbs_gates[lam]


def _gates(payload: Mapping[str, object]) -> Dict[int, GatePredictor]:
    return {int(g): GatePredictor.from_dict(p) for g, p in payload.items()}  # type: ignore[arg-type]


def model_from_dict(payload: Mapping[str, object], expected: NetworkTopology | None = None) -> QueeModel:
    if payload.get("format") != MODEL_FORMAT:
        raise SchemaError(f"not a {MODEL_FORMAT} file")
    if payload.get("version") != MODEL_FORMAT_VERSION:
        raise ModelMismatchError(f"model format version {payload.get('version')} is not supported")

    topology = NetworkTopology.model_validate(payload["topology"])
    if topology.topology_hash() != payload.get("topology_hash"):
        raise ModelMismatchError("stored topology hash does not match the stored topology")
    if expected is not None and expected.topology_hash() != topology.topology_hash():
        raise ModelMismatchError(
            f"model was trained for {topology.canonical_json()}, not {expected.canonical_json()}"
        )

    return QueeModel(
        topology=topology,
        path_set=PathSet.from_keys(payload["paths"], topology),  # type: ignore[arg-type]
        num_classes=int(payload["num_classes"]),  # type: ignore[arg-type]
        discretizer=DiscretizerModel.from_dict(payload["discretizer"]),  # type: ignore[arg-type]
        gates=_gates(payload["gates"]),  # type: ignore[arg-type]
        nbs_gates={float(lam): _gates(g) for lam, g in payload.get("nbs_gates", {}).items()},  # type: ignore[union-attr]
    )


def save_model(model: QueeModel, file_path: str | FilePath) -> FilePath:
    path = FilePath(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict()), encoding="utf-8")
    log.info("model written to {} ({} gates, {} next-best-step sets)", path, len(model.gates), len(model.nbs_gates))
    return path


def load_model(file_path: str | FilePath, expected: NetworkTopology | None = None) -> QueeModel:
    path = FilePath(file_path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc.msg}") from exc
    return model_from_dict(payload, expected)


def write_traces(traces: Iterable[DecisionTrace], file_path: str | FilePath, param: str | None = None, append: bool = False) -> FilePath:
    path = FilePath(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a" if append else "w", encoding="utf-8") as fh:
        for trace in traces:
            payload = trace.to_dict()
            if param is not None:
                payload = {"param": param, **payload}
            fh.write(json.dumps(payload) + "\n")
    return path
