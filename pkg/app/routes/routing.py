from __future__ import annotations

import os
import re
from pathlib import Path
from typing import Dict, Optional

from pydantic import ValidationError

from app.core.dataset import load_dataset
from app.core.model_store import load_model
from app.core.path_space import prefix_closure
from app.core.router import route_records
from app.schemas.routing import RoutingPolicy
from app.utils.errors import InvalidArgumentError
from app.utils.logging import stage_logger

log = stage_logger("api")

MODELS_DIR = Path(os.environ.get("QUEE_MODELS_DIR", "output/models"))
MODEL_NAME = re.compile(r"[A-Za-z0-9][A-Za-z0-9_.-]*")


def resolve_model(name: str, models_dir: str | Path | None = None) -> Path:
    """Maps a client-supplied model name onto a file inside the models directory."""
    if not MODEL_NAME.fullmatch(name) or ".." in name:
        raise InvalidArgumentError(f"invalid model name {name!r}")
    root = Path(models_dir) if models_dir is not None else MODELS_DIR
    path = root / (name if name.endswith(".json") else f"{name}.json")
    if not path.is_file():
        raise FileNotFoundError(f"unknown model {name!r}")
    return path


def build_policy(mode: str, lam: float = 0.0, threshold: Optional[float] = None, fixed_path: Optional[str] = None) -> RoutingPolicy:
    try:
        return RoutingPolicy(mode=mode, lam=lam, threshold=threshold, fixed_path=fixed_path)
    except ValidationError as exc:
        raise InvalidArgumentError(exc.errors()[0]["msg"]) from exc


def route_record_file(
    records_path: str | Path,
    model_path: str | Path,
    mode: str = "quee",
    lam: float = 0.0,
    threshold: Optional[float] = None,
    fixed_path: Optional[str] = None,
) -> Dict[str, object]:
    """Routes every record of an uploaded file with a stored model."""
    policy = build_policy(mode, lam, threshold, fixed_path)
    model = load_model(model_path)
    dataset = load_dataset(records_path, model.topology, prefix_closure(model.path_set))
    records = dataset.train + dataset.validation + dataset.test
    if not records:
        raise InvalidArgumentError("the record file holds no records")

    gates = model.nbs_for(policy.lam) if policy.mode == "next-best-step" else model.gates
    traces = route_records(records, policy, model.path_set, model.topology, gates)
    accuracy = sum(t.correct for t in traces) / len(traces)
    cost = sum(t.cost for t in traces) / len(traces)
    log.info("routed {} records with {}: accuracy {:.4f} cost {:.4f}", len(traces), policy.label, accuracy, cost)
    return {
        "policy": policy.model_dump(),
        "count": len(traces),
        "accuracy": accuracy,
        "cost": cost,
        "traces": [t.to_dict() for t in traces],
    }
