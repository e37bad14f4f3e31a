from __future__ import annotations

from typing import Dict, List

from app.core.evaluation import curve
from app.db.models import get_experiment_run, list_experiment_runs
from app.schemas.experiment import OperatingPoint
from app.utils.errors import InvalidArgumentError


def curves_by_policy(summary: Dict[str, object]) -> Dict[str, List[Dict[str, object]]]:
    """Curve points of a stored summary, one cost-sorted list per policy."""
    points = [OperatingPoint(**p) for p in summary.get("curves") or []]  # type: ignore[arg-type]
    policies = sorted({p.policy for p in points})
    return {policy: [p.to_dict() for p in curve(points, policy)] for policy in policies}


def get_run(run_id: str) -> Dict[str, object] | None:
    record = get_experiment_run(run_id)
    if record is None:
        return None
    summary = record["summary"] if isinstance(record["summary"], dict) else {}
    record["curves"] = curves_by_policy(summary)
    return record


def get_history(limit: int = 20) -> List[Dict[str, object]]:
    if limit < 1:
        raise InvalidArgumentError("history limit must be >= 1")
    return list_experiment_runs(limit=limit)
