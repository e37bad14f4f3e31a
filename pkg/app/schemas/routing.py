from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

Mode = Literal["quee", "next-best-step", "oracle", "threshold-exit", "fixed-path"]
EXIT = "exit"


class RoutingPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: Mode = "quee"
    lam: float = Field(default=0.0, ge=0)
    threshold: Optional[float] = Field(default=None, ge=0, le=1)
    fixed_path: Optional[str] = None
    gate1_bits: Optional[int] = None

    @model_validator(mode="after")
    def _mode_parameters(self) -> "RoutingPolicy":
        if self.mode == "threshold-exit" and self.threshold is None:
            raise ValueError("threshold-exit mode needs a threshold")
        if self.mode == "fixed-path" and not self.fixed_path:
            raise ValueError("fixed-path mode needs fixed_path")
        return self

    @property
    def label(self) -> str:
        if self.mode == "threshold-exit":
            return f"threshold={self.threshold:g}"
        if self.mode == "fixed-path":
            return f"path={self.fixed_path}"
        return f"lambda={self.lam:g}"


@dataclass(frozen=True)
class GateDecision:
    gate: int
    candidates: Tuple[str, ...]
    scores: Tuple[float, ...]
    chosen: str

    def to_dict(self) -> Dict[str, object]:
        return {"gate": self.gate, "candidates": list(self.candidates), "scores": list(self.scores), "chosen": self.chosen}


@dataclass(frozen=True)
class DecisionTrace:
    sample_id: str
    decisions: Tuple[GateDecision, ...]
    path: str
    predicted: int
    label: int
    cost: float
    correct: bool
    evaluations: int = 0

    def to_dict(self) -> Dict[str, object]:
        return {
            "id": self.sample_id,
            "path": self.path,
            "cost": self.cost,
            "predicted": self.predicted,
            "label": self.label,
            "correct": self.correct,
            "evaluations": self.evaluations,
            "decisions": [d.to_dict() for d in self.decisions],
        }
