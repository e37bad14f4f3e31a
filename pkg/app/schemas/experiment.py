from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.schemas.records import SyntheticConfig
from app.schemas.topology import TopologyConfig


def default_lambdas() -> List[float]:
    return [0.0] + [float(x) for x in np.logspace(-3, 1, 16)]


def default_thresholds() -> List[float]:
    return [round(0.05 * i, 2) for i in range(21)]


class TrainingConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    hidden_dim: int = Field(default=16, ge=1)
    embed_dim: int = Field(default=0, ge=0)
    learning_rate: float = Field(default=1e-3, gt=0)
    weight_decay: float = Field(default=1e-4, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)
    batch_size: int = Field(default=512, ge=1)
    max_epochs: int = Field(default=10, ge=1)
    patience: int = Field(default=3, ge=1)
    n_prefix: int = Field(default=2, ge=1)
    n_candidates: int = Field(default=50, ge=1)
    normalize_inputs: bool = True
    seed: int = 0


class ClusterConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: int = Field(default=20, ge=1)
    seed: int = 0
    ece_bins: int = Field(default=15, ge=1)
    n_jobs: int = 1


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    topology: TopologyConfig = Field(
        default_factory=lambda: TopologyConfig(num_exits=3, block_flops=(1.0, 1.0, 1.0), bit_widths=(4, 8))
    )
    synthetic: Optional[SyntheticConfig] = Field(default_factory=SyntheticConfig)
    dataset_file: Optional[str] = None
    clusters: ClusterConfig = Field(default_factory=ClusterConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    lambdas: Tuple[float, ...] = Field(default_factory=lambda: tuple(default_lambdas()))
    thresholds: Tuple[float, ...] = Field(default_factory=lambda: tuple(default_thresholds()))
    nbs_lambdas: Tuple[float, ...] = (0.0, 0.05, 0.2, 0.5, 1.0)
    noise_levels: Tuple[float, ...] = (0.0, 0.1, 0.3)
    k_list: Tuple[int, ...] = (1, 5, 20, 50)
    bootstrap_splits: int = Field(default=10, ge=2)
    gate1_bits: Optional[int] = None
    output_dir: str = "output/run"
    seed: int = 0

    @field_validator("lambdas", "nbs_lambdas")
    @classmethod
    def _sorted_nonnegative(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not value:
            raise ValueError("lambda list must not be empty")
        if any(v < 0 for v in value):
            raise ValueError("lambda values must be >= 0")
        if list(value) != sorted(value):
            raise ValueError("lambda list must be sorted ascending")
        return value

    @field_validator("thresholds")
    @classmethod
    def _unit_thresholds(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(not 0.0 <= t <= 1.0 for t in value):
            raise ValueError("thresholds must lie in [0, 1]")
        return value

    @model_validator(mode="after")
    def _one_source(self) -> "ExperimentConfig":
        if self.dataset_file is None and self.synthetic is None:
            raise ValueError("either synthetic or dataset_file is required")
        if self.gate1_bits is not None and self.gate1_bits not in self.topology.bit_widths:
            raise ValueError(f"gate1_bits {self.gate1_bits} is not one of {self.topology.bit_widths}")
        return self

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class OperatingPoint:
    policy: str
    param: str
    accuracy: float
    accuracy_ci: float
    cost: float
    cost_ci: float
    loss01c: Optional[float] = None
    unnormalized_cost: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)
