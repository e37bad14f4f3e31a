from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Literal, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

RECORD_FORMAT = "quee-records"
RECORD_FORMAT_VERSION = 1
PROB_TOLERANCE = 1e-6

SplitName = Literal["train", "validation", "test"]


@dataclass(frozen=True)
class SampleRecord:
    id: str
    label: int
    probs: Dict[str, np.ndarray] = field(compare=False)

    def vector(self, key: str) -> np.ndarray:
        return self.probs[key]


@dataclass(frozen=True)
class SplitDataset:
    train: Tuple[SampleRecord, ...]
    validation: Tuple[SampleRecord, ...]
    test: Tuple[SampleRecord, ...]
    num_classes: int
    path_keys: Tuple[str, ...]

    def split(self, name: SplitName) -> Tuple[SampleRecord, ...]:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]

    def __len__(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)


class RecordHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format: Literal["quee-records"]
    version: int
    num_classes: int = Field(ge=2)
    paths: List[str] = Field(min_length=1)


class RecordLine(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str = Field(min_length=1)
    label: int
    split: SplitName = "test"
    probs: Dict[str, List[float]]


class SyntheticConfig(BaseModel):
    """Knobs of the stand-in backbone; skill of path pi is alpha*depth + beta*mean_bits - bias."""

    model_config = ConfigDict(frozen=True)

    num_classes: int = Field(default=10, ge=2)
    num_samples: int = Field(default=10_000, ge=3)
    train_fraction: float = Field(default=0.5, gt=0, lt=1)
    validation_fraction: float = Field(default=0.3, gt=0, lt=1)
    test_fraction: float = Field(default=0.2, gt=0, lt=1)
    seed: int = 0
    alpha: float = Field(default=1.0, gt=0)
    beta: float = Field(default=0.25, ge=0)
    bias: float = 3.5
    noise_scale: float = Field(default=0.01, ge=0)
    sharpness_eps: float = Field(default=0.05, gt=0, lt=0.5)

    @model_validator(mode="after")
    def _fractions_sum_to_one(self) -> "SyntheticConfig":
        total = self.train_fraction + self.validation_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {total}")
        if self.sharpness_eps >= 1.0 - 1.0 / self.num_classes:
            raise ValueError("sharpness_eps leaves no room between 1/num_classes and 1")
        return self


@dataclass(frozen=True)
class ProbabilityTable:
    """Dense view of records: probs[path_index, sample_index, class]."""

    ids: Tuple[str, ...]
    labels: np.ndarray
    keys: Tuple[str, ...]
    probs: np.ndarray

    @classmethod
    def from_records(cls, records: Sequence[SampleRecord], keys: Sequence[str]) -> "ProbabilityTable":
        keys = tuple(keys)
        labels = np.array([r.label for r in records], dtype=np.int64)
        probs = np.stack([np.stack([r.probs[k] for r in records]) for k in keys]) if records else np.zeros((len(keys), 0, 0))
        return cls(tuple(r.id for r in records), labels, keys, probs)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_positions", {k: i for i, k in enumerate(self.keys)})

    def index(self, key: str) -> int:
        return self._positions[key]

    def vectors(self, key: str) -> np.ndarray:
        return self.probs[self.index(key)]

    def correct(self, key: str) -> np.ndarray:
        return np.argmax(self.vectors(key), axis=1) == self.labels

    def __len__(self) -> int:
        return len(self.ids)
