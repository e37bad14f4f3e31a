from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np


@dataclass(frozen=True)
class GateFeatures:
    """current probs | previous probs | H(current) | H(previous) | max(previous) | max(current)"""

    u: np.ndarray


@dataclass(frozen=True)
class PathEncoding:
    """bits padded with zeros to E entries, followed by the path depth."""

    p: np.ndarray


@dataclass(frozen=True)
class TrainingRow:
    gate: int
    features: np.ndarray
    encoding: np.ndarray
    target: float


@dataclass(frozen=True)
class GateRows:
    """Column-wise rows of one gate; ``sample_ids``/``path_keys`` say where each row came from."""

    gate: int
    features: np.ndarray
    encodings: np.ndarray
    targets: np.ndarray
    sample_ids: Tuple[str, ...]
    path_keys: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.targets)

    def __iter__(self) -> Iterator[TrainingRow]:
        for i in range(len(self)):
            yield TrainingRow(self.gate, self.features[i], self.encodings[i], float(self.targets[i]))

    def with_targets(self, targets: np.ndarray) -> "GateRows":
        return GateRows(self.gate, self.features, self.encodings, targets, self.sample_ids, self.path_keys)

    def subset(self, index: np.ndarray) -> "GateRows":
        return GateRows(
            self.gate,
            self.features[index],
            self.encodings[index],
            self.targets[index],
            tuple(self.sample_ids[i] for i in index),
            tuple(self.path_keys[i] for i in index),
        )
