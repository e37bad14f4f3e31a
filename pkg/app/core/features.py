from __future__ import annotations

import numpy as np

from app.core.discretizer import entropy
from app.schemas.gates import GateFeatures, PathEncoding
from app.schemas.topology import Path
from app.utils.errors import InvalidArgumentError


def feature_dim(num_classes: int) -> int:
    return 2 * num_classes + 4


def build_feature_matrix(current: np.ndarray, previous: np.ndarray | None) -> np.ndarray:
    current = np.atleast_2d(np.asarray(current, dtype=np.float64))
    previous = current if previous is None else np.atleast_2d(np.asarray(previous, dtype=np.float64))
    if previous.shape != current.shape:
        raise InvalidArgumentError(f"probability shapes differ: {current.shape} vs {previous.shape}")
    return np.hstack(
        [
            current,
            previous,
            entropy(current)[:, None],
            entropy(previous)[:, None],
            previous.max(axis=1, keepdims=True),
            current.max(axis=1, keepdims=True),
        ]
    )


def build_features(probs_current: np.ndarray, probs_previous: np.ndarray | None, num_classes: int) -> GateFeatures:
    """Gate input; with no earlier classifier the current vector fills both slots."""
    current = np.asarray(probs_current, dtype=np.float64)
    if current.shape != (num_classes,):
        raise InvalidArgumentError(f"current vector has {current.size} entries, expected {num_classes}")
    if probs_previous is not None and np.asarray(probs_previous).shape != (num_classes,):
        raise InvalidArgumentError(f"previous vector has {np.asarray(probs_previous).size} entries, expected {num_classes}")
    return GateFeatures(build_feature_matrix(current, probs_previous)[0])


def encode_path(path: Path, num_exits: int) -> PathEncoding:
    if path.depth > num_exits:
        raise InvalidArgumentError(f"path {path.key} is longer than {num_exits} exits")
    encoding = np.zeros(num_exits + 1, dtype=np.float64)
    encoding[: path.depth] = path.bits
    encoding[-1] = path.depth
    return PathEncoding(encoding)
