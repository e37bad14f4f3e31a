from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping

import numpy as np


@dataclass(frozen=True)
class PathClusterModel:
    path_key: str
    k: int
    centroids: np.ndarray
    delegates: np.ndarray
    member_counts: np.ndarray
    fallback_delegate: float
    inertia_history: List[float] = field(default_factory=list, compare=False)

    @property
    def active(self) -> np.ndarray:
        return self.member_counts > 0

    def to_dict(self) -> Dict[str, object]:
        return {
            "path": self.path_key,
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "delegates": self.delegates.tolist(),
            "member_counts": self.member_counts.tolist(),
            "fallback": self.fallback_delegate,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, object]) -> "PathClusterModel":
        return cls(
            path_key=str(payload["path"]),
            k=int(payload["k"]),
            centroids=np.asarray(payload["centroids"], dtype=np.float64),
            delegates=np.asarray(payload["delegates"], dtype=np.float64),
            member_counts=np.asarray(payload["member_counts"], dtype=np.int64),
            fallback_delegate=float(payload["fallback"]),
        )


@dataclass(frozen=True)
class DiscretizerModel:
    paths: Dict[str, PathClusterModel]
    k: int
    seed: int

    def __contains__(self, key: object) -> bool:
        return key in self.paths

    def to_dict(self) -> Dict[str, object]:
        return {"k": self.k, "seed": self.seed, "paths": [m.to_dict() for m in self.paths.values()]}

    @classmethod
    def from_dict(cls, payload: Mapping[str, object]) -> "DiscretizerModel":
        models = [PathClusterModel.from_dict(p) for p in payload["paths"]]  # type: ignore[union-attr]
        return cls(paths={m.path_key: m for m in models}, k=int(payload["k"]), seed=int(payload["seed"]))


@dataclass(frozen=True)
class EceReport:
    overall: float
    per_path: Dict[str, float]
    num_bins: int
