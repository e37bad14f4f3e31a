from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, Iterator, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.utils.errors import InvalidArgumentError


class NetworkTopology(BaseModel):
    """Exit layout of the backbone: FLOPS per block and the available bit widths."""

    model_config = ConfigDict(frozen=True)

    num_exits: int = Field(ge=1)
    block_flops: Tuple[float, ...]
    bit_widths: Tuple[int, ...]

    @field_validator("block_flops")
    @classmethod
    def _positive_flops(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(f <= 0 for f in value):
            raise ValueError("block_flops must all be > 0")
        return value

    @field_validator("bit_widths")
    @classmethod
    def _increasing_bits(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value:
            raise ValueError("bit_widths must not be empty")
        if any(b <= 0 for b in value):
            raise ValueError("bit_widths must be positive")
        if any(a >= b for a, b in zip(value, value[1:])):
            raise ValueError("bit_widths must be strictly increasing")
        return value

    @model_validator(mode="after")
    def _flops_per_exit(self) -> "NetworkTopology":
        if len(self.block_flops) != self.num_exits:
            raise ValueError(f"expected {self.num_exits} block_flops entries, got {len(self.block_flops)}")
        return self

    @property
    def max_bits(self) -> int:
        return self.bit_widths[-1]

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def topology_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


class TopologyConfig(NetworkTopology):
    """Topology section of a config file; adds the path sampling knobs."""

    path_cap: int = Field(default=50, ge=1)
    seed: int = 0
    monotone_only: bool = True

    def topology(self) -> NetworkTopology:
        return NetworkTopology(num_exits=self.num_exits, block_flops=self.block_flops, bit_widths=self.bit_widths)


@dataclass(frozen=True, order=False)
class Path:
    bits: Tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.bits:
            raise InvalidArgumentError("a path needs at least one block")
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))

    @classmethod
    def from_key(cls, key: str) -> "Path":
        try:
            return cls(tuple(int(part) for part in key.split("-")))
        except ValueError as exc:
            raise InvalidArgumentError(f"malformed path key {key!r}") from exc

    @property
    def key(self) -> str:
        return "-".join(str(b) for b in self.bits)

    @property
    def depth(self) -> int:
        return len(self.bits)

    def prefix(self, length: int) -> "Path":
        return Path(self.bits[:length])

    def extend(self, bit: int) -> "Path":
        return Path(self.bits + (bit,))

    def is_monotone(self) -> bool:
        return all(a >= b for a, b in zip(self.bits, self.bits[1:]))

    def validate_for(self, topology: NetworkTopology) -> None:
        if self.depth > topology.num_exits:
            raise InvalidArgumentError(f"path {self.key} is deeper than {topology.num_exits} exits")
        allowed = set(topology.bit_widths)
        if any(b not in allowed for b in self.bits):
            raise InvalidArgumentError(f"path {self.key} uses bit widths outside {topology.bit_widths}")

    def __str__(self) -> str:
        return self.key


def path_order_key(path: Path) -> Tuple[int, Tuple[int, ...]]:
    return (path.depth, tuple(-b for b in path.bits))


@dataclass(frozen=True)
class PathSet:
    """Ordered, duplicate-free collection of candidate classifiers."""

    paths: Tuple[Path, ...]
    topology: NetworkTopology
    _index: Dict[str, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ordered = tuple(sorted(dict.fromkeys(self.paths), key=path_order_key))
        object.__setattr__(self, "paths", ordered)
        object.__setattr__(self, "_index", {p.key: i for i, p in enumerate(ordered)})

    @classmethod
    def from_keys(cls, keys: Sequence[str], topology: NetworkTopology) -> "PathSet":
        return cls(tuple(Path.from_key(k) for k in keys), topology)

    @property
    def keys(self) -> Tuple[str, ...]:
        return tuple(p.key for p in self.paths)

    def index(self, path: Path | str) -> int:
        key = path if isinstance(path, str) else path.key
        return self._index[key]

    def __contains__(self, path: object) -> bool:
        if isinstance(path, Path):
            return path.key in self._index
        return isinstance(path, str) and path in self._index

    def __iter__(self) -> Iterator[Path]:
        return iter(self.paths)

    def __len__(self) -> int:
        return len(self.paths)
