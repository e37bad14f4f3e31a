from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from app.schemas.topology import NetworkTopology, Path, PathSet
from app.utils.errors import InvalidArgumentError
from app.utils.logging import stage_logger

log = stage_logger("paths")


def enumerate_paths(topology: NetworkTopology) -> PathSet:
    paths: List[Path] = []
    for depth in range(1, topology.num_exits + 1):
        paths.extend(Path(bits) for bits in itertools.product(topology.bit_widths, repeat=depth))
    return PathSet(tuple(paths), topology)


def filter_monotone(paths: PathSet) -> PathSet:
    """Drops paths that move from a lower to a higher bit width."""
    return PathSet(tuple(p for p in paths if p.is_monotone()), paths.topology)


def sample_paths(paths: PathSet, cap: int, seed: int) -> PathSet:
    if cap < 1:
        raise InvalidArgumentError("path cap must be >= 1")
    if len(paths) <= cap:
        return paths

    topology = paths.topology
    full = Path((topology.max_bits,) * topology.num_exits)
    # full precision first; single-block paths only as far as the cap allows
    forced = [full] if full in paths else []
    forced.extend(p for p in paths if p.depth == 1 and p != full)
    if len(forced) > cap:
        log.warning("path cap {} below the {} forced paths; keeping {}", cap, len(forced), [p.key for p in forced[:cap]])
        forced = forced[:cap]
    forced_keys = {p.key for p in forced}

    remainder = [p for p in paths if p.key not in forced_keys]
    rng = np.random.default_rng(seed)
    take = cap - len(forced)
    picked = rng.choice(len(remainder), size=take, replace=False) if take > 0 else []
    sampled = forced + [remainder[int(i)] for i in sorted(picked)]
    log.debug("sampled {} of {} paths (forced {})", len(sampled), len(paths), len(forced))
    return PathSet(tuple(sampled), topology)


def unnormalized_path_cost(path: Path, topology: NetworkTopology) -> float:
    """BitOPS of the blocks a path traverses."""
    path.validate_for(topology)
    return float(sum(flops * bits for flops, bits in zip(topology.block_flops, path.bits)))


def max_path_cost(topology: NetworkTopology) -> float:
    return float(sum(flops * topology.max_bits for flops in topology.block_flops))


def path_cost(path: Path, topology: NetworkTopology) -> float:
    return unnormalized_path_cost(path, topology) / max_path_cost(topology)


def continuations(prefix: Path | None, paths: PathSet) -> PathSet:
    if prefix is None:
        return paths
    if prefix.depth > paths.topology.num_exits:
        raise InvalidArgumentError(f"prefix {prefix.key} is deeper than the network")
    head = prefix.bits
    return PathSet(tuple(p for p in paths if p.bits[: len(head)] == head), paths.topology)


def build_path_set(topology: NetworkTopology, cap: int = 50, seed: int = 0, monotone_only: bool = True) -> PathSet:
    paths = enumerate_paths(topology)
    total = len(paths)
    if monotone_only:
        paths = filter_monotone(paths)
    paths = sample_paths(paths, cap, seed)
    log.info("path set ready: {} enumerated, {} kept", total, len(paths))
    return paths


def tie_key(path: Path, cost: float) -> Tuple[float, Tuple[int, ...]]:
    """Secondary ordering for argmins over paths: cheaper first, then greater bits."""
    return (cost, tuple(-b for b in path.bits))


def prefix_closure(paths: PathSet) -> PathSet:
    """Every path plus all of its prefixes: the classifiers routing may evaluate."""
    closed = {p.prefix(d) for p in paths for d in range(1, p.depth + 1)}
    return PathSet(tuple(closed), paths.topology)


def step_options(prefix: Path, paths: PathSet) -> List[Tuple[Path, PathSet]]:
    """Exit-now (the prefix itself, when it is a member) and every one-step extension with members."""
    options: List[Tuple[Path, PathSet]] = []
    if prefix in paths:
        options.append((prefix, PathSet((prefix,), paths.topology)))
    if prefix.depth < paths.topology.num_exits:
        for bit in reversed(paths.topology.bit_widths):
            extended = prefix.extend(bit)
            reachable = continuations(extended, paths)
            if len(reachable):
                options.append((extended, reachable))
    return options


@dataclass(frozen=True)
class CostTable:
    normalized: Dict[str, float]
    unnormalized: Dict[str, float]

    @classmethod
    def build(cls, paths: PathSet) -> "CostTable":
        topology = paths.topology
        return cls(
            normalized={p.key: path_cost(p, topology) for p in paths},
            unnormalized={p.key: unnormalized_path_cost(p, topology) for p in paths},
        )

    def __getitem__(self, key: str) -> float:
        return self.normalized[key]
