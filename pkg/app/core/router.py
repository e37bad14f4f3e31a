from __future__ import annotations

from typing import List, Mapping, Optional, Sequence

import numpy as np

from app.core.dataset import predicted_class
from app.core.features import build_feature_matrix, encode_path
from app.core.path_space import continuations, path_cost, step_options, tie_key
from app.core.predictor import GatePredictor
from app.schemas.records import SampleRecord
from app.schemas.routing import EXIT, DecisionTrace, GateDecision, RoutingPolicy
from app.schemas.topology import NetworkTopology, Path, PathSet
from app.utils.errors import DataError, InvalidArgumentError


def _vector(record: SampleRecord, path: Path) -> np.ndarray:
    try:
        return record.probs[path.key]
    except KeyError:
        raise DataError(f"record {record.id!r} has no probabilities for path {path.key}") from None


def _gate_inputs(record: SampleRecord, prefix: Path) -> np.ndarray:
    previous = _vector(record, prefix.prefix(prefix.depth - 1)) if prefix.depth > 1 else None
    return build_feature_matrix(_vector(record, prefix), previous)


def _gate(gates: Mapping[int, GatePredictor], gate: int) -> GatePredictor:
    if gate not in gates:
        raise InvalidArgumentError(f"no trained predictor for gate {gate}")
    return gates[gate]


def _first_block(topology: NetworkTopology, policy: RoutingPolicy) -> Path:
    bits = topology.max_bits if policy.gate1_bits is None else policy.gate1_bits
    if bits not in topology.bit_widths:
        raise InvalidArgumentError(f"gate 1 bit width {bits} is not available")
    return Path((bits,))


def _argmin(paths: Sequence[Path], scores: Sequence[float], topology: NetworkTopology) -> int:
    return min(range(len(paths)), key=lambda i: (scores[i],) + tie_key(paths[i], path_cost(paths[i], topology)))


def _trace(record: SampleRecord, path: Path, topology: NetworkTopology, decisions: List[GateDecision], evaluations: int = 0) -> DecisionTrace:
    predicted = predicted_class(_vector(record, path))
    return DecisionTrace(
        sample_id=record.id,
        decisions=tuple(decisions),
        path=path.key,
        predicted=predicted,
        label=record.label,
        cost=path_cost(path, topology),
        correct=predicted == record.label,
        evaluations=evaluations,
    )


def route_sample(
    record: SampleRecord,
    gates: Mapping[int, GatePredictor],
    path_set: PathSet,
    topology: NetworkTopology,
    policy: RoutingPolicy,
) -> DecisionTrace:
    """Sequential gating: at every gate take one step towards the path minimising lam*cost + predicted error."""
    prefix = _first_block(topology, policy)
    decisions: List[GateDecision] = []
    evaluations = 0
    while prefix.depth < topology.num_exits:
        gate = prefix.depth + 1
        candidates = list(continuations(prefix, path_set))
        if not candidates:
            raise InvalidArgumentError(f"no candidate path continues {prefix.key}")
        features = _gate_inputs(record, prefix)
        encodings = np.vstack([encode_path(c, topology.num_exits).p for c in candidates])
        predicted_pe = _gate(gates, gate).predict(np.repeat(features, len(candidates), axis=0), encodings)
        evaluations += len(candidates)
        scores = [policy.lam * path_cost(c, topology) + float(pe) for c, pe in zip(candidates, predicted_pe)]

        best = candidates[_argmin(candidates, scores, topology)]
        if best == prefix:
            decisions.append(GateDecision(gate, tuple(c.key for c in candidates), tuple(scores), EXIT))
            break
        step = best.bits[prefix.depth]
        decisions.append(GateDecision(gate, tuple(c.key for c in candidates), tuple(scores), str(step)))
        prefix = prefix.extend(step)
    return _trace(record, prefix, topology, decisions, evaluations)


def route_next_best_step(
    record: SampleRecord,
    gates: Mapping[int, GatePredictor],
    path_set: PathSet,
    topology: NetworkTopology,
    policy: Optional[RoutingPolicy] = None,
) -> DecisionTrace:
    """One predicted best-reachable loss per step option (exit or a bit width); lam is baked into ``gates``."""
    policy = policy or RoutingPolicy(mode="next-best-step")
    prefix = _first_block(topology, policy)
    decisions: List[GateDecision] = []
    evaluations = 0
    while prefix.depth < topology.num_exits:
        gate = prefix.depth + 1
        options = [option for option, _ in step_options(prefix, path_set)]
        if not options:
            raise InvalidArgumentError(f"no step option continues {prefix.key}")
        features = _gate_inputs(record, prefix)
        encodings = np.vstack([encode_path(o, topology.num_exits).p for o in options])
        losses = [float(v) for v in _gate(gates, gate).predict(np.repeat(features, len(options), axis=0), encodings)]
        evaluations += len(options)

        best = options[_argmin(options, losses, topology)]
        if best == prefix:
            decisions.append(GateDecision(gate, tuple(o.key for o in options), tuple(losses), EXIT))
            break
        decisions.append(GateDecision(gate, tuple(o.key for o in options), tuple(losses), str(best.bits[-1])))
        prefix = best
    return _trace(record, prefix, topology, decisions, evaluations)


def route_oracle(record: SampleRecord, path_set: PathSet, topology: NetworkTopology, lam: float) -> DecisionTrace:
    """Per-sample argmin of lam*cost + true error indicator over every path."""
    paths = list(path_set)
    errors = [float(predicted_class(_vector(record, p)) != record.label) for p in paths]
    scores = [lam * path_cost(p, topology) + e for p, e in zip(paths, errors)]
    return _trace(record, paths[_argmin(paths, scores, topology)], topology, [])


def route_threshold(record: SampleRecord, path_set: PathSet, topology: NetworkTopology, threshold: float) -> DecisionTrace:
    """Full-precision early exit: leave at the first exit whose max probability exceeds ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise InvalidArgumentError(f"threshold {threshold} outside [0, 1]")
    decisions: List[GateDecision] = []
    path = Path((topology.max_bits,))
    while True:
        confidence = float(_vector(record, path).max())
        if confidence > threshold or path.depth == topology.num_exits:
            decisions.append(GateDecision(path.depth + 1, (path.key,), (confidence,), EXIT))
            break
        decisions.append(GateDecision(path.depth + 1, (path.key,), (confidence,), str(topology.max_bits)))
        path = path.extend(topology.max_bits)
    return _trace(record, path, topology, decisions)


def route_fixed(record: SampleRecord, path: Path, topology: NetworkTopology) -> DecisionTrace:
    path.validate_for(topology)
    return _trace(record, path, topology, [])


def route(
    record: SampleRecord,
    policy: RoutingPolicy,
    path_set: PathSet,
    topology: NetworkTopology,
    gates: Mapping[int, GatePredictor] | None = None,
) -> DecisionTrace:
    if policy.mode == "quee":
        return route_sample(record, gates or {}, path_set, topology, policy)
    if policy.mode == "next-best-step":
        return route_next_best_step(record, gates or {}, path_set, topology, policy)
    if policy.mode == "oracle":
        return route_oracle(record, path_set, topology, policy.lam)
    if policy.mode == "threshold-exit":
        return route_threshold(record, path_set, topology, float(policy.threshold))
    return route_fixed(record, Path.from_key(str(policy.fixed_path)), topology)


def route_records(
    records: Sequence[SampleRecord],
    policy: RoutingPolicy,
    path_set: PathSet,
    topology: NetworkTopology,
    gates: Mapping[int, GatePredictor] | None = None,
) -> List[DecisionTrace]:
    return [route(record, policy, path_set, topology, gates) for record in records]
