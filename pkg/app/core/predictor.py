"""Per-gate error-probability regressors and the rows they are trained on."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Literal, Mapping, Sequence, Tuple

import numpy as np

from app.core.discretizer import assign_targets
from app.core.features import build_feature_matrix, encode_path
from app.core.path_space import CostTable, continuations, prefix_closure, step_options
from app.schemas.clusters import DiscretizerModel
from app.schemas.experiment import TrainingConfig
from app.schemas.gates import GateFeatures, GateRows, PathEncoding
from app.schemas.records import ProbabilityTable, SampleRecord
from app.schemas.topology import NetworkTopology, Path, PathSet, path_order_key
from app.utils.errors import InvalidArgumentError
from app.utils.logging import stage_logger
from app.utils.seeding import stream

log = stage_logger("train")

Output = Literal["sigmoid", "linear"]
Params = Dict[str, np.ndarray]

_PROB_EPS = 1e-12


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _hidden_input(params: Params, xu: np.ndarray, xp: np.ndarray) -> np.ndarray:
    encoded = xp @ params["P"] if "P" in params else xp
    return np.hstack([xu, encoded])


def forward(params: Params, xu: np.ndarray, xp: np.ndarray, output: Output = "sigmoid") -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    x = _hidden_input(params, xu, xp)
    a = x @ params["W1"] + params["b1"]
    h = np.maximum(a, 0.0)
    z = h @ params["w2"] + params["b2"]
    y = _sigmoid(z) if output == "sigmoid" else z
    return y, {"x": x, "a": a, "h": h, "y": y}


def loss_and_gradients(params: Params, xu: np.ndarray, xp: np.ndarray, targets: np.ndarray, output: Output = "sigmoid") -> Tuple[float, Params]:
    """Mean squared error of the gate output and its gradient for every parameter."""
    y, cache = forward(params, xu, xp, output)
    n = len(targets)
    residual = y - targets
    loss = float(np.mean(residual**2))

    dy = 2.0 * residual / n
    dz = dy * y * (1.0 - y) if output == "sigmoid" else dy
    grads: Params = {
        "w2": cache["h"].T @ dz,
        "b2": np.array(dz.sum()),
    }
    dh = np.outer(dz, params["w2"])
    da = dh * (cache["a"] > 0)
    grads["W1"] = cache["x"].T @ da
    grads["b1"] = da.sum(axis=0)
    if "P" in params:
        width = xu.shape[1]
        dx_encoded = da @ params["W1"][width:].T
        grads["P"] = xp.T @ dx_encoded
    return loss, grads


@dataclass(frozen=True)
class GatePredictor:
    gate: int
    params: Params
    input_mean: np.ndarray
    input_scale: np.ndarray
    num_features: int
    output: Output = "sigmoid"
    history: List[Tuple[int, float, float]] = field(default_factory=list, compare=False)

    def _split(self, features: np.ndarray, encodings: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        features = np.atleast_2d(features)
        encodings = np.atleast_2d(encodings)
        if features.shape[1] != self.num_features:
            raise InvalidArgumentError(f"gate {self.gate} expects {self.num_features} features, got {features.shape[1]}")
        raw = np.hstack([features, encodings])
        if raw.shape[1] != len(self.input_mean):
            raise InvalidArgumentError(f"gate {self.gate} expects encodings of length {len(self.input_mean) - self.num_features}")
        scaled = (raw - self.input_mean) / self.input_scale
        return scaled[:, : self.num_features], scaled[:, self.num_features :]

    def predict(self, features: np.ndarray, encodings: np.ndarray) -> np.ndarray:
        xu, xp = self._split(features, encodings)
        y, _ = forward(self.params, xu, xp, self.output)
        if self.output == "sigmoid":
            y = np.clip(y, _PROB_EPS, 1.0 - _PROB_EPS)
        return y

    def to_dict(self) -> Dict[str, object]:
        return {
            "gate": self.gate,
            "output": self.output,
            "num_features": self.num_features,
            "input_mean": self.input_mean.tolist(),
            "input_scale": self.input_scale.tolist(),
            "params": {name: value.tolist() for name, value in self.params.items()},
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, object]) -> "GatePredictor":
        params = {name: np.asarray(value, dtype=np.float64) for name, value in payload["params"].items()}  # type: ignore[union-attr]
        return cls(
            gate=int(payload["gate"]),
            params=params,
            input_mean=np.asarray(payload["input_mean"], dtype=np.float64),
            input_scale=np.asarray(payload["input_scale"], dtype=np.float64),
            num_features=int(payload["num_features"]),
            output=payload["output"],  # type: ignore[arg-type]
        )


def predict_pe(predictor: GatePredictor, features: GateFeatures | np.ndarray, encoding: PathEncoding | np.ndarray) -> float:
    u = features.u if isinstance(features, GateFeatures) else features
    p = encoding.p if isinstance(encoding, PathEncoding) else encoding
    return float(predictor.predict(u, p)[0])


def init_params(input_dim: int, encoding_dim: int, config: TrainingConfig, rng: np.random.Generator, target_mean: float, output: Output) -> Params:
    params: Params = {}
    width = input_dim
    if config.embed_dim > 0:
        params["P"] = rng.normal(0.0, np.sqrt(1.0 / encoding_dim), size=(encoding_dim, config.embed_dim))
        width += config.embed_dim
    else:
        width += encoding_dim
    params["W1"] = rng.normal(0.0, np.sqrt(2.0 / width), size=(width, config.hidden_dim))
    params["b1"] = np.zeros(config.hidden_dim)
    params["w2"] = rng.normal(0.0, np.sqrt(1.0 / config.hidden_dim), size=config.hidden_dim)
    if output == "sigmoid":
        mean = min(max(target_mean, 1e-3), 1 - 1e-3)
        params["b2"] = np.array(np.log(mean / (1.0 - mean)))
    else:
        params["b2"] = np.array(target_mean)
    return params


class AdamW:
    """Adam with decoupled weight decay over a dict of arrays."""

    def __init__(self, params: Params, config: TrainingConfig) -> None:
        self.config = config
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Params, grads: Params) -> None:
        cfg = self.config
        self.step_count += 1
        correction1 = 1.0 - cfg.beta1**self.step_count
        correction2 = 1.0 - cfg.beta2**self.step_count
        for name, grad in grads.items():
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * grad
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * grad**2
            update = (self.m[name] / correction1) / (np.sqrt(self.v[name] / correction2) + cfg.epsilon)
            params[name] = params[name] - cfg.learning_rate * (update + cfg.weight_decay * params[name])


def _mse(params: Params, xu: np.ndarray, xp: np.ndarray, targets: np.ndarray, output: Output) -> float:
    y, _ = forward(params, xu, xp, output)
    return float(np.mean((y - targets) ** 2))


def train_gate(
    rows: GateRows,
    config: TrainingConfig,
    validation_rows: GateRows | None = None,
    seed: int | None = None,
    output: Output = "sigmoid",
) -> GatePredictor:
    """Fits one gate by minibatch AdamW on MSE, keeping the best validation checkpoint."""
    if len(rows) == 0:
        raise InvalidArgumentError(f"gate {rows.gate} has no training rows")
    rng = stream(config.seed if seed is None else seed, f"gate:{rows.gate}:{output}")

    if validation_rows is None or len(validation_rows) == 0:
        order = rng.permutation(len(rows))
        cut = max(1, len(rows) // 10) if len(rows) > 1 else 0
        validation_rows = rows.subset(np.sort(order[:cut])) if cut else rows
        rows = rows.subset(np.sort(order[cut:])) if cut else rows

    num_features = rows.features.shape[1]
    raw = np.hstack([rows.features, rows.encodings])
    if config.normalize_inputs:
        mean = raw.mean(axis=0)
        scale = raw.std(axis=0)
        scale[scale < 1e-12] = 1.0
    else:
        mean = np.zeros(raw.shape[1])
        scale = np.ones(raw.shape[1])

    def split(gate_rows: GateRows) -> Tuple[np.ndarray, np.ndarray]:
        scaled = (np.hstack([gate_rows.features, gate_rows.encodings]) - mean) / scale
        return scaled[:, :num_features], scaled[:, num_features:]

    xu, xp = split(rows)
    vu, vp = split(validation_rows)
    targets = rows.targets.astype(np.float64)
    val_targets = validation_rows.targets.astype(np.float64)

    params = init_params(num_features, xp.shape[1], config, rng, float(targets.mean()), output)
    optimizer = AdamW(params, config)

    best_params = {k: v.copy() for k, v in params.items()}
    best_val = _mse(params, vu, vp, val_targets, output)
    history: List[Tuple[int, float, float]] = [(0, _mse(params, xu, xp, targets, output), best_val)]
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(targets))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            _, grads = loss_and_gradients(params, xu[batch], xp[batch], targets[batch], output)
            optimizer.step(params, grads)
        train_mse = _mse(params, xu, xp, targets, output)
        val_mse = _mse(params, vu, vp, val_targets, output)
        history.append((epoch, train_mse, val_mse))
        if val_mse < best_val:
            best_val = val_mse
            best_params = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    log.info(
        "gate {} ({}): {} rows, {} epochs, best validation MSE {:.5f}",
        rows.gate, output, len(rows), history[-1][0], best_val,
    )
    return GatePredictor(
        gate=rows.gate,
        params=best_params,
        input_mean=mean,
        input_scale=scale,
        num_features=num_features,
        output=output,
        history=history,
    )


def gate_prefixes(path_set: PathSet, gate: int) -> List[Path]:
    """Distinct evaluated prefixes a gate can be reached with (length gate-1)."""
    return sorted({p.prefix(gate - 1) for p in path_set if p.depth >= gate - 1}, key=path_order_key)


def _choose(rng: np.random.Generator, n_rows: int, n_options: int, limit: int) -> np.ndarray:
    mask = np.zeros((n_rows, n_options), dtype=bool)
    if n_options <= limit:
        mask[:] = True
        return mask
    picked = rng.random((n_rows, n_options)).argsort(axis=1)[:, :limit]
    mask[np.arange(n_rows)[:, None], picked] = True
    return mask


def _prefix_blocks(
    table: ProbabilityTable, path_set: PathSet, gate: int, rng: np.random.Generator, n_prefix: int
) -> Iterator[Tuple[Path, np.ndarray, np.ndarray]]:
    prefixes = gate_prefixes(path_set, gate)
    chosen = _choose(rng, len(table), len(prefixes), n_prefix)
    for column, prefix in enumerate(prefixes):
        samples = np.flatnonzero(chosen[:, column])
        if not samples.size:
            continue
        current = table.vectors(prefix.key)[samples]
        previous = table.vectors(prefix.prefix(gate - 2).key)[samples] if gate > 2 else None
        yield prefix, samples, build_feature_matrix(current, previous)


class _RowBuffer:
    def __init__(self, gate: int, num_exits: int, num_features: int) -> None:
        self.gate = gate
        self.num_exits = num_exits
        self.num_features = num_features
        self.features: List[np.ndarray] = []
        self.encodings: List[np.ndarray] = []
        self.targets: List[np.ndarray] = []
        self.ids: List[str] = []
        self.keys: List[str] = []

    def add(self, features: np.ndarray, path: Path, targets: np.ndarray, ids: Sequence[str]) -> None:
        if not len(targets):
            return
        self.features.append(features)
        self.encodings.append(np.tile(encode_path(path, self.num_exits).p, (len(targets), 1)))
        self.targets.append(targets)
        self.ids.extend(ids)
        self.keys.extend([path.key] * len(targets))

    def build(self) -> GateRows:
        if not self.targets:
            return GateRows(
                self.gate,
                np.zeros((0, self.num_features)),
                np.zeros((0, self.num_exits + 1)),
                np.zeros(0),
                (),
                (),
            )
        return GateRows(
            self.gate,
            np.vstack(self.features),
            np.vstack(self.encodings),
            np.concatenate(self.targets),
            tuple(self.ids),
            tuple(self.keys),
        )


def path_targets(table: ProbabilityTable, path_set: PathSet, discretizer: DiscretizerModel) -> Dict[str, np.ndarray]:
    return {key: assign_targets(discretizer, key, table.vectors(key)) for key in path_set.keys}


def build_training_rows(
    records: Sequence[SampleRecord],
    path_set: PathSet,
    discretizer: DiscretizerModel,
    topology: NetworkTopology,
    seed: int,
    n_prefix: int = 2,
    n_candidates: int = 50,
) -> Dict[int, GateRows]:
    """One row per (sample, gate, sampled prefix, candidate continuation)."""
    table = ProbabilityTable.from_records(records, prefix_closure(path_set).keys)
    targets = path_targets(table, path_set, discretizer)
    rng = stream(seed, "rows")
    num_features = 2 * records[0].probs[path_set.keys[0]].size + 4 if records else 0

    rows: Dict[int, GateRows] = {}
    for gate in range(2, topology.num_exits + 1):
        buffer = _RowBuffer(gate, topology.num_exits, num_features)
        for prefix, samples, features in _prefix_blocks(table, path_set, gate, rng, n_prefix):
            candidates = list(continuations(prefix, path_set))
            picked = _choose(rng, len(samples), len(candidates), n_candidates)
            for column, candidate in enumerate(candidates):
                local = np.flatnonzero(picked[:, column])
                buffer.add(
                    features[local],
                    candidate,
                    targets[candidate.key][samples[local]],
                    [table.ids[i] for i in samples[local]],
                )
        rows[gate] = buffer.build()
        log.debug("gate {}: {} rows", gate, len(rows[gate]))
    return rows


def next_step_targets(
    targets: Mapping[str, np.ndarray], reachable: PathSet, costs: CostTable, lam: float
) -> np.ndarray:
    """Best achievable lam*cost + delegate over every path reachable through one step option."""
    scores = np.stack([lam * costs[p.key] + targets[p.key] for p in reachable])
    return scores.min(axis=0)


def build_next_step_rows(
    records: Sequence[SampleRecord],
    path_set: PathSet,
    discretizer: DiscretizerModel,
    topology: NetworkTopology,
    lam: float,
    seed: int,
    n_prefix: int = 2,
) -> Dict[int, GateRows]:
    """One row per (sample, gate, sampled prefix, step option) with the best reachable loss as target."""
    table = ProbabilityTable.from_records(records, prefix_closure(path_set).keys)
    targets = path_targets(table, path_set, discretizer)
    costs = CostTable.build(path_set)
    rng = stream(seed, "rows")
    num_features = 2 * records[0].probs[path_set.keys[0]].size + 4 if records else 0

    rows: Dict[int, GateRows] = {}
    for gate in range(2, topology.num_exits + 1):
        buffer = _RowBuffer(gate, topology.num_exits, num_features)
        for prefix, samples, features in _prefix_blocks(table, path_set, gate, rng, n_prefix):
            sliced = {k: v[samples] for k, v in targets.items()}
            for option, reachable in step_options(prefix, path_set):
                buffer.add(
                    features,
                    option,
                    next_step_targets(sliced, reachable, costs, lam),
                    [table.ids[i] for i in samples],
                )
        rows[gate] = buffer.build()
    return rows


def train_gates(
    rows: Mapping[int, GateRows],
    config: TrainingConfig,
    validation_rows: Mapping[int, GateRows] | None = None,
    output: Output = "sigmoid",
) -> Dict[int, GatePredictor]:
    gates: Dict[int, GatePredictor] = {}
    for gate, gate_rows in sorted(rows.items()):
        if len(gate_rows) == 0:
            log.warning("gate {} has no rows; skipped", gate)
            continue
        held_out = validation_rows.get(gate) if validation_rows else None
        gates[gate] = train_gate(gate_rows, config, held_out, output=output)
    return gates
