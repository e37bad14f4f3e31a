from __future__ import annotations

import json
from pathlib import Path as FilePath
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from sklearn.model_selection import train_test_split

from app.schemas.records import (
    PROB_TOLERANCE,
    RECORD_FORMAT,
    RECORD_FORMAT_VERSION,
    RecordHeader,
    RecordLine,
    SampleRecord,
    SplitDataset,
    SyntheticConfig,
)
from app.schemas.topology import NetworkTopology, Path, PathSet
from app.utils.errors import InvalidArgumentError, SchemaError
from app.utils.logging import stage_logger
from app.utils.seeding import stream, stream_seed

log = stage_logger("dataset")


def _check_vector(record_id: str, key: str, values: Sequence[float], num_classes: int) -> np.ndarray:
    vector = np.asarray(values, dtype=np.float64)
    if vector.shape != (num_classes,):
        raise SchemaError(f"path {key}: expected {num_classes} probabilities, got {vector.size}", record_id)
    if not np.all(np.isfinite(vector)) or np.any(vector < 0):
        raise SchemaError(f"path {key}: probabilities must be finite and >= 0", record_id)
    total = float(vector.sum())
    if abs(total - 1.0) > PROB_TOLERANCE:
        raise SchemaError(f"path {key}: probabilities sum to {total:.6f}", record_id)
    return vector


def validate_record(line: RecordLine, num_classes: int, required_keys: Iterable[str]) -> SampleRecord:
    if not 0 <= line.label < num_classes:
        raise SchemaError(f"label {line.label} outside [0, {num_classes})", line.id)
    probs: Dict[str, np.ndarray] = {}
    for key in required_keys:
        if key not in line.probs:
            raise SchemaError(f"missing path {key}", line.id)
        probs[key] = _check_vector(line.id, key, line.probs[key], num_classes)
    return SampleRecord(id=line.id, label=line.label, probs=probs)


def load_dataset(file_path: str | FilePath, topology: NetworkTopology, path_set: PathSet) -> SplitDataset:
    path = FilePath(file_path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")

    with path.open("r", encoding="utf-8") as fh:
        lines = [raw for raw in fh.read().splitlines() if raw.strip()]
    if not lines:
        raise SchemaError(f"{path} is empty")

    try:
        header = RecordHeader.model_validate_json(lines[0])
    except ValidationError as exc:
        raise SchemaError(f"bad header in {path}: {exc.errors()[0]['msg']}") from exc
    if header.version != RECORD_FORMAT_VERSION:
        raise SchemaError(f"unsupported record format version {header.version}")
    missing = [k for k in path_set.keys if k not in header.paths]
    if missing:
        raise SchemaError(f"header lacks paths {missing}")
    for key in path_set.keys:
        Path.from_key(key).validate_for(topology)

    splits: Dict[str, List[SampleRecord]] = {"train": [], "validation": [], "test": []}
    seen: set[str] = set()
    for number, raw in enumerate(lines[1:], start=2):
        try:
            line = RecordLine.model_validate_json(raw)
        except ValidationError as exc:
            record_id = _peek_id(raw) or f"line {number}"
            raise SchemaError(exc.errors()[0]["msg"], record_id) from exc
        if line.id in seen:
            raise SchemaError("duplicate id", line.id)
        seen.add(line.id)
        splits[line.split].append(validate_record(line, header.num_classes, path_set.keys))

    dataset = SplitDataset(
        train=tuple(splits["train"]),
        validation=tuple(splits["validation"]),
        test=tuple(splits["test"]),
        num_classes=header.num_classes,
        path_keys=path_set.keys,
    )
    log.info("loaded {} records from {} ({} paths)", len(dataset), path, len(path_set))
    return dataset


def _peek_id(raw: str) -> str | None:
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError:
        return None
    return str(payload.get("id")) if isinstance(payload, dict) and "id" in payload else None


def write_dataset(dataset: SplitDataset, file_path: str | FilePath) -> FilePath:
    path = FilePath(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": RECORD_FORMAT,
        "version": RECORD_FORMAT_VERSION,
        "num_classes": dataset.num_classes,
        "paths": list(dataset.path_keys),
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for split in ("train", "validation", "test"):
            for record in dataset.split(split):
                payload = {
                    "id": record.id,
                    "label": record.label,
                    "split": split,
                    "probs": {k: record.probs[k].tolist() for k in dataset.path_keys},
                }
                fh.write(json.dumps(payload) + "\n")
    return path


def _confidence(q: np.ndarray, num_classes: int, eps: float) -> np.ndarray:
    return np.clip(q, 1.0 / num_classes + eps, 1.0 - eps)


def generate_synthetic(config: SyntheticConfig, topology: NetworkTopology, path_set: PathSet) -> SplitDataset:
    """Stand-in backbone: one latent difficulty per sample shared by every path."""
    rng = stream(config.seed, "synthetic")
    n, c = config.num_samples, config.num_classes
    labels = rng.integers(0, c, size=n)
    difficulty = rng.standard_normal(n)

    vectors: Dict[str, np.ndarray] = {}
    for path in path_set:
        path.validate_for(topology)
        skill = config.alpha * path.depth + config.beta * float(np.mean(path.bits)) - config.bias
        q = 1.0 / (1.0 + np.exp(-(skill - difficulty)))
        hit = rng.random(n) < q
        # wrong predictions are uniform over the other classes
        offset = rng.integers(1, c, size=n)
        predicted = np.where(hit, labels, (labels + offset) % c)

        kappa = _confidence(q, c, config.sharpness_eps)
        probs = np.repeat(((1.0 - kappa) / (c - 1))[:, None], c, axis=1)
        probs[np.arange(n), predicted] = kappa
        probs = probs + config.noise_scale * rng.random((n, c))
        vectors[path.key] = probs / probs.sum(axis=1, keepdims=True)

    ids = np.array([f"s{i:06d}" for i in range(n)])
    order = np.arange(n)
    rest_fraction = config.validation_fraction + config.test_fraction
    train_idx, rest_idx = train_test_split(
        order, test_size=rest_fraction, random_state=stream_seed(config.seed, "split-train")
    )
    val_idx, test_idx = train_test_split(
        rest_idx,
        test_size=config.test_fraction / rest_fraction,
        random_state=stream_seed(config.seed, "split-test"),
    )

    def records(idx: np.ndarray) -> Tuple[SampleRecord, ...]:
        return tuple(
            SampleRecord(id=str(ids[i]), label=int(labels[i]), probs={k: v[i].copy() for k, v in vectors.items()})
            for i in sorted(idx)
        )

    dataset = SplitDataset(
        train=records(train_idx),
        validation=records(val_idx),
        test=records(test_idx),
        num_classes=c,
        path_keys=path_set.keys,
    )
    log.info(
        "synthetic dataset: {} train / {} validation / {} test, {} classes, {} paths",
        len(dataset.train), len(dataset.validation), len(dataset.test), c, len(path_set),
    )
    return dataset


def predicted_class(vector: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return int(np.argmax(vector))


def empirical_accuracy(records: Sequence[SampleRecord], path: Path | str) -> float:
    if not records:
        raise InvalidArgumentError("empirical accuracy needs at least one record")
    key = path if isinstance(path, str) else path.key
    hits = sum(predicted_class(r.probs[key]) == r.label for r in records)
    return hits / len(records)


def split_validation(records: Sequence[SampleRecord], seed: int, fit_fraction: float = 0.8) -> Tuple[Tuple[SampleRecord, ...], Tuple[SampleRecord, ...]]:
    """Splits validation records into cluster-fitting and early-stopping parts."""
    if len(records) < 2:
        return tuple(records), tuple(records)
    order = stream(seed, "validation-split").permutation(len(records))
    cut = max(1, min(len(records) - 1, int(round(fit_fraction * len(records)))))
    fit = tuple(records[i] for i in sorted(order[:cut]))
    stop = tuple(records[i] for i in sorted(order[cut:]))
    return fit, stop
