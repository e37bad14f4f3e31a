"""Per-path k-means over predicted probability vectors and per-cluster error delegates."""

from __future__ import annotations

from dataclasses import replace
from typing import Dict, List, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.cluster import kmeans_plusplus

from app.schemas.clusters import DiscretizerModel, EceReport, PathClusterModel
from app.schemas.records import ProbabilityTable, SampleRecord
from app.schemas.topology import Path, PathSet
from app.utils.errors import InvalidArgumentError
from app.utils.logging import stage_logger
from app.utils.seeding import stream

log = stage_logger("cluster")

N_RESTARTS = 10
MAX_ITER = 300
TOL = 1e-6
DEFAULT_ECE_BINS = 15


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkc,nkc->nk", diff, diff)


def lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int = MAX_ITER, tol: float = TOL) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """Runs Lloyd iterations from the given centroids.

    Returns the final centroids, the assignment under them and the inertia
    observed after every assignment step. Empty clusters keep their centroid.
    """
    centroids = centroids.copy()
    history: List[float] = []
    for _ in range(max_iter):
        distances = squared_distances(points, centroids)
        labels = np.argmin(distances, axis=1)
        history.append(float(distances[np.arange(len(points)), labels].sum()))

        onehot = np.eye(len(centroids))[labels]
        counts = onehot.sum(axis=0)
        updated = centroids.copy()
        filled = counts > 0
        updated[filled] = (onehot.T @ points)[filled] / counts[filled, None]
        shift = float(np.sqrt(((updated - centroids) ** 2).sum()))
        centroids = updated
        if shift < tol:
            break

    distances = squared_distances(points, centroids)
    labels = np.argmin(distances, axis=1)
    history.append(float(distances[np.arange(len(points)), labels].sum()))
    return centroids, labels, history


def fit_path(key: str, points: np.ndarray, errors: np.ndarray, k: int, seed: int) -> PathClusterModel:
    rng = stream(seed, f"kmeans:{key}")
    best: Tuple[np.ndarray, np.ndarray, List[float]] | None = None
    for _ in range(N_RESTARTS):
        init, _ = kmeans_plusplus(points, k, random_state=int(rng.integers(0, 2**31 - 1)))
        result = lloyd(points, init)
        if best is None or result[2][-1] < best[2][-1]:
            best = result
    assert best is not None
    centroids, labels, history = best

    fallback = float(errors.mean())
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    misses = np.bincount(labels, weights=errors.astype(np.float64), minlength=k)
    delegates = np.full(k, fallback)
    np.divide(misses, counts, out=delegates, where=counts > 0)
    return PathClusterModel(
        path_key=key,
        k=k,
        centroids=centroids,
        delegates=delegates,
        member_counts=counts,
        fallback_delegate=fallback,
        inertia_history=history,
    )


def fit(records: Sequence[SampleRecord], path_set: PathSet, k: int, seed: int, n_jobs: int = 1) -> DiscretizerModel:
    if not records:
        raise InvalidArgumentError("cluster fitting needs validation records")
    if k < 1:
        raise InvalidArgumentError("K must be >= 1")
    if k > len(records):
        raise InvalidArgumentError(f"K={k} exceeds the {len(records)} fitting samples")

    table = ProbabilityTable.from_records(records, path_set.keys)
    jobs = (
        delayed(fit_path)(key, table.vectors(key), ~table.correct(key), k, seed)
        for key in path_set.keys
    )
    models = Parallel(n_jobs=n_jobs)(jobs)
    empty = sum(int((~m.active).sum()) for m in models)
    log.info("fitted K={} on {} samples for {} paths ({} empty clusters)", k, len(records), len(models), empty)
    return DiscretizerModel(paths={m.path_key: m for m in models}, k=k, seed=seed)


def _path_model(model: DiscretizerModel, path: Path | str) -> PathClusterModel:
    key = path if isinstance(path, str) else path.key
    if key not in model.paths:
        raise InvalidArgumentError(f"discretizer has no clusters for path {key}")
    return model.paths[key]


def assign_clusters(path_model: PathClusterModel, vectors: np.ndarray) -> np.ndarray:
    """Nearest non-empty centroid per row; ties go to the lowest cluster index."""
    vectors = np.atleast_2d(vectors)
    distances = squared_distances(vectors, path_model.centroids)
    distances[:, ~path_model.active] = np.inf
    return np.argmin(distances, axis=1)


def assign_targets(model: DiscretizerModel, path: Path | str, vectors: np.ndarray) -> np.ndarray:
    path_model = _path_model(model, path)
    return path_model.delegates[assign_clusters(path_model, vectors)]


def assign_target(model: DiscretizerModel, path: Path | str, prob_vector: np.ndarray) -> float:
    return float(assign_targets(model, path, np.asarray(prob_vector, dtype=np.float64))[0])


def with_delegate_noise(model: DiscretizerModel, sigma: float, seed: int) -> DiscretizerModel:
    """Copy of ``model`` whose delegates carry zero-mean Gaussian noise, clipped to [0, 1]."""
    if sigma < 0:
        raise InvalidArgumentError("noise level must be >= 0")
    if sigma == 0:
        return model
    rng = stream(seed, f"delegate-noise:{sigma!r}")
    noisy: Dict[str, PathClusterModel] = {}
    for key in sorted(model.paths):
        path_model = model.paths[key]
        delegates = np.clip(path_model.delegates + rng.normal(0.0, sigma, size=path_model.k), 0.0, 1.0)
        noisy[key] = replace(path_model, delegates=delegates)
    return DiscretizerModel(paths=noisy, k=model.k, seed=model.seed)


def path_ece(approx_confidence: np.ndarray, correct: np.ndarray, tie_breaker: np.ndarray, num_bins: int = DEFAULT_ECE_BINS) -> float:
    """Equal-count binned ECE; equal confidences are ordered by ``tie_breaker`` then position."""
    n = len(approx_confidence)
    if n < num_bins:
        raise InvalidArgumentError(f"{n} samples cannot fill {num_bins} bins")
    order = np.lexsort((np.arange(n), tie_breaker, approx_confidence))
    ece = 0.0
    for bin_idx in np.array_split(order, num_bins):
        gap = abs(float(correct[bin_idx].mean()) - float(approx_confidence[bin_idx].mean()))
        ece += len(bin_idx) / n * gap
    return ece


def compute_ece(model: DiscretizerModel, records: Sequence[SampleRecord], path_set: PathSet, num_bins: int = DEFAULT_ECE_BINS) -> EceReport:
    if not records:
        raise InvalidArgumentError("ECE needs test records")
    if len(records) < num_bins:
        raise InvalidArgumentError(f"{len(records)} test samples cannot fill {num_bins} bins")
    table = ProbabilityTable.from_records(records, path_set.keys)
    per_path: Dict[str, float] = {}
    for key in path_set.keys:
        vectors = table.vectors(key)
        approx = 1.0 - assign_targets(model, key, vectors)
        per_path[key] = path_ece(approx, table.correct(key).astype(np.float64), vectors.max(axis=1), num_bins)
    overall = float(np.mean(list(per_path.values())))
    log.info("ECE over {} paths at K={}: {:.4f}", len(per_path), model.k, overall)
    return EceReport(overall=overall, per_path=per_path, num_bins=num_bins)


def entropy(vectors: np.ndarray) -> np.ndarray:
    vectors = np.atleast_2d(vectors)
    safe = np.where(vectors > 0, vectors, 1.0)
    return -(vectors * np.log(safe)).sum(axis=1)


def cluster_profile(model: DiscretizerModel, records: Sequence[SampleRecord], path: Path | str) -> List[Dict[str, float]]:
    """Mean entropy and mean probability of the true class for each cluster's assigned records."""
    path_model = _path_model(model, path)
    table = ProbabilityTable.from_records(records, [path_model.path_key])
    vectors = table.vectors(path_model.path_key)
    assigned = assign_clusters(path_model, vectors)
    ent = entropy(vectors)
    p_true = vectors[np.arange(len(vectors)), table.labels]
    rows: List[Dict[str, float]] = []
    for cluster in range(path_model.k):
        members = assigned == cluster
        if not members.any():
            continue
        rows.append(
            {
                "cluster": cluster,
                "members": int(members.sum()),
                "delegate": float(path_model.delegates[cluster]),
                "mean_entropy": float(ent[members].mean()),
                "mean_p_true": float(p_true[members].mean()),
            }
        )
    return rows
