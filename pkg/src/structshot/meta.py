"""Prototype math: class centroids, nearest-centroid prediction, the episode loss, the
meta-test centering transform, and ensemble prediction."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from structshot.autodiff import (
    Value,
    log_softmax,
    mul,
    reduce_mean,
    reduce_sum,
    reshape,
    scale,
    stack,
)
from structshot.errors import DegenerateEmbeddingError, EpisodeError, ShapeError

DEGENERATE_NORM = 1e-12


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Value) else np.asarray(x, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Centroids:
    """One row per episode class; classes[i] names the class of row i."""

    vectors: Value
    classes: tuple[int, ...]

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.classes):
            raise ShapeError("centroids", [self.vectors.shape], f"{len(self.classes)} classes")

    @property
    def n_way(self) -> int:
        return len(self.classes)


def class_centroids(
    support: Sequence[Value], labels: Sequence[int], classes: Sequence[int] | None = None
) -> Centroids:
    """Mean support embedding per class. labels index classes; every class needs equally many."""
    if len(support) != len(labels):
        raise EpisodeError(f"{len(support)} support embeddings but {len(labels)} labels")
    if classes is None:
        classes = sorted(set(labels))
    members: dict[int, list[Value]] = {c: [] for c in range(len(classes))}
    for vector, label in zip(support, labels):
        if label not in members:
            raise EpisodeError(f"support label {label} outside {len(classes)} episode classes")
        members[label].append(vector)
    sizes = {len(v) for v in members.values()}
    if len(sizes) != 1 or 0 in sizes:
        raise EpisodeError(
            f"ragged support: class sizes {[len(members[c]) for c in sorted(members)]}"
        )
    rows = [reduce_mean(stack(members[c]), axis=0) for c in sorted(members)]
    return Centroids(vectors=stack(rows), classes=tuple(classes))


def squared_distances(queries: Value, centroids: Centroids) -> Value:
    """(Q, N) matrix of squared Euclidean distances."""
    c = centroids.vectors
    if queries.ndim != 2 or queries.shape[1] != c.shape[1]:
        raise ShapeError("squared_distances", [queries.shape, c.shape], "embedding width")
    q_count, width = queries.shape
    diff = reshape(queries, (q_count, 1, width)) - reshape(c, (1, c.shape[0], width))
    return reduce_sum(diff * diff, axis=2)


def _distance_rows(queries, centroids: Centroids) -> np.ndarray:
    q = _array(queries)
    if q.ndim == 1:
        q = q[None, :]
    c = centroids.vectors.data
    if q.shape[1] != c.shape[1]:
        raise ShapeError("predict", [q.shape, c.shape], "embedding width")
    return ((q[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def predict_nearest(query, centroids: Centroids) -> int:
    """Index of the nearest centroid; ties go to the lowest index."""
    if centroids.n_way == 0:
        raise EpisodeError("no centroids to predict against")
    return int(np.argmin(_distance_rows(query, centroids)[0]))


def predict_batch(queries, centroids: Centroids) -> np.ndarray:
    return np.argmin(_distance_rows(queries, centroids), axis=1)


def episode_loss(queries: Value, labels: Sequence[int], centroids: Centroids) -> Value:
    """Mean over queries of -log softmax(-distance)[label]."""
    n_way = centroids.n_way
    if len(labels) != queries.shape[0]:
        raise EpisodeError(f"{queries.shape[0]} query embeddings but {len(labels)} labels")
    if any(not 0 <= y < n_way for y in labels):
        raise EpisodeError(f"query labels {sorted(set(labels))} outside {n_way} episode classes")
    log_probs = log_softmax(-squared_distances(queries, centroids), axis=1)
    picks = np.zeros((len(labels), n_way))
    picks[np.arange(len(labels)), list(labels)] = 1.0
    return scale(reduce_sum(mul(log_probs, Value(picks))), -1.0 / len(labels))


@dataclass(frozen=True, eq=False)
class EmbeddingTransform:
    """Meta-train mean, subtracted at meta-test before optional L2 scaling."""

    mean: np.ndarray
    l2_normalize: bool = True
    epsilon_floor: bool = False

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_transform(
    embeddings: Sequence, l2_normalize: bool = True, epsilon_floor: bool = False
) -> EmbeddingTransform:
    if len(embeddings) == 0:
        raise EpisodeError("cannot fit a transform on zero embeddings")
    matrix = np.stack([_array(e) for e in embeddings])
    return EmbeddingTransform(
        mean=matrix.mean(axis=0), l2_normalize=l2_normalize, epsilon_floor=epsilon_floor
    )


def apply_transform(embedding, transform: EmbeddingTransform) -> np.ndarray:
    """(h - mean) / ||h - mean||; rows of a 2-D input are transformed independently."""
    h = _array(embedding)
    if h.shape[-1] != transform.dim:
        raise ShapeError("apply_transform", [h.shape, transform.mean.shape], "embedding width")
    centered = h - transform.mean
    if not transform.l2_normalize:
        return centered
    norm = np.linalg.norm(centered, axis=-1, keepdims=True)
    if transform.epsilon_floor:
        return centered / np.maximum(norm, DEGENERATE_NORM)
    if (norm < DEGENERATE_NORM).any():
        raise DegenerateEmbeddingError(
            f"centered embedding norm {float(norm.min()):.3e} below {DEGENERATE_NORM:g}; "
            "enable epsilon_floor to clamp it"
        )
    return centered / norm


def ensemble_predict(queries: Sequence, branch_centroids: Sequence[Centroids]) -> int:
    """Average each branch's distances to every class, then take the nearest.

    queries[i] is the query embedding under branch i.
    """
    return int(ensemble_predict_batch([_array(q)[None, :] for q in queries], branch_centroids)[0])


def ensemble_predict_batch(queries: Sequence, branch_centroids: Sequence[Centroids]) -> np.ndarray:
    if not branch_centroids or len(queries) != len(branch_centroids):
        raise EpisodeError(
            f"{len(queries)} query sets for {len(branch_centroids)} branches"
        )
    order = branch_centroids[0].classes
    for centroids in branch_centroids[1:]:
        if centroids.classes != order:
            raise EpisodeError(f"branch class order {centroids.classes} differs from {order}")
    distances = [_distance_rows(q, c) for q, c in zip(queries, branch_centroids)]
    return np.argmin(np.mean(distances, axis=0), axis=1)
