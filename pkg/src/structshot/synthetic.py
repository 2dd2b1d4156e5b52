"""Synthetic triangle-count datasets: random graphs labelled by their exact triangle count."""

from __future__ import annotations

import logging

import networkx as nx
import numpy as np

from structshot.errors import DatasetError
from structshot.graphs import DEFAULT_DEGREE_CAP, DatasetSplit, Graph, count_triangles

logger = logging.getLogger("structshot")

DEFAULT_NODE_RANGE = (6, 20)
DEFAULT_EDGE_PROB = 0.25
ATTEMPTS_PER_CLASS = 1_000_000
MAX_CLASSES = 10


def default_train_classes(num_classes: int) -> int:
    """Six train classes out of ten, scaled to other class counts; at least one test class."""
    if num_classes <= 1:
        return num_classes
    return min(num_classes - 1, max(1, round(0.6 * num_classes)))


def generate_triangles_dataset(
    num_classes: int,
    graphs_per_class: int,
    node_range: tuple[int, int] = DEFAULT_NODE_RANGE,
    edge_prob: float = DEFAULT_EDGE_PROB,
    seed: int = 0,
    train_classes: int | None = None,
    validation_classes: int = 0,
    degree_cap: int = DEFAULT_DEGREE_CAP,
    attempts_per_class: int = ATTEMPTS_PER_CLASS,
) -> DatasetSplit:
    """Rejection-sample G(n, p) graphs until classes 1..num_classes each hold graphs_per_class.

    A graph's label is its triangle count. Classes 1..train_classes go to train, the next
    validation_classes to validation, the rest to test.
    """
    if not 1 <= num_classes <= MAX_CLASSES:
        raise DatasetError(f"num_classes must be in [1, {MAX_CLASSES}], got {num_classes}")
    if graphs_per_class < 1:
        raise DatasetError(f"graphs_per_class must be positive, got {graphs_per_class}")
    low, high = node_range
    if not 1 <= low <= high:
        raise DatasetError(f"invalid node range {node_range}")
    if not 0.0 < edge_prob < 1.0:
        raise DatasetError(f"edge_prob must be in (0, 1), got {edge_prob}")
    if train_classes is None:
        train_classes = default_train_classes(num_classes)
    if train_classes + validation_classes > num_classes:
        raise DatasetError(
            f"{train_classes} train + {validation_classes} validation classes exceed {num_classes}"
        )

    rng = np.random.default_rng(seed)
    buckets: dict[int, list[Graph]] = {c: [] for c in range(1, num_classes + 1)}
    budget = attempts_per_class * num_classes
    attempts = 0
    while any(len(b) < graphs_per_class for b in buckets.values()):
        if attempts >= budget:
            missing = next(c for c, b in buckets.items() if len(b) < graphs_per_class)
            raise DatasetError(
                f"class {missing} unreachable: {len(buckets[missing])}/{graphs_per_class} graphs "
                f"after {attempts} attempts (nodes {node_range}, p={edge_prob})"
            )
        attempts += 1
        n = int(rng.integers(low, high + 1))
        nx_graph = nx.gnp_random_graph(n, edge_prob, seed=int(rng.integers(2**31)))
        candidate = Graph.from_edges("candidate", n, nx_graph.edges(), label=0, degree_cap=degree_cap)
        triangles = count_triangles(candidate)
        bucket = buckets.get(triangles)
        if bucket is None or len(bucket) >= graphs_per_class:
            continue
        if triangles <= train_classes:
            split = "train"
        elif triangles <= train_classes + validation_classes:
            split = "validation"
        else:
            split = "test"
        bucket.append(
            Graph.from_edges(
                f"tri{triangles:02d}-{len(bucket):04d}",
                n,
                nx_graph.edges(),
                label=triangles,
                split=split,
                degree_cap=degree_cap,
            )
        )

    logger.info(
        f"Generated {num_classes * graphs_per_class} triangle graphs in {attempts} attempts (seed={seed})"
    )
    return DatasetSplit.from_graphs(g for c in sorted(buckets) for g in buckets[c])
