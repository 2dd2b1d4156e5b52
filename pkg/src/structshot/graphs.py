"""Graph and dataset representation, JSON-lines ingestion, and substructure helpers.

Dataset files hold one graph per line:

    {"id": "g1", "split": "train", "label": 3, "num_nodes": 4,
     "edges": [[0, 1], [1, 2]], "features": [[...], ...], "substructures": [[0, 1], [2, 3]]}

"features" and "substructures" are optional. Without features, nodes get a one-hot encoding of
their degree clipped to a cap.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import zlib
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from structshot.errors import DatasetError

logger = logging.getLogger("structshot")

SPLITS = ("train", "validation", "test")
DEFAULT_DEGREE_CAP = 16

Substructures = tuple[tuple[int, ...], ...]


def degree_features(adjacency: np.ndarray, cap: int = DEFAULT_DEGREE_CAP) -> np.ndarray:
    """One-hot node degrees, degrees >= cap - 1 sharing the last column."""
    if cap < 1:
        raise DatasetError(f"degree cap must be positive, got {cap}")
    degrees = np.minimum(adjacency.sum(axis=1).astype(np.int64), cap - 1)
    features = np.zeros((adjacency.shape[0], cap))
    features[np.arange(adjacency.shape[0]), degrees] = 1.0
    return features


@dataclass(frozen=True, eq=False)
class Graph:
    """An undirected graph with node features, a class label, and optional substructures.

    degree_cap is set when features were derived from degrees rather than supplied.
    """

    id: str
    adjacency: np.ndarray
    features: np.ndarray
    label: int
    split: str = "train"
    substructures: Substructures | None = None
    degree_cap: int | None = None

    def __post_init__(self):
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DatasetError(f"graph {self.id}: adjacency must be square and non-empty")
        if not np.isin(a, (0.0, 1.0)).all():
            raise DatasetError(f"graph {self.id}: adjacency entries must be 0 or 1")
        if not np.array_equal(a, a.T):
            raise DatasetError(f"graph {self.id}: adjacency is not symmetric")
        if np.any(np.diag(a)):
            raise DatasetError(f"graph {self.id}: self-loops are not allowed")
        if self.features.ndim != 2 or self.features.shape[0] != a.shape[0]:
            raise DatasetError(
                f"graph {self.id}: features must have {a.shape[0]} rows, "
                f"got shape {self.features.shape}"
            )
        if self.split not in SPLITS:
            raise DatasetError(f"graph {self.id}: unknown split {self.split!r}")
        for sub in self.substructures or ():
            if not sub:
                raise DatasetError(f"graph {self.id}: empty substructure")
            if min(sub) < 0 or max(sub) >= a.shape[0]:
                raise DatasetError(
                    f"graph {self.id}: substructure index out of range [0, {a.shape[0]})"
                )

    @classmethod
    def from_edges(
        cls,
        graph_id: str,
        num_nodes: int,
        edges: Iterable[Sequence[int]],
        label: int,
        split: str = "train",
        features: np.ndarray | None = None,
        substructures: Iterable[Iterable[int]] | None = None,
        degree_cap: int = DEFAULT_DEGREE_CAP,
    ) -> Graph:
        adjacency = np.zeros((num_nodes, num_nodes))
        for u, v in edges:
            adjacency[u, v] = adjacency[v, u] = 1.0
        cap = None
        if features is None:
            features = degree_features(adjacency, degree_cap)
            cap = degree_cap
        subs = None
        if substructures is not None:
            subs = tuple(tuple(sorted(set(int(n) for n in sub))) for sub in substructures)
        return cls(
            id=graph_id,
            adjacency=adjacency,
            features=np.asarray(features, dtype=np.float64),
            label=int(label),
            split=split,
            substructures=subs,
            degree_cap=cap,
        )

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def edges(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(np.triu(self.adjacency))
        return [(int(u), int(v)) for u, v in zip(rows, cols)]

    def induced(self, nodes: Sequence[int]) -> Graph:
        """Subgraph on nodes keeping every edge internal to them; features are sliced, not recomputed."""
        index = np.asarray(sorted(nodes), dtype=np.int64)
        return Graph(
            id=f"{self.id}[{','.join(map(str, index))}]",
            adjacency=self.adjacency[np.ix_(index, index)],
            features=self.features[index],
            label=self.label,
            split=self.split,
        )

    def permuted(self, order: Sequence[int]) -> Graph:
        """Relabel nodes so new node i is old node order[i]."""
        order = np.asarray(order, dtype=np.int64)
        new_index = np.empty_like(order)
        new_index[order] = np.arange(len(order))
        subs = None
        if self.substructures is not None:
            subs = tuple(tuple(sorted(int(new_index[n]) for n in sub)) for sub in self.substructures)
        return dataclasses.replace(
            self,
            adjacency=self.adjacency[np.ix_(order, order)],
            features=self.features[order],
            substructures=subs,
        )

    def with_substructures(self, substructures: Iterable[Iterable[int]]) -> Graph:
        subs = tuple(tuple(sorted(set(int(n) for n in sub))) for sub in substructures)
        return dataclasses.replace(self, substructures=subs)


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """Train/validation/test graph collections whose class sets are pairwise disjoint."""

    train: tuple[Graph, ...]
    validation: tuple[Graph, ...] = ()
    test: tuple[Graph, ...] = ()

    def __post_init__(self):
        class_sets = {name: set(self.classes(name)) for name in SPLITS}
        for i, first in enumerate(SPLITS):
            for second in SPLITS[i + 1 :]:
                shared = class_sets[first] & class_sets[second]
                if shared:
                    raise DatasetError(
                        f"splits {first} and {second} share classes {sorted(shared)}"
                    )
        ids: set[str] = set()
        widths: set[int] = set()
        for g in self.all_graphs():
            if g.id in ids:
                raise DatasetError(f"duplicate graph id {g.id!r}")
            ids.add(g.id)
            widths.add(g.feature_dim)
        if len(widths) > 1:
            raise DatasetError(f"graphs disagree on feature width: {sorted(widths)}")

    def graphs(self, split: str) -> tuple[Graph, ...]:
        if split not in SPLITS:
            raise DatasetError(f"unknown split {split!r}")
        return getattr(self, split)

    def classes(self, split: str) -> list[int]:
        return sorted({g.label for g in self.graphs(split)})

    def all_graphs(self) -> tuple[Graph, ...]:
        return self.train + self.validation + self.test

    @property
    def feature_dim(self) -> int:
        graphs = self.all_graphs()
        if not graphs:
            raise DatasetError("dataset is empty")
        return graphs[0].feature_dim

    @classmethod
    def from_graphs(cls, graphs: Iterable[Graph]) -> DatasetSplit:
        buckets: dict[str, list[Graph]] = {name: [] for name in SPLITS}
        for g in graphs:
            buckets[g.split].append(g)
        return cls(**{name: tuple(items) for name, items in buckets.items()})

    def map_graphs(self, fn) -> DatasetSplit:
        return DatasetSplit(**{name: tuple(fn(g) for g in self.graphs(name)) for name in SPLITS})


def _parse_line(record: dict, line: int, degree_cap: int) -> Graph:
    if not isinstance(record, dict):
        raise DatasetError("expected a JSON object", line)
    for key in ("id", "split", "label", "num_nodes", "edges"):
        if key not in record:
            raise DatasetError(f"missing key {key!r}", line)
    num_nodes = record["num_nodes"]
    if not isinstance(num_nodes, int) or num_nodes < 1:
        raise DatasetError(f"num_nodes must be a positive integer, got {num_nodes!r}", line)
    if not isinstance(record["label"], int):
        raise DatasetError(f"label must be an integer, got {record['label']!r}", line)

    seen: set[tuple[int, int]] = set()
    edges = []
    for edge in record["edges"]:
        if not isinstance(edge, list) or len(edge) != 2 or not all(isinstance(n, int) for n in edge):
            raise DatasetError(f"edge {edge!r} is not a pair of node indices", line)
        u, v = edge
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise DatasetError(f"edge {edge} out of range for {num_nodes} nodes", line)
        if u == v:
            raise DatasetError(f"self-loop {edge}", line)
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DatasetError(
                f"asymmetric edge list: {edge} repeats undirected edge {list(key)}", line
            )
        seen.add(key)
        edges.append((u, v))

    features = record.get("features")
    if features is not None:
        try:
            features = np.asarray(features, dtype=np.float64)
        except (TypeError, ValueError):
            raise DatasetError("features must be a numeric matrix", line) from None
        if features.ndim != 2 or features.shape[0] != num_nodes:
            raise DatasetError(f"features must have {num_nodes} rows of equal width", line)
        if not np.isfinite(features).all():
            raise DatasetError("features must be finite", line)

    substructures = record.get("substructures")
    if substructures is not None:
        for sub in substructures:
            if not isinstance(sub, list) or not sub:
                raise DatasetError("substructures must be non-empty node lists", line)
            for n in sub:
                if not isinstance(n, int) or not 0 <= n < num_nodes:
                    raise DatasetError(f"substructure index {n!r} out of range", line)

    try:
        return Graph.from_edges(
            str(record["id"]),
            num_nodes,
            edges,
            record["label"],
            split=record["split"],
            features=features,
            substructures=substructures,
            degree_cap=degree_cap,
        )
    except DatasetError as e:
        raise DatasetError(str(e), line) from None


def parse_dataset(path: str | Path, degree_cap: int = DEFAULT_DEGREE_CAP) -> DatasetSplit:
    """Read and validate a JSON-lines dataset file."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    graphs = []
    with path.open(encoding="utf-8") as f:
        for line_no, text in enumerate(f, start=1):
            if not text.strip():
                continue
            try:
                record = json.loads(text)
            except json.JSONDecodeError as e:
                raise DatasetError(f"malformed JSON ({e.msg})", line_no) from None
            graphs.append(_parse_line(record, line_no, degree_cap))
    dataset = DatasetSplit.from_graphs(graphs)
    logger.info(
        f"Loaded {len(graphs)} graphs from {path} "
        f"(train={len(dataset.train)}, validation={len(dataset.validation)}, test={len(dataset.test)})"
    )
    return dataset


def graph_record(g: Graph) -> dict:
    record = {
        "id": g.id,
        "split": g.split,
        "label": g.label,
        "num_nodes": g.num_nodes,
        "edges": [list(e) for e in g.edges()],
    }
    if g.degree_cap is None:
        record["features"] = g.features.tolist()
    if g.substructures is not None:
        record["substructures"] = [list(sub) for sub in g.substructures]
    return record


def write_dataset(dataset: DatasetSplit, path: str | Path) -> None:
    """Write dataset as JSON lines; output is a pure function of the dataset."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for g in dataset.all_graphs():
            f.write(json.dumps(graph_record(g), separators=(",", ":")) + "\n")


def count_triangles(g: Graph) -> int:
    """Exact triangle count, trace(A^3) / 6."""
    a = g.adjacency.astype(np.int64)
    return int(np.trace(a @ a @ a)) // 6


def random_split_substructures(
    g: Graph, seed: int | Sequence[int], parts: int = 2
) -> tuple[tuple[int, ...], ...]:
    """Seeded partition of the nodes into parts non-empty subsets."""
    m = g.num_nodes
    if parts < 1:
        raise DatasetError(f"substructure count must be positive, got {parts}")
    if m < parts:
        raise DatasetError(f"graph {g.id}: cannot split {m} node(s) into {parts} substructures")
    rng = np.random.default_rng(seed)
    order = rng.permutation(m)
    cuts = np.sort(rng.choice(np.arange(1, m), size=parts - 1, replace=False))
    return tuple(tuple(sorted(int(n) for n in chunk)) for chunk in np.split(order, cuts))


def graph_seed(seed: int, graph_id: str) -> list[int]:
    """Per-graph seed material, stable across processes."""
    return [seed, zlib.crc32(graph_id.encode("utf-8"))]


def with_substructures(dataset: DatasetSplit, seed: int, parts: int = 2) -> DatasetSplit:
    """Fill in a random parts-way split for every graph that has no substructures."""

    def fill(g: Graph) -> Graph:
        if g.substructures:
            return g
        return g.with_substructures(random_split_substructures(g, graph_seed(seed, g.id), parts))

    return dataset.map_graphs(fill)


def group_by_class(graphs: Iterable[Graph]) -> dict[int, list[Graph]]:
    buckets: dict[int, list[Graph]] = defaultdict(list)
    for g in graphs:
        buckets[g.label].append(g)
    return dict(sorted(buckets.items()))


def holdout_validation(
    graphs: Sequence[Graph], per_class: int, seed: int
) -> tuple[tuple[Graph, ...], tuple[Graph, ...]]:
    """Hold out per_class graphs of every class; returns (training pool, validation pool)."""
    rng = np.random.default_rng(seed)
    kept: list[Graph] = []
    held: list[Graph] = []
    for label, members in group_by_class(graphs).items():
        if len(members) <= per_class:
            raise DatasetError(
                f"class {label} has {len(members)} graphs; holding out {per_class} leaves none"
            )
        order = rng.permutation(len(members))
        held.extend(members[i] for i in order[:per_class])
        kept.extend(members[i] for i in order[per_class:])
    return tuple(kept), tuple(held)


def dataset_stats(dataset: DatasetSplit) -> dict[str, dict]:
    """Per-split class count, graph count, graphs per class and mean node count."""
    stats = {}
    for name in SPLITS:
        graphs = dataset.graphs(name)
        by_class = group_by_class(graphs)
        stats[name] = {
            "classes": len(by_class),
            "graphs": len(graphs),
            "graphs_per_class": {str(k): len(v) for k, v in by_class.items()},
            "mean_nodes": float(np.mean([g.num_nodes for g in graphs])) if graphs else 0.0,
        }
    return stats
