"""N-way K-shot episode sampling."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from structshot.errors import EpisodeError
from structshot.graphs import Graph, group_by_class

logger = logging.getLogger("structshot")


@dataclass(frozen=True, eq=False)
class EpisodeTask:
    """One sampled task. Support and query are class-major: class 0's graphs first.

    classes[i] is the dataset label of episode class i.
    """

    classes: tuple[int, ...]
    support: tuple[Graph, ...]
    query: tuple[Graph, ...]
    k_shot: int
    q_query: int

    @property
    def n_way(self) -> int:
        return len(self.classes)

    @property
    def class_index(self) -> dict[int, int]:
        return {label: i for i, label in enumerate(self.classes)}

    @property
    def support_labels(self) -> list[int]:
        return [i for i in range(self.n_way) for _ in range(self.k_shot)]

    @property
    def query_labels(self) -> list[int]:
        return [i for i in range(self.n_way) for _ in range(self.q_query)]


def eligible_classes(graphs: Sequence[Graph], need: int) -> dict[int, list[Graph]]:
    """Classes of graphs with at least `need` members, in label order."""
    return {c: members for c, members in group_by_class(graphs).items() if len(members) >= need}


def _require_eligible(
    graphs: Sequence[Graph], n_way: int, k_shot: int, q_query: int
) -> dict[int, list[Graph]]:
    if n_way < 1 or k_shot < 1 or q_query < 1:
        raise EpisodeError(f"N, K and Q must be positive, got N={n_way} K={k_shot} Q={q_query}")
    need = k_shot + q_query
    eligible = eligible_classes(graphs, need)
    if len(eligible) < n_way:
        sizes = [len(members) for members in group_by_class(graphs).values()]
        raise EpisodeError(
            f"need {n_way} classes with at least {need} graphs each (K={k_shot} + Q={q_query}), "
            f"found {len(eligible)} of {len(sizes)} (largest has {max(sizes, default=0)} available)"
        )
    return eligible


def check_feasible(graphs: Sequence[Graph], n_way: int, k_shot: int, q_query: int) -> None:
    """Raise EpisodeError unless N-way (K+Q)-per-class episodes can be drawn from graphs."""
    _require_eligible(graphs, n_way, k_shot, q_query)


def sample_episode(
    graphs: Sequence[Graph],
    n_way: int,
    k_shot: int,
    q_query: int,
    rng: np.random.Generator,
) -> EpisodeTask:
    """Sample N classes uniformly without replacement, then K+Q graphs per class.

    Only classes holding at least K+Q graphs take part; smaller classes are never drawn.
    The first K graphs drawn for a class are its support, the next Q its query.
    """
    by_class = _require_eligible(graphs, n_way, k_shot, q_query)
    labels = list(by_class)
    chosen = [labels[i] for i in rng.choice(len(labels), size=n_way, replace=False)]

    support: list[Graph] = []
    query: list[Graph] = []
    for label in chosen:
        members = by_class[label]
        picked = rng.choice(len(members), size=k_shot + q_query, replace=False)
        support.extend(members[i] for i in picked[:k_shot])
        query.extend(members[i] for i in picked[k_shot:])

    logger.debug(f"Episode classes {chosen}: {len(support)} support, {len(query)} query")
    return EpisodeTask(
        classes=tuple(chosen),
        support=tuple(support),
        query=tuple(query),
        k_shot=k_shot,
        q_query=q_query,
    )
