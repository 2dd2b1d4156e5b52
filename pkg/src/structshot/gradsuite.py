"""Finite-difference verification of every differentiable piece at seeded random points.

Each case builder takes an rng and returns (f, leaves): a zero-argument scalar function and the
Values to perturb. run_grad_suite evaluates every registered case at several points.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from structshot import autodiff as ad
from structshot.attention import KINDS, AttentionKind, aggregate, attention_weights, init_attention
from structshot.autodiff import Value, grad_check_params, mul, no_grad, reduce_sum
from structshot.encoder import GinConfig, GinParams, gin_layer_forward
from structshot.episodes import EpisodeTask
from structshot.fusion import ModelVariant, init_model
from structshot.graphs import Graph, random_split_substructures
from structshot.params import trainable
from structshot.trainer import task_loss

logger = logging.getLogger("structshot")

GRAD_TOLERANCE = 1e-4
DEFAULT_POINTS = 10

Case = Callable[[np.random.Generator], tuple[Callable[[], Value], list[Value]]]

# Case registry: name -> builder
CASES: dict[str, Case] = {}


def case(name: str):
    """Decorator to register a grad-check case."""

    def decorator(func: Case):
        CASES[name] = func
        return func

    return decorator


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    points: int

    @property
    def passed(self) -> bool:
        return self.max_error < GRAD_TOLERANCE


def _weighted_sum(fn: Callable[[], Value], rng: np.random.Generator) -> Callable[[], Value]:
    """Reduce fn's output to a scalar with fixed random weights."""
    with no_grad():
        shape = fn().shape
    weights = Value(rng.normal(size=shape))
    return lambda: reduce_sum(mul(fn(), weights))


def _primitive(name: str, fn, shapes, low: float = -1.0, high: float = 1.0) -> None:
    def build(rng: np.random.Generator):
        leaves = [Value(rng.uniform(low, high, size=s)) for s in shapes]
        return _weighted_sum(lambda: fn(*leaves), rng), leaves

    CASES[f"primitive:{name}"] = build


_primitive("matmul", ad.matmul, [(3, 4), (4, 2)])
_primitive("matvec", ad.matmul, [(3, 4), (4,)])
_primitive("add", ad.add, [(3, 4), (4,)])
_primitive("sub", ad.sub, [(3, 4), (3, 1)])
_primitive("mul", ad.mul, [(3, 4), (3, 4)])
_primitive("div", ad.div, [(3, 4), (3, 4)], low=0.5, high=1.5)
_primitive("scale", lambda a: ad.scale(a, 2.5), [(3, 4)])
_primitive("relu", ad.relu, [(3, 4)])
_primitive("tanh", ad.tanh, [(3, 4)])
_primitive("exp", ad.exp, [(3, 4)])
_primitive("log", ad.log, [(3, 4)], low=0.5, high=2.0)
_primitive("sqrt", ad.sqrt, [(3, 4)], low=0.5, high=2.0)
_primitive("softmax", lambda a: ad.softmax(a, axis=-1), [(3, 4)])
_primitive("concat", lambda a, b: ad.concat([a, b], axis=0), [(2, 3), (1, 3)])
_primitive("sum", lambda a: ad.reduce_sum(a, axis=1), [(3, 4)])
_primitive("mean", lambda a: ad.reduce_mean(a, axis=0, keepdims=True), [(3, 4)])
_primitive("max", lambda a: ad.reduce_max(a, axis=1), [(3, 4)])
_primitive("l2_norm", lambda a: ad.l2_norm(a, axis=1), [(3, 4)])
_primitive("add_row", ad.add_row, [(3, 4), (4,)])
_primitive("transpose", ad.transpose, [(3, 4)])
_primitive("gather_rows", lambda a: ad.gather_rows(a, [2, 0, 2]), [(3, 4)])
_primitive("reshape", lambda a: ad.reshape(a, (3, 4)), [(2, 6)])
_primitive("log_softmax", lambda a: ad.log_softmax(a, axis=1), [(3, 4)])


def _attention_case(kind_name: str) -> Case:
    def build(rng: np.random.Generator):
        kind = AttentionKind(kind_name, heads=2, layers=1, depth=2)
        sequence = Value(rng.normal(size=(3, 4)))
        params = init_attention(kind, 4, 3, 4, rng)
        if kind.produces_weights:
            fn = lambda: attention_weights(kind, sequence, params)  # noqa: E731
        else:
            fn = lambda: aggregate(kind, sequence, params)  # noqa: E731
        return _weighted_sum(fn, rng), [sequence, *trainable(params)]

    return build


for _name in KINDS:
    CASES[f"attention:{_name}"] = _attention_case(_name)


def _random_graph(rng: np.random.Generator, graph_id: str, label: int, nodes: int = 5) -> Graph:
    upper = np.triu(rng.random((nodes, nodes)) < 0.5, k=1)
    edges = [(int(u), int(v)) for u, v in zip(*np.nonzero(upper))]
    g = Graph.from_edges(graph_id, nodes, edges, label=label, degree_cap=4)
    return g.with_substructures(random_split_substructures(g, int(rng.integers(2**31))))


@case("gin:layer")
def _gin_layer(rng: np.random.Generator):
    g = _random_graph(rng, "probe", 0)
    layer = GinParams.init(GinConfig(num_layers=1, hidden_dim=4, learn_eps=True), 4, rng).layers[0]
    h = Value(rng.normal(size=(g.num_nodes, 4)))
    adjacency = Value(g.adjacency)
    return _weighted_sum(lambda: gin_layer_forward(h, adjacency, layer), rng), [h, *trainable(layer)]


def _episode_case(variant: ModelVariant) -> Case:
    def build(rng: np.random.Generator):
        gin = GinConfig(num_layers=2, hidden_dim=4, layers_used=(1, 2))
        params = init_model(variant, 4, gin, rng, num_substructures=2)
        graphs = [_random_graph(rng, f"g{i}", label=i // 2) for i in range(4)]
        task = EpisodeTask(
            classes=(0, 1),
            support=(graphs[0], graphs[2]),
            query=(graphs[1], graphs[3]),
            k_shot=1,
            q_query=1,
        )
        return (lambda: task_loss(task, variant, params)), trainable(params)

    return build


_self = AttentionKind("self")
_vanilla = AttentionKind("vanilla")
CASES["episode:base"] = _episode_case(ModelVariant.base())
CASES["episode:global-self"] = _episode_case(ModelVariant.global_only(_self))
CASES["episode:full-vanilla"] = _episode_case(ModelVariant.full(_vanilla, _vanilla))


def run_case(name: str, seed: int, points: int = DEFAULT_POINTS) -> CheckResult:
    """Worst relative error of one case over points independent random draws."""
    streams = np.random.SeedSequence([seed, *name.encode("utf-8")]).spawn(points)
    worst = 0.0
    for stream in streams:
        f, leaves = CASES[name](np.random.default_rng(stream))
        worst = max(worst, grad_check_params(f, leaves))
    return CheckResult(name=name, max_error=worst, points=points)


def run_grad_suite(seed: int = 0, points: int = DEFAULT_POINTS, only: str | None = None) -> list[CheckResult]:
    """Run every registered case, or those whose name starts with only."""
    names = [n for n in CASES if only is None or n.startswith(only)]
    results = []
    started = time.monotonic()
    for name in names:
        result = run_case(name, seed, points)
        logger.debug(f"{name}: max relative error {result.max_error:.2e}")
        results.append(result)
    logger.info(f"Grad suite: {len(results)} cases in {time.monotonic() - started:.1f}s")
    return results
