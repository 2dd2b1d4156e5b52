"""Aggregation over an ordered set of representations.

Five interchangeable kinds. "learned" and "vanilla" produce one weight per input; "self",
"mlp" and "transformer" produce a single aggregated representation. Inputs arrive stacked as
a (count, dim) sequence; no positional information is added, so the sequence kinds are
invariant to input order under mean and max pooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from structshot.autodiff import (
    Value,
    concat,
    matmul,
    reduce_max,
    reduce_mean,
    relu,
    reshape,
    row,
    scale,
    softmax,
    sqrt,
    tanh,
)
from structshot.errors import AttentionConfigError, ShapeError
from structshot.params import Affine, uniform

KINDS = ("learned", "vanilla", "self", "mlp", "transformer")
WEIGHT_KINDS = ("learned", "vanilla")
POOLINGS = ("mean", "max", "first")

LAYER_NORM_EPS = 1e-9


@dataclass(frozen=True)
class AttentionKind:
    """Which aggregator to use and its shape knobs.

    heads/layers apply to "self" and "transformer", depth to "mlp", pooling to the sequence
    kinds "self" and "transformer".
    """

    name: str
    heads: int = 2
    layers: int = 1
    depth: int = 1
    pooling: str = "mean"

    def __post_init__(self):
        if self.name not in KINDS:
            raise AttentionConfigError(f"unknown attention kind {self.name!r}; expected one of {KINDS}")
        if self.heads < 1 or self.layers < 1 or self.depth < 1:
            raise AttentionConfigError(
                f"heads, layers and depth must be >= 1 (heads={self.heads}, "
                f"layers={self.layers}, depth={self.depth})"
            )
        if self.pooling not in POOLINGS:
            raise AttentionConfigError(f"unknown pooling {self.pooling!r}; expected one of {POOLINGS}")

    @property
    def produces_weights(self) -> bool:
        return self.name in WEIGHT_KINDS


@dataclass(eq=False)
class LearnedWeightParams:
    weights: Value


@dataclass(eq=False)
class VanillaParams:
    context: Value
    projection: Affine


@dataclass(eq=False)
class HeadParams:
    query: Value
    key: Value
    value: Value


@dataclass(eq=False)
class MultiHeadParams:
    heads: list[HeadParams]
    output: Affine

    @property
    def width(self) -> int:
        return self.output.out_dim


@dataclass(eq=False)
class SelfAttentionParams:
    input_proj: Affine | None
    layers: list[MultiHeadParams]


@dataclass(eq=False)
class LayerNormParams:
    gain: Value
    bias: Value


@dataclass(eq=False)
class TransformerBlockParams:
    attention: MultiHeadParams
    norm1: LayerNormParams
    ff_in: Affine
    ff_out: Affine
    norm2: LayerNormParams


@dataclass(eq=False)
class TransformerParams:
    input_proj: Affine | None
    blocks: list[TransformerBlockParams]


@dataclass(eq=False)
class MlpParams:
    layers: list[Affine]


AttentionParams = (
    LearnedWeightParams | VanillaParams | SelfAttentionParams | TransformerParams | MlpParams
)


def _init_multi_head(rng: np.random.Generator, width: int, heads: int) -> MultiHeadParams:
    if width % heads:
        raise AttentionConfigError(f"model width {width} is not divisible by {heads} heads")
    head_dim = width // heads
    return MultiHeadParams(
        heads=[
            HeadParams(
                query=uniform(rng, width, (width, head_dim), "query"),
                key=uniform(rng, width, (width, head_dim), "key"),
                value=uniform(rng, width, (width, head_dim), "value"),
            )
            for _ in range(heads)
        ],
        output=Affine.init(rng, width, width),
    )


def _layer_norm_params(width: int) -> LayerNormParams:
    return LayerNormParams(
        gain=Value(np.ones(width), requires_grad=True, name="gain"),
        bias=Value(np.zeros(width), requires_grad=True, name="bias"),
    )


def init_attention(
    kind: AttentionKind, input_dim: int, count: int, width: int, rng: np.random.Generator
) -> AttentionParams:
    """Parameters for kind over count inputs of size input_dim; sequence kinds run at width."""
    if kind.name == "learned":
        # All-ones start: the weighted concatenation begins as the plain concatenation.
        return LearnedWeightParams(weights=Value(np.ones(count), requires_grad=True, name="w"))
    if kind.name == "vanilla":
        return VanillaParams(
            context=uniform(rng, width, (width,), "context"),
            projection=Affine.init(rng, input_dim, width),
        )
    if kind.name == "mlp":
        layers = [Affine.init(rng, count * input_dim, width)]
        layers += [Affine.init(rng, width, width) for _ in range(kind.depth - 1)]
        return MlpParams(layers=layers)

    input_proj = Affine.init(rng, input_dim, width) if input_dim != width else None
    if kind.name == "self":
        return SelfAttentionParams(
            input_proj=input_proj,
            layers=[_init_multi_head(rng, width, kind.heads) for _ in range(kind.layers)],
        )
    return TransformerParams(
        input_proj=input_proj,
        blocks=[
            TransformerBlockParams(
                attention=_init_multi_head(rng, width, kind.heads),
                norm1=_layer_norm_params(width),
                ff_in=Affine.init(rng, width, 2 * width),
                ff_out=Affine.init(rng, 2 * width, width),
                norm2=_layer_norm_params(width),
            )
            for _ in range(kind.layers)
        ],
    )


def learned_weights(params: LearnedWeightParams, count: int) -> Value:
    """The raw shared weights; no softmax is applied."""
    if params.weights.shape != (count,):
        raise AttentionConfigError(
            f"learned weights hold {params.weights.shape[0]} entries, {count} inputs given"
        )
    return params.weights


def vanilla_attention_weights(sequence: Value, params: VanillaParams) -> Value:
    """softmax_j( c . tanh(W h_j + b) )."""
    if sequence.ndim != 2 or sequence.shape[1] != params.projection.in_dim:
        raise ShapeError(
            "vanilla_attention", [sequence.shape, params.projection.weight.shape], "input width"
        )
    scores = matmul(tanh(params.projection(sequence)), params.context)
    return softmax(scores, axis=0)


def head_attention(x: Value, head: HeadParams) -> Value:
    """Row-stochastic (count, count) attention matrix of one head."""
    q = matmul(x, head.query)
    k = matmul(x, head.key)
    return softmax(scale(matmul(q, k.T), 1.0 / math.sqrt(head.query.shape[1])), axis=-1)


def multi_head_attention(x: Value, params: MultiHeadParams) -> Value:
    if x.ndim != 2 or x.shape[1] != params.width:
        raise ShapeError("self_attention", [x.shape], f"expected width {params.width}")
    outputs = [matmul(head_attention(x, head), matmul(x, head.value)) for head in params.heads]
    return params.output(concat(outputs, axis=-1))


def pool(sequence: Value, strategy: str) -> Value:
    """Reduce (count, dim) to (dim,): positionwise mean, positionwise max, or position 0."""
    if sequence.ndim != 2 or sequence.shape[0] < 1:
        raise ShapeError("pool", [sequence.shape], "expected a non-empty sequence")
    if strategy == "mean":
        return reduce_mean(sequence, axis=0)
    if strategy == "max":
        return reduce_max(sequence, axis=0)
    if strategy == "first":
        return row(sequence, 0)
    raise AttentionConfigError(f"unknown pooling {strategy!r}; expected one of {POOLINGS}")


def _project(sequence: Value, input_proj: Affine | None) -> Value:
    return input_proj(sequence) if input_proj is not None else sequence


def self_attention_aggregate(sequence: Value, params: SelfAttentionParams, pooling: str) -> Value:
    x = _project(sequence, params.input_proj)
    for layer in params.layers:
        x = multi_head_attention(x, layer)
    return pool(x, pooling)


def mlp_aggregate(sequence: Value, params: MlpParams) -> Value:
    """relu-affine stack over the concatenated inputs."""
    h = reshape(sequence, (sequence.size,))
    if h.shape[0] != params.layers[0].in_dim:
        raise ShapeError(
            "mlp_aggregate", [sequence.shape, params.layers[0].weight.shape], "concatenated width"
        )
    for affine in params.layers:
        h = relu(affine(h))
    return h


def layer_norm(x: Value, params: LayerNormParams | None = None, eps: float = LAYER_NORM_EPS) -> Value:
    """Normalize each row to mean 0 and variance 1, then apply gain and bias."""
    centered = x - reduce_mean(x, axis=-1, keepdims=True)
    variance = reduce_mean(centered * centered, axis=-1, keepdims=True)
    normed = centered / sqrt(variance + eps)
    if params is None:
        return normed
    return normed * params.gain + params.bias


def transformer_block(x: Value, block: TransformerBlockParams) -> Value:
    x = layer_norm(x + multi_head_attention(x, block.attention), block.norm1)
    return layer_norm(x + block.ff_out(relu(block.ff_in(x))), block.norm2)


def transformer_aggregate(sequence: Value, params: TransformerParams, pooling: str) -> Value:
    x = _project(sequence, params.input_proj)
    for block in params.blocks:
        x = transformer_block(x, block)
    return pool(x, pooling)


def attention_weights(kind: AttentionKind, sequence: Value, params: AttentionParams) -> Value:
    """One weight per row of sequence, for the weight-producing kinds."""
    if kind.name == "learned":
        return learned_weights(params, sequence.shape[0])
    if kind.name == "vanilla":
        return vanilla_attention_weights(sequence, params)
    raise AttentionConfigError(f"attention kind {kind.name!r} does not produce weights")


def aggregate(kind: AttentionKind, sequence: Value, params: AttentionParams) -> Value:
    """Single representation from sequence, for the aggregating kinds."""
    if kind.name == "self":
        return self_attention_aggregate(sequence, params, kind.pooling)
    if kind.name == "transformer":
        return transformer_aggregate(sequence, params, kind.pooling)
    if kind.name == "mlp":
        return mlp_aggregate(sequence, params)
    raise AttentionConfigError(f"attention kind {kind.name!r} produces weights, not a representation")
