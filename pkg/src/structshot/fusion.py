"""Structure fusion: layer embeddings -> one graph embedding per branch.

A branch pairs one GIN encoder with optional global attention (over encoder depths) and local
attention (over the whole graph and its substructures). A ModelVariant is one branch, or several
for an ensemble.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from structshot.attention import (
    AttentionKind,
    AttentionParams,
    aggregate,
    attention_weights,
    init_attention,
)
from structshot.autodiff import Value, concat, matmul, mul, no_grad, reshape, stack
from structshot.encoder import GinConfig, GinParams, encode_layers, encode_substructures
from structshot.errors import FusionError
from structshot.graphs import Graph

STRUCTURES = ("base", "global", "local", "full")
VARIANTS = ("base", "g", "l", "full", "ensemble")


@dataclass(frozen=True)
class BranchConfig:
    structure: str
    global_attn: AttentionKind | None = None
    local_attn: AttentionKind | None = None

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise FusionError(f"unknown structure {self.structure!r}; expected one of {STRUCTURES}")
        if self.uses_global and self.global_attn is None:
            raise FusionError(f"{self.structure} branch needs a global attention kind")
        if self.uses_local and self.local_attn is None:
            raise FusionError(f"{self.structure} branch needs a local attention kind")
        if not self.uses_global:
            object.__setattr__(self, "global_attn", None)
        if not self.uses_local:
            object.__setattr__(self, "local_attn", None)

    @property
    def uses_global(self) -> bool:
        return self.structure in ("global", "full")

    @property
    def uses_local(self) -> bool:
        return self.structure in ("local", "full")

    @property
    def label(self) -> str:
        kinds = [k.name for k in (self.global_attn, self.local_attn) if k is not None]
        return f"{self.structure}[{','.join(kinds)}]" if kinds else self.structure


@dataclass(frozen=True)
class ModelVariant:
    name: str
    branches: tuple[BranchConfig, ...]

    def __post_init__(self):
        if self.name not in VARIANTS:
            raise FusionError(f"unknown variant {self.name!r}; expected one of {VARIANTS}")
        if not self.branches:
            raise FusionError("a model variant needs at least one branch")
        if self.name != "ensemble" and len(self.branches) != 1:
            raise FusionError(f"variant {self.name} takes exactly one branch")

    @classmethod
    def base(cls) -> ModelVariant:
        return cls("base", (BranchConfig("base"),))

    @classmethod
    def global_only(cls, kind: AttentionKind) -> ModelVariant:
        return cls("g", (BranchConfig("global", global_attn=kind),))

    @classmethod
    def local_only(cls, kind: AttentionKind) -> ModelVariant:
        return cls("l", (BranchConfig("local", local_attn=kind),))

    @classmethod
    def full(cls, global_kind: AttentionKind, local_kind: AttentionKind) -> ModelVariant:
        return cls("full", (BranchConfig("full", global_attn=global_kind, local_attn=local_kind),))

    @classmethod
    def ensemble(cls, *branches: BranchConfig) -> ModelVariant:
        return cls("ensemble", tuple(branches))

    @property
    def needs_substructures(self) -> bool:
        return any(b.uses_local for b in self.branches)


@dataclass(eq=False)
class BranchParams:
    encoder: GinParams
    global_attn: AttentionParams | None = None
    local_attn: AttentionParams | None = None


@dataclass(eq=False)
class ModelParams:
    branches: list[BranchParams]


@dataclass(frozen=True, eq=False)
class GraphEmbedding:
    vector: Value
    variant: str
    branch: int


def _fused_dim(kind: AttentionKind | None, layers: int, hidden_dim: int) -> int:
    if kind is None or kind.produces_weights:
        return layers * hidden_dim
    return hidden_dim


def embedding_dim(branch: BranchConfig, gin: GinConfig) -> int:
    """Length of every embedding this branch produces."""
    if branch.uses_local:
        if branch.local_attn.produces_weights:
            return _local_input_dim(branch, gin)
        return gin.hidden_dim
    return _fused_dim(branch.global_attn, len(gin.layers_used), gin.hidden_dim)


def _local_input_dim(branch: BranchConfig, gin: GinConfig) -> int:
    if branch.structure == "full":
        return _fused_dim(branch.global_attn, len(gin.layers_used), gin.hidden_dim)
    return len(gin.layers_used) * gin.hidden_dim


def init_model(
    variant: ModelVariant,
    in_dim: int,
    gin: GinConfig,
    rng: np.random.Generator,
    num_substructures: int = 2,
) -> ModelParams:
    """Fresh parameters; every branch owns its own encoder and attention."""
    branches = []
    count = len(gin.layers_used)
    for config in variant.branches:
        encoder = GinParams.init(gin, in_dim, rng)
        global_params = None
        local_params = None
        if config.global_attn is not None:
            global_params = init_attention(config.global_attn, gin.hidden_dim, count, gin.hidden_dim, rng)
        if config.local_attn is not None:
            local_params = init_attention(
                config.local_attn,
                _local_input_dim(config, gin),
                num_substructures + 1,
                gin.hidden_dim,
                rng,
            )
        branches.append(BranchParams(encoder=encoder, global_attn=global_params, local_attn=local_params))
    return ModelParams(branches=branches)


def global_fuse(
    layers: Sequence[Value], kind: AttentionKind | None, params: AttentionParams | None
) -> Value:
    """Combine per-layer graph vectors; kind None is the plain concatenation."""
    if not layers:
        raise FusionError("global fusion needs at least one layer embedding")
    if kind is None:
        return concat(list(layers), axis=0)
    sequence = stack(list(layers))
    if not kind.produces_weights:
        return aggregate(kind, sequence, params)
    weights = attention_weights(kind, sequence, params)
    count, width = sequence.shape
    weighted = mul(reshape(weights, (count, 1)), sequence)
    return reshape(weighted, (count * width,))


def local_fuse(
    graph_vector: Value,
    substructures: Sequence[Value],
    kind: AttentionKind,
    params: AttentionParams,
) -> Value:
    """Fuse [graph, substructure 1..n]: weighted sum for weight kinds, aggregation otherwise."""
    if not substructures:
        raise FusionError("local fusion needs at least one substructure")
    shapes = {v.shape for v in (graph_vector, *substructures)}
    if len(shapes) != 1:
        raise FusionError(f"graph and substructure embeddings disagree on shape: {sorted(shapes)}")
    sequence = stack([graph_vector, *substructures])
    if kind.produces_weights:
        return matmul(attention_weights(kind, sequence, params), sequence)
    return aggregate(kind, sequence, params)


def _require_substructures(g: Graph) -> None:
    if not g.substructures:
        raise FusionError(f"graph {g.id} has no substructures; local fusion needs them")


def encode_branch(g: Graph, config: BranchConfig, params: BranchParams) -> Value:
    layers = encode_layers(g, params.encoder)
    if config.structure == "base":
        return global_fuse(layers, None, None)
    if config.structure == "global":
        return global_fuse(layers, config.global_attn, params.global_attn)

    _require_substructures(g)
    sub_layers = encode_substructures(g, params.encoder, g.substructures)
    if config.structure == "local":
        graph_vector = global_fuse(layers, None, None)
        parts = [global_fuse(s, None, None) for s in sub_layers]
    else:
        graph_vector = global_fuse(layers, config.global_attn, params.global_attn)
        parts = [global_fuse(s, config.global_attn, params.global_attn) for s in sub_layers]
    return local_fuse(graph_vector, parts, config.local_attn, params.local_attn)


def encode_graph(
    g: Graph, variant: ModelVariant, params: ModelParams, branch: int = 0
) -> GraphEmbedding:
    if not 0 <= branch < len(variant.branches):
        raise FusionError(f"variant {variant.name} has no branch {branch}")
    vector = encode_branch(g, variant.branches[branch], params.branches[branch])
    return GraphEmbedding(vector=vector, variant=variant.name, branch=branch)


def encode_all_branches(g: Graph, variant: ModelVariant, params: ModelParams) -> list[GraphEmbedding]:
    return [encode_graph(g, variant, params, i) for i in range(len(variant.branches))]


def layer_weights(
    g: Graph, variant: ModelVariant, params: ModelParams, branch: int = 0
) -> dict[str, list[float] | None]:
    """Global (per encoder depth) and local (graph, then substructures) weights for one graph.

    Entries are None where the branch has no weight-producing attention at that level.
    """
    config = variant.branches[branch]
    bp = params.branches[branch]
    result: dict[str, list[float] | None] = {"global": None, "local": None}
    with no_grad():
        layers = encode_layers(g, bp.encoder)
        if config.global_attn is not None and config.global_attn.produces_weights:
            weights = attention_weights(config.global_attn, stack(layers), bp.global_attn)
            result["global"] = weights.data.tolist()
        if config.local_attn is not None and config.local_attn.produces_weights:
            _require_substructures(g)
            sub_layers = encode_substructures(g, bp.encoder, g.substructures)
            gkind = config.global_attn if config.structure == "full" else None
            vectors = [global_fuse(layers, gkind, bp.global_attn)]
            vectors += [global_fuse(s, gkind, bp.global_attn) for s in sub_layers]
            weights = attention_weights(config.local_attn, stack(vectors), bp.local_attn)
            result["local"] = weights.data.tolist()
    return result
