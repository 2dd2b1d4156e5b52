"""GIN message passing with one mean READOUT per selected layer."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from structshot.autodiff import Value, matmul, reduce_mean, relu, scale
from structshot.errors import ConfigError, ShapeError
from structshot.graphs import Graph
from structshot.params import Affine


@dataclass(frozen=True)
class GinConfig:
    """Encoder shape. layers_used is 1-based; by default the last four layers (layer 1 of a
    5-layer stack is left out)."""

    num_layers: int = 5
    hidden_dim: int = 64
    mlp_layers: int = 2
    eps: float = 0.0
    learn_eps: bool = False
    layers_used: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.mlp_layers < 1:
            raise ConfigError(f"mlp_layers must be >= 1, got {self.mlp_layers}")
        if self.layers_used is None:
            first = max(1, self.num_layers - 3)
            object.__setattr__(self, "layers_used", tuple(range(first, self.num_layers + 1)))
        used = tuple(sorted(set(self.layers_used)))
        if not used or used[0] < 1 or used[-1] > self.num_layers:
            raise ConfigError(
                f"layers_used must be a non-empty subset of 1..{self.num_layers}, got {self.layers_used}"
            )
        object.__setattr__(self, "layers_used", used)


@dataclass(eq=False)
class GinLayerParams:
    mlp: list[Affine]
    eps: Value


@dataclass(eq=False)
class GinParams:
    layers: list[GinLayerParams]
    layers_used: tuple[int, ...] = field(default=(1,))

    @classmethod
    def init(cls, config: GinConfig, in_dim: int, rng: np.random.Generator) -> GinParams:
        layers = []
        width = in_dim
        for _ in range(config.num_layers):
            mlp = []
            for j in range(config.mlp_layers):
                mlp.append(Affine.init(rng, width if j == 0 else config.hidden_dim, config.hidden_dim))
            eps = Value(np.array(config.eps), requires_grad=config.learn_eps, name="eps")
            layers.append(GinLayerParams(mlp=mlp, eps=eps))
            width = config.hidden_dim
        return cls(layers=layers, layers_used=config.layers_used)

    @property
    def in_dim(self) -> int:
        return self.layers[0].mlp[0].in_dim

    @property
    def hidden_dim(self) -> int:
        return self.layers[-1].mlp[-1].out_dim


def gin_layer_forward(h: Value, adjacency: Value, params: GinLayerParams) -> Value:
    """MLP((1 + eps) * h_v + sum of neighbour rows), relu between the MLP's affine maps."""
    if h.ndim != 2 or adjacency.shape != (h.shape[0], h.shape[0]):
        raise ShapeError("gin_layer", [h.shape, adjacency.shape], "rows must match adjacency")
    if params.mlp[0].in_dim != h.shape[1]:
        raise ShapeError("gin_layer", [h.shape, params.mlp[0].weight.shape], "feature width")
    if params.eps.requires_grad:
        self_term = h * (params.eps + 1.0)
    else:
        self_term = scale(h, 1.0 + float(params.eps.data))
    z = self_term + matmul(adjacency, h)
    for j, affine in enumerate(params.mlp):
        if j:
            z = relu(z)
        z = affine(z)
    return z


def readout(h: Value) -> Value:
    """Column-wise mean over nodes."""
    if h.ndim != 2:
        raise ShapeError("readout", [h.shape], "expected a node matrix")
    return reduce_mean(h, axis=0)


def encode_layers(g: Graph, params: GinParams) -> list[Value]:
    """Graph-level vectors for each layer in params.layers_used, in layer order."""
    h = Value(g.features)
    adjacency = Value(g.adjacency)
    out = []
    for depth, layer in enumerate(params.layers, start=1):
        h = gin_layer_forward(h, adjacency, layer)
        if depth in params.layers_used:
            out.append(readout(h))
    return out


def encode_substructures(g: Graph, params: GinParams, substructures: Sequence[Sequence[int]]):
    """encode_layers for the induced subgraph of each substructure."""
    return [encode_layers(g.induced(nodes), params) for nodes in substructures]
