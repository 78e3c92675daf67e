"""Dynamic-graph EdgeConv encoders and decoders.

Each EdgeConv layer computes, for node i,

    MLP_self(h_i) + max_j MLP_edge(h_i || h_j - h_i)

over the node's k nearest neighbours in the current feature space. Every
"MLP" is linear -> leaky_relu(0.1) -> linear.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor

SLOPE = 0.1
DECODER_KINDS = ("graph_conv", "fully_connected")


@dataclass(frozen=True)
class DynamicGraph:
    neighbors: np.ndarray  # (n, k_nn) int

    @property
    def k_nn(self) -> int:
        return self.neighbors.shape[1]


def build_dynamic_graph(features, k_nn: int) -> DynamicGraph:
    """k_nn nearest neighbours of every row (self excluded), ties to lower index."""
    f = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    n = f.shape[0]
    if not 1 <= k_nn < n:
        raise ValueError(f"build_dynamic_graph: need 1 <= k_nn < n, got k_nn={k_nn}, n={n}")
    sq = np.einsum("ij,ij->i", f, f)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (f @ f.T)
    np.fill_diagonal(d2, np.inf)
    rows = np.arange(n)[:, None]
    part = np.argpartition(d2, k_nn - 1, axis=1)[:, :k_nn]
    part_d = d2[rows, part]
    order = np.lexsort((part, part_d), axis=1)
    nbrs = part[rows, order]
    # argpartition may keep a higher index among values tied with the k-th
    # distance; redo those rows with a full stable sort.
    kth = part_d.max(axis=1)
    tied = np.flatnonzero(np.count_nonzero(d2 <= kth[:, None], axis=1) > k_nn)
    if tied.size:
        nbrs[tied] = np.argsort(d2[tied], axis=1, kind="stable")[:, :k_nn]
    return DynamicGraph(nbrs)


class FrozenGraphs:
    """Records every graph built while active, then replays them in order after
    ``rewind()``. Lets finite-difference checks hold neighbour selection fixed."""

    def __init__(self):
        self.graphs: list[DynamicGraph] = []
        self.cursor: Optional[int] = None

    def rewind(self):
        self.cursor = 0

    def get(self, features, k_nn) -> DynamicGraph:
        if self.cursor is None:
            graph = build_dynamic_graph(features, k_nn)
            self.graphs.append(graph)
            return graph
        graph = self.graphs[self.cursor]
        self.cursor += 1
        return graph


_FROZEN: list[FrozenGraphs] = []


@contextmanager
def frozen_graphs():
    fg = FrozenGraphs()
    _FROZEN.append(fg)
    try:
        yield fg
    finally:
        _FROZEN.pop()


def layer_graph(features, k_nn: int) -> DynamicGraph:
    if _FROZEN:
        return _FROZEN[-1].get(features, k_nn)
    return build_dynamic_graph(features, k_nn)


@dataclass
class Linear:
    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: Optional[np.random.Generator]) -> "Linear":
        if rng is None:
            return cls(Tensor(np.zeros((d_in, d_out)), True), Tensor(np.zeros(d_out), True))
        bound = 1.0 / np.sqrt(d_in)
        return cls(
            Tensor(rng.uniform(-bound, bound, (d_in, d_out)), True),
            Tensor(rng.uniform(-bound, bound, d_out), True),
        )

    def __call__(self, x) -> Tensor:
        return dc.add_rowvec(dc.matmul(x, self.w), self.b)

    def parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


def mlp(x, first: Linear, second: Linear) -> Tensor:
    return second(dc.leaky_relu(first(x), SLOPE))


@dataclass
class EdgeConvLayer:
    self1: Linear
    self2: Linear
    edge1: Linear
    edge2: Linear

    @classmethod
    def init(cls, d_in, hidden, d_out, rng=None) -> "EdgeConvLayer":
        return cls(
            Linear.init(d_in, hidden, rng), Linear.init(hidden, d_out, rng),
            Linear.init(2 * d_in, hidden, rng), Linear.init(hidden, d_out, rng),
        )

    @property
    def d_in(self) -> int:
        return self.self1.w.shape[0]

    @property
    def d_out(self) -> int:
        return self.self2.w.shape[1]

    def parameters(self, prefix):
        for name in ("self1", "self2", "edge1", "edge2"):
            yield from getattr(self, name).parameters(f"{prefix}.{name}")


@dataclass
class PointMLPLayer:
    """Per-point counterpart of EdgeConvLayer used by the fully connected decoder."""

    self1: Linear
    self2: Linear

    @classmethod
    def init(cls, d_in, hidden, d_out, rng=None) -> "PointMLPLayer":
        return cls(Linear.init(d_in, hidden, rng), Linear.init(hidden, d_out, rng))

    @property
    def d_in(self) -> int:
        return self.self1.w.shape[0]

    @property
    def d_out(self) -> int:
        return self.self2.w.shape[1]

    def parameters(self, prefix):
        for name in ("self1", "self2"):
            yield from getattr(self, name).parameters(f"{prefix}.{name}")


def edge_conv_forward(h, graph: DynamicGraph, layer: EdgeConvLayer) -> Tensor:
    h = dc.Tensor(h) if not isinstance(h, Tensor) else h
    n, d = h.shape
    if d != layer.d_in:
        raise ShapeError(f"edge_conv: input width {d} but layer expects {layer.d_in}")
    if graph.neighbors.shape[0] != n:
        raise ShapeError(f"edge_conv: graph has {graph.neighbors.shape[0]} nodes, features have {n}")
    self_out = mlp(h, layer.self1, layer.self2)
    # [h_i, h_j - h_i] @ W == h_i @ (W_top - W_bottom) + h_j @ W_bottom
    w = layer.edge1.w
    w_top, w_bottom = dc.slice_rows(w, 0, d), dc.slice_rows(w, d, 2 * d)
    center = dc.add_rowvec(dc.matmul(h, dc.sub(w_top, w_bottom)), layer.edge1.b)
    other = dc.matmul(h, w_bottom)
    edges = dc.leaky_relu(dc.neighbor_sum(center, other, graph.neighbors), SLOPE)
    pooled, _ = dc.matmul_reduce_max(edges, layer.edge2.w, axis=1)
    return dc.add(self_out, dc.add_rowvec(pooled, layer.edge2.b))


def edge_conv_reference(h, graph: DynamicGraph, layer: EdgeConvLayer) -> Tensor:
    """Literal concat-then-MLP form; slower, kept as a cross-check."""
    k = graph.k_nn
    hi = dc.expand_neighbors(h, k)
    hj = dc.gather_rows(h, graph.neighbors)
    edge_in = dc.concat_lastdim(hi, dc.sub(hj, hi))
    pooled, _ = dc.reduce_max(mlp(edge_in, layer.edge1, layer.edge2), axis=1)
    return dc.add(mlp(h, layer.self1, layer.self2), pooled)


@dataclass(frozen=True)
class EncoderConfig:
    in_width: int = 3
    layers: tuple = ((32, 64), (64, 96))  # (hidden, out) per EdgeConv layer
    k_nn: int = 32

    def __post_init__(self):
        if self.in_width <= 0 or self.k_nn < 1 or not self.layers:
            raise ValueError(f"invalid encoder config {self}")
        if any(w <= 0 for pair in self.layers for w in pair):
            raise ValueError(f"encoder widths must be positive: {self.layers}")

    @property
    def out_width(self) -> int:
        return self.layers[-1][1]


@dataclass(frozen=True)
class DecoderConfig:
    in_width: int = 96
    layers: tuple = ((64, 32), (32, 3))
    k_nn: int = 8
    kind: str = "graph_conv"

    def __post_init__(self):
        if self.kind not in DECODER_KINDS:
            raise ValueError(f"decoder kind must be one of {DECODER_KINDS}, got {self.kind!r}")
        if self.in_width <= 0 or self.k_nn < 1 or not self.layers:
            raise ValueError(f"invalid decoder config {self}")
        if any(w <= 0 for pair in self.layers for w in pair):
            raise ValueError(f"decoder widths must be positive: {self.layers}")


def _stack(in_width, layers, factory, rng):
    out, d = [], in_width
    for hidden, d_out in layers:
        out.append(factory(d, hidden, d_out, rng))
        d = d_out
    return out


class Encoder:
    def __init__(self, config: EncoderConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.layers = _stack(config.in_width, config.layers, EdgeConvLayer.init, rng)

    def parameters(self, prefix="encoder"):
        for i, layer in enumerate(self.layers):
            yield from layer.parameters(f"{prefix}.{i}")

    def __call__(self, x) -> Tensor:
        return encoder_forward(x, self)


class Decoder:
    def __init__(self, config: DecoderConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        factory = EdgeConvLayer.init if config.kind == "graph_conv" else PointMLPLayer.init
        self.layers = _stack(config.in_width, config.layers, factory, rng)

    def parameters(self, prefix="decoder"):
        for i, layer in enumerate(self.layers):
            yield from layer.parameters(f"{prefix}.{i}")

    def __call__(self, features) -> Tensor:
        return decoder_forward(features, self)


def encoder_forward(x, encoder: Encoder) -> Tensor:
    """Stacked EdgeConv; the graph is rebuilt from each layer's input features."""
    h = x if isinstance(x, Tensor) else Tensor(x)
    if h.data.ndim != 2 or h.shape[1] != encoder.config.in_width:
        raise ShapeError(f"encoder: expected (n, {encoder.config.in_width}) input, got {h.shape}")
    for layer in encoder.layers:
        graph = layer_graph(h, encoder.config.k_nn)
        h = dc.leaky_relu(edge_conv_forward(h, graph, layer), SLOPE)
    return h


def decoder_forward(features, decoder: Decoder) -> Tensor:
    h = features if isinstance(features, Tensor) else Tensor(features)
    if h.data.ndim != 2 or h.shape[1] != decoder.config.in_width:
        raise ShapeError(f"decoder: expected (n, {decoder.config.in_width}) input, got {h.shape}")
    last = len(decoder.layers) - 1
    for i, layer in enumerate(decoder.layers):
        if decoder.config.kind == "graph_conv":
            h = edge_conv_forward(h, layer_graph(h, decoder.config.k_nn), layer)
        else:
            h = mlp(h, layer.self1, layer.self2)
        if i != last:
            h = dc.leaky_relu(h, SLOPE)
    return h


def count_parameters(params) -> int:
    return int(sum(t.size for _, t in params))
