"""One GIPA layer: edge-aware attention, propagation and residual aggregation.

Two paths run side by side. The dense path gates every element of the
neighbour's propagated embedding (bit-wise attention, width ``n``); the
sparse path gates one channel per raw node feature (feature-wise
attention, width ``m``). Both paths see the shared edge embedding.

Per edge ``j -> i`` and path ``*``::

    a   = F_att([h_i || h_j || e_ij])          (bias-free MLP)
    p   = F_prop([h_j || e_ij])
    msg = act(a) * p
    o_i = F_agg([sum_j msg || h_i]) + W_proj h_i
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

ABLATIONS = ("full", "no_bitwise", "no_featurewise", "no_edge_feature")
ATTENTION_KINDS = ("softplus", "softmax", "leaky_relu", "relu", "tanh", "none")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


@dataclass
class MLP:
    """Stack of affine maps with relu between them (none after the last)."""

    weights: list[Tensor]
    biases: list[Tensor | None]

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_width(self) -> int:
        return self.weights[-1].shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_width:
            raise ShapeError(f"MLP expects input width {self.in_width}, got {x.shape}")
        return self.tail(T.matmul(x, self.weights[0]))

    def tail(self, pre: Tensor) -> Tensor:
        """Everything after the first matrix product: bias, relu, later layers."""
        last = len(self.weights) - 1
        x = pre
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if k > 0:
                x = T.matmul(x, w)
            if b is not None:
                x = T.add_row(x, b)
            if k < last:
                x = T.relu(x)
        return x

    def named_parameters(self, prefix: str):
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"{prefix}.w{k}", w
            if b is not None:
                yield f"{prefix}.b{k}", b


def init_mlp(rng, widths, bias: bool = True, zero_last: bool = False) -> MLP:
    ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        ws.append(glorot(rng, fan_in, fan_out))
        bs.append(Tensor(np.zeros(fan_out), requires_grad=True) if bias else None)
    if zero_last:
        ws[-1].data[:] = 0.0
    return MLP(ws, bs)


@dataclass(frozen=True)
class LayerDims:
    """Widths of one layer. ``edge_dim == 0`` means edge features are dropped.

    The ``*_hidden`` widths default to the output width of the respective MLP.
    """

    in_dense: int
    in_sparse: int
    n: int
    m: int
    edge_dim: int
    att_hidden: int | None = None
    prop_hidden: int | None = None
    agg_hidden: int | None = None

    def __post_init__(self):
        for name in ("in_dense", "in_sparse", "n", "m"):
            if getattr(self, name) < 1:
                raise ConfigError(f"LayerDims.{name} must be >= 1")
        if self.edge_dim < 0:
            raise ConfigError("LayerDims.edge_dim must be >= 0")
        for name in ("att_hidden", "prop_hidden", "agg_hidden"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"LayerDims.{name} must be >= 1")


@dataclass
class GipaLayerParams:
    dims: LayerDims
    att_d: MLP | None
    att_s: MLP | None
    prop_d: MLP
    prop_s: MLP
    agg_d: MLP
    agg_s: MLP
    proj_d: Tensor
    proj_s: Tensor

    def named_parameters(self, prefix: str = ""):
        for name in ("att_d", "att_s", "prop_d", "prop_s", "agg_d", "agg_s"):
            mlp = getattr(self, name)
            if mlp is not None:
                yield from mlp.named_parameters(prefix + name)
        yield prefix + "proj_d", self.proj_d
        yield prefix + "proj_s", self.proj_s


def init_layer(dims: LayerDims, rng: np.random.Generator, ablation: str = "full") -> GipaLayerParams:
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
    if (ablation == "no_edge_feature") != (dims.edge_dim == 0):
        raise ConfigError("edge_dim must be 0 exactly when ablation is no_edge_feature")
    de, n, m = dims.edge_dim, dims.n, dims.m
    hid = lambda h, out: out if h is None else h  # noqa: E731
    att_d = att_s = None
    if ablation != "no_bitwise":
        att_d = init_mlp(rng, [2 * dims.in_dense + de, hid(dims.att_hidden, n), n], bias=False)
    if ablation != "no_featurewise":
        att_s = init_mlp(rng, [2 * dims.in_sparse + de, hid(dims.att_hidden, m), m], bias=False)
    prop_d = init_mlp(rng, [dims.in_dense + de, hid(dims.prop_hidden, n), n])
    prop_s = init_mlp(rng, [dims.in_sparse + de, hid(dims.prop_hidden, m), m])
    # zero last map: each layer starts as its residual projection, so summed
    # messages cannot blow up activations through a deep stack at step 0
    agg_d = init_mlp(rng, [n + dims.in_dense, hid(dims.agg_hidden, n), n], zero_last=True)
    agg_s = init_mlp(rng, [m + dims.in_sparse, hid(dims.agg_hidden, m), m], zero_last=True)
    proj_d = glorot(rng, dims.in_dense, n)
    proj_s = glorot(rng, dims.in_sparse, m)
    return GipaLayerParams(dims, att_d, att_s, prop_d, prop_s, agg_d, agg_s, proj_d, proj_s)


def edge_mlp(mlp: MLP, node_parts, e: Tensor | None) -> Tensor:
    """``mlp(concat([gather(h, idx) ...] + [e]))`` without building the concatenation.

    The first affine map is linear in its input blocks, so each node block
    is projected once per node and then gathered to the edges. This is the
    same function as the edge-aligned route, only cheaper when nodes are
    fewer than edges or node embeddings are wide.
    """
    w0 = mlp.weights[0]
    pre, offset = None, 0
    for h, idx in node_parts:
        width = h.shape[1]
        part = T.gather_rows(T.matmul(h, T.slice_rows(w0, offset, offset + width)), idx)
        pre = part if pre is None else T.add(pre, part)
        offset += width
    if e is not None:
        width = e.shape[1]
        part = T.matmul(e, T.slice_rows(w0, offset, offset + width))
        pre = T.add(pre, part)
        offset += width
    if offset != w0.shape[0]:
        raise ShapeError(f"MLP expects input width {w0.shape[0]}, got {offset}")
    return mlp.tail(pre)


def _edge_inputs(parts, e):
    return parts if e is None else parts + [e]


def attention_dense(h_i: Tensor, h_j: Tensor, e: Tensor | None, att: MLP) -> Tensor:
    """Bit-wise attention logits, one per element of the dense embedding."""
    return att(T.concat_rows(_edge_inputs([h_i, h_j], e)))


def attention_sparse(h_i: Tensor, h_j: Tensor, e: Tensor | None, att: MLP) -> Tensor:
    """Feature-wise attention logits, one per raw node feature."""
    return att(T.concat_rows(_edge_inputs([h_i, h_j], e)))


def activate_attention(logits: Tensor, kind: str, segments=None, n_nodes: int | None = None) -> Tensor:
    """Turn attention logits into gates. ``softmax`` normalises over each
    destination's in-edges (needs ``segments``); the rest are pointwise."""
    if kind == "none":
        return logits
    if kind == "softmax":
        if segments is None:
            raise ConfigError("softmax attention needs the destination segment of each edge")
        return T.segment_softmax(logits, segments, n_nodes)
    if kind in ("softplus", "leaky_relu", "relu", "tanh"):
        return T.activation(kind, logits)
    raise ConfigError(f"unknown attention activation {kind!r}; expected one of {ATTENTION_KINDS}")


def propagate_dense(h_j: Tensor, e: Tensor | None, prop: MLP) -> Tensor:
    return prop(T.concat_rows(_edge_inputs([h_j], e)))


def propagate_sparse(h_j: Tensor, e: Tensor | None, prop: MLP) -> Tensor:
    return prop(T.concat_rows(_edge_inputs([h_j], e)))


def message(gates: Tensor, content: Tensor) -> Tensor:
    return T.mul(gates, content)


def aggregate(messages: Tensor, segments, h: Tensor, agg: MLP, proj: Tensor) -> Tensor:
    """Sum messages into their destinations, then ``agg([sum || h]) + h @ proj``."""
    summed = T.segment_sum(messages, segments, h.shape[0])
    out = agg(T.concat_rows([summed, h]))
    residual = T.matmul(h, proj)
    if out.shape != residual.shape:
        raise ShapeError(f"aggregation output {out.shape} does not match residual {residual.shape}")
    return T.add(out, residual)


def _check_consistency(params: GipaLayerParams, ablation: str, e: Tensor | None, n_edges: int):
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
    if (params.att_d is None) != (ablation == "no_bitwise"):
        raise ConfigError(f"dense attention weights inconsistent with ablation {ablation!r}")
    if (params.att_s is None) != (ablation == "no_featurewise"):
        raise ConfigError(f"sparse attention weights inconsistent with ablation {ablation!r}")
    if ablation == "no_edge_feature":
        if e is not None or params.dims.edge_dim != 0:
            raise ConfigError("no_edge_feature layers take no edge embedding")
    else:
        if e is None or e.shape != (n_edges, params.dims.edge_dim):
            got = None if e is None else e.shape
            raise ConfigError(f"edge embedding shape {got} does not match "
                              f"({n_edges}, {params.dims.edge_dim})")


def _path_forward(att, prop, agg, proj, h, e, src, dst, activation):
    content = edge_mlp(prop, [(h, src)], e)
    if att is None:
        msg = content
    else:
        logits = edge_mlp(att, [(h, dst), (h, src)], e)
        msg = message(activate_attention(logits, activation, dst, h.shape[0]), content)
    return aggregate(msg, dst, h, agg, proj)


def layer_forward(graph, h_d: Tensor, h_s: Tensor, e: Tensor | None, params: GipaLayerParams,
                  ablation: str = "full", activation: str = "softplus") -> tuple[Tensor, Tensor]:
    """Run both paths of one layer over ``graph`` and return ``(o_d, o_s)``."""
    src, dst, n_nodes = graph.src_ids, graph.dst_ids, graph.n_nodes
    _check_consistency(params, ablation, e, src.shape[0])
    d = params.dims
    if h_d.shape != (n_nodes, d.in_dense) or h_s.shape != (n_nodes, d.in_sparse):
        raise ShapeError(f"layer expects inputs ({n_nodes}, {d.in_dense}) and "
                         f"({n_nodes}, {d.in_sparse}), got {h_d.shape} and {h_s.shape}")

    o_d = _path_forward(params.att_d, params.prop_d, params.agg_d, params.proj_d,
                        h_d, e, src, dst, activation)
    o_s = _path_forward(params.att_s, params.prop_s, params.agg_s, params.proj_s,
                        h_s, e, src, dst, activation)
    return o_d, o_s


def stack_forward(graph, h_d: Tensor, h_s: Tensor, e: Tensor | None, layers, ablation: str = "full",
                  activation: str = "softplus") -> tuple[Tensor, Tensor]:
    """Apply ``layers`` in order, feeding each layer's outputs into the next."""
    if not layers:
        raise ConfigError("need at least one layer")
    for k, params in enumerate(layers):
        d = params.dims
        if k > 0:
            prev = layers[k - 1].dims
            if (d.in_dense, d.in_sparse) != (prev.n, prev.m):
                raise ConfigError(f"layer {k} consumes ({d.in_dense}, {d.in_sparse}) "
                                  f"but layer {k - 1} produces ({prev.n}, {prev.m})")
        h_d, h_s = layer_forward(graph, h_d, h_s, e, params, ablation, activation)
    return h_d, h_s
