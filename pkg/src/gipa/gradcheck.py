"""Central finite-difference checks of the analytic gradients.

Relative error between an analytic value ``a`` and a numeric value ``n`` is
``|a - n| / max(|a|, |n|, floor)``. The floor keeps entries whose true
gradient is zero (dead relu units, unused rows) from dividing round-off by
zero.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .graph import build_graph
from .head import init_head, loss, predict
from .layer import LayerDims, init_layer, stack_forward
from .tensor import Tensor

EPS = 1e-5
REL_FLOOR = 1e-6
TOLERANCE = 1e-4


def rel_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(f: Callable[[], float], param: Tensor, eps: float = EPS) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to every entry of ``param``."""
    out = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    grad = out.reshape(-1)
    with T.no_grad():
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = f()
            flat[k] = orig - eps
            down = f()
            flat[k] = orig
            grad[k] = (up - down) / (2 * eps)
    return out


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                    eps: float = EPS) -> dict[str, float]:
    """Max relative error per named parameter between backward() and finite differences."""
    for p in params.values():
        p.zero_grad()
    T.backward(loss_fn())
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    f = lambda: loss_fn().item()  # noqa: E731
    return {k: rel_error(analytic[k], numeric_grad(f, p, eps)) for k, p in params.items()}


def _leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    return T.sum_all(T.mul(x, Tensor(weights)))


def random_graph(rng, n_nodes: int, n_edges: int, edge_width: int = 3, node_width: int = 4,
                 n_labels: int = 3):
    src = rng.integers(0, n_nodes, size=n_edges)
    dst = rng.integers(0, n_nodes, size=n_edges)
    split = rng.integers(0, 3, size=n_nodes)
    split[0] = 0
    return build_graph(src, dst, rng.normal(size=(n_edges, edge_width)),
                       rng.normal(size=(n_nodes, node_width)),
                       (rng.random((n_nodes, n_labels)) < 0.4).astype(float), split)


def gipa_case(seed: int = 0, n_nodes: int = 20, n_edges: int = 60, n_layers: int = 2,
              activation: str = "softplus", ablation: str = "full"):
    """Random graph, a ``n_layers`` stack plus head, and a loss closure over all parameters."""
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n_nodes, n_edges)
    m, sparse_in, n, d_e, L = 4, 12, 5, 3, 3
    edge_dim = 0 if ablation == "no_edge_feature" else d_e
    h_d = Tensor(rng.normal(size=(n_nodes, m)))
    h_s = Tensor((rng.random((n_nodes, sparse_in)) < 0.3).astype(float))
    params: dict[str, Tensor] = {}
    w_edge = None
    if edge_dim:
        w_edge = _leaf(rng, g.edge_feat.shape[1], d_e)
        params["edge.w"] = w_edge
    layers = []
    in_d, in_s = m, sparse_in
    for k in range(n_layers):
        layer = init_layer(LayerDims(in_d, in_s, n, m, edge_dim), rng, ablation)
        # replace the zeroed aggregation output maps so every weight carries gradient
        for mlp in (layer.agg_d, layer.agg_s):
            w = mlp.weights[-1]
            w.data[:] = rng.normal(scale=0.5, size=w.shape)
        layers.append(layer)
        params.update(layer.named_parameters(f"layer{k}."))
        in_d, in_s = n, m
    head = init_head(rng, n, m, L)
    params.update(head.named_parameters())
    mask = g.split_mask("train")
    probe = rng.normal(size=(n_nodes, L))

    def loss_fn():
        e = None if w_edge is None else T.matmul(Tensor(g.edge_feat), w_edge)
        o_d, o_s = stack_forward(g, h_d, h_s, e, layers, ablation, activation)
        logits = predict(o_d, o_s, head)
        return T.add(loss(logits, g.labels, mask), _weighted_sum(logits, 0.01 * probe))

    return loss_fn, params


def run_suite(seed: int = 0) -> dict[str, float]:
    """Per-operation maximum relative error over a fixed battery of random cases."""
    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}

    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    wts = rng.normal(size=(3, 2))
    report["matmul"] = max(check_gradients(lambda: _weighted_sum(T.matmul(a, b), wts),
                                           {"a": a, "b": b}).values())

    p1, p2 = _leaf(rng, 3, 2), _leaf(rng, 3, 3)
    wts = rng.normal(size=(3, 5))
    report["concat_rows"] = max(check_gradients(
        lambda: _weighted_sum(T.concat_rows([p1, p2]), wts), {"p1": p1, "p2": p2}).values())

    x, y = _leaf(rng, 4, 3), _leaf(rng, 4, 3)
    wts = rng.normal(size=(4, 3))
    for op in ("add", "sub", "mul"):
        report[op] = max(check_gradients(
            lambda: _weighted_sum(T.elementwise(op, x, y), wts), {"x": x, "y": y}).values())

    z = _leaf(rng, 5, 4)
    z.data[np.abs(z.data) < 1e-2] += 0.05     # stay clear of the relu kink
    wts = rng.normal(size=(5, 4))
    for kind in T.ACTIVATIONS:
        report[kind] = check_gradients(lambda: _weighted_sum(T.activation(kind, z), wts), {"z": z})["z"]

    bias = _leaf(rng, 4)
    report["add_row"] = max(check_gradients(
        lambda: _weighted_sum(T.add_row(z, bias), wts), {"z": z, "bias": bias}).values())

    h = _leaf(rng, 6, 3)
    idx = rng.integers(0, 6, size=10)
    wts = rng.normal(size=(10, 3))
    report["gather_rows"] = check_gradients(lambda: _weighted_sum(T.gather_rows(h, idx), wts),
                                            {"h": h})["h"]

    vals = _leaf(rng, 10, 3)
    seg = rng.integers(0, 4, size=10)
    wts = rng.normal(size=(4, 3))
    report["segment_sum"] = check_gradients(
        lambda: _weighted_sum(T.segment_sum(vals, seg, 4), wts), {"v": vals})["v"]
    wts = rng.normal(size=(10, 3))
    report["segment_softmax"] = check_gradients(
        lambda: _weighted_sum(T.segment_softmax(vals, seg, 4), wts), {"v": vals})["v"]

    feats, w_edge = rng.normal(size=(7, 3)), _leaf(rng, 3, 2)
    wts = rng.normal(size=(7, 2))
    report["embed_edges"] = check_gradients(
        lambda: _weighted_sum(T.matmul(Tensor(feats), w_edge), wts), {"w": w_edge})["w"]

    for activation in ("softplus", "softmax"):
        loss_fn, params = gipa_case(seed, activation=activation)
        report[f"gipa_2layer_{activation}"] = max(check_gradients(loss_fn, params).values())
    return report
