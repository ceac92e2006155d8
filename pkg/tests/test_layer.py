import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gipa.layer as L
from gipa import tensor as T
from gipa.errors import ConfigError, ShapeError
from gipa.graph import build_graph
from gipa.layer import (ABLATIONS, ATTENTION_KINDS, MLP, LayerDims, activate_attention, aggregate,
                        attention_dense, attention_sparse, init_layer, layer_forward, message,
                        propagate_dense, propagate_sparse, stack_forward)
from gipa.tensor import Tensor
from oracles import (dense_attention, dense_layer_forward, edge_only_attention, in_ball, mlp_np,
                     random_layer, random_simple_graph, random_stack, stack_outputs)


def const_mlp(*weights, biases=None):
    ws = [Tensor(np.asarray(w, dtype=float), requires_grad=True) for w in weights]
    bs = [None if b is None else Tensor(np.asarray(b, dtype=float), requires_grad=True)
          for b in (biases or [None] * len(ws))]
    return MLP(ws, bs)


def run_layer(g, layer, hd, hs, w_edge, ablation="full", kind="softplus"):
    e = None if w_edge is None else Tensor(g.edge_feat @ w_edge)
    od, os_ = layer_forward(g, Tensor(hd), Tensor(hs), e, layer, ablation, kind)
    return od.data, os_.data


# ---------------------------------------------------------------------------
# attention, propagation, message, aggregation


def test_zero_attention_weights_give_zero_logits():
    rng = np.random.default_rng(0)
    att = const_mlp(np.zeros((7, 3)), np.zeros((3, 3)))
    h_i, h_j, e = (Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(4, 3))),
                   Tensor(rng.normal(size=(4, 1))))
    assert np.all(attention_dense(h_i, h_j, e, att).data == 0.0)
    assert np.all(attention_sparse(h_i, h_j, e, att).data == 0.0)


def test_attention_hand_computed_single_edge():
    # a = 2 * relu(h_i + 2 h_j + 3 e), bias-free
    att = const_mlp([[1.0], [2.0], [3.0]], [[2.0]])
    out = attention_dense(Tensor([[1.0], [-2.0]]), Tensor([[-1.0], [-1.0]]), Tensor([[0.5], [0.5]]), att)
    assert out.data[:, 0].tolist() == [1.0, 0.0]


def test_attention_bias_free_zero_inputs():
    rng = np.random.default_rng(1)
    layer = init_layer(LayerDims(3, 5, 4, 2, 2), rng)
    z = lambda w: Tensor(np.zeros((6, w)))  # noqa: E731
    assert np.all(attention_dense(z(3), z(3), z(2), layer.att_d).data == 0.0)
    assert np.all(attention_sparse(z(5), z(5), z(2), layer.att_s).data == 0.0)
    assert all(b is None for b in layer.att_d.biases + layer.att_s.biases)


def test_attention_rows_are_pure():
    rng = np.random.default_rng(2)
    layer = init_layer(LayerDims(3, 5, 4, 2, 2), rng)
    h_i, h_j, e = rng.normal(size=(8, 3)), rng.normal(size=(8, 3)), rng.normal(size=(8, 2))
    perm = rng.permutation(8)
    a = attention_dense(Tensor(h_i), Tensor(h_j), Tensor(e), layer.att_d).data
    b = attention_dense(Tensor(h_i[perm]), Tensor(h_j[perm]), Tensor(e[perm]), layer.att_d).data
    assert np.array_equal(a[perm], b)


def test_attention_width_mismatch():
    rng = np.random.default_rng(3)
    layer = init_layer(LayerDims(3, 5, 4, 2, 2), rng)
    with pytest.raises(ShapeError):
        attention_dense(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))), layer.att_d)


def test_propagate_hand_computed_and_zero_weights():
    # p = relu(h_j - e + 1) * 3 - 1
    prop = const_mlp([[1.0], [-1.0]], [[3.0]], biases=[[1.0], [-1.0]])
    out = propagate_dense(Tensor([[2.0], [0.0]]), Tensor([[1.0], [5.0]]), prop)
    assert out.data[:, 0].tolist() == [5.0, -1.0]
    zero = const_mlp(np.zeros((3, 2)), np.zeros((2, 2)), biases=[np.zeros(2), np.zeros(2)])
    assert np.all(propagate_sparse(Tensor(np.ones((3, 2))), Tensor(np.ones((3, 1))), zero).data == 0.0)


def test_propagate_excludes_destination():
    rng = np.random.default_rng(4)
    layer = init_layer(LayerDims(3, 5, 4, 2, 2), rng)
    assert layer.prop_d.in_width == 3 + 2
    assert layer.prop_s.in_width == 5 + 2


def test_activation_kinds():
    zeros = Tensor(np.zeros((5, 3)))
    assert np.all(activate_attention(zeros, "softplus").data == math.log(2.0))
    logits = Tensor(np.array([[0.7], [0.7], [0.7], [1.0]]))
    sm = activate_attention(logits, "softmax", [1, 1, 1, 0], 2).data
    assert sm[:3, 0].tolist() == pytest.approx([1 / 3] * 3, abs=1e-15)
    assert sm[3, 0] == 1.0
    x = Tensor(np.random.default_rng(5).normal(size=(4, 2)))
    assert np.array_equal(activate_attention(x, "none").data, x.data)
    with pytest.raises(ConfigError):
        activate_attention(x, "gelu")
    with pytest.raises(ConfigError):
        activate_attention(x, "softmax")


def test_message_rules():
    rng = np.random.default_rng(6)
    p = Tensor(rng.normal(size=(5, 3)))
    assert np.array_equal(message(Tensor(np.ones((5, 3))), p).data, p.data)
    assert np.all(message(Tensor(np.zeros((5, 3))), p).data == 0.0)
    a = Tensor(rng.normal(size=(5, 3)))
    assert np.array_equal(message(a, p).data, a.data * p.data)
    with pytest.raises(ShapeError):
        message(Tensor(np.ones((5, 2))), p)


def test_aggregate_empty_neighborhood_and_zero_mlp():
    rng = np.random.default_rng(7)
    layer = random_layer(rng, 3, 5, 4, 2, 2)
    h = rng.normal(size=(3, 3))
    no_msgs = Tensor(np.zeros((0, 4)))
    out = aggregate(no_msgs, np.zeros(0, dtype=np.int64), Tensor(h), layer.agg_d, layer.proj_d).data
    expect = mlp_np(layer.agg_d, np.concatenate([np.zeros((3, 4)), h], axis=1)) + h @ layer.proj_d.data
    assert np.allclose(out, expect, atol=1e-14, rtol=0)
    zero_agg = const_mlp(np.zeros((7, 4)), np.zeros((4, 4)))
    msgs = Tensor(rng.normal(size=(6, 4)))
    out = aggregate(msgs, [0, 0, 1, 2, 2, 2], Tensor(h), zero_agg, layer.proj_d).data
    assert np.array_equal(out, h @ layer.proj_d.data)


def test_single_node_without_edges():
    rng = np.random.default_rng(8)
    g = build_graph([], [], np.zeros((0, 3)), rng.normal(size=(1, 2)))
    layer = random_layer(rng, 2, 4, 3, 2, 3)
    hd, hs = rng.normal(size=(1, 2)), rng.normal(size=(1, 4))
    od, os_ = run_layer(g, layer, hd, hs, rng.normal(size=(3, 3)))
    expect_d = mlp_np(layer.agg_d, np.concatenate([np.zeros((1, 3)), hd], axis=1)) + hd @ layer.proj_d.data
    expect_s = mlp_np(layer.agg_s, np.concatenate([np.zeros((1, 2)), hs], axis=1)) + hs @ layer.proj_s.data
    assert np.allclose(od, expect_d, atol=1e-14, rtol=0)
    assert np.allclose(os_, expect_s, atol=1e-14, rtol=0)


# ---------------------------------------------------------------------------
# whole-layer oracles and invariants


@pytest.mark.parametrize("ablation", ABLATIONS)
@pytest.mark.parametrize("kind", ATTENTION_KINDS)
def test_matches_dense_oracle(ablation, kind):
    rng = np.random.default_rng(zlib.crc32(f"{ablation}/{kind}".encode()))
    for _ in range(4):
        n = int(rng.integers(1, 30))
        g, A, F = random_simple_graph(rng, n)
        de = 0 if ablation == "no_edge_feature" else 3
        layer = random_layer(rng, 4, 6, 5, 3, de, ablation)
        w_edge = None if de == 0 else rng.normal(size=(3, 3))
        hd, hs = rng.normal(size=(n, 4)), rng.normal(size=(n, 6))
        od, os_ = run_layer(g, layer, hd, hs, w_edge, ablation, kind)
        rd, rs = dense_layer_forward(A, None if de == 0 else F @ w_edge, hd, hs, layer, kind)
        assert np.max(np.abs(od - rd)) <= 1e-10
        assert np.max(np.abs(os_ - rs)) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 25), st.integers(0, 2**31))
def test_softmax_attention_columns_sum_to_one(n, seed):
    rng = np.random.default_rng(seed)
    g, A, F = random_simple_graph(rng, n, edge_prob=0.4)
    layer = random_layer(rng, 4, 6, 5, 3, 3)
    w_edge = rng.normal(size=(3, 3))
    h = rng.normal(size=(n, 4))
    src, dst = g.src_ids, g.dst_ids
    logits = attention_dense(Tensor(h[dst]), Tensor(h[src]), Tensor(g.edge_feat @ w_edge), layer.att_d)
    gates = activate_attention(logits, "softmax", dst, n).data
    sums = np.zeros((n, gates.shape[1]))
    np.add.at(sums, dst, gates)
    has_in = g.in_degrees() > 0
    assert np.all(np.abs(sums[has_in] - 1.0) <= 1e-9)
    dense = dense_attention(A, F @ w_edge, h, layer.att_d, "softmax")
    assert np.allclose(dense[dst, src], gates, atol=1e-12, rtol=0)


def test_full_equals_no_bitwise_when_dense_gates_are_ones(monkeypatch):
    rng = np.random.default_rng(9)
    g, A, F = random_simple_graph(rng, 15)
    full = random_layer(rng, 4, 6, 5, 3, 3, "full")
    ablated = L.GipaLayerParams(full.dims, None, full.att_s, full.prop_d, full.prop_s,
                                full.agg_d, full.agg_s, full.proj_d, full.proj_s)
    w_edge = rng.normal(size=(3, 3))
    hd, hs = rng.normal(size=(15, 4)), rng.normal(size=(15, 6))
    expect = run_layer(g, ablated, hd, hs, w_edge, "no_bitwise")

    real = L.activate_attention

    def dense_gates_are_ones(logits, kind, segments=None, n_nodes=None):
        if logits.shape[1] == full.dims.n:        # dense path (n=5, m=3)
            return Tensor(np.ones(logits.shape))
        return real(logits, kind, segments, n_nodes)

    monkeypatch.setattr(L, "activate_attention", dense_gates_are_ones)
    got = run_layer(g, full, hd, hs, w_edge, "full")
    assert np.array_equal(got[0], expect[0]) and np.array_equal(got[1], expect[1])


def test_ablation_shapes_and_consistency_errors():
    rng = np.random.default_rng(10)
    dims = LayerDims(4, 6, 5, 3, 3)
    assert init_layer(dims, rng, "no_bitwise").att_d is None
    assert init_layer(dims, rng, "no_featurewise").att_s is None
    narrow = init_layer(LayerDims(4, 6, 5, 3, 0), rng, "no_edge_feature")
    assert narrow.prop_d.in_width == 4
    with pytest.raises(ConfigError):
        init_layer(dims, rng, "no_edge_feature")
    with pytest.raises(ConfigError):
        init_layer(dims, rng, "bogus")
    g, _, _ = random_simple_graph(rng, 6)
    full = init_layer(dims, rng, "full")
    hd, hs = Tensor(np.zeros((6, 4))), Tensor(np.zeros((6, 6)))
    e = Tensor(np.zeros((g.n_edges, 3)))
    with pytest.raises(ConfigError):
        layer_forward(g, hd, hs, e, full, "no_bitwise")
    with pytest.raises(ConfigError):
        layer_forward(g, hd, hs, None, full, "full")
    with pytest.raises(ShapeError):
        layer_forward(g, Tensor(np.zeros((6, 3))), hs, e, full, "full")


def test_layer_dims_validation():
    with pytest.raises(ConfigError):
        LayerDims(0, 6, 5, 3, 3)
    with pytest.raises(ConfigError):
        LayerDims(4, 6, 5, 3, -1)

def test_stack_composition_and_shapes():
    rng = np.random.default_rng(11)
    g, _, _ = random_simple_graph(rng, 12)
    w_edge = rng.normal(size=(3, 3))
    e = Tensor(g.edge_feat @ w_edge)
    hd, hs = Tensor(rng.normal(size=(12, 4))), Tensor(rng.normal(size=(12, 6)))
    layers = random_stack(rng, 2)
    one = stack_forward(g, hd, hs, e, layers[:1])
    direct = layer_forward(g, hd, hs, e, layers[0])
    assert np.array_equal(one[0].data, direct[0].data)
    manual = layer_forward(g, *direct, e, layers[1])
    two = stack_forward(g, hd, hs, e, layers)
    assert np.array_equal(two[0].data, manual[0].data) and np.array_equal(two[1].data, manual[1].data)
    for k in range(1, 7):
        od, os_ = stack_forward(g, hd, hs, e, random_stack(rng, k))
        assert od.shape == (12, 5) and os_.shape == (12, 3)


def test_stack_dimension_chain_errors():
    rng = np.random.default_rng(12)
    g, _, _ = random_simple_graph(rng, 5)
    e = Tensor(np.zeros((g.n_edges, 3)))
    bad = [random_layer(rng, 4, 6, 5, 3, 3), random_layer(rng, 4, 3, 5, 3, 3)]
    with pytest.raises(ConfigError):
        stack_forward(g, Tensor(np.zeros((5, 4))), Tensor(np.zeros((5, 6))), e, bad)
    with pytest.raises(ConfigError):
        stack_forward(g, Tensor(np.zeros((5, 4))), Tensor(np.zeros((5, 6))), e, [])

@settings(max_examples=20, deadline=None)
@given(st.integers(2, 25), st.integers(0, 2**31), st.sampled_from(["softplus", "softmax"]))
def test_neighbor_order_invariance(n, seed, kind):
    rng = np.random.default_rng(seed)
    E = int(rng.integers(0, 4 * n))
    src, dst = rng.integers(0, n, size=E), rng.integers(0, n, size=E)
    feat = rng.normal(size=(E, 3))
    x = rng.normal(size=(n, 4))
    layers = random_stack(rng, 2)
    w_edge = rng.normal(size=(3, 3))
    hd, hs = rng.normal(size=(n, 4)), rng.normal(size=(n, 6))
    perm = rng.permutation(E)
    g1 = build_graph(src, dst, feat, x)
    g2 = build_graph(src[perm], dst[perm], feat[perm], x)
    a, b = stack_outputs(g1, layers, hd, hs, w_edge, kind), stack_outputs(g2, layers, hd, hs, w_edge, kind)
    assert np.max(np.abs(a[0] - b[0])) <= 1e-10 and np.max(np.abs(a[1] - b[1])) <= 1e-10

@settings(max_examples=20, deadline=None)
@given(st.integers(3, 30), st.integers(1, 3), st.integers(0, 2**31),
       st.sampled_from(["softplus", "softmax"]))
def test_k_hop_locality(n, k, seed, kind):
    rng = np.random.default_rng(seed)
    E = int(rng.integers(n, 2 * n))
    src, dst = rng.integers(0, n, size=E), rng.integers(0, n, size=E)
    g = build_graph(src, dst, rng.normal(size=(E, 3)), np.zeros((n, 1)))
    layers = random_stack(rng, k)
    w_edge = rng.normal(size=(3, 3))
    hd, hs = rng.normal(size=(n, 4)), rng.normal(size=(n, 6))
    v = int(rng.integers(0, n))
    ball = in_ball(g, v, k)
    outside = [u for u in range(n) if u not in ball]
    base = stack_outputs(g, layers, hd, hs, w_edge, kind)
    hd2, hs2 = hd.copy(), hs.copy()
    hd2[outside] += rng.normal(scale=5, size=(len(outside), 4))
    hs2[outside] += rng.normal(scale=5, size=(len(outside), 6))
    # edges into nodes outside the ball are outside the receptive field too
    feat2 = g.edge_feat.copy()
    far = np.isin(g.dst_ids, outside)
    feat2[far] += rng.normal(scale=5, size=(int(far.sum()), 3))
    g2 = build_graph(g.src_ids, g.dst_ids, feat2, np.zeros((n, 1)))
    moved = stack_outputs(g2, layers, hd2, hs2, w_edge, kind)
    assert np.array_equal(base[0][v], moved[0][v]) and np.array_equal(base[1][v], moved[1][v])

@settings(max_examples=20, deadline=None)
@given(st.integers(2, 25), st.integers(0, 2**31), st.sampled_from(["relu", "tanh", "none", "leaky_relu"]))
def test_zero_attention_edges_can_be_removed(n, seed, kind):
    rng = np.random.default_rng(seed)
    E = int(rng.integers(1, 4 * n))
    src, dst = rng.integers(0, n, size=E), rng.integers(0, n, size=E)
    feat = rng.normal(size=(E, 3))
    silent = rng.random(E) < 0.4
    feat[silent] = 0.0                     # zero embedding -> zero logits -> act(0) = 0
    layers = random_stack(rng, 2)
    edge_only_attention(layers)
    w_edge = rng.normal(size=(3, 3))
    hd, hs = rng.normal(size=(n, 4)), rng.normal(size=(n, 6))
    x = np.zeros((n, 1))
    with_edges = stack_outputs(build_graph(src, dst, feat, x), layers, hd, hs, w_edge, kind)
    keep = ~silent
    without = stack_outputs(build_graph(src[keep], dst[keep], feat[keep], x), layers, hd, hs, w_edge, kind)
    assert np.max(np.abs(with_edges[0] - without[0])) <= 1e-12
    assert np.max(np.abs(with_edges[1] - without[1])) <= 1e-12


def test_edge_mlp_matches_concatenated_route():
    rng = np.random.default_rng(13)
    g, _, _ = random_simple_graph(rng, 10)
    layer = random_layer(rng, 4, 6, 5, 3, 3)
    h = Tensor(rng.normal(size=(10, 4)))
    e = Tensor(rng.normal(size=(g.n_edges, 3)))
    src, dst = g.src_ids, g.dst_ids
    fast = L.edge_mlp(layer.att_d, [(h, dst), (h, src)], e).data
    slow = attention_dense(T.gather_rows(h, dst), T.gather_rows(h, src), e, layer.att_d).data
    assert np.allclose(fast, slow, atol=1e-12, rtol=0)
    fast = L.edge_mlp(layer.prop_d, [(h, src)], e).data
    slow = propagate_dense(T.gather_rows(h, src), e, layer.prop_d).data
    assert np.allclose(fast, slow, atol=1e-12, rtol=0)
