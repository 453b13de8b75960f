"""Tests for QPU-FC, graph aggregation, bridges and the real-valued layers."""

import numpy as np
import pytest

from qpu_kit.errors import ContractViolation
from qpu_kit.layers import (
    BridgeLayer,
    DenseLayer,
    GraphAggregateLayer,
    QpuFcLayer,
    bridge_backward,
    bridge_forward,
    graph_aggregate,
    init_xavier,
    qfc_backward,
    qfc_forward,
    real_dense,
    softmax_cross_entropy,
)
from qpu_kit.qpu import (
    QpuParams,
    TapeMode,
    finite_diff_gradient,
    qpow_biased,
    qpu_backward,
    qpu_forward,
    relative_error,
)
from qpu_kit.quaternion import conjugate, hamilton, identity, qpow, random_unit
from qpu_kit.schemas import BridgeMode

TOL = 1e-5


@pytest.fixture()
def rng():
    return np.random.default_rng(42)


def _layer(n_in, n_out, rng, tape_mode=TapeMode.STORE):
    layer = QpuFcLayer.create(n_in, n_out, rng, tape_mode=tape_mode)
    layer.params["biases"] = rng.uniform(-0.5, 0.5, size=n_out)
    return layer


# ─── QPU-FC ─────────────────────────────────────────────────


def test_single_output_reduces_to_qpu(rng):
    layer = _layer(5, 1, rng)
    qs = random_unit(rng, (5,))
    ys, _ = qfc_forward(layer, qs)
    y, _ = qpu_forward(qs, QpuParams.of(layer.weights[0], layer.biases[0]))
    np.testing.assert_array_equal(ys[0], y)


def test_zero_weights_give_identities(rng):
    layer = QpuFcLayer(3, 4, params={"weights": np.zeros((4, 3)), "biases": np.ones(4)})
    ys, _ = qfc_forward(layer, random_unit(rng, (2, 3)))
    np.testing.assert_allclose(ys, np.tile(identity(), (2, 4, 1)), atol=1e-15)


def test_width_mismatch_is_rejected(rng):
    with pytest.raises(ContractViolation):
        qfc_forward(_layer(3, 2, rng), random_unit(rng, (4,)))


def test_real_parts_are_rotation_invariant(rng):
    layer = _layer(6, 5, rng)
    qs = random_unit(rng, (6,))
    r = random_unit(rng)
    ys, _ = qfc_forward(layer, qs)
    ys_rot, _ = qfc_forward(layer, hamilton(hamilton(r, qs), conjugate(r)))
    assert np.max(np.abs(ys[:, 0] - ys_rot[:, 0])) <= 1e-9


def test_zero_upstream_gives_zero_grads(rng):
    layer = _layer(3, 2, rng)
    qs = random_unit(rng, (3,))
    _, tapes = qfc_forward(layer, qs)
    dqs, dw, db = qfc_backward(layer, qs, tapes, np.zeros((2, 4)))
    assert not dqs.any() and not dw.any() and not db.any()


def test_single_output_backward_equals_qpu_backward(rng):
    layer = _layer(4, 1, rng)
    qs = random_unit(rng, (4,))
    g = rng.standard_normal((1, 4))
    _, tapes = qfc_forward(layer, qs)
    dqs, dw, db = qfc_backward(layer, qs, tapes, g)
    params = QpuParams.of(layer.weights[0], layer.biases[0])
    _, tape = qpu_forward(qs, params)
    ref = qpu_backward(qs, params, tape, g[0])
    np.testing.assert_array_equal(dqs, ref.dq)
    np.testing.assert_array_equal(dw[0], ref.dw)
    np.testing.assert_array_equal(db[0], ref.db)


@pytest.mark.parametrize("tape_mode", list(TapeMode))
def test_qfc_backward_matches_finite_differences(rng, tape_mode):
    layer = _layer(3, 2, rng, tape_mode)
    qs = random_unit(rng, (2, 3))
    g = rng.standard_normal((2, 2, 4))
    _, tapes = qfc_forward(layer, qs)
    dqs, dw, db = qfc_backward(layer, qs, tapes, g)

    def loss_qs(x):
        return float(np.sum(g * qfc_forward(layer, x)[0]))

    def loss_param(name):
        saved = layer.params[name].copy()

        def f(x):
            layer.params[name] = x
            out = float(np.sum(g * qfc_forward(layer, qs)[0]))
            layer.params[name] = saved
            return out

        return f

    assert relative_error(dqs, finite_diff_gradient(loss_qs, qs)).max() <= TOL
    assert relative_error(dw, finite_diff_gradient(loss_param("weights"), layer.weights)).max() <= TOL
    assert relative_error(db, finite_diff_gradient(loss_param("biases"), layer.biases)).max() <= TOL


def test_recompute_mode_matches_store_mode(rng):
    store = _layer(7, 3, rng)
    recompute = QpuFcLayer(7, 3, params=store.params, tape_mode=TapeMode.RECOMPUTE)
    qs = random_unit(rng, (4, 7))
    g = rng.standard_normal((4, 3, 4))
    ys_store, cache_store = store.forward(qs)
    ys_re, cache_re = recompute.forward(qs)
    assert cache_re.tape is None
    np.testing.assert_allclose(ys_re, ys_store, atol=1e-12)
    dq_s, grads_s = store.backward(cache_store, g)
    dq_r, grads_r = recompute.backward(cache_re, g)
    np.testing.assert_array_equal(dq_s, dq_r)
    np.testing.assert_array_equal(grads_s["weights"], grads_r["weights"])


def test_two_layers_are_not_one():
    """Composing two layers folds angles through arccos; one layer cannot follow the fold."""
    theta = np.linspace(0.1, 3.0, 30)
    axis = np.array([0.0, 0.6, 0.8])
    qs = np.concatenate([np.cos(theta)[:, None], np.sin(theta)[:, None] * axis], axis=-1)

    first = QpuFcLayer(1, 1, params={"weights": np.array([[2.0]]), "biases": np.zeros(1)})
    second = QpuFcLayer(1, 1, params={"weights": np.array([[1.0]]), "biases": np.array([0.5])})
    hidden, _ = first.forward(qs[:, None, :])
    target, _ = second.forward(hidden)
    target_real = target[:, 0, 0]

    # a one-input layer is a single weighted power
    biases = np.linspace(-np.pi, np.pi, 181)[:, None]
    best = np.inf
    for w in np.linspace(-4.0, 4.0, 161):
        single = qpow_biased(qs[None, :, :], w, biases)[..., 0]
        best = min(best, float(np.max(np.abs(single - target_real), axis=-1).min()))
    assert best > 1e-3


# ─── Initialization ─────────────────────────────────────────


def test_xavier_is_deterministic():
    np.testing.assert_array_equal(init_xavier(5, 7, 3), init_xavier(5, 7, 3))


def test_xavier_bound():
    w = init_xavier(3, 3, 0)
    assert w.shape == (3, 3)
    assert np.all(np.abs(w) <= 1.0)


def test_xavier_mean_is_centred():
    w = init_xavier(250, 400, 0)
    bound = np.sqrt(6.0 / 650)
    sigma = bound / np.sqrt(3.0) / np.sqrt(w.size)
    assert abs(w.mean()) <= 5 * sigma
    assert np.all(np.abs(w) <= bound)


def test_xavier_rejects_empty_layers():
    with pytest.raises(ContractViolation):
        init_xavier(0, 3, 0)


def test_new_layers_start_with_zero_biases():
    assert not QpuFcLayer.create(3, 4).biases.any()


# ─── Graph aggregation ──────────────────────────────────────


def test_identity_adjacency_returns_inputs(rng):
    qs = random_unit(rng, (5,))
    np.testing.assert_allclose(graph_aggregate(np.eye(5), qs), qs, atol=1e-9)


def test_zero_row_gives_identity(rng):
    adj = rng.uniform(-1, 1, size=(4, 4))
    adj[2] = 0.0
    out = graph_aggregate(adj, random_unit(rng, (4,)))
    np.testing.assert_allclose(out[2], identity(), atol=1e-15)


def test_one_hot_row_gives_power(rng):
    qs = random_unit(rng, (4,))
    adj = np.zeros((4, 4))
    adj[0, 3] = 2.0
    np.testing.assert_allclose(graph_aggregate(adj, qs)[0], qpow(qs[3], 2.0), atol=1e-12)


def test_adjacency_shape_must_match(rng):
    with pytest.raises(ContractViolation):
        graph_aggregate(np.eye(3), random_unit(rng, (4,)))


def test_graph_layer_adjacency_gradient(rng):
    layer = GraphAggregateLayer.from_adjacency(rng.uniform(-1, 1, size=(3, 3)))
    qs = random_unit(rng, (2, 3))
    g = rng.standard_normal((2, 3, 4))
    _, cache = layer.forward(qs)
    dqs, grads = layer.backward(cache, g)

    def loss_adj(a):
        return float(np.sum(g * graph_aggregate(a, qs)))

    numeric = finite_diff_gradient(loss_adj, layer.params["adjacency"])
    assert relative_error(grads["adjacency"], numeric).max() <= TOL
    numeric_q = finite_diff_gradient(
        lambda x: float(np.sum(g * graph_aggregate(layer.params["adjacency"], x))), qs
    )
    assert relative_error(dqs, numeric_q).max() <= TOL


# ─── Bridges ────────────────────────────────────────────────


@pytest.mark.parametrize("mode,width", [
    (BridgeMode.KEEP_REAL, 1),
    (BridgeMode.KEEP_IMAGINARY, 3),
    (BridgeMode.FLATTEN4, 4),
    (BridgeMode.ANGLE_AXIS, 4),
])
def test_bridge_widths(rng, mode, width):
    ys = random_unit(rng, (2, 5))
    assert bridge_forward(mode, ys).shape == (2, 5 * width)
    assert mode.width == width


def test_keep_real_of_identities():
    np.testing.assert_array_equal(bridge_forward(BridgeMode.KEEP_REAL, identity((3,))), np.ones(3))


def test_angle_axis_bridge_example():
    c = np.cos(np.pi / 4)
    out = bridge_forward(BridgeMode.ANGLE_AXIS, np.array([[c, 0.0, 0.0, c]]))
    np.testing.assert_allclose(out, [np.pi / 4, 0.0, 0.0, 1.0], atol=1e-12)


def test_keep_real_bridge_is_invariant_end_to_end(rng):
    layer = _layer(6, 4, rng)
    qs = random_unit(rng, (6,))
    r = random_unit(rng)
    a = bridge_forward(BridgeMode.KEEP_REAL, qfc_forward(layer, qs)[0])
    b = bridge_forward(
        BridgeMode.KEEP_REAL, qfc_forward(layer, hamilton(hamilton(r, qs), conjugate(r)))[0]
    )
    assert np.max(np.abs(a - b)) <= 1e-9


@pytest.mark.parametrize("mode", list(BridgeMode))
def test_bridge_backward_matches_finite_differences(rng, mode):
    ys = random_unit(rng, (2, 3))
    g = rng.standard_normal((2, 3 * mode.width))
    analytic = bridge_backward(mode, ys, g)
    numeric = finite_diff_gradient(lambda x: float(np.sum(g * bridge_forward(mode, x))), ys)
    assert relative_error(analytic, numeric).max() <= TOL


def test_bridge_layer_round_trip_shapes(rng):
    layer = BridgeLayer(4, BridgeMode.KEEP_IMAGINARY)
    ys = random_unit(rng, (3, 4))
    out, cache = layer.forward(ys)
    grad_in, grads = layer.backward(cache, np.ones_like(out))
    assert out.shape == (3, 12)
    assert grad_in.shape == ys.shape and grads == {}
    assert layer.spec.n_out == 12


# ─── Real-valued layers ─────────────────────────────────────


def test_dense_identity():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(real_dense(x, np.eye(3), np.zeros(3)), x)


def test_dense_rectifier_zeroes_negatives():
    out = real_dense(np.ones(2), -np.ones((3, 2)), np.zeros(3), rectify=True)
    np.testing.assert_array_equal(out, np.zeros(3))


def test_dense_width_mismatch():
    with pytest.raises(ContractViolation):
        real_dense(np.ones(4), np.eye(3), np.zeros(3))


def test_dense_backward_matches_finite_differences(rng):
    layer = DenseLayer.create(5, 3, rng)
    layer.params["biases"] = rng.standard_normal(3)
    x = rng.standard_normal((4, 5))
    g = rng.standard_normal((4, 3))
    _, cache = layer.forward(x)
    dx, grads = layer.backward(cache, g)

    def loss_param(name):
        def f(v):
            saved = layer.params[name]
            layer.params[name] = v
            out = float(np.sum(g * layer.forward(x)[0]))
            layer.params[name] = saved
            return out

        return f

    numeric_x = finite_diff_gradient(lambda v: float(np.sum(g * layer.forward(v)[0])), x)
    assert relative_error(dx, numeric_x).max() <= 1e-6
    for name in ("weights", "biases"):
        numeric = finite_diff_gradient(loss_param(name), layer.params[name])
        assert relative_error(grads[name], numeric).max() <= 1e-6


def test_rectified_dense_blocks_gradient_of_inactive_units():
    layer = DenseLayer(2, 2, rectify=True, params={"weights": np.eye(2), "biases": np.zeros(2)})
    x = np.array([[1.0, -1.0]])
    _, cache = layer.forward(x)
    dx, grads = layer.backward(cache, np.ones((1, 2)))
    np.testing.assert_array_equal(dx, [[1.0, 0.0]])
    np.testing.assert_array_equal(grads["biases"], [1.0, 0.0])


# ─── Softmax cross-entropy ──────────────────────────────────


def test_uniform_logits_give_log_c():
    loss, _ = softmax_cross_entropy(np.zeros(32), 5)
    assert loss == pytest.approx(np.log(32))


def test_gradient_sums_to_zero(rng):
    _, grad = softmax_cross_entropy(rng.standard_normal((6, 10)) * 5, rng.integers(10, size=6))
    assert np.max(np.abs(grad.sum(axis=-1))) <= 1e-12


def test_large_logits_are_stable():
    loss, grad = softmax_cross_entropy(np.array([1000.0, 0.0, -1000.0]), 0)
    assert np.isfinite(loss) and np.all(np.isfinite(grad))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_out_of_range_label():
    with pytest.raises(ContractViolation):
        softmax_cross_entropy(np.zeros(4), 4)


def test_cross_entropy_gradient_matches_finite_differences(rng):
    z = rng.standard_normal(7)
    _, grad = softmax_cross_entropy(z, 3)
    numeric = finite_diff_gradient(lambda v: float(softmax_cross_entropy(v, 3)[0]), z)
    assert relative_error(grad, numeric).max() <= 1e-6
