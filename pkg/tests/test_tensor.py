"""Engine-level tests: autodiff mechanics and per-op gradients."""

import numpy as np
import pytest

from tmamba.numcore import (
    GraphError,
    NonFiniteError,
    Tensor,
    adaptive_mean_pool1d,
    concat,
    exp,
    flip,
    grad_check,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    no_grad,
    pad_last,
    permute,
    reshape,
    sigmoid,
    silu,
    softmax,
    softplus,
    sqrt,
    take,
    tmax,
    tmean,
    tsum,
)

rng = np.random.default_rng(1234)


def leaf(*shape, positive=False):
    data = rng.normal(0.0, 1.0, shape)
    if positive:
        data = np.abs(data) + 0.5
    return Tensor(data, requires_grad=True)


def weighted_sum(t: Tensor) -> Tensor:
    w = np.cos(np.arange(t.size, dtype=np.float64)).reshape(t.shape)
    return tsum(t * Tensor(w))


def test_chain_rule_matches_hand_derivative():
    x = Tensor(np.array(0.7), requires_grad=True)
    y = exp(x * x) * 3.0
    y.backward()
    expect = 3.0 * np.exp(0.49) * 2.0 * 0.7
    assert abs(x.grad - expect) < 1e-12


def test_shared_leaf_accumulates_both_paths():
    x = Tensor(np.array(2.0), requires_grad=True)
    y = x * x + x * 3.0
    y.backward()
    assert abs(x.grad - (2.0 * 2.0 + 3.0)) < 1e-12


def test_broadcast_gradients_reduce_to_leaf_shape():
    a = leaf(3, 4)
    b = leaf(4)
    out = tsum(a * b)
    out.backward()
    assert a.grad.shape == (3, 4)
    assert b.grad.shape == (4,)
    assert np.allclose(b.grad, a.data.sum(axis=0))


def test_scalar_operator_sugar():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = tsum((2.0 * x + 1.0) / 2.0 - x)
    y.backward()
    assert np.allclose(x.grad, 0.0)


def test_getitem_routes_gradient_to_slice():
    x = leaf(4, 5)
    y = tsum(x[1:3, ::2])
    y.backward()
    expect = np.zeros((4, 5))
    expect[1:3, ::2] = 1.0
    assert np.array_equal(x.grad, expect)


def test_second_backward_raises():
    x = leaf(3)
    y = tsum(x * x)
    y.backward()
    with pytest.raises(GraphError):
        y.backward()


def test_backward_needs_seed_for_nonscalar():
    x = leaf(3)
    y = x * 2.0
    with pytest.raises(GraphError):
        y.backward()
    y2 = x * 2.0
    with pytest.raises(GraphError):
        y2.backward(np.ones(4))


def test_backward_on_constant_raises():
    y = Tensor(np.ones(3)) * 2.0
    with pytest.raises(GraphError):
        y.backward(np.ones(3))


def test_non_finite_forward_raises():
    x = Tensor(np.array([-1.0]), requires_grad=True)
    with pytest.raises(NonFiniteError):
        log(x)
    with pytest.raises(NonFiniteError):
        Tensor(np.array([np.inf]))


def test_no_grad_builds_constants():
    x = leaf(3)
    with no_grad():
        y = x * x
    assert not y.requires_grad
    assert y.is_leaf()


def test_detach_breaks_graph():
    x = leaf(3)
    y = tsum(x.detach() * x)
    y.backward()
    assert np.allclose(x.grad, x.data)  # only the live branch contributes


@pytest.mark.parametrize("op", [
    lambda a, b: a + b,
    lambda a, b: a - b,
    lambda a, b: a * b,
    lambda a, b: a / (sqrt(b * b) + 0.5),
    lambda a, b: -a,
    lambda a, b: exp(a),
    lambda a, b: sqrt(a + 6.0),
    lambda a, b: sigmoid(a),
    lambda a, b: silu(a),
    lambda a, b: softplus(a),
    lambda a, b: softmax(a, axis=-1),
    lambda a, b: log_softmax(a, axis=-1),
])
def test_elementwise_gradients(op):
    a, b = leaf(2, 5), leaf(2, 5)
    err = grad_check(lambda: weighted_sum(op(a, b)), [a, b])
    assert err < 1e-6


def test_log_gradient():
    a = leaf(2, 5, positive=True)
    assert grad_check(lambda: weighted_sum(log(a)), [a]) < 1e-6


@pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), (1, True)])
def test_reduction_gradients(axis, keepdims):
    a = leaf(3, 4)
    for red in (tsum, tmean):
        err = grad_check(lambda: weighted_sum(red(a, axis=axis, keepdims=keepdims)),
                         [a])
        assert err < 1e-6


def test_tmax_gradient_routes_to_argmax():
    a = Tensor(np.array([[1.0, 5.0, 2.0], [4.0, 0.0, 3.0]]), requires_grad=True)
    y = tsum(tmax(a, axis=1))
    y.backward()
    assert np.array_equal(a.grad, [[0, 1, 0], [1, 0, 0]])


@pytest.mark.parametrize("op", [
    lambda a: reshape(a, (4, 6)),
    lambda a: permute(a, (2, 0, 1)),
    lambda a: flip(a, 1),
    lambda a: take(a, (slice(1, 2), slice(None), slice(0, 2))),
    lambda a: pad_last(a, 2, 3),
])
def test_shape_op_gradients(op):
    a = leaf(2, 3, 4)
    assert grad_check(lambda: weighted_sum(op(a)), [a]) < 1e-6


def test_concat_gradient():
    a, b = leaf(2, 3), leaf(2, 2)
    err = grad_check(lambda: weighted_sum(concat([a, b], axis=1)), [a, b])
    assert err < 1e-6


def test_matmul_and_linear_gradients():
    x, w, b = leaf(4, 3), leaf(3, 5), leaf(5)
    assert grad_check(lambda: weighted_sum(matmul(x, w)), [x, w]) < 1e-6
    assert grad_check(lambda: weighted_sum(linear(x, w, b)), [x, w, b]) < 1e-6


def test_batched_matmul_gradient():
    x, w = leaf(2, 4, 3), leaf(2, 3, 5)
    assert grad_check(lambda: weighted_sum(matmul(x, w)), [x, w]) < 1e-6


def test_layer_norm_gradient_and_normalization():
    x, g, b = leaf(3, 8), leaf(8), leaf(8)
    out = layer_norm(x, g, b)
    raw = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
    assert np.allclose(raw.data.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose(raw.data.std(axis=-1), 1.0, atol=1e-3)
    assert out.shape == (3, 8)
    assert grad_check(lambda: weighted_sum(layer_norm(x, g, b)), [x, g, b]) < 1e-6


@pytest.mark.parametrize("n,bins", [(64, 16), (10, 4), (7, 7)])
def test_adaptive_pool_gradient(n, bins):
    a = leaf(3, n)
    assert grad_check(lambda: weighted_sum(adaptive_mean_pool1d(a, bins)), [a]) < 1e-6


def test_adaptive_pool_values_even_split():
    a = Tensor(np.arange(8.0).reshape(1, 8))
    out = adaptive_mean_pool1d(a, 4)
    assert np.allclose(out.data, [[0.5, 2.5, 4.5, 6.5]])


def test_softmax_rows_sum_to_one():
    a = leaf(5, 7)
    s = softmax(a, axis=-1)
    assert np.allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.allclose(np.exp(log_softmax(a, axis=-1).data), s.data, atol=1e-12)


def test_grad_accumulates_across_graphs():
    x = leaf(3)
    tsum(x * 2.0).backward()
    tsum(x * 3.0).backward()
    assert np.allclose(x.grad, 5.0)


def test_long_chain_avoids_recursion_limit():
    x = Tensor(np.array(1.0), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0001
    tsum(y).backward()
    assert abs(x.grad - 1.0) < 1e-12
