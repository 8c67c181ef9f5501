"""State-space scan tests: discretization, recurrence, kernel equivalence."""

import numpy as np
import pytest

from tmamba.numcore import Tensor, grad_check, tsum
from tmamba.ssm import (
    DiscreteSsm,
    SsmParams,
    bidirectional_scan,
    discretize_zoh,
    init_ssm_params,
    lti_apply,
    lti_kernel,
    scan_core,
    selective_scan,
    selective_scan_ref,
    zoh_phi,
)

rng = np.random.default_rng(2024)


def phi_taylor(z: np.ndarray, terms: int = 50) -> np.ndarray:
    """(exp(z) - 1) / z as its power series sum_{k>=0} z^k / (k+1)!."""
    out = np.zeros_like(z)
    term = np.ones_like(z)
    fact = 1.0
    for k in range(terms):
        fact *= (k + 1)
        out = out + term / fact
        term = term * z
    return out


def test_zoh_phi_matches_series_across_scales():
    z = np.array([-2.0, -1e-3, -1e-7, -1e-12, 0.0, 1e-12, 1e-7, 1e-3, 2.0])
    got = zoh_phi(Tensor(z)).data
    want = phi_taylor(z)
    assert np.abs(got - want).max() < 1e-14


def test_zoh_phi_gradient_across_scales():
    for val in (-1.5, -1e-3, -1e-5, 1e-5, 1e-3, 1.5):
        z = Tensor(np.array([val]), requires_grad=True)
        err = grad_check(lambda: tsum(zoh_phi(z)), [z], eps=1e-6)
        assert err < 1e-5, (val, err)


def test_discretize_zoh_known_values():
    # delta = ln 2 with a = -1 halves the state each step
    abar, bbar = discretize_zoh(-1.0, 1.0, np.log(2.0))
    assert abs(abar.data - 0.5) < 1e-15
    # bbar = phi(z) * delta * b with z = -ln 2
    want = (np.exp(-np.log(2.0)) - 1.0) / (-np.log(2.0)) * np.log(2.0)
    assert abs(bbar.data - want) < 1e-15
    # tiny delta: abar -> 1, bbar -> delta * b
    abar, bbar = discretize_zoh(-1.0, 3.0, 1e-9)
    assert abs(abar.data - 1.0) < 1e-8
    assert abs(bbar.data - 3e-9) < 1e-17


def test_discretize_zoh_rejects_nonpositive_delta():
    with pytest.raises(ValueError):
        discretize_zoh(-1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        discretize_zoh(-1.0, 1.0, np.array([0.1, -0.2]))


def unrolled_scan(abar, bx, c):
    """Literal per-step recurrence, kept independent of the fused kernel."""
    bsz, length, d, n = abar.shape
    h = np.zeros((bsz, d, n))
    ys = np.zeros((bsz, length, d))
    for l in range(length):
        h = abar[:, l] * h + bx[:, l]
        ys[:, l] = np.einsum("bdn,bn->bd", h, c[:, l])
    return ys


def test_scan_core_matches_unrolled_recurrence():
    for length in (1, 2, 7, 33):
        abar = rng.uniform(0.1, 0.99, (2, length, 3, 4))
        bx = rng.normal(size=(2, length, 3, 4))
        c = rng.normal(size=(2, length, 4))
        got = scan_core(Tensor(abar), Tensor(bx), Tensor(c)).data
        assert np.abs(got - unrolled_scan(abar, bx, c)).max() < 1e-12


def test_scan_core_gradients():
    abar = Tensor(rng.uniform(0.3, 0.95, (1, 5, 2, 3)), requires_grad=True)
    bx = Tensor(rng.normal(size=(1, 5, 2, 3)), requires_grad=True)
    c = Tensor(rng.normal(size=(1, 5, 3)), requires_grad=True)
    w = Tensor(np.cos(np.arange(10.0)).reshape(1, 5, 2))
    err = grad_check(lambda: tsum(scan_core(abar, bx, c) * w), [abar, bx, c])
    assert err < 1e-6


def test_selective_scan_fused_equals_composite_route():
    params = init_ssm_params(rng, d=5, n=6)
    x = rng.normal(size=(3, 21, 5))
    fused = selective_scan(Tensor(x), params)
    composite = selective_scan_ref(Tensor(x), params)
    assert np.abs(fused.data - composite.data).max() < 1e-12

    w = np.sin(np.arange(fused.size)).reshape(fused.shape)
    grads = {}
    for label, fn in (("fused", selective_scan), ("composite", selective_scan_ref)):
        xt = Tensor(x.copy(), requires_grad=True)
        tsum(fn(xt, params) * Tensor(w)).backward()
        grads[label] = [xt.grad.copy()] + [p.grad.copy() for _, p in params.named("s")]
        for _, p in params.named("s"):
            p.zero_grad()
    for ga, gb in zip(grads["fused"], grads["composite"]):
        assert np.abs(ga - gb).max() < 1e-11


def test_selective_scan_gradcheck():
    params = init_ssm_params(rng, d=3, n=4)
    x = Tensor(rng.normal(size=(2, 6, 3)), requires_grad=True)
    w = Tensor(np.cos(np.arange(36.0)).reshape(2, 6, 3))
    leaves = [x] + [p for _, p in params.named("s")]
    err = grad_check(lambda: tsum(selective_scan(x, params) * w), leaves)
    assert err < 1e-6


def test_selective_scan_batchless_matches_batched():
    params = init_ssm_params(rng, d=4, n=3)
    x = rng.normal(size=(9, 4))
    single = selective_scan(Tensor(x), params)
    batched = selective_scan(Tensor(x[None]), params)
    assert single.shape == (9, 4)
    assert np.abs(single.data - batched.data[0]).max() < 1e-15


def test_scan_equals_kernel_convolution():
    """Frozen single-channel systems: recurrence vs kernel application."""
    for trial in range(5):
        n = int(rng.integers(1, 6))
        a = -rng.uniform(0.05, 3.0, n)
        b = rng.normal(size=n)
        c = rng.normal(size=n)
        delta = rng.uniform(0.01, 0.5)
        abar, bbar = discretize_zoh(a, b, delta)
        sys = DiscreteSsm(abar.data, bbar.data, c)
        for length in (1, 2, 64, 128):
            x = rng.normal(size=length)
            y_scan = sys.scan(x)
            y_conv = lti_apply(x, lti_kernel(sys, length))
            assert np.abs(y_scan - y_conv).max() < 1e-10


def test_kernel_values_small_case():
    sys = DiscreteSsm(np.array([0.5]), np.array([1.0]), np.array([2.0]))
    k = lti_kernel(sys, 4)
    # K_t = c * abar^t * bbar
    assert np.allclose(k, [2.0, 1.0, 0.5, 0.25], atol=1e-15)
    y = lti_apply(np.array([1.0, 0.0, 0.0, 0.0]), k)
    assert np.allclose(y, k, atol=1e-15)


def test_long_scan_stays_bounded():
    params = init_ssm_params(rng, d=2, n=4)
    x = rng.normal(size=(1, 4096, 2))
    y = selective_scan(Tensor(x), params)
    assert np.isfinite(y.data).all()
    assert np.abs(y.data).max() < 1e3


def test_bidirectional_scan_palindrome_symmetry():
    params = init_ssm_params(rng, d=3, n=4)
    half = rng.normal(size=(1, 8, 3))
    x = np.concatenate([half, half[:, ::-1]], axis=1)  # palindrome in time
    y_f, y_b = bidirectional_scan(Tensor(x), params, params)
    assert np.abs(y_b.data - y_f.data[:, ::-1]).max() < 1e-12


def test_bidirectional_backward_direction_sees_reversed_input():
    fwd = init_ssm_params(rng, d=2, n=3)
    bwd = init_ssm_params(rng, d=2, n=3)
    x = rng.normal(size=(2, 10, 2))
    _, y_b = bidirectional_scan(Tensor(x), fwd, bwd)
    direct = selective_scan(Tensor(x[:, ::-1].copy()), bwd)
    assert np.abs(y_b.data - direct.data[:, ::-1]).max() < 1e-15


def test_init_ssm_params_conventions():
    params = init_ssm_params(np.random.default_rng(0), d=6, n=5,
                             dt_min=0.002, dt_max=0.2)
    assert params.a.shape == (6, 5)
    assert (params.a.data < 0).all()
    assert np.array_equal(params.a.data[0], -np.arange(1.0, 6.0))
    dt = np.logaddexp(0.0, params.b_dt.data)  # softplus of the stored bias
    assert (dt > 0.002 - 1e-12).all() and (dt < 0.2 + 1e-12).all()
    for _, p in params.named("s"):
        assert p.requires_grad
