"""FFT kernel tests against a direct O(n^2) DFT oracle."""

import numpy as np
import pytest

from tmamba.numcore import (
    Tensor,
    as_pair,
    cmul,
    fft1d,
    fft_complex,
    grad_check,
    ifft1d,
    imag_part,
    real_part,
    tsum,
)

rng = np.random.default_rng(99)


def dft_oracle(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Direct summation DFT along the last axis."""
    n = z.shape[-1]
    sign = 1.0 if inverse else -1.0
    j, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    kernel = np.exp(sign * 2j * np.pi * j * k / n)
    out = z @ kernel
    return out / n if inverse else out


@pytest.mark.parametrize("n", [1, 2, 4, 8, 64, 256])
def test_fft_matches_direct_dft(n):
    z = rng.normal(size=(3, n)) + 1j * rng.normal(size=(3, n))
    got = fft_complex(z)
    want = dft_oracle(z)
    assert np.abs(got - want).max() < 1e-10
    got_inv = fft_complex(z, inverse=True)
    want_inv = dft_oracle(z, inverse=True)
    assert np.abs(got_inv - want_inv).max() < 1e-10


def test_fft_known_values():
    # impulse -> flat spectrum; constant -> single DC bin
    imp = np.zeros(8, dtype=np.complex128)
    imp[0] = 1.0
    assert np.abs(fft_complex(imp) - 1.0).max() < 1e-15
    const = np.ones(8, dtype=np.complex128)
    spec = fft_complex(const)
    assert abs(spec[0] - 8.0) < 1e-12
    assert np.abs(spec[1:]).max() < 1e-12


def test_round_trip_identity():
    z = rng.normal(size=(2, 5, 128)) + 1j * rng.normal(size=(2, 5, 128))
    back = fft_complex(fft_complex(z), inverse=True)
    assert np.abs(back - z).max() < 1e-12


def test_parseval_energy():
    z = rng.normal(size=(4, 256)) + 1j * rng.normal(size=(4, 256))
    spec = fft_complex(z)
    time_e = np.sum(np.abs(z) ** 2)
    freq_e = np.sum(np.abs(spec) ** 2) / 256
    assert abs(time_e - freq_e) / time_e < 1e-12


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError):
        fft_complex(np.zeros(12, dtype=np.complex128))
    with pytest.raises(ValueError):
        fft_complex(np.zeros(0, dtype=np.complex128))


def test_linearity():
    a = rng.normal(size=16) + 1j * rng.normal(size=16)
    b = rng.normal(size=16) + 1j * rng.normal(size=16)
    lhs = fft_complex(2.0 * a + 3.0 * b)
    rhs = 2.0 * fft_complex(a) + 3.0 * fft_complex(b)
    assert np.abs(lhs - rhs).max() < 1e-12


def weighted(t):
    w = np.cos(np.arange(t.size, dtype=np.float64)).reshape(t.shape)
    return tsum(t * Tensor(w))


def test_fft1d_gradient():
    z = Tensor(rng.normal(size=(2, 8, 2)), requires_grad=True)
    assert grad_check(lambda: weighted(fft1d(z)), [z]) < 1e-7


def test_ifft1d_gradient():
    z = Tensor(rng.normal(size=(2, 8, 2)), requires_grad=True)
    assert grad_check(lambda: weighted(ifft1d(z)), [z]) < 1e-7


def test_fft_ifft_tensor_round_trip_gradient():
    z = Tensor(rng.normal(size=(3, 16, 2)), requires_grad=True)
    out = ifft1d(fft1d(z))
    assert np.abs(out.data - z.data).max() < 1e-12
    assert grad_check(lambda: weighted(ifft1d(fft1d(z))), [z]) < 1e-7


def test_cmul_matches_complex_product_and_grad():
    a = Tensor(rng.normal(size=(3, 8, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=(8, 2)), requires_grad=True)
    out = cmul(a, b)
    ac = a.data[..., 0] + 1j * a.data[..., 1]
    bc = b.data[..., 0] + 1j * b.data[..., 1]
    want = ac * bc
    assert np.abs((out.data[..., 0] + 1j * out.data[..., 1]) - want).max() < 1e-12
    assert grad_check(lambda: weighted(cmul(a, b)), [a, b]) < 1e-7


def test_pair_helpers():
    x = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
    p = as_pair(x)
    assert p.shape == (4, 8, 2)
    assert np.array_equal(real_part(p).data, x.data)
    assert np.array_equal(imag_part(p).data, np.zeros((4, 8)))
    assert grad_check(lambda: weighted(real_part(as_pair(x))), [x]) < 1e-7
    assert grad_check(lambda: weighted(imag_part(fft1d(as_pair(x)))), [x]) < 1e-7
