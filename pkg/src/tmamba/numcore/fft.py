"""Radix-2 FFT with reverse-mode derivatives.

Complex sequences are carried as real arrays with a trailing axis of length 2
holding (real, imag); the transform runs along axis -2.  Only power-of-two
lengths are supported, so callers pad first.

Convention: fft1d is the unnormalized forward DFT with kernel
exp(-2*pi*i*j*k/n); ifft1d applies the conjugate kernel and divides by n,
so ifft1d(fft1d(z)) == z.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .tensor import Tensor, make_node


@lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.uint32)
    rev = np.zeros(n, dtype=np.uint32)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev.astype(np.intp)


@lru_cache(maxsize=None)
def _twiddles(half: int, sign: int) -> np.ndarray:
    return np.exp(sign * 2j * np.pi * np.arange(half) / (2 * half))


def _check_pow2(n: int) -> None:
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"transform length must be a power of two, got {n}")


def fft_complex(arr: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Iterative Cooley-Tukey DFT along the last axis of a complex array.

    The inverse path includes the 1/n factor.
    """
    n = arr.shape[-1]
    _check_pow2(n)
    sign = 1 if inverse else -1
    out = np.ascontiguousarray(arr, dtype=np.complex128)[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = _twiddles(half, sign)
        view = out.reshape(out.shape[:-1] + (n // size, size))
        even = view[..., :half]
        odd = view[..., half:] * tw
        view[..., :half], view[..., half:] = even + odd, even - odd
        size *= 2
    if inverse:
        out /= n
    return out


def _pair_to_complex(pair: np.ndarray) -> np.ndarray:
    return pair[..., 0] + 1j * pair[..., 1]


def _complex_to_pair(c: np.ndarray) -> np.ndarray:
    return np.stack([c.real, c.imag], axis=-1)


def as_pair(x: Tensor) -> Tensor:
    """Promote a real tensor to (real, imag) pair form with zero imag."""
    out_data = np.stack([x.data, np.zeros_like(x.data)], axis=-1)

    def vjp(g):
        return (g[..., 0],)

    return make_node(out_data, (x,), vjp, "as_pair")


def real_part(x: Tensor) -> Tensor:
    def vjp(g):
        gi = np.zeros(x.shape)
        gi[..., 0] = g
        return (gi,)

    return make_node(np.ascontiguousarray(x.data[..., 0]), (x,), vjp, "real_part")


def imag_part(x: Tensor) -> Tensor:
    def vjp(g):
        gi = np.zeros(x.shape)
        gi[..., 1] = g
        return (gi,)

    return make_node(np.ascontiguousarray(x.data[..., 1]), (x,), vjp, "imag_part")


def fft1d(z: Tensor) -> Tensor:
    """Forward DFT of a pair tensor (..., n, 2) along axis -2."""
    out_data = _complex_to_pair(fft_complex(_pair_to_complex(z.data)))

    def vjp(g):
        # Adjoint of the forward DFT is the unnormalized conjugate transform.
        gc = fft_complex(_pair_to_complex(g), inverse=True) * g.shape[-2]
        return (_complex_to_pair(gc),)

    return make_node(out_data, (z,), vjp, "fft1d")


def ifft1d(z: Tensor) -> Tensor:
    """Inverse DFT (with 1/n) of a pair tensor (..., n, 2) along axis -2."""
    out_data = _complex_to_pair(fft_complex(_pair_to_complex(z.data), inverse=True))

    def vjp(g):
        gc = fft_complex(_pair_to_complex(g)) / g.shape[-2]
        return (_complex_to_pair(gc),)

    return make_node(out_data, (z,), vjp, "ifft1d")


def cmul(a: Tensor, b: Tensor) -> Tensor:
    """Complex elementwise product of pair tensors, broadcasting leading axes."""
    ac, bc = _pair_to_complex(a.data), _pair_to_complex(b.data)
    out_c = ac * bc

    def _unbroadcast_c(g, shape):
        lead = g.ndim - len(shape)
        if lead > 0:
            g = g.sum(axis=tuple(range(lead)))
        axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return g

    def vjp(g):
        gc = _pair_to_complex(g)
        ga = _unbroadcast_c(gc * np.conj(bc), ac.shape)
        gb = _unbroadcast_c(gc * np.conj(ac), bc.shape)
        return _complex_to_pair(ga), _complex_to_pair(gb)

    return make_node(_complex_to_pair(out_c), (a, b), vjp, "cmul")
