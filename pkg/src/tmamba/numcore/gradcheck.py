"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def grad_check(fn, params, eps: float = 1e-5) -> float:
    """Compare analytic gradients of a scalar function with central differences.

    fn() must rebuild its graph from the current .data of each parameter and
    return a scalar Tensor.  Returns the worst relative error
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over every entry
    of every parameter.
    """
    params = list(params)
    for p in params:
        if not p.requires_grad:
            raise ValueError("grad_check requires trainable parameters")
        p.zero_grad()
    out = fn()
    if out.size != 1:
        raise ValueError("grad_check needs a scalar output")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + eps
                hi = float(fn().data)
                flat[i] = keep - eps
                lo = float(fn().data)
                flat[i] = keep
                num = (hi - lo) / (2.0 * eps)
                ana = float(ga.reshape(-1)[i])
                denom = max(abs(ana), abs(num), 1e-8)
                worst = max(worst, abs(ana - num) / denom)
    for p in params:
        p.zero_grad()
    return worst
