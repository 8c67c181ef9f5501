"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps a numpy array plus an
optional record of how it was computed (parent tensors and a vector-Jacobian
closure).  ``backward`` walks that record in reverse topological order and
accumulates gradients into every leaf created with ``requires_grad=True``.
Leaves used at several places in a graph receive the sum of all their
contributions.

All forward results are checked for NaN/Inf; a non-finite value anywhere is
treated as a hard error rather than something to propagate silently.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a forward operation produces NaN or Inf."""


class GraphError(RuntimeError):
    """Raised on invalid graph use (double backward, bad seed shape)."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure numpy forward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _check_finite(arr: np.ndarray, what: str) -> None:
    # One-pass probe: any NaN/Inf forces the sum itself non-finite.  The
    # full isfinite sweep runs only when the probe trips, so clean results
    # pay a single reduction and a legitimate huge-but-finite sum cannot
    # raise by itself.
    if arr.size and not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in result of {what}")


class Tensor:
    """N-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor constructor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self._done = False

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def is_leaf(self) -> bool:
        return self._vjp is None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return take(self, key)

    # -- graph ---------------------------------------------------------

    def backward(self, seed=None) -> None:
        backward(self, seed)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: tuple[Tensor, ...], vjp, what: str) -> Tensor:
    """Create a graph node; fused operations use this to register a custom VJP.

    ``vjp(grad_out)`` must return one gradient array (or None) per parent, in
    order.  When grad recording is disabled, or no parent requires a gradient,
    the result is a plain constant.
    """
    arr = np.asarray(data, dtype=np.float64)
    _check_finite(arr, what)
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.grad = None
    out._done = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def backward(root: Tensor, seed=None) -> None:
    """Accumulate gradients of ``root`` into all requires_grad leaves.

    ``seed`` defaults to 1 for scalar roots and must otherwise be supplied
    with the same shape as ``root``.  Each graph may be walked once; the
    traversal frees the recorded closures as it goes.
    """
    if root._done:
        raise GraphError("backward already ran on this graph; rebuild it first")
    if seed is None:
        if root.size != 1:
            raise GraphError("backward on non-scalar output requires an explicit seed")
        seed_arr = np.ones_like(root.data)
    else:
        seed_arr = np.asarray(seed.data if isinstance(seed, Tensor) else seed,
                              dtype=np.float64)
        if seed_arr.shape != root.shape:
            raise GraphError(f"seed shape {seed_arr.shape} != output shape {root.shape}")
    if not root.requires_grad:
        raise GraphError("output does not require grad; nothing to differentiate")

    # Iterative topological order (avoids recursion limits on long scans).
    order: list[Tensor] = []
    visiting: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visiting:
            continue
        visiting.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visiting:
                stack.append((p, False))

    # Copy-on-write accumulation: a first contribution is stored as-is (vjp
    # outputs may alias their input gradient or each other), so it is never
    # mutated; the second contribution allocates the owned buffer that later
    # ones add into.  np.asarray keeps 0-d results mutable ndarrays rather
    # than immutable numpy scalars.
    grads: dict[int, np.ndarray] = {id(root): seed_arr}
    owned: set[int] = set()
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            # Leaf: accumulate into .grad.
            if node.grad is None:
                node.grad = np.array(g, dtype=np.float64)
            else:
                node.grad = node.grad + g
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = grads.get(id(p))
            if acc is None:
                grads[id(p)] = pg
            elif id(p) in owned:
                acc += pg
            else:
                grads[id(p)] = np.asarray(acc + pg)
                owned.add(id(p))
        # Free the closure and saved arrays; the graph is single-use.
        node._parents = ()
        node._vjp = None
        owned.discard(id(node))
    root._done = True


# -- broadcasting helper ------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise --------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return make_node(a.data + b.data, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return make_node(a.data - b.data, (a, b), vjp, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return make_node(a.data * b.data, (a, b), vjp, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data
    return make_node(out_data, (a, b), vjp, "div")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)
    return make_node(out_data, (a,), lambda g: (g * out_data,), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)
    return make_node(out_data, (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out_data = np.sqrt(a.data)
    return make_node(out_data, (a,), lambda g: (g * 0.5 / out_data,), "sqrt")


def sigmoid(a: Tensor) -> Tensor:
    # tanh form is stable at both tails.
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_node(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    def vjp(g):
        return (g * s * (1.0 + a.data * (1.0 - s)),)
    return make_node(a.data * s, (a,), vjp, "silu")


def softplus(a: Tensor) -> Tensor:
    out_data = np.logaddexp(0.0, a.data)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_node(out_data, (a,), lambda g: (g * s,), "softplus")


# -- reductions ----------------------------------------------------------


def _restore_axes(g: np.ndarray, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        return (_restore_axes(g, a.shape, axis, keepdims).copy(),)
    return make_node(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    scale = out_data.size / a.data.size
    def vjp(g):
        return (_restore_axes(g * scale, a.shape, axis, keepdims).copy(),)
    return make_node(out_data, (a,), vjp, "mean")


def tmax(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max over one axis; the gradient routes to the (first) argmax entries."""
    idx = np.argmax(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)
    def vjp(g):
        gi = np.zeros_like(a.data)
        ge = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gi, np.expand_dims(idx, axis), ge, axis=axis)
        return (gi,)
    return make_node(out_data, (a,), vjp, "max")


# -- shape manipulation ---------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    def vjp(g):
        return (g.reshape(a.shape),)
    return make_node(a.data.reshape(shape), (a,), vjp, "reshape")


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    def vjp(g):
        return (np.ascontiguousarray(g.transpose(inv)),)
    return make_node(np.ascontiguousarray(a.data.transpose(axes)), (a,), vjp, "permute")


def flip(a: Tensor, axis: int) -> Tensor:
    def vjp(g):
        return (np.flip(g, axis=axis).copy(),)
    return make_node(np.flip(a.data, axis=axis).copy(), (a,), vjp, "flip")


def concat(parts: list[Tensor], axis: int) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    def vjp(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, splits, axis=axis))
    return make_node(np.concatenate([p.data for p in parts], axis=axis),
                     tuple(parts), vjp, "concat")


def take(a: Tensor, key) -> Tensor:
    """Basic (slice/index) views; gradient scatters back into place."""
    def vjp(g):
        gi = np.zeros_like(a.data)
        gi[key] = g
        return (gi,)
    return make_node(a.data[key].copy(), (a,), vjp, "take")


def pad_last(a: Tensor, before: int, after: int) -> Tensor:
    """Zero-pad the last axis."""
    widths = [(0, 0)] * (a.ndim - 1) + [(before, after)]
    n = a.shape[-1]
    def vjp(g):
        sl = [slice(None)] * (a.ndim - 1) + [slice(before, before + n)]
        return (g[tuple(sl)].copy(),)
    return make_node(np.pad(a.data, widths), (a,), vjp, "pad_last")


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb
    return make_node(np.matmul(a.data, b.data), (a, b), vjp, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b) with x of any leading shape and w 2-D."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


# -- fused NN ops -----------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)
    return make_node(y, (a,), vjp, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    sm = np.exp(out_data)
    def vjp(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)
    return make_node(out_data, (a,), vjp, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gamma.data + beta.data
    n = x.shape[-1]
    def vjp(g):
        ggamma = _unbroadcast(g * xhat, gamma.shape)
        gbeta = _unbroadcast(g, beta.shape)
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / n)
        return gx, ggamma, gbeta
    return make_node(out_data, (x, gamma, beta), vjp, "layer_norm")


def adaptive_mean_pool1d(x: Tensor, out_size: int) -> Tensor:
    """Mean-pool the last axis down to ``out_size`` bins (adaptive windows)."""
    n = x.shape[-1]
    if out_size < 1:
        raise ValueError("out_size must be >= 1")
    if n % out_size == 0:
        width = n // out_size
        out_data = x.data.reshape(x.shape[:-1] + (out_size, width)).mean(axis=-1)

        def vjp_even(g):
            return (np.repeat(g / width, width, axis=-1),)

        return make_node(out_data, (x,), vjp_even, "adaptive_mean_pool1d")
    starts = (np.arange(out_size) * n) // out_size
    ends = -(-(np.arange(1, out_size + 1) * n) // out_size)  # ceil division
    pieces = [x.data[..., s:e].mean(axis=-1) for s, e in zip(starts, ends)]
    out_data = np.stack(pieces, axis=-1)
    def vjp(g):
        gx = np.zeros_like(x.data)
        for i, (s, e) in enumerate(zip(starts, ends)):
            gx[..., s:e] += (g[..., i] / (e - s))[..., None]
        return (gx,)
    return make_node(out_data, (x,), vjp, "adaptive_mean_pool1d")
