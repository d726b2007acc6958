"""Small dense tensor type with a recorded tape and reverse-mode gradients.

Every op takes float64 arrays with an optional leading batch axis. Matrix-like
ops treat the last two axes as ``rows x columns``; a parameter without the
batch axis is broadcast across it and its gradient is summed back.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_recording = True
_relu_log: list[np.ndarray] | None = None


class GradientError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "_parents", "_backward", "name")

    def __init__(self, data, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        elif 0 in arr.shape:
            raise ValueError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data = arr
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), name=self.name)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    if _recording:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording; results cannot be differentiated."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


@contextlib.contextmanager
def relu_masks():
    """Collect the activation pattern of every ``relu`` evaluated inside the block."""
    global _relu_log
    prev = _relu_log
    _relu_log = []
    try:
        yield _relu_log
    finally:
        _relu_log = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad


def _check_leading(a: Tensor, b: Tensor, trailing: int, op: str):
    # leading (batch) axes must agree when both operands carry them
    la, lb = a.shape[: a.ndim - trailing], b.shape[: b.ndim - trailing]
    if la and lb and la != lb:
        raise ValueError(f"{op}: batch axes differ, {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    # equal shapes, or one operand lacking the other's leading batch axes
    short, long_ = (a, b) if a.ndim <= b.ndim else (b, a)
    if long_.shape[long_.ndim - short.ndim:] != short.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g * bd, g * ad

    return _result(ad * bd, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly zero is zero
    mask = x.data > 0
    if _relu_log is not None:
        _relu_log.append(mask)

    def backward(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0), (x,), backward)


# ---------------------------------------------------------------- reductions


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_last(x: Tensor) -> Tensor:
    """Mean over the last axis (drops it)."""
    n = x.shape[-1]
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g[..., None] / n, shape).copy(),)

    return _result(x.data.mean(axis=-1), (x,), backward)


# ---------------------------------------------------------------- linear maps


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shape mismatch {a.shape} x {b.shape}")
    _check_leading(a, b, 2, "matmul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(ad @ bd, (a, b), backward)


def add_bias_broadcast(x: Tensor, b: Tensor) -> Tensor:
    """Add vector ``b`` to every column of ``x`` (``x + b 1^T``)."""
    if x.ndim < 2 or b.ndim != 1 or x.shape[-2] != b.shape[0]:
        raise ValueError(f"add_bias_broadcast: shape mismatch {x.shape} vs {b.shape}")
    axes = tuple(i for i in range(x.ndim) if i != x.ndim - 2)

    def backward(g):
        return g, g.sum(axis=axes)

    return _result(x.data + b.data[:, None], (x, b), backward)


# ---------------------------------------------------------------- nonlinear maps


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each token vector with population variance, then apply gain/bias.

    A 1-D input is one token. For 2-D and above the layout is ``d x N`` (one
    token per column), so normalization runs over axis -2.
    """
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    axis = 0 if x.ndim == 1 else -2
    d = x.shape[axis]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm: gain/bias must have shape ({d},), got {gain.shape}, {bias.shape}")
    col = (lambda v: v) if x.ndim == 1 else (lambda v: v[:, None])
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data
    other = tuple(i for i in range(x.ndim) if i != x.ndim + axis) if x.ndim > 1 else ()

    def backward(g):
        dxhat = g * col(gd)
        dx = inv * (
            dxhat
            - dxhat.mean(axis=axis, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True)
        )
        dgain = (g * xhat).sum(axis=other) if other else g * xhat
        dbias = g.sum(axis=other) if other else g
        return dx, dgain, dbias

    return _result(xhat * col(gd) + col(bias.data), (x, gain, bias), backward)


# ---------------------------------------------------------------- layout


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(tuple(shape)), (x,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def sliding_windows(x: Tensor, k: int) -> Tensor:
    """Unfold ``[..., C, T]`` into ``[..., C*k, T-k+1]`` (row ``c*k + j`` holds ``x[c, j:j+L]``)."""
    C, T = x.shape[-2:]
    if not 1 <= k <= T:
        raise ValueError(f"sliding_windows: kernel {k} outside [1, {T}]")
    L = T - k + 1
    lead = x.shape[:-2]
    idx = np.arange(k)[:, None] + np.arange(L)[None, :]
    out = x.data[..., idx].reshape(*lead, C * k, L)

    def backward(g):
        g4 = g.reshape(*lead, C, k, L)
        gx = np.zeros(x.shape)
        for j in range(k):
            gx[..., j:j + L] += g4[..., j, :]
        return (gx,)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------- loss


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits_b)[label_b]`` over a ``B x K`` batch."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    B = labels.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    loss = -logp[np.arange(B), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(B), labels] -= 1.0
        return (p * (g / B),)

    return _result(np.asarray(loss), (logits,), backward)


# ---------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, params: Iterable[Tensor]) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``output`` with respect to each tensor in ``params``.

    Accumulators are created fresh on every call. Tensors that ``output`` does
    not depend on get a zero gradient.
    """
    if output._backward is None:
        raise GradientError("output was not produced by recorded operations")
    if output.data.size != 1:
        raise GradientError(f"output must be a scalar, got shape {output.shape}")
    params = list(params)
    grads: dict[int, np.ndarray] = {id(output): np.ones(output.shape)}
    for node in reversed(_topo_order(output)):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return {p: grads.get(id(p), np.zeros(p.shape)).reshape(p.shape) for p in params}
