"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every op builds a node holding its parents and a closure that maps the
output gradient to parent gradients.  Shapes must match exactly for binary
elementwise ops; the only implicit broadcast is a Python scalar constant.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "add",
    "sub",
    "mul",
    "relu",
    "scale",
    "elementwise",
    "matmul",
    "conv_temporal",
    "temporal_conv",
    "add_channel_bias",
    "reduce",
    "reshape",
    "transpose",
    "take",
    "softmax_cross_entropy",
    "minmax_normalize",
    "backward",
    "zero_grad",
    "grad_check",
]

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ShapeError(ValueError):
    pass


class Tensor:
    """Dense float64 array that records how it was computed.

    ``data`` is a C-contiguous ndarray; ``grad`` is ``None`` until a backward
    pass reaches the tensor.  ``node`` is ``(op name, parents)`` for computed
    tensors and ``None`` for leaves.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.require(np.asarray(data, dtype=np.float64), requirements="C")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def node(self):
        if self._backward is None:
            return None
        return (self.op, self._parents)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return _add_const(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return _add_const(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward_fn: BackwardFn, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out.op = op
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _make(out, (a,), lambda g: (g * (out > 0),), "relu")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def _add_const(a: Tensor, c: float) -> Tensor:
    return _make(a.data + c, (a,), lambda g: (g,), "add_const")


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul, relu, or scale (b is the constant)."""
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "mul":
        return mul(a, b)
    if kind == "relu":
        return relu(a)
    if kind == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def _bw(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), _bw, "matmul")


def _tap_range(offset: int, stride: int, t_len: int, t_out: int):
    """Output frames whose tap at ``i * stride + offset`` lands inside [0, t_len)."""
    lo = -(-max(0, -offset) // stride)
    hi = min(t_out, -(-(t_len - offset) // stride)) if t_len > offset else 0
    return lo, max(lo, hi)


def temporal_conv(x: Tensor, w: Tensor, dilation: int = 1, stride: int = 1,
                  bias: Optional[Tensor] = None) -> Tensor:
    """Zero-padded 'same' convolution along time for channel-first input.

    ``x`` is ``(C_in, B, T, N)``, ``w`` is ``(C_out, C_in, k)`` with odd ``k``.
    Output is ``(C_out, B, ceil(T / stride), N)``; output frame ``i`` is the
    same-padded result centred on input frame ``i * stride``.
    """
    if x.data.ndim != 4 or w.data.ndim != 3:
        raise ShapeError(f"temporal_conv expects x (C,B,T,N) and w (O,C,k), got {x.shape}, {w.shape}")
    c_in, nb, t_len, nj = x.shape
    c_out, c_w, k = w.shape
    if c_w != c_in:
        raise ShapeError(f"temporal_conv: filter expects {c_w} input channels, input has {c_in}")
    if k % 2 == 0:
        raise ValueError(f"temporal_conv: kernel size must be odd, got {k}")
    if dilation < 1:
        raise ValueError(f"temporal_conv: dilation must be >= 1, got {dilation}")
    if stride < 1:
        raise ValueError(f"temporal_conv: stride must be >= 1, got {stride}")
    pad = dilation * (k - 1) // 2
    t_out = -(-t_len // stride)
    taps = []
    for j in range(k):
        off = j * dilation - pad
        lo, hi = _tap_range(off, stride, t_len, t_out)
        taps.append((off, lo, hi, slice(lo * stride + off, (hi - 1) * stride + off + 1, stride)))
    cols = np.empty((c_in, k, nb, t_out, nj))
    for j, (off, lo, hi, src) in enumerate(taps):
        cols[:, j, :, :lo] = 0.0
        cols[:, j, :, hi:] = 0.0
        if hi > lo:
            cols[:, j, :, lo:hi] = x.data[:, :, src]
    cols2 = cols.reshape(c_in * k, -1)
    w2 = w.data.reshape(c_out, c_in * k)
    out = (w2 @ cols2).reshape(c_out, nb, t_out, nj)
    parents = (x, w)
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeError(f"temporal_conv: bias {bias.shape} does not match {c_out} output channels")
        out += bias.data[:, None, None, None]
        parents = (x, w, bias)

    def _bw(g):
        g2 = g.reshape(c_out, -1)
        gw = (g2 @ cols2.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(c_in, k, nb, t_out, nj)
            gx = np.zeros(x.shape)
            for j, (off, lo, hi, src) in enumerate(taps):
                if hi > lo:
                    gx[:, :, src] += gcols[:, j, :, lo:hi]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    return _make(out, parents, _bw, "temporal_conv")


def conv_temporal(x: Tensor, w: Tensor, dilation: int = 1) -> Tensor:
    """Single-sequence form: ``x`` is ``(C_in, T)``, result is ``(C_out, T)``."""
    if x.data.ndim != 2:
        raise ShapeError(f"conv_temporal expects x of shape (C_in, T), got {x.shape}")
    c_in, t_len = x.shape
    out = temporal_conv(reshape(x, (c_in, 1, t_len, 1)), w, dilation=dilation)
    return reshape(out, (w.shape[0], t_len))


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add ``b[c]`` to every entry of channel ``c`` (axis 0) of ``x``."""
    if b.data.ndim != 1 or b.shape[0] != x.shape[0]:
        raise ShapeError(f"add_channel_bias: bias {b.shape} does not match channels of {x.shape}")
    view = (-1,) + (1,) * (x.data.ndim - 1)
    axes = tuple(range(1, x.data.ndim))
    return _make(x.data + b.data.reshape(view), (x, b),
                 lambda g: (g, g.sum(axis=axes) if axes else g), "add_channel_bias")


# ---------------------------------------------------------------- structure


def reduce(x: Tensor, axis: int, kind: str = "sum") -> Tensor:
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"reduce: axis {axis} invalid for shape {x.shape}")
    axis = axis % nd
    n = x.shape[axis]
    if kind == "sum":
        out = x.data.sum(axis=axis)
        return _make(out, (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),), "sum")
    if kind == "mean":
        out = x.data.mean(axis=axis)
        return _make(out, (x,), lambda g: (np.broadcast_to(np.expand_dims(g / n, axis), x.shape).copy(),), "mean")
    if kind == "max" and n == 1:
        return reshape(x, x.shape[:axis] + x.shape[axis + 1:])
    if kind == "max":
        idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)  # first occurrence on ties
        out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

        def _bw(g):
            gx = np.zeros(x.shape)
            np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
            return (gx,)

        return _make(out, (x,), _bw, "max")
    raise ValueError(f"reduce: unknown kind {kind!r}")


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def take(x: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing with a scatter-back gradient."""
    out = np.array(x.data[index], dtype=np.float64)

    def _bw(g):
        gx = np.zeros(x.shape)
        gx[index] += g
        return (gx,)

    return _make(out, (x,), _bw, "take")


# ---------------------------------------------------------------- fused heads


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-row ``-log softmax(logits)[label]`` for ``logits`` of shape (B, K)."""
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (B, K) logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    nb, nc = logits.shape
    if labels.shape[0] != nb:
        raise ShapeError(f"softmax_cross_entropy: {labels.shape[0]} labels for {nb} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= nc):
        raise ValueError(f"label out of range for {nc} classes: {labels.tolist()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(nb)
    out = lse - z[rows, labels]

    def _bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * g[:, None],)

    return _make(out, (logits,), _bw, "softmax_cross_entropy")


def minmax_normalize(x: Tensor, axis: int = -1):
    """Map each slice along ``axis`` to ``(v - min) / (max - min)``.

    Slices with ``max == min`` become zeros with zero gradient.  Returns the
    normalized tensor and a boolean array flagging those degenerate slices.
    """
    axis = axis % x.data.ndim
    d = x.data
    imax = np.expand_dims(np.argmax(d, axis=axis), axis)
    imin = np.expand_dims(np.argmin(d, axis=axis), axis)
    vmax = np.take_along_axis(d, imax, axis=axis)
    vmin = np.take_along_axis(d, imin, axis=axis)
    span = vmax - vmin
    degenerate = span <= 0
    safe = np.where(degenerate, 1.0, span)
    out = np.where(degenerate, 0.0, (d - vmin) / safe)

    def _bw(g):
        g = np.where(degenerate, 0.0, g)
        gx = g / safe
        s = (g * out).sum(axis=axis, keepdims=True) / safe
        total = g.sum(axis=axis, keepdims=True) / safe
        # d out_i / d min = (out_i - 1) / span ; d out_i / d max = -out_i / span
        d_min = s - total
        d_max = -s
        np.put_along_axis(gx, imin, np.take_along_axis(gx, imin, axis=axis) + d_min, axis=axis)
        np.put_along_axis(gx, imax, np.take_along_axis(gx, imax, axis=axis) + d_max, axis=axis)
        return (gx,)

    return _make(out, (x,), _bw, "minmax_normalize"), degenerate.squeeze(axis)


# ---------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor feeding ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            # intermediate grads may alias each other; only leaves get a private copy
            node.grad = g.copy() if node._backward is None else g
        else:
            node.grad = node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|).

    The numeric side uses central differences of ``f`` on perturbed copies of
    ``x``; ``f`` must return a single-element tensor.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar-valued f, got shape {out.shape}")
    backward(out)
    analytic = np.zeros(base.shape) if probe.grad is None else probe.grad
    flat = base.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += eps
        minus[i] -= eps
        fp = f(Tensor(plus.reshape(base.shape))).item()
        fm = f(Tensor(minus.reshape(base.shape))).item()
        # divide by the step actually representable in float64, not the nominal 2*eps
        numeric[i] = (fp - fm) / (plus[i] - minus[i])
    err = np.abs(analytic.reshape(-1) - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
