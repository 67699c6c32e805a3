"""Reverse-mode autodiff over numpy arrays.

Everything computes in float64. A forward pass records onto an explicit
:class:`Graph` (used as a context manager); :func:`backward` replays the tape
in reverse and writes ``.grad`` buffers into every tensor that requires them.
Without an active graph, ops run forward-only.

Tensors are treated as immutable after creation except for their ``grad``
buffer. A graph must stay confined to one thread; independent graphs over
disjoint parameters may run concurrently.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class GraphError(RuntimeError):
    """Raised on tape misuse (non-scalar backward, consumed graph, ...)."""


@dataclass
class ChannelStats:
    """Per-channel (mean, std) pair.

    Holds batch-norm running statistics (plain arrays of shape [C]) as well
    as feature-map statistics and learned affine parameters on the style
    transfer paths, where both fields may be Tensors of shape [B, C].
    """

    mean: "np.ndarray | Tensor"
    std: "np.ndarray | Tensor"


class Tensor:
    """n-dimensional float64 array with optional gradient-tape participation."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def abs(self):
        return tabs(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


_ACTIVE = threading.local()


def _graph_stack() -> list:
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = _ACTIVE.stack = []
    return stack


class Graph:
    """Ordered tape of executed differentiable ops for one forward pass.

    Execution order is a topological order by construction, so backward
    visits each op exactly once in reverse. The tape is freed after
    backward; a graph is single-use.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Graph":
        if self._consumed:
            raise GraphError("graph already consumed by backward")
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _graph_stack().pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise GraphError("graph context exited out of order")
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into every requires_grad tensor."""
        if self._consumed:
            raise GraphError("graph already consumed by backward")
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {getattr(loss, 'shape', None)}"
            )
        self._consumed = True
        grads: dict[int, tuple[Tensor, np.ndarray]] = {
            id(loss): (loss, np.ones_like(loss.data))
        }
        for node in reversed(self._nodes):
            entry = grads.pop(id(node.out), None)
            if entry is None:
                continue  # not on the path from loss
            g = entry[1]
            if node.out.requires_grad:
                node.out.grad = g if node.out.grad is None else node.out.grad + g
            needs = tuple(p.requires_grad for p in node.parents)
            parent_grads = node.vjp(g, needs)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = (parent, grads[key][1] + pg)
                else:
                    grads[key] = (parent, pg)
        for tensor, g in grads.values():  # leaves
            if tensor.requires_grad:
                tensor.grad = g if tensor.grad is None else tensor.grad + g
        self._nodes.clear()


def backward(loss: Tensor, graph: Graph) -> None:
    graph.backward(loss)


def _record(out: Tensor, parents: tuple, vjp) -> Tensor:
    stack = _graph_stack()
    if stack and any(p.requires_grad for p in parents):
        out.requires_grad = True
        stack[-1]._nodes.append(_Node(out, parents, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def vjp(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None,
        )

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def vjp(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None,
        )

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def vjp(g, needs):
        return (
            _unbroadcast(g * b.data, a.shape) if needs[0] else None,
            _unbroadcast(g * a.data, b.shape) if needs[1] else None,
        )

    return _record(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)

    def vjp(g, needs):
        return (
            _unbroadcast(g / b.data, a.shape) if needs[0] else None,
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if needs[1] else None,
        )

    return _record(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)

    def vjp(g, needs):
        return (-g,)

    return _record(out, (a,), vjp)


def pow_scalar(a, exponent) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    out = Tensor(a.data ** p)

    def vjp(g, needs):
        return (g * p * a.data ** (p - 1.0),)

    return _record(out, (a,), vjp)


def tabs(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.abs(a.data))

    def vjp(g, needs):
        return (g * np.sign(a.data),)

    return _record(out, (a,), vjp)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.data))

    def vjp(g, needs):
        return (g * (0.5 / out.data),)

    return _record(out, (a,), vjp)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g, needs):
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else axis
            g = np.expand_dims(g, tuple(ax % a.ndim for ax in axes))
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.size / max(out.size, 1)

    def vjp(g, needs):
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else axis
            g = np.expand_dims(g, tuple(ax % a.ndim for ax in axes))
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _record(out, (a,), vjp)


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = Tensor(a.data.reshape(shape))

    def vjp(g, needs):
        return (g.reshape(a.shape),)

    return _record(out, (a,), vjp)


def take(a, index) -> Tensor:
    """Basic slicing/indexing with gradient scattered back into place."""
    a = as_tensor(a)
    out = Tensor(np.asarray(a.data[index]))

    def vjp(g, needs):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return _record(out, (a,), vjp)


def concat_channels(a, b) -> Tensor:
    """Concatenate two [B,C,H,W] tensors along the channel axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels expects rank-4 tensors, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(
            f"concat_channels: batch/spatial mismatch between {a.shape} and {b.shape}"
        )
    c1 = a.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1))

    def vjp(g, needs):
        return (
            g[:, :c1] if needs[0] else None,
            g[:, c1:] if needs[1] else None,
        )

    return _record(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.where(a.data >= 0, a.data, slope * a.data))

    def vjp(g, needs):
        return (g * np.where(a.data >= 0, 1.0, slope),)

    return _record(out, (a,), vjp)


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    d = a.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)
    out = Tensor(y)

    def vjp(g, needs):
        return (g * y * (1.0 - y),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# convolution machinery
# ---------------------------------------------------------------------------


def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> tuple:
    """Window-extract a padded [B,C,H,W] array into [B, C*kh*kw, oh*ow]."""
    b, c, h, w = xp.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sb, sc, sh, sw = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, kh, kw, oh, ow),
        strides=(sb, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return windows.reshape(b, c * kh * kw, oh * ow), oh, ow


def _conv_raw(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    cout = w.shape[0]
    xp = _pad2d(x, padding)
    kh, kw = w.shape[2], w.shape[3]
    cols, oh, ow = _im2col(xp, kh, kw, stride)
    y = np.matmul(w.reshape(cout, -1), cols)
    return y.reshape(x.shape[0], cout, oh, ow), cols


def _deconv_raw(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                oph: int, opw: int) -> np.ndarray:
    # w is laid out (Cin, Cout, kh, kw); output = adjoint of the matching conv
    b, ci, h, wd = x.shape
    co, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    contrib = np.tensordot(x, w, axes=([1], [0]))  # (B, H, W, Cout, kh, kw)
    contrib = contrib.transpose(0, 3, 4, 5, 1, 2)  # (B, Cout, kh, kw, H, W)
    full_h = (h - 1) * stride + kh + oph
    full_w = (wd - 1) * stride + kw + opw
    full = np.zeros((b, co, full_h, full_w))
    for u in range(kh):
        for v in range(kw):
            full[:, :, u:u + (h - 1) * stride + 1:stride,
                 v:v + (wd - 1) * stride + 1:stride] += contrib[:, :, u, v]
    out_h = (h - 1) * stride - 2 * padding + kh + oph
    out_w = (wd - 1) * stride - 2 * padding + kw + opw
    return full[:, :, padding:padding + out_h, padding:padding + out_w]


def conv2d(x, w, b, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of [B,Cin,H,W] with kernel [Cout,Cin,k,k] plus bias."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input/kernel, got {x.shape} and {w.shape}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be >= 0, got {padding}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(
            f"conv2d: kernel expects {w.shape[1]} input channels, input has "
            f"{x.shape[1]} (input {x.shape}, kernel {w.shape})"
        )
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {w.shape[0]} filters")
    kh, kw = w.shape[2], w.shape[3]
    if x.shape[2] + 2 * padding < kh or x.shape[3] + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: padded input {x.shape} smaller than kernel {w.shape[2:]}"
        )
    y, cols = _conv_raw(x.data, w.data, stride, padding)
    y += b.data[:, None, None]
    out = Tensor(y)
    oh, ow = y.shape[2], y.shape[3]

    def vjp(g, needs):
        gx = gw = gb = None
        if needs[0]:
            oph = x.shape[2] - ((oh - 1) * stride - 2 * padding + kh)
            opw = x.shape[3] - ((ow - 1) * stride - 2 * padding + kw)
            gx = _deconv_raw(g, w.data, stride, padding, oph, opw)
        if needs[1]:
            gy = g.reshape(g.shape[0], g.shape[1], -1)
            gw = np.matmul(gy, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if needs[2]:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _record(out, (x, w, b), vjp)


def deconv2d(x, w, b, stride: int = 1, padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution: the adjoint of conv2d with kernel [Cin,Cout,k,k]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"deconv2d expects rank-4 input/kernel, got {x.shape} and {w.shape}")
    if stride < 1:
        raise ValueError(f"deconv2d: stride must be >= 1, got {stride}")
    if not 0 <= output_padding < stride:
        raise ValueError(
            f"deconv2d: output_padding must lie in [0, stride), got "
            f"{output_padding} with stride {stride}"
        )
    if w.shape[0] != x.shape[1]:
        raise ShapeError(
            f"deconv2d: kernel expects {w.shape[0]} input channels, input has "
            f"{x.shape[1]} (input {x.shape}, kernel {w.shape})"
        )
    if b.shape != (w.shape[1],):
        raise ShapeError(f"deconv2d: bias shape {b.shape} does not match {w.shape[1]} filters")
    kh = w.shape[2]
    out_h = (x.shape[2] - 1) * stride - 2 * padding + kh + output_padding
    out_w = (x.shape[3] - 1) * stride - 2 * padding + w.shape[3] + output_padding
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"deconv2d: output extent {out_h}x{out_w} < 1 for input {x.shape}"
        )
    y = _deconv_raw(x.data, w.data, stride, padding, output_padding, output_padding)
    y += b.data[:, None, None]
    out = Tensor(y)

    def vjp(g, needs):
        # adjoint of the adjoint is the plain convolution with the same kernel
        gx = gw = gb = None
        if needs[0] or needs[1]:
            gp = _pad2d(g, padding)
            cols, _, _ = _im2col(gp, w.shape[2], w.shape[3], stride)
        if needs[0]:
            gx = np.matmul(w.data.reshape(w.shape[0], -1), cols).reshape(x.shape)
        if needs[1]:
            xmat = x.data.reshape(x.shape[0], x.shape[1], -1)
            gw = np.matmul(xmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if needs[2]:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _record(out, (x, w, b), vjp)


def upsample_nearest(x, factor: int) -> Tensor:
    """Replicate each pixel of a [B,C,H,W] tensor into a factor x factor block."""
    x = as_tensor(x)
    if not isinstance(factor, int) or factor < 1:
        raise ValueError(f"upsample_nearest: factor must be a positive int, got {factor}")
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest expects rank-4 input, got {x.shape}")
    out = Tensor(np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3))

    def vjp(g, needs):
        b, c, h, w = x.shape
        return (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _record(out, (x,), vjp)


def global_avg_pool(x) -> Tensor:
    """Spatial mean per channel: [B,C,H,W] -> [B,C,1,1]."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects rank-4 input, got {x.shape}")
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))
    scale = 1.0 / (x.shape[2] * x.shape[3])

    def vjp(g, needs):
        return (np.broadcast_to(g * scale, x.shape).copy(),)

    return _record(out, (x,), vjp)


def fully_connected(x, w, b) -> Tensor:
    """Affine map of [B,Cin] by weight [Cout,Cin] and bias [Cout]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"fully_connected: input {x.shape} incompatible with weight {w.shape}"
        )
    if b.shape != (w.shape[0],):
        raise ShapeError(f"fully_connected: bias shape {b.shape} does not match {w.shape[0]}")
    out = Tensor(x.data @ w.data.T + b.data)

    def vjp(g, needs):
        return (
            g @ w.data if needs[0] else None,
            g.T @ x.data if needs[1] else None,
            g.sum(axis=0) if needs[2] else None,
        )

    return _record(out, (x, w, b), vjp)


def bilinear_contract(style, w, content) -> Tensor:
    """Two-factor contraction out[b,k] = sum_rc style[b,r] w[r,k,c] content[b,c].

    Linear in each factor when the other is held fixed.
    """
    style, w, content = as_tensor(style), as_tensor(w), as_tensor(content)
    if style.ndim != 2 or content.ndim != 2 or w.ndim != 3:
        raise ShapeError(
            f"bilinear_contract expects [B,R], [R,K,C], [B,C]; got "
            f"{style.shape}, {w.shape}, {content.shape}"
        )
    if style.shape[0] != content.shape[0]:
        raise ShapeError(
            f"bilinear_contract: batch mismatch {style.shape[0]} vs {content.shape[0]}"
        )
    if style.shape[1] != w.shape[0] or content.shape[1] != w.shape[2]:
        raise ShapeError(
            f"bilinear_contract: factor dims {style.shape[1]}/{content.shape[1]} "
            f"do not match tensor {w.shape}"
        )
    mid = np.tensordot(style.data, w.data, axes=([1], [0]))  # (B, K, C)
    out = Tensor((mid * content.data[:, None, :]).sum(axis=2))

    def vjp(g, needs):
        gs = gw = gc = None
        if needs[0] or needs[1]:
            outer = g[:, :, None] * content.data[:, None, :]  # (B, K, C)
        if needs[0]:
            gs = np.tensordot(outer, w.data, axes=([1, 2], [1, 2]))
        if needs[1]:
            gw = np.tensordot(style.data, outer, axes=([0], [0]))
        if needs[2]:
            gc = (mid * g[:, :, None]).sum(axis=1)
        return gs, gw, gc

    return _record(out, (style, w, content), vjp)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def batchnorm2d(x, gamma, beta, mode: str = "train",
                running_stats: ChannelStats | None = None,
                momentum: float = 0.1, epsilon: float = 1e-5) -> Tensor:
    """Per-channel normalization of [B,C,H,W] over batch and spatial axes.

    Train mode normalizes with batch statistics and folds them into
    ``running_stats`` by exponential moving average (on the variance); eval
    mode normalizes with the running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if epsilon <= 0:
        raise ValueError(f"batchnorm2d: epsilon must be > 0, got {epsilon}")
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm2d: mode must be 'train' or 'eval', got {mode!r}")
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects rank-4 input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"batchnorm2d: gamma/beta shapes {gamma.shape}/{beta.shape} do not "
            f"match {c} channels"
        )
    if mode == "eval":
        if running_stats is None:
            raise ValueError("batchnorm2d: eval mode requires running_stats")
        mu = np.asarray(running_stats.mean, dtype=np.float64)
        var = np.asarray(running_stats.std, dtype=np.float64) ** 2
        inv = 1.0 / np.sqrt(var + epsilon)
        xhat = (x.data - mu[:, None, None]) * inv[:, None, None]
        out = Tensor(gamma.data[:, None, None] * xhat + beta.data[:, None, None])

        def vjp_eval(g, needs):
            gx = gg = gb = None
            if needs[0]:
                gx = g * (gamma.data * inv)[:, None, None]
            if needs[1]:
                gg = (g * xhat).sum(axis=(0, 2, 3))
            if needs[2]:
                gb = g.sum(axis=(0, 2, 3))
            return gx, gg, gb

        return _record(out, (x, gamma, beta), vjp_eval)

    n = x.shape[0] * x.shape[2] * x.shape[3]
    mu = x.data.mean(axis=(0, 2, 3))
    var = x.data.var(axis=(0, 2, 3))
    if running_stats is not None:
        running_stats.mean = (1.0 - momentum) * np.asarray(running_stats.mean) + momentum * mu
        running_stats.std = np.sqrt(
            (1.0 - momentum) * np.asarray(running_stats.std) ** 2 + momentum * var
        )
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = (x.data - mu[:, None, None]) * inv[:, None, None]
    out = Tensor(gamma.data[:, None, None] * xhat + beta.data[:, None, None])

    def vjp(g, needs):
        gx = gg = gb = None
        if needs[0]:
            gxh = g * gamma.data[:, None, None]
            sum_gxh = gxh.sum(axis=(0, 2, 3), keepdims=True)
            sum_gxh_xhat = (gxh * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = (inv[:, None, None] / n) * (n * gxh - sum_gxh - xhat * sum_gxh_xhat)
        if needs[1]:
            gg = (g * xhat).sum(axis=(0, 2, 3))
        if needs[2]:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gg, gb

    return _record(out, (x, gamma, beta), vjp)
