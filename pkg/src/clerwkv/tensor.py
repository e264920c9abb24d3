"""Minimal deterministic tensor substrate with reverse-mode differentiation.

Values live in numpy arrays (float32 for training/inference, float64 for
gradient checks). Every operation records its inputs and a backward closure;
``backward(loss)`` walks the tape in a fixed reverse-topological order, so
gradient accumulation is bitwise reproducible. Reductions use numpy's
sequential kernels; nothing here spawns threads.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy import ndimage

from .errors import ContractViolation, NumericFault

DEFAULT_DTYPE = np.float32

_TAPE_STATE = threading.local()  # per-thread: concurrent inference is isolated


class no_grad:
    """Context manager that disables tape recording (pure inference)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _TAPE_STATE.enabled = False
        return self

    def __exit__(self, *exc):
        _TAPE_STATE.enabled = self._prev
        return False


def grad_enabled() -> bool:
    return getattr(_TAPE_STATE, "enabled", True)


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode autodiff."""

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward = backward
        self._op = op
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.shape}, dtype={self.dtype})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named learnable tensor; gradient shape always matches the value."""

    def __init__(self, data, name: str):
        super().__init__(np.array(data), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape})"


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _wrap(b, a.dtype)
    b = _wrap(b, None if not isinstance(b, Tensor) else b.dtype)
    return _wrap(a, b.dtype), b


def _check_finite(data, op):
    if not np.all(np.isfinite(data)):
        raise NumericFault(f"non-finite output of op '{op}'")


def _make(data, parents, backward, op):
    _check_finite(data, op)
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward, op=op)
    return Tensor(data, op=op)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad = t.grad + np.asarray(g, dtype=t.data.dtype)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor):
    """Populate gradients of every reachable tensor with d(loss)/d(tensor)."""
    if loss.data.size != 1:
        raise ContractViolation("backward requires a scalar loss")
    if loss._backward_done:
        raise ContractViolation("backward called twice on the same recorded trace")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    loss._backward_done = True


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)
    out_data = a.data + b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), back, "add")


def sub(a, b):
    a, b = _pair(a, b)
    out_data = a.data - b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), back, "sub")


def mul(a, b):
    a, b = _pair(a, b)
    out_data = a.data * b.data

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), back, "mul")


def div(a, b):
    a, b = _pair(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data

    def back(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), back, "div")


def neg(a):
    def back(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), back, "neg")


def absval(a):
    s = np.sign(a.data)

    def back(g):
        _accumulate(a, g * s)

    return _make(np.abs(a.data), (a,), back, "abs")


def sqrt(a):
    out_data = np.sqrt(a.data)

    def back(g):
        _accumulate(a, g * (0.5 / out_data))

    return _make(out_data, (a,), back, "sqrt")


def exp(a):
    out_data = np.exp(a.data)

    def back(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), back, "exp")


def sigmoid(a):
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def back(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), back, "sigmoid")


def softplus(a):
    x = a.data
    out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def back(g):
        _accumulate(a, g * sig)

    return _make(out_data, (a,), back, "softplus")


def squared_relu(a):
    r = np.maximum(a.data, 0.0)

    def back(g):
        _accumulate(a, g * 2.0 * r)

    return _make(r * r, (a,), back, "squared_relu")


def atan2(y, x):
    y, x = _pair(y, x)
    # the true derivative does not exist at the origin; the guard yields the
    # zero subgradient there (numerators vanish) instead of NaN
    denom = np.maximum(x.data * x.data + y.data * y.data, 1e-24)

    def back(g):
        _accumulate(y, _unbroadcast(g * x.data / denom, y.shape))
        _accumulate(x, _unbroadcast(-g * y.data / denom, x.shape))

    return _make(np.arctan2(y.data, x.data), (y, x), back, "atan2")


def maximum(a, b):
    a, b = _pair(a, b)
    mask = a.data >= b.data

    def back(g):
        _accumulate(a, _unbroadcast(g * mask, a.shape))
        _accumulate(b, _unbroadcast(g * ~mask, b.shape))

    return _make(np.where(mask, a.data, b.data), (a, b), back, "maximum")


def minimum(a, b):
    a, b = _pair(a, b)
    mask = a.data <= b.data

    def back(g):
        _accumulate(a, _unbroadcast(g * mask, a.shape))
        _accumulate(b, _unbroadcast(g * ~mask, b.shape))

    return _make(np.where(mask, a.data, b.data), (a, b), back, "minimum")


def clamp01(a):
    return minimum(maximum(a, 0.0), 1.0)


def floor_const(a) -> Tensor:
    """floor(a) detached from the tape (derivative is 0 almost everywhere)."""
    a = _wrap(a, DEFAULT_DTYPE)
    return Tensor(np.floor(a.data), op="floor")


# ---------------------------------------------------------------------------
# linear algebra and structure
# ---------------------------------------------------------------------------

def matmul(a, b):
    """a (..., k) @ b (k, n). Weight matrices are always 2-D."""
    if b.data.ndim != 2:
        raise ContractViolation("matmul expects a 2-D right operand")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ContractViolation(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data
    k = b.data.shape[0]

    def back(g):
        _accumulate(a, g @ b.data.T)
        a2d = a.data.reshape(-1, k)
        g2d = np.asarray(g).reshape(-1, b.data.shape[1])
        _accumulate(b, a2d.T @ g2d)

    return _make(out_data, (a, b), back, "matmul")


def conv1x1(x, w, bias=None):
    """Pointwise projection over the trailing channel axis."""
    out = matmul(x, w)
    if bias is not None:
        out = add(out, bias)
    return out


def reduce_sum(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        g = np.asarray(g)
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(out_data, (a,), back, "sum")


def reduce_mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    out_data = a.data.mean(axis=axis, keepdims=keepdims)

    def back(g):
        g = np.asarray(g) / count
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(out_data, (a,), back, "mean")


def mean_reduce(a):
    """Full mean to a scalar (the loss-head reduction)."""
    return reduce_mean(a, axis=None)


def reshape(a, shape):
    old = a.shape

    def back(g):
        _accumulate(a, np.asarray(g).reshape(old))

    return _make(a.data.reshape(shape), (a,), back, "reshape")


def transpose(a, axes):
    inv = np.argsort(axes)

    def back(g):
        _accumulate(a, np.transpose(g, inv))

    return _make(np.transpose(a.data, axes), (a,), back, "transpose")


def concat_channels(*tensors):
    """Concatenate along the trailing axis."""
    ts = tensors[0] if len(tensors) == 1 and isinstance(tensors[0], (list, tuple)) else tensors
    widths = [t.shape[-1] for t in ts]
    out_data = np.concatenate([t.data for t in ts], axis=-1)
    offsets = np.cumsum([0] + widths)

    def back(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            _accumulate(t, g[..., lo:hi])

    return _make(out_data, tuple(ts), back, "concat_channels")


def slice_axis(a, axis, start, stop):
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def back(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accumulate(a, full)

    return _make(a.data[idx], (a,), back, "slice")


def shift2d(a, sy, sx):
    """out[y, x] = a[y + sy, x + sx], zero outside; a is (H, W, ...)."""
    H, W = a.shape[0], a.shape[1]

    def do_shift(src, sy, sx):
        out = np.zeros_like(src)
        y0, y1 = max(0, -sy), min(H, H - sy)
        x0, x1 = max(0, -sx), min(W, W - sx)
        if y0 < y1 and x0 < x1:
            out[y0:y1, x0:x1] = src[y0 + sy:y1 + sy, x0 + sx:x1 + sx]
        return out

    def back(g):
        _accumulate(a, do_shift(np.asarray(g), -sy, -sx))

    return _make(do_shift(a.data, sy, sx), (a,), back, "shift2d")


def filter2d(a, kernel: np.ndarray):
    """Same-size correlation of (H, W, C) with a constant 2-D kernel, zero padded.

    The kernel is a plain array (Gaussian window, Sobel, ...), not learnable.
    """
    k = np.asarray(kernel, dtype=a.dtype)
    k3 = k[:, :, None]
    out_data = ndimage.correlate(a.data, k3, mode="constant", cval=0.0)
    kf = k[::-1, ::-1][:, :, None]

    def back(g):
        _accumulate(a, ndimage.correlate(np.asarray(g), kf, mode="constant", cval=0.0))

    return _make(out_data, (a,), back, "filter2d")


def avgpool2(a):
    """2x2 average pooling of an (H, W, C) map with even H, W."""
    H, W, C = a.shape
    if H % 2 or W % 2:
        raise ContractViolation("avgpool2 needs even spatial dims")
    x = reshape(a, (H // 2, 2, W // 2, 2, C))
    return reduce_mean(x, axis=(1, 3))


# ---------------------------------------------------------------------------
# normalization and convolutions
# ---------------------------------------------------------------------------

LAYER_NORM_EPS = 1e-5


def layer_norm(x, scale, offset, eps=LAYER_NORM_EPS):
    """Normalize over the trailing channel axis with learnable scale/offset."""
    C = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * scale.data + offset.data

    def back(g):
        g = np.asarray(g)
        lead = tuple(range(g.ndim - 1))
        _accumulate(scale, (g * xhat).sum(axis=lead))
        _accumulate(offset, g.sum(axis=lead))
        dxhat = g * scale.data
        dvar = (dxhat * xc).sum(axis=-1, keepdims=True) * (-0.5) * inv ** 3
        dmu = -(dxhat.sum(axis=-1, keepdims=True)) * inv \
            + dvar * (-2.0 / C) * xc.sum(axis=-1, keepdims=True)
        _accumulate(x, dxhat * inv + dvar * (2.0 / C) * xc + dmu / C)

    return _make(out_data, (x, scale, offset), back, "layer_norm")


def dwconv3x3(x, kernel):
    """Depth-wise 3x3 convolution, same padding; x (H, W, C), kernel (3, 3, C)."""
    if kernel.shape[:2] != (3, 3) or kernel.shape[2] != x.shape[-1]:
        raise ContractViolation(
            f"dwconv3x3 kernel {kernel.shape} does not match input {x.shape}")
    H, W, C = x.shape
    xpad = np.zeros((H + 2, W + 2, C), dtype=x.dtype)
    xpad[1:H + 1, 1:W + 1] = x.data
    out_data = np.zeros_like(x.data)
    for dy in range(3):
        for dx in range(3):
            out_data += xpad[dy:dy + H, dx:dx + W] * kernel.data[dy, dx]

    def back(g):
        g = np.asarray(g)
        dk = np.empty_like(kernel.data)
        dxpad = np.zeros_like(xpad)
        for dy in range(3):
            for dx in range(3):
                dk[dy, dx] = (g * xpad[dy:dy + H, dx:dx + W]).sum(axis=(0, 1))
                dxpad[dy:dy + H, dx:dx + W] += g * kernel.data[dy, dx]
        _accumulate(kernel, dk)
        _accumulate(x, dxpad[1:H + 1, 1:W + 1])

    return _make(out_data, (x, kernel), back, "dwconv3x3")


def conv3x3(x, w, bias=None):
    """Full 3x3 convolution, same padding; x (H, W, Cin), w (3, 3, Cin, Cout)."""
    cin, cout = w.shape[2], w.shape[3]
    if x.shape[-1] != cin:
        raise ContractViolation(f"conv3x3 input channels {x.shape[-1]} != {cin}")
    H, W, _ = x.shape
    xpad = np.zeros((H + 2, W + 2, cin), dtype=x.dtype)
    xpad[1:H + 1, 1:W + 1] = x.data
    out_data = np.zeros((H, W, cout), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            out_data += xpad[dy:dy + H, dx:dx + W] @ w.data[dy, dx]

    def back(g):
        g2d = np.asarray(g).reshape(-1, cout)
        dw = np.empty_like(w.data)
        dxpad = np.zeros_like(xpad)
        for dy in range(3):
            for dx in range(3):
                window = xpad[dy:dy + H, dx:dx + W].reshape(-1, cin)
                dw[dy, dx] = window.T @ g2d
                dxpad[dy:dy + H, dx:dx + W] += np.asarray(g) @ w.data[dy, dx].T
        _accumulate(w, dw)
        _accumulate(x, dxpad[1:H + 1, 1:W + 1])

    out = _make(out_data, (x, w), back, "conv3x3")
    if bias is not None:
        out = add(out, bias)
    return out


# The operation set contracted for the backbone. Extra entries are internal
# plumbing used by composites above; the contracted kinds are all present.
OP_SET = {
    "add": add,
    "mul": mul,
    "matmul": matmul,
    "conv1x1": conv1x1,
    "dwconv3x3": dwconv3x3,
    "layer_norm": layer_norm,
    "sigmoid": sigmoid,
    "squared_relu": squared_relu,
    "concat_channels": concat_channels,
    "mean_reduce": mean_reduce,
    "clamp01": clamp01,
}


def apply_op(kind: str, *inputs):
    """Dispatch one forward op from the contracted set."""
    if kind not in OP_SET:
        raise ContractViolation(f"unknown op kind '{kind}'")
    return OP_SET[kind](*inputs)
