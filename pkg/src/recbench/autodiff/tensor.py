"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` (entered with
``with Tape() as tape:``) whenever one of their inputs requires a gradient.
``tape.backward(loss)`` then walks the recorded operations once, in reverse.
Outside a tape nothing is recorded, which is how evaluation runs.
"""

import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import _kernels
from ..errors import NonFiniteError, ShapeMismatchError

_state = threading.local()


def _tape_stack() -> list:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


class Tape:
    """Ordered record of differentiable operations (one per thread at a time)."""

    def __init__(self):
        self.ops: list = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()

    def record(self, out, inputs, backward):
        self.ops.append((out, inputs, backward))

    def backward(self, loss: "Tensor"):
        if loss.data.size != 1:
            raise ShapeMismatchError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for out, _inputs, fn in reversed(self.ops):
            if out.grad is not None:
                fn(out.grad)


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in {name or 'tensor'}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{', name=' + self.name if self.name else ''})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, backward, name=""):
    """Wrap an op result and record it when any input is differentiable."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"operation {name} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = name
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    if out.requires_grad and tape is not None:
        tape.record(out, inputs, backward)
    return out


def _accum(t: Tensor, g):
    if t.requires_grad:
        t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatchError(f"cannot combine shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _make(out, (a, b), backward, "div")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _make(a.data * mask, (a,), backward, "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)

    def backward(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), backward, "sigmoid")


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, (a,), backward, "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def backward(g):
        _accum(a, g * out)

    return _make(out, (a,), backward, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g / a.data)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), backward, "log")


def square(a) -> Tensor:
    return mul(a, a)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch ``add | sub | mul | relu | sigmoid | tanh`` by name."""
    fn = _ELEMENTWISE[op_kind]
    if op_kind in ("add", "sub", "mul"):
        if b is None:
            raise ShapeMismatchError(f"{op_kind} needs two operands")
        return fn(a, b)
    return fn(a)


# ------------------------------------------------------------------ reshaping


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(out, dtype=np.float64), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accum(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward, "transpose")


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _accum(a, full)

    return _make(np.array(a.data[idx]), (a,), backward, "getitem")


def take(table, idx) -> Tensor:
    """Row lookup ``table[idx]`` for an integer array of any shape (embedding)."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, *table.shape[1:]))
        _accum(table, full)

    return _make(table.data[idx], (table,), backward, "take")


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, cuts, axis=axis)):
            _accum(t, part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


# -------------------------------------------------------------------- algebra


def matmul(a, b) -> Tensor:
    """Matrix product; leading batch dimensions must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul shapes {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatchError(f"matmul batch dims {a.shape[:-2]} != {b.shape[:-2]}")

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            if b.ndim == 2 and gb.ndim > 2:
                gb = gb.reshape(-1, *b.shape).sum(axis=0)
            _accum(b, gb)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def conv2d_maxpool(x, kernels, stride: int = 1, pool=(2, 2)) -> Tensor:
    """Valid cross-correlation followed by non-overlapping max-pooling.

    ``x`` is (H, W, C_in) or batched (B, H, W, C_in); ``kernels`` is
    (kh, kw, C_in, C_out). Gradients flow to the first maximal position of
    each pooling window in row-major order.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    batched = x.ndim == 4
    xb = x.data if batched else x.data[None]
    if xb.ndim != 4 or kernels.ndim != 4:
        raise ShapeMismatchError("conv2d_maxpool expects (B,)H,W,C input and kh,kw,Cin,Cout kernels")
    b, h, w, c = xb.shape
    kh, kw, cin, cout = kernels.shape
    ph, pw = pool
    if cin != c or h < kh or w < kw:
        raise ShapeMismatchError(f"input {xb.shape[1:]} incompatible with kernels {kernels.shape}")
    ho, wo = (h - kh) // stride + 1, (w - kw) // stride + 1
    if ho < ph or wo < pw:
        raise ShapeMismatchError("pooling window larger than the convolution output")
    win = sliding_window_view(xb, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b * ho * wo, kh * kw * c)
    k2 = kernels.data.reshape(kh * kw * c, cout)
    conv = (cols @ k2).reshape(b, ho, wo, cout)
    pooled, arg = _kernels.maxpool_forward(conv, ph, pw)

    def backward(g):
        gb = g if batched else g[None]
        gconv = _kernels.maxpool_backward(gb, arg, conv.shape, ph, pw).reshape(b * ho * wo, cout)
        if kernels.requires_grad:
            _accum(kernels, (cols.T @ gconv).reshape(kernels.shape))
        if x.requires_grad:
            dcols = (gconv @ k2.T).reshape(b, ho, wo, kh, kw, c)
            dx = np.zeros_like(xb)
            for u in range(kh):
                for v in range(kw):
                    dx[:, u : u + stride * ho : stride, v : v + stride * wo : stride, :] += dcols[:, :, :, u, v, :]
            _accum(x, dx if batched else dx[0])

    return _make(pooled if batched else pooled[0], (x, kernels), backward, "conv2d_maxpool")


# --------------------------------------------------------- normalizing layers


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accum(a, p * (g - (g * p).sum(axis=axis, keepdims=True)))

    return _make(p, (a,), backward, "softmax")


def log_softmax_np(z):
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, target) -> Tensor:
    """Mean over the batch of -sum(target * log softmax(logits)); target rows sum to 1."""
    logits = as_tensor(logits)
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if logits.ndim != 2 or y.shape != logits.shape:
        raise ShapeMismatchError(f"logits {logits.shape} vs target {y.shape}")
    if not np.allclose(y.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("every target row must sum to 1")
    bsz = logits.shape[0]
    logp = log_softmax_np(logits.data)
    loss = -(y * logp).sum() / bsz

    def backward(g):
        p = np.exp(logp)
        _accum(logits, g * (p - y) / bsz)

    return _make(np.asarray(loss), (logits,), backward, "softmax_cross_entropy")


def bce_with_logits(logits, target, weight=None) -> Tensor:
    """Binary cross-entropy on raw logits, averaged over all (weighted) entries."""
    logits = as_tensor(logits)
    y = np.asarray(target, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeMismatchError(f"logits {logits.shape} vs target {y.shape}")
    w = np.ones_like(y) if weight is None else np.broadcast_to(np.asarray(weight, dtype=np.float64), y.shape)
    z = logits.data
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    total = w.sum()
    loss = (w * per).sum() / total

    def backward(g):
        _accum(logits, g * w * (_sigmoid(z) - y) / total)

    return _make(np.asarray(loss), (logits,), backward, "bce_with_logits")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g):
        _accum(gamma, _unbroadcast(g * xhat, gamma.shape))
        _accum(beta, _unbroadcast(g, beta.shape))
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            _accum(x, dx)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward, "layer_norm")


def l2_normalize(x, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit Euclidean norm along the last axis."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True) + eps)
    y = x.data / n

    def backward(g):
        _accum(x, (g - y * (g * y).sum(axis=-1, keepdims=True)) / n)

    return _make(y, (x,), backward, "l2_normalize")


def lstm(xw, w_h, b, mask) -> Tensor:
    """Masked single-layer LSTM over a whole sequence; returns the final hidden state.

    ``xw`` is the input projection (B, T, 4H) with gates ordered input, forget,
    cell, output; ``mask`` (B, T) is 1 for real steps and 0 for padding, where
    the state is carried through unchanged. Backpropagation through time runs
    inside the op, so the tape records a single entry per sequence.
    """
    xw, w_h, b = as_tensor(xw), as_tensor(w_h), as_tensor(b)
    bs, steps, four_h = xw.shape
    hd = four_h // 4
    if w_h.shape != (hd, four_h) or b.shape != (four_h,) or np.shape(mask) != (bs, steps):
        raise ShapeMismatchError(f"lstm shapes xw {xw.shape}, w_h {w_h.shape}, b {b.shape}, mask {np.shape(mask)}")
    m = np.asarray(mask, dtype=np.float64)[:, :, None]
    h = np.zeros((bs, hd))
    c = np.zeros((bs, hd))
    cache = []
    for t in range(steps):
        z = xw.data[:, t] + h @ w_h.data + b.data
        i, f = _sigmoid(z[:, :hd]), _sigmoid(z[:, hd : 2 * hd])
        g, o = np.tanh(z[:, 2 * hd : 3 * hd]), _sigmoid(z[:, 3 * hd :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        cache.append((h, c, i, f, g, o, tc))
        mt = m[:, t]
        c = mt * c_new + (1.0 - mt) * c
        h = mt * (o * tc) + (1.0 - mt) * h

    def backward(gh):
        gh = gh.copy()
        gc = np.zeros((bs, hd))
        gxw = np.zeros(xw.shape)
        gwh = np.zeros(w_h.shape)
        for t in range(steps - 1, -1, -1):
            h_prev, c_prev, i, f, g, o, tc = cache[t]
            mt = m[:, t]
            gh_new, gc_in = mt * gh, mt * gc
            go = gh_new * tc
            gc_new = gc_in + gh_new * o * (1.0 - tc * tc)
            gz = np.concatenate(
                [gc_new * g * i * (1.0 - i), gc_new * c_prev * f * (1.0 - f), gc_new * i * (1.0 - g * g), go * o * (1.0 - o)],
                axis=1,
            )
            gxw[:, t] = gz
            gwh += h_prev.T @ gz
            gh = (1.0 - mt) * gh + gz @ w_h.data.T
            gc = (1.0 - mt) * gc + gc_new * f
        _accum(xw, gxw)
        _accum(w_h, gwh)
        _accum(b, gxw.sum(axis=(0, 1)))

    return _make(h, (xw, w_h, b), backward, "lstm")


def dropout(x, rate: float, training: bool, seed=None) -> Tensor:
    """Inverted dropout. Identity (the same tensor) in eval mode or at rate 0."""
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        _accum(x, g * keep)

    return _make(x.data * keep, (x,), backward, "dropout")


def hinge_sq(x) -> Tensor:
    """max(0, x) squared, elementwise."""
    r = relu(x)
    return mul(r, r)


# ----------------------------------------------------------------------- init


def glorot(rng: np.random.Generator, shape, name="") -> Tensor:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)); fans are the last two dims."""
    fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
    fan_out = shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros(shape, name="") -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones(shape, name="") -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)
