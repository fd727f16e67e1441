"""Minimal dense tensor library with reverse-mode gradients.

Forward ops are plain numpy; every op that participates in training records
a backward closure on a per-pass tape (released after ``backward``).  A global
multiply-accumulate counter can be switched on to measure the floating-op
cost of a forward pass (used to validate the analytical flop model).
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float32

# flop-per-element conventions shared with the analytical model
GELU_FLOPS_PER_ELEM = 8
SOFTMAX_FLOPS_PER_ELEM = 3
LAYERNORM_FLOPS_PER_ELEM = 5
SOFTPLUS_FLOPS_PER_ELEM = 4

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)
_LN_EPS = 1e-6


def set_default_dtype(dtype) -> None:
    """Set the scalar type used for newly created tensors (f32 or f64)."""
    global DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    DEFAULT_DTYPE = dtype


class FlopCounter:
    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


_active_counter: FlopCounter | None = None


@contextlib.contextmanager
def count_flops():
    """Context manager accumulating the multiply/add cost of executed ops."""
    global _active_counter
    prev = _active_counter
    counter = FlopCounter()
    _active_counter = counter
    try:
        yield counter
    finally:
        _active_counter = prev


def _add_flops(n: int) -> None:
    if _active_counter is not None:
        _active_counter.add(n)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # single-pass reduction; any nan/inf poisons the sum
    if not math.isfinite(float(arr.sum())):
        raise FloatingPointError(f"non-finite values produced by {op}")


class Tensor:
    """Dense n-d array with an optional gradient buffer.

    ``_parents`` and ``_backward`` form the autodiff tape; they are dropped
    once ``backward`` has run so a tensor can be reused across passes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() on non-scalar tensor")
        return float(self.data.reshape(()))

    def backward(self) -> None:
        """Reverse-mode pass; populates .grad on every reachable leaf."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # drop the tape so intermediate buffers can be collected
            node._parents = ()
            node._backward = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


def _needs_grad(*ts: Tensor) -> bool:
    for t in ts:
        if t.requires_grad or t._parents:
            return True
    return False


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _make(data, op, parents, backward):
    _check_finite(data, op)
    for p in parents:
        if p.requires_grad or p._parents:
            return Tensor(data, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data
    _add_flops(out_data.size)

    def backward(g):
        if _needs_grad(a):
            a._accumulate(_unbroadcast(g, a.shape))
        if _needs_grad(b):
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data
    _add_flops(out_data.size)

    def backward(g):
        if _needs_grad(a):
            a._accumulate(_unbroadcast(g, a.shape))
        if _needs_grad(b):
            b._accumulate(-_unbroadcast(g, b.shape))

    return _make(out_data, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data
    _add_flops(out_data.size)

    def backward(g):
        if _needs_grad(a):
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if _needs_grad(b):
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, "mul", (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    out_data = a.data * s
    _add_flops(out_data.size)

    def backward(g):
        if _needs_grad(a):
            a._accumulate(g * s)

    return _make(out_data, "scale", (a,), backward)


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.abs(a.data)
    _add_flops(out_data.size)

    def backward(g):
        if _needs_grad(a):
            a._accumulate(g * np.sign(a.data))

    return _make(out_data, "abs", (a,), backward)


def gelu(a) -> Tensor:
    """Gaussian-CDF GELU (exact erf form, not the tanh approximation)."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_data = x * cdf
    _add_flops(out_data.size * GELU_FLOPS_PER_ELEM)

    def backward(g):
        if _needs_grad(a):
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
            a._accumulate(g * (cdf + x * pdf))

    return _make(out_data, "gelu", (a,), backward)


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.logaddexp(0.0, a.data)
    _add_flops(out_data.size * SOFTPLUS_FLOPS_PER_ELEM)

    def backward(g):
        if _needs_grad(a):
            sig = 1.0 / (1.0 + np.exp(-a.data))
            a._accumulate(g * sig)

    return _make(out_data, "softplus", (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis)
    _add_flops(a.size)

    def backward(g):
        if _needs_grad(a):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.shape).copy())
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make(out_data, "sum", (a,), backward)


def tmean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.mean(axis=axis)
    _add_flops(a.size + 1)
    n = a.size if axis is None else a.shape[axis]

    def backward(g):
        if _needs_grad(a):
            if axis is None:
                a._accumulate(np.broadcast_to(g / n, a.shape).copy())
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy())

    return _make(out_data, "mean", (a,), backward)


def l1_distance(a, b) -> Tensor:
    """Mean absolute elementwise distance between two same-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"l1_distance shape mismatch {a.shape} vs {b.shape}")
    return tmean(absolute(sub(a, b)))


# ---------------------------------------------------------------------------
# linear algebra / shape ops


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out_data = a.data @ b.data
    _add_flops(2 * a.shape[0] * a.shape[1] * b.shape[1])

    def backward(g):
        if _needs_grad(a):
            a._accumulate(g @ b.data.T)
        if _needs_grad(b):
            b._accumulate(a.data.T @ g)

    return _make(out_data, "matmul", (a, b), backward)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    out_data = a.data.T.copy()

    def backward(g):
        if _needs_grad(a):
            a._accumulate(g.T)

    return _make(out_data, "transpose", (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        if _needs_grad(a):
            a._accumulate(g.reshape(a.shape))

    return _make(out_data, "reshape", (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if _needs_grad(t):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(out_data, "concat", tuple(tensors), backward)


def index(a, key) -> Tensor:
    """Basic slicing / integer indexing with scatter-add backward."""
    a = _as_tensor(a)
    out_data = a.data[key]
    if np.isscalar(out_data) or out_data.ndim == 0:
        out_data = np.asarray(out_data)

    basic = isinstance(key, (int, slice)) or (
        isinstance(key, tuple) and all(isinstance(k, (int, slice)) for k in key))

    def backward(g):
        if _needs_grad(a):
            buf = np.zeros_like(a.data)
            if basic:
                # basic slicing never aliases, so a plain add suffices
                buf[key] += g
            else:
                np.add.at(buf, key, g)
            a._accumulate(buf)

    return _make(out_data, "index", (a,), backward)


def softmax(a, axis=-1) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)
    _add_flops(out_data.size * SOFTMAX_FLOPS_PER_ELEM)

    def backward(g):
        if _needs_grad(a):
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - dot))

    return _make(out_data, "softmax", (a,), backward)


def attention_core(qp, kp, vp, heads: int, allow=None):
    """Fused multi-head scaled-dot-product attention core.

    ``qp``/``kp``/``vp`` are the projected query, key and value matrices
    ([Mq, d] and [Mk, d]); heads are contiguous column blocks.  Returns the
    concatenated head outputs [Mq, d] and the attention maps [heads, Mq, Mk]
    (after the exact-zero clamp when ``allow`` is given).  Flop accounting
    equals the per-head op sequence it replaces: the QK^T and PV matmuls,
    the 1/sqrt(dh) score scaling, softmax at 3 per score, and for masked
    calls one add plus one multiply per score.
    """
    qp, kp, vp = _as_tensor(qp), _as_tensor(kp), _as_tensor(vp)
    mq, d = qp.shape
    mk = kp.shape[0]
    if d % heads != 0:
        raise ValueError("attention dim must be divisible by heads")
    dh = d // heads
    q3 = qp.data.reshape(mq, heads, dh).transpose(1, 0, 2)
    k3 = kp.data.reshape(mk, heads, dh).transpose(1, 0, 2)
    v3 = vp.data.reshape(mk, heads, dh).transpose(1, 0, 2)
    inv = 1.0 / math.sqrt(dh)
    scores = np.matmul(q3, k3.transpose(0, 2, 1)) * np.asarray(inv, dtype=q3.dtype)
    clamp = None
    if allow is not None:
        allow = np.asarray(allow, dtype=bool)
        if allow.shape != (mq, mk):
            raise ValueError("attention mask shape mismatch")
        scores = scores + np.where(allow, 0.0, -1e9).astype(scores.dtype)
        clamp = allow.astype(scores.dtype)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    pc = p * clamp if clamp is not None else p
    out_data = np.matmul(pc, v3).transpose(1, 0, 2).reshape(mq, d)
    flops = 2 * mq * mk * d + heads * mq * mk * (1 + SOFTMAX_FLOPS_PER_ELEM) \
        + 2 * mq * mk * d
    if allow is not None:
        flops += 2 * heads * mq * mk
    _add_flops(flops)
    _check_finite(out_data, "attention_core")

    def backward(g):
        g3 = g.reshape(mq, heads, dh).transpose(1, 0, 2)
        if _needs_grad(vp):
            dv3 = np.matmul(pc.transpose(0, 2, 1), g3)
            vp._accumulate(dv3.transpose(1, 0, 2).reshape(mk, d))
        if not (_needs_grad(qp) or _needs_grad(kp)):
            return
        dp = np.matmul(g3, v3.transpose(0, 2, 1))
        if clamp is not None:
            dp = dp * clamp
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        ds *= np.asarray(inv, dtype=ds.dtype)
        if _needs_grad(qp):
            qp._accumulate(np.matmul(ds, k3).transpose(1, 0, 2).reshape(mq, d))
        if _needs_grad(kp):
            kp._accumulate(
                np.matmul(ds.transpose(0, 2, 1), q3).transpose(1, 0, 2).reshape(mk, d))

    out = _make(out_data, "attention_core", (qp, kp, vp), backward)
    return out, pc.copy()


def layer_norm(a, gain=None, bias=None) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance.

    Affine parameters, when given, are applied through ordinary mul/add ops
    so only the core normalization needs a bespoke backward.
    """
    a = _as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    _add_flops(x.size * LAYERNORM_FLOPS_PER_ELEM)

    def backward(g):
        if _needs_grad(a):
            d = x.shape[-1]
            gm = g.mean(axis=-1, keepdims=True)
            gxm = (g * xhat).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (g - gm - xhat * gxm))

    out = _make(xhat, "layer_norm", (a,), backward)
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out


def conv2d(x, w, b=None) -> Tensor:
    """2-D convolution, 3x3 kernel, stride 1, zero padding 1, HWC layout.

    x: [H, W, Cin], w: [3, 3, Cin, Cout], b: [Cout] or None.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4 or w.shape[:2] != (3, 3):
        raise ValueError("conv2d expects x [H,W,Cin] and w [3,3,Cin,Cout]")
    if x.shape[2] != w.shape[2]:
        raise ValueError(f"conv2d channel mismatch {x.shape} vs {w.shape}")
    h, wd, cin = x.shape
    cout = w.shape[3]
    xpad = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xpad, (3, 3), axis=(0, 1))
    # windows: [H, W, Cin, 3, 3] -> reorder to [H, W, 3, 3, Cin]
    patches = windows.transpose(0, 1, 3, 4, 2)
    out_data = np.einsum("hwklc,klco->hwo", patches, w.data, optimize=True)
    _add_flops(2 * h * wd * 9 * cin * cout)
    if b is not None:
        b = _as_tensor(b)

    def backward(g):
        if _needs_grad(w):
            w._accumulate(np.einsum("hwklc,hwo->klco", patches, g, optimize=True))
        if _needs_grad(x):
            gpad = np.zeros_like(xpad)
            for k in range(3):
                for l in range(3):
                    gpad[k : k + h, l : l + wd, :] += g @ w.data[k, l].T
            x._accumulate(gpad[1 : 1 + h, 1 : 1 + wd, :])

    out = _make(out_data, "conv2d", (x, w), backward)
    if b is not None:
        out = add(out, b)
    return out


def linear(x, w, b=None) -> Tensor:
    """Affine map of row features: x [N, din] @ w [din, dout] + b."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, x: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar-valued function of ``x``; other
    tensors it closes over are held fixed.
    """
    x.zero_grad()
    out = f(x)
    out.backward()
    analytic = x.grad.copy()
    x.zero_grad()

    fd = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    fd_flat = fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x).item()
        flat[i] = orig - eps
        lo = f(x).item()
        flat[i] = orig
        fd_flat[i] = (hi - lo) / (2 * eps)

    denom = np.maximum(1.0, np.abs(fd))
    return float(np.max(np.abs(analytic - fd) / denom))
