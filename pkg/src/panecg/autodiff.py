"""Dense float32 tensors with reverse-mode automatic differentiation.

A :class:`Tape` records every differentiable operation in execution order
(which is already topological).  ``Tape.backward`` seeds the loss gradient
and replays the records once, in reverse, accumulating gradients additively
so fan-out works without bookkeeping.  With no tape active, operations run
as plain numpy and allocate nothing extra, which is the inference path.

Data buffers are float32; reductions accumulate in float64 before casting
back.  One tape belongs to one thread (see ``threading.local`` below);
read-only tensors may be shared freely across threads.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "DimensionError",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "tsum",
    "tmean",
    "tabs",
    "relu",
    "gelu",
    "sigmoid",
    "tsin",
    "tcos",
    "softmax",
    "layer_norm",
    "conv1d",
    "upsample_linear",
    "spectral_normalize",
    "reshape",
    "transpose",
    "concat",
    "index_rows",
]


class DimensionError(ValueError):
    """Raised when operand shapes cannot be combined."""


class Tensor:
    """A dense float32 array, optionally carrying a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

_tls = threading.local()


class Tape:
    """Ordered record of differentiable operations for one training step.

    Usage::

        with Tape() as tape:
            loss = ...            # ops executed here are recorded
        tape.backward(loss)       # fills .grad on every contributing tensor
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        if getattr(_tls, "tape", None) is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _tls.tape = None

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        self._entries.append((out, backward))

    def backward(self, loss: Tensor) -> None:
        """Run the reverse sweep from ``loss``, visiting each record once."""
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._entries):
            if out.grad is not None:
                fn(out.grad)


def _active_tape() -> Optional[Tape]:
    return getattr(_tls, "tape", None)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = g.astype(np.float32, copy=False)
    if t.grad is None:
        t.grad = np.ascontiguousarray(np.broadcast_to(g, t.data.shape).copy() if g.shape != t.data.shape else g)
    else:
        t.grad = t.grad + g


def _make(out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.record(out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, -g)

    return _make(-a.data, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting batch axes."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------------------
# reductions (float64 accumulation)
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(np.float32)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape))

    return _make(out, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(np.float32)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / n, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg / n, a.data.shape))

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------

def tabs(a: Tensor) -> Tensor:
    out = np.abs(a.data)

    def backward(g):
        _accum(a, g * np.sign(a.data))

    return _make(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return _make(out, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU with the tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        sech2 = 1.0 - th * th
        d = 0.5 * (1.0 + th) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        _accum(a, g * d)

    return _make(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    """Numerically stable logistic function (exact 0/1 at extreme inputs)."""
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), backward)


def tsin(a: Tensor) -> Tensor:
    out = np.sin(a.data)

    def backward(g):
        _accum(a, g * np.cos(a.data))

    return _make(out, (a,), backward)


def tcos(a: Tensor) -> Tensor:
    out = np.cos(a.data)

    def backward(g):
        _accum(a, -g * np.sin(a.data))

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# normalizations
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Row-stochastic softmax, stabilized by subtracting the per-slice max."""
    if axis >= a.data.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for shape {a.data.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(np.float32)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True, dtype=np.float64).astype(np.float32)
        _accum(a, out * (g - dot))

    return _make(out, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, axis: int = -2, eps: float = 1e-5) -> Tensor:
    """Normalize over ``axis`` to zero mean / unit variance, then scale and shift.

    ``gain``/``bias`` broadcast against the normalized tensor; for channel-time
    maps shaped (..., c, t) the default axis normalizes each time position over
    channels with gain/bias shaped (c, 1).
    """
    x = a.data.astype(np.float64)
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).astype(np.float32)
    out = xhat * gain.data + bias.data

    def backward(g):
        n = a.data.shape[axis]
        gx = (g * gain.data).astype(np.float64)
        s1 = gx.sum(axis=axis, keepdims=True)
        s2 = (gx * xhat).sum(axis=axis, keepdims=True)
        da = inv * (gx - s1 / n - xhat * (s2 / n))
        _accum(a, da.astype(np.float32))
        _accum(gain, _unbroadcast(g * xhat, gain.data.shape))
        _accum(bias, _unbroadcast(g, bias.data.shape))

    return _make(out, (a, gain, bias), backward)


# ---------------------------------------------------------------------------
# convolution / resampling
# ---------------------------------------------------------------------------

def _conv_out_len(t: int, k: int, stride: int, padding: int) -> int:
    return (t + 2 * padding - k) // stride + 1


def conv1d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (B, C_in, T) with kernels (C_out, C_in, K)."""
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise DimensionError(f"conv1d expects (B,Cin,T) and (Cout,Cin,K), got {x.data.shape} and {w.data.shape}")
    batch, c_in, t = x.data.shape
    c_out, c_in_w, k = w.data.shape
    if c_in != c_in_w:
        raise DimensionError(f"conv1d channel mismatch: input {x.data.shape} vs kernel {w.data.shape}")
    if k > t + 2 * padding:
        raise DimensionError(f"kernel {w.data.shape} wider than padded input {x.data.shape} (padding={padding})")
    t_out = _conv_out_len(t, k, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    # im2col with a short loop over kernel taps (k is small everywhere here)
    cols = np.empty((batch, c_in, k, t_out), dtype=np.float32)
    for j in range(k):
        cols[:, :, j, :] = xp[:, :, j : j + stride * t_out : stride]
    cols2 = cols.reshape(batch, c_in * k, t_out)
    w2 = w.data.reshape(c_out, c_in * k)
    out = np.matmul(w2, cols2)  # (B, C_out, T_out)
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1)

    def backward(g):
        gw2 = np.einsum("bot,bct->oc", g, cols2, optimize=True)
        _accum(w, gw2.reshape(c_out, c_in, k))
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 2), dtype=np.float64).astype(np.float32))
        gcols2 = np.matmul(w2.T, g)  # (B, Cin*K, T_out)
        gcols = gcols2.reshape(batch, c_in, k, t_out)
        gxp = np.zeros((batch, c_in, t + 2 * padding), dtype=np.float32)
        for j in range(k):
            gxp[:, :, j : j + stride * t_out : stride] += gcols[:, :, j, :]
        _accum(x, gxp[:, :, padding : padding + t] if padding else gxp)

    inputs = (x, w) if bias is None else (x, w, bias)
    return _make(out, inputs, backward)


_UPSAMPLE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _upsample_matrix(t: int, factor: int) -> np.ndarray:
    """(t*factor, t) interpolation matrix for the i -> i/factor mapping."""
    key = (t, factor)
    m = _UPSAMPLE_CACHE.get(key)
    if m is None:
        m = np.zeros((t * factor, t), dtype=np.float32)
        for i in range(t * factor):
            pos = i / factor
            lo = int(math.floor(pos))
            frac = pos - lo
            hi = min(lo + 1, t - 1)  # right edge replicates the last sample
            m[i, lo] += 1.0 - frac
            m[i, hi] += frac
        _UPSAMPLE_CACHE[key] = m
    return m


def upsample_linear(x: Tensor, factor: int) -> Tensor:
    """Linear interpolation along the last axis to ``factor``x more samples."""
    if factor < 1 or int(factor) != factor:
        raise DimensionError(f"upsample factor must be a positive integer, got {factor}")
    t = x.data.shape[-1]
    m = _upsample_matrix(t, int(factor))
    flat = x.data.reshape(-1, t)
    out = (flat @ m.T).reshape(x.data.shape[:-1] + (t * factor,))

    def backward(g):
        gflat = g.reshape(-1, t * factor)
        _accum(x, (gflat @ m).reshape(x.data.shape))

    return _make(out, (x,), backward)


def spectral_normalize(w: Tensor, u_state: np.ndarray, n_iters: int = 1, update: bool = True) -> Tensor:
    """Divide ``w`` by its leading singular value, estimated by power iteration.

    ``w`` is viewed as 2-d (out x rest).  ``u_state`` is the persistent left
    vector, refined in place across calls when ``update`` is true; with
    ``n_iters=0`` the stored vector is used as-is, which keeps inference
    deterministic.  Gradients treat u and v as constants, which is exact at
    convergence of the power iteration.
    """
    shape = w.data.shape
    w2 = w.data.reshape(shape[0], -1).astype(np.float64)
    u = u_state.astype(np.float64)
    v = None
    for _ in range(max(n_iters, 0)):
        v = w2.T @ u
        v /= max(np.linalg.norm(v), 1e-12)
        u = w2 @ v
        u /= max(np.linalg.norm(u), 1e-12)
    if v is None:
        v = w2.T @ u
        v /= max(np.linalg.norm(v), 1e-12)
    if update and n_iters > 0:
        u_state[...] = u.astype(np.float32)
    sigma = float(u @ w2 @ v)
    sigma = max(sigma, 1e-12)
    out = (w.data / sigma).astype(np.float32)
    uv = np.outer(u, v).reshape(shape).astype(np.float32)

    def backward(g):
        # d(w/sigma)/dw with sigma = u^T w v and u, v held constant
        coef = float((g * out).sum(dtype=np.float64)) / sigma
        _accum(w, g / sigma - coef * uv)

    return _make(out, (w,), backward)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(out, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = np.ascontiguousarray(a.data.transpose(axes))
    inv = np.argsort(axes)

    def backward(g):
        _accum(a, g.transpose(inv))

    return _make(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(out, tuple(tensors), backward)


def index_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows ``a[idx]`` along the first axis (gather, scatter-add backward)."""
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def backward(g):
        if not a.requires_grad:
            return
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        _accum(a, ga)

    return _make(out, (a,), backward)
