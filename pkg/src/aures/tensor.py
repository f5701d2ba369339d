"""Dense tensors with reverse-mode differentiation on a replayable tape.

The engine is deliberately small: numpy arrays wrapped in :class:`Tensor`,
a module-level active :class:`GradTape` that records one backward closure per
operation, and :func:`backward` which replays the tape in reverse. Gradients
accumulate additively across uses and are reset explicitly by the caller.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, DimensionError, DomainError, NumericError, UsageError

_DEFAULT_DTYPE = np.float64

# Scaling constant making GELU variance-preserving for unit-Gaussian inputs.
GELU_GAMMA = 1.7015


def set_default_dtype(dtype) -> None:
    """Switch the precision used for newly created tensors (float32/float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigurationError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class GradTape:
    """Ordered record of operations; replayed strictly in reverse."""

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: "Tensor", backward_fn: Callable[[np.ndarray], None]) -> None:
        self._entries.append((out, backward_fn))

    def reset(self) -> None:
        self._entries.clear()

    def replay_backward(self) -> None:
        for out, fn in reversed(self._entries):
            if out.grad is not None:
                fn(out.grad)


_ACTIVE_TAPE: GradTape | None = None


@contextmanager
def tape():
    """Activate a fresh tape for the duration of the block (single-writer)."""
    global _ACTIVE_TAPE
    prev = _ACTIVE_TAPE
    t = GradTape()
    _ACTIVE_TAPE = t
    try:
        yield t
    finally:
        _ACTIVE_TAPE = prev


def active_tape() -> GradTape | None:
    return _ACTIVE_TAPE


class Tensor:
    """Row-major dense array, optionally participating in the active tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor initialized with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError("item() on non-scalar tensor")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        g = _unbroadcast(np.asarray(g), self.data.shape)
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, validate finiteness, and record on the active tape."""
    if not np.all(np.isfinite(data)):
        raise NumericError("operation produced non-finite values")
    req = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = req
    out.grad = None
    if req and _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(out, backward_fn(out))
    return out


# ---------------------------------------------------------------------------
# elementwise / broadcasting ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bw(out):
        def fn(g):
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(g)
        return fn

    return _result(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bw(out):
        def fn(g):
            if a.requires_grad:
                a.accumulate_grad(g * b.data)
            if b.requires_grad:
                b.accumulate_grad(g * a.data)
        return fn

    return _result(data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def bw(out):
        def fn(g):
            if a.requires_grad:
                a.accumulate_grad(g / b.data)
            if b.requires_grad:
                b.accumulate_grad(-g * a.data / (b.data * b.data))
        return fn

    return _result(data, (a, b), bw)


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    data = a.data ** p

    def bw(out):
        def fn(g):
            if a.requires_grad:
                a.accumulate_grad(g * p * a.data ** (p - 1.0))
        return fn

    return _result(data, (a,), bw)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):  # overflow is caught by the finite check
        data = np.exp(a.data)

    def bw(out):
        def fn(g):
            if a.requires_grad:
                a.accumulate_grad(g * out.data)
        return fn

    return _result(data, (a,), bw)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    data = np.log(a.data)

    def bw(out):
        def fn(g):
            if a.requires_grad:
                a.accumulate_grad(g / a.data)
        return fn

    return _result(data, (a,), bw)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative value")
    data = np.sqrt(a.data)

    def bw(out):
        def fn(g):
            if a.requires_grad:
                a.accumulate_grad(g * 0.5 / np.maximum(out.data, 1e-300))
        return fn

    return _result(data, (a,), bw)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bw(out):
        def fn(g):
            if a.requires_grad:
                a.accumulate_grad(g * out.data * (1.0 - out.data))
        return fn

    return _result(data, (a,), bw)


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    data = np.logaddexp(0.0, a.data).astype(a.dtype)

    def bw(out):
        def fn(g):
            if a.requires_grad:
                a.accumulate_grad(g * 0.5 * (1.0 + np.tanh(0.5 * a.data)))
        return fn

    return _result(data, (a,), bw)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a, gamma: float = GELU_GAMMA) -> Tensor:
    """Exact (erf-based) GELU scaled by ``gamma`` to preserve unit variance."""
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    data = (gamma * a.data * cdf).astype(a.dtype)

    def bw(out):
        def fn(g):
            if a.requires_grad:
                pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
                a.accumulate_grad(g * gamma * (cdf + a.data * pdf))
        return fn

    return _result(data, (a,), bw)


# ---------------------------------------------------------------------------
# reductions and structure


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(out):
        def fn(g):
            if a.requires_grad:
                gg = g
                if not keepdims and axis is not None:
                    gg = np.expand_dims(gg, axis)
                a.accumulate_grad(np.broadcast_to(gg, a.data.shape))
        return fn

    return _result(np.asarray(data), (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def bw(out):
        def fn(g):
            if a.requires_grad:
                a.accumulate_grad(g.reshape(a.data.shape))
        return fn

    return _result(data, (a,), bw)


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    data = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def bw(out):
        def fn(g):
            if a.requires_grad:
                a.accumulate_grad(np.transpose(g, inv))
        return fn

    return _result(data, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(out):
        def fn(g):
            parts = np.split(g, splits, axis=axis)
            for t, p in zip(tensors, parts):
                if t.requires_grad:
                    t.accumulate_grad(p)
        return fn

    return _result(data, tensors, bw)


def getitem(a, idx) -> Tensor:
    a = _as_tensor(a)
    data = a.data[idx]

    def bw(out):
        def fn(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                # add.at, not assignment: repeated indices must accumulate
                np.add.at(full, idx, g)
                a.accumulate_grad(full)
        return fn

    return _result(np.ascontiguousarray(data), (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(out):
        def fn(g):
            if a.requires_grad:
                a.accumulate_grad(g @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ g)
        return fn

    return _result(data, (a, b), bw)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax over one axis; the max-shift is a constant and does not need a gradient."""
    a = _as_tensor(a)
    shift = Tensor(np.max(a.data, axis=axis, keepdims=True))
    e = exp(a - shift)
    return div(e, tsum(e, axis=axis, keepdims=True))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shift = Tensor(np.max(a.data, axis=axis, keepdims=True))
    centered = a - shift
    lse = log(tsum(exp(centered), axis=axis, keepdims=True))
    return centered - lse


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shift_arr = np.max(a.data, axis=axis, keepdims=True)
    lse = log(tsum(exp(a - Tensor(shift_arr)), axis=axis, keepdims=True))
    out = lse + Tensor(shift_arr)
    if not keepdims:
        out = reshape(out, tuple(n for i, n in enumerate(out.shape) if i != (axis % a.ndim)))
    return out


def global_avg_pool(a) -> Tensor:
    """[N,C,T,F] -> [N,C] mean over time and frequency."""
    a = _as_tensor(a)
    if a.ndim != 4:
        raise DimensionError(f"global_avg_pool expects 4-D input, got {a.shape}")
    return tmean(a, axis=(2, 3))


def l2_normalize(a, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = sqrt(tsum(mul(a, a), axis=axis, keepdims=True) + eps)
    return div(a, norm)


# ---------------------------------------------------------------------------
# convolution


def _conv_out_extent(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def conv2d(x, w, stride=(1, 1), padding=(0, 0), groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation over [N,C,T,F] with kernel [O,C/groups,kT,kF]."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input/kernel, got {x.shape}, {w.shape}")
    N, C, T, F = x.shape
    O, Cg, kT, kF = w.shape
    if C % groups or O % groups:
        raise DimensionError(f"channels {C}/{O} not divisible by groups={groups}")
    if Cg != C // groups:
        raise DimensionError(f"kernel expects {Cg} in-channels per group, input has {C // groups}")
    sT, sF = stride
    pT, pF = padding
    To = _conv_out_extent(T, kT, sT, pT)
    Fo = _conv_out_extent(F, kF, sF, pF)
    if To < 1 or Fo < 1:
        raise ConfigurationError(
            f"conv2d output extent non-positive: input {T}x{F}, kernel {kT}x{kF}, "
            f"stride {stride}, padding {padding}"
        )
    Og = O // groups
    K = Cg * kT * kF
    Tp, Fp = T + 2 * pT, F + 2 * pF
    xp = np.pad(x.data, ((0, 0), (0, 0), (pT, pT), (pF, pF)))
    xg = xp.reshape(N, groups, Cg, Tp, Fp)
    # im2col: one strided view copy, then a single BLAS batched matmul
    s = xg.strides
    patches = np.lib.stride_tricks.as_strided(
        xg,
        shape=(N, groups, Cg, kT, kF, To, Fo),
        strides=(s[0], s[1], s[2], s[3], s[4], s[3] * sT, s[4] * sF),
    )
    cols = np.ascontiguousarray(patches).reshape(N, groups, K, To * Fo)
    wg = w.data.reshape(groups, Og, K)
    data = np.matmul(wg[None], cols).reshape(N, O, To, Fo)

    def bw(out_t):
        def fn(g):
            gg = g.reshape(N, groups, Og, To * Fo)
            if w.requires_grad:
                gw = np.matmul(gg, cols.swapaxes(-1, -2)).sum(axis=0)
                w.accumulate_grad(gw.reshape(O, Cg, kT, kF))
            if x.requires_grad:
                gcols = np.matmul(wg.swapaxes(-1, -2)[None], gg)
                gcols = gcols.reshape(N, groups, Cg, kT, kF, To, Fo)
                gxp = np.zeros((N, groups, Cg, Tp, Fp), dtype=g.dtype)
                for i in range(kT):
                    for j in range(kF):
                        gxp[:, :, :, i : i + (To - 1) * sT + 1 : sT,
                            j : j + (Fo - 1) * sF + 1 : sF] += gcols[:, :, :, i, j]
                gx = gxp.reshape(N, C, Tp, Fp)
                if pT or pF:
                    gx = gx[:, :, pT : pT + T, pF : pF + F]
                x.accumulate_grad(gx)
        return fn

    return _result(data, (x, w), bw)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss: Tensor) -> None:
    """Seed d(loss)/d(loss)=1 and replay the active tape in reverse."""
    if loss.data.size != 1:
        raise UsageError("backward requires a scalar loss")
    if _ACTIVE_TAPE is None:
        raise UsageError("backward requires an active tape")
    loss.grad = np.ones_like(loss.data)
    _ACTIVE_TAPE.replay_backward()


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
) -> float:
    """Compare analytic gradients of a scalar function against central differences.

    Returns max over checked coordinates of |analytic - numeric| scaled by
    max(|analytic|, |numeric|, floor). When ``max_coords_per_param`` is set,
    a random subset of coordinates is checked per parameter tensor. ``floor``
    bounds the relative error where both gradients sit below the resolution
    of the finite-difference quotient itself.
    """
    v1 = f().item()
    v2 = f().item()
    if v1 != v2:
        raise UsageError("grad_check requires a deterministic function")

    zero_grads(params)
    with tape():
        loss = f()
        backward(loss)
    analytic = [None if p.grad is None else p.grad.copy() for p in params]
    zero_grads(params)

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        aflat = np.zeros(n) if a is None else a.reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            fp = f().item()
            flat[idx] = orig - eps
            fm = f().item()
            flat[idx] = orig
            numeric = (fp - fm) / (2.0 * eps)
            denom = max(abs(aflat[idx]), abs(numeric), floor)
            worst = max(worst, abs(aflat[idx] - numeric) / denom)
    return worst
