"""Building blocks: scaled weight standardization, the normalizer options,
variance-preserving activation, stochastic depth, and time/frequency-separable
convolutions with squeeze-excite gating.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

WS_EPS = 1e-8
NORM_EPS = 1e-5
BN_MOMENTUM = 0.99


class NormKind(Enum):
    BATCH = "bn"
    LAYER = "ln"
    INSTANCE = "in"
    NONE = "none"


def activation(x: Tensor) -> Tensor:
    """GELU scaled by 1.7015 so unit-Gaussian inputs keep unit variance."""
    return T.gelu(x)


class Buffer:
    """Mutable non-trainable state (e.g. running statistics)."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data)


class ParamStore:
    """Flat dicts of named parameter tensors and buffers, dotted-path keyed."""

    def __init__(self, dtype=None):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, Buffer] = {}
        self.dtype = dtype or T.default_dtype()

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter name {name}")
        t = Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, array: np.ndarray) -> Buffer:
        if name in self.buffers:
            raise ConfigurationError(f"duplicate buffer name {name}")
        b = Buffer(np.asarray(array, dtype=self.dtype))
        self.buffers[name] = b
        return b

    def tensors(self) -> list[Tensor]:
        return list(self.params.values())


def he_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def standardize_kernel(raw: Tensor, gain: Tensor) -> Tensor:
    """Per-output-channel zero-mean, 1/fan_in-variance reparameterization."""
    o, cg, kt, kf = raw.shape
    fan_in = cg * kt * kf
    mean = T.tmean(raw, axis=(1, 2, 3), keepdims=True)
    centered = raw - mean
    var = T.tmean(centered * centered, axis=(1, 2, 3), keepdims=True)
    scale = gain.reshape((o, 1, 1, 1)) / T.sqrt((var + WS_EPS * WS_EPS) * float(fan_in))
    return centered * scale


class WSConv2d:
    """Conv whose effective kernel is standardized on every forward pass.

    ``standardize=False`` gives a plain convolution with the raw kernel,
    used by oracle tests and ablations.
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel: tuple[int, int],
        rng: np.random.Generator,
        stride: tuple[int, int] = (1, 1),
        groups: int = 1,
        standardize: bool = True,
        bias: bool = True,
    ):
        if in_channels % groups or out_channels % groups:
            raise ConfigurationError(
                f"{name}: channels {in_channels}->{out_channels} not divisible by groups={groups}"
            )
        kt, kf = kernel
        fan_in = (in_channels // groups) * kt * kf
        self.weight = store.add(f"{name}.weight", he_init(rng, (out_channels, in_channels // groups, kt, kf), fan_in))
        self.gain = store.add(f"{name}.gain", np.ones(out_channels)) if standardize else None
        self.bias = store.add(f"{name}.bias", np.zeros(out_channels)) if bias else None
        self.stride = stride
        self.padding = ((kt - 1) // 2, (kf - 1) // 2)
        self.groups = groups
        self.standardize = standardize

    def __call__(self, x: Tensor) -> Tensor:
        w = standardize_kernel(self.weight, self.gain) if self.standardize else self.weight
        out = T.conv2d(x, w, stride=self.stride, padding=self.padding, groups=self.groups)
        if self.bias is not None:
            out = out + self.bias.reshape((1, -1, 1, 1))
        return out


class SeparableConvTF:
    """kT x 1 time conv followed by 1 x kF frequency conv; stride rides on the
    frequency factor per the block stride convention."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        channels: int,
        time_kernel: int,
        freq_kernel: int,
        rng: np.random.Generator,
        stride: tuple[int, int] = (1, 1),
        groups: int = 1,
        standardize: bool = True,
    ):
        st, sf = stride
        self.time = WSConv2d(
            store, f"{name}.time", channels, channels, (time_kernel, 1), rng,
            stride=(st, 1), groups=groups, standardize=standardize,
        )
        self.freq = WSConv2d(
            store, f"{name}.freq", channels, channels, (1, freq_kernel), rng,
            stride=(1, sf), groups=groups, standardize=standardize,
        )

    def __call__(self, x: Tensor) -> Tensor:
        return self.freq(self.time(x))


class Normalizer:
    """One of BN/LN/IN/identity with learnable per-channel scale and shift."""

    def __init__(self, store: ParamStore, name: str, channels: int, kind: NormKind):
        self.kind = kind
        if kind is NormKind.NONE:
            self.scale = self.shift = None
            return
        self.scale = store.add(f"{name}.scale", np.ones(channels))
        self.shift = store.add(f"{name}.shift", np.zeros(channels))
        if kind is NormKind.BATCH:
            self.running_mean = store.add_buffer(f"{name}.running_mean", np.zeros(channels))
            self.running_var = store.add_buffer(f"{name}.running_var", np.ones(channels))

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        if self.kind is NormKind.NONE:
            return x
        if x.ndim != 4:
            raise DimensionError(f"normalize expects [N,C,T,F], got {x.shape}")
        if self.kind is NormKind.BATCH:
            if training:
                n, _, t, f = x.shape
                if n * t * f < 2:
                    raise DimensionError("BatchNorm training needs N*T*F >= 2")
                mean = T.tmean(x, axis=(0, 2, 3), keepdims=True)
                centered = x - mean
                var = T.tmean(centered * centered, axis=(0, 2, 3), keepdims=True)
                dt = self.running_mean.data.dtype
                self.running_mean.data = (
                    BN_MOMENTUM * self.running_mean.data + (1 - BN_MOMENTUM) * mean.data.reshape(-1)
                ).astype(dt)
                self.running_var.data = (
                    BN_MOMENTUM * self.running_var.data + (1 - BN_MOMENTUM) * var.data.reshape(-1)
                ).astype(dt)
                normed = centered / T.sqrt(var + NORM_EPS)
            else:
                mean = Tensor(self.running_mean.data.reshape(1, -1, 1, 1))
                var = Tensor(self.running_var.data.reshape(1, -1, 1, 1))
                normed = (x - mean) / T.sqrt(var + NORM_EPS)
        else:
            axes = (1, 2, 3) if self.kind is NormKind.LAYER else (2, 3)
            mean = T.tmean(x, axis=axes, keepdims=True)
            centered = x - mean
            var = T.tmean(centered * centered, axis=axes, keepdims=True)
            normed = centered / T.sqrt(var + NORM_EPS)
        return normed * self.scale.reshape((1, -1, 1, 1)) + self.shift.reshape((1, -1, 1, 1))


def normalize(x: Tensor, kind: NormKind, training: bool = False) -> Tensor:
    """Functional normalization with fresh unit scale / zero shift parameters."""
    store = ParamStore(dtype=x.dtype)
    return Normalizer(store, "norm", x.shape[1], kind)(x, training=training)


def stochastic_depth(branch: Tensor, rate: float = 0.1, training: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
    """Per-example residual-branch dropping, rescaled to preserve expectation."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"stochastic depth rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return branch
    if rng is None:
        raise ConfigurationError("stochastic_depth in training mode requires an rng")
    n = branch.shape[0]
    keep = (rng.random(n) >= rate).astype(branch.data.dtype) / (1.0 - rate)
    return branch * Tensor(keep.reshape(n, 1, 1, 1))


class SqueezeExcite:
    """Global-pool gating: hidden width = channels/2, output gate doubled."""

    def __init__(self, store: ParamStore, name: str, channels: int, rng: np.random.Generator,
                 reduction: float = 0.5):
        hidden = max(1, int(round(channels * reduction)))
        self.w1 = store.add(f"{name}.w1", he_init(rng, (channels, hidden), channels))
        self.b1 = store.add(f"{name}.b1", np.zeros(hidden))
        self.w2 = store.add(f"{name}.w2", he_init(rng, (hidden, channels), hidden))
        self.b2 = store.add(f"{name}.b2", np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        pooled = T.global_avg_pool(x)
        h = activation(T.matmul(pooled, self.w1) + self.b1.reshape((1, -1)))
        gate = T.sigmoid(T.matmul(h, self.w2) + self.b2.reshape((1, -1)))
        n, c = gate.shape
        return x * (2.0 * gate.reshape((n, c, 1, 1)))


class Linear:
    def __init__(self, store: ParamStore, name: str, in_features: int, out_features: int,
                 rng: np.random.Generator):
        self.weight = store.add(f"{name}.weight", he_init(rng, (in_features, out_features), in_features))
        self.bias = store.add(f"{name}.bias", np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias.reshape((1, -1))
