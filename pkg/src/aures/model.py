"""Two-pathway slow/fast normalizer-free network: four-conv stems per pathway,
four bottleneck block stages with fast-to-slow fusion before each stage, and
global pooling + concatenation into the final feature vector.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .layers import (
    Linear,
    NormKind,
    Normalizer,
    ParamStore,
    SeparableConvTF,
    SqueezeExcite,
    WSConv2d,
    activation,
    stochastic_depth,
)
from .tensor import Tensor

# Stem kernels/strides and per-stage block geometry for both pathways.
STEM_STRIDES = [(2, 2), (1, 1), (1, 1), (2, 2)]
SLOW_STEM_KERNELS = [(1, 3), (1, 3), (1, 3), (3, 3)]
FAST_STEM_KERNELS = [(3, 3), (3, 3), (3, 3), (3, 3)]
# First block of each stage uses this stride; stage 1 keeps the stem resolution.
STAGE_STRIDES = [(1, 1), (1, 2), (1, 2), (1, 2)]
SLOW_TIME_KERNELS = [1, 1, 3, 3]
FAST_TIME_KERNELS = [3, 3, 3, 3]
FREQ_KERNEL = 3
STAGE_NAMES = ["stem1", "stem2", "stem3", "stem4", "block1", "block2", "block3", "block4"]


@dataclass
class ModelConfig:
    slow_stem_widths: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    slow_block_widths: list[int] = field(default_factory=lambda: [256, 512, 1536, 1536])
    fast_stem_widths: list[int] = field(default_factory=lambda: [2, 4, 8, 16])
    fast_block_widths: list[int] = field(default_factory=lambda: [32, 64, 192, 192])
    block_repeats: list[int] = field(default_factory=lambda: [1, 2, 6, 3])
    group_size_slow: int = 128
    group_size_fast: int = 16
    slow_temporal_stride: int = 4
    norm_kind: NormKind = NormKind.NONE
    sd_rate: float = 0.1
    width_multiplier: float = 1.0
    include_se: bool = True
    fusion_kernel: int = 5
    alpha: float = 0.2
    bottleneck_ratio: float = 0.5
    input_tf: tuple[int, int] = (400, 128)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["norm_kind"] = self.norm_kind.value
        d["input_tf"] = list(self.input_tf)
        return d

    @staticmethod
    def from_json_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["norm_kind"] = NormKind(d["norm_kind"])
        d["input_tf"] = tuple(d["input_tf"])
        return ModelConfig(**d)


def full_config(norm_kind: NormKind = NormKind.NONE) -> ModelConfig:
    return ModelConfig(norm_kind=norm_kind)


def desk_config(norm_kind: NormKind = NormKind.NONE) -> ModelConfig:
    """Desk-scale preset: 1/16 width, single block per stage, tiny groups."""
    return ModelConfig(
        block_repeats=[1, 1, 1, 1],
        group_size_slow=8,
        group_size_fast=2,
        width_multiplier=1.0 / 16.0,
        norm_kind=norm_kind,
        input_tf=(128, 40),
    )


def _round_to_group(channels: float, group: int) -> int:
    return max(group, group * int(round(channels / group)))


def _scaled_widths(cfg: ModelConfig):
    m = cfg.width_multiplier
    # floor of 2: a 1x1 conv over a single channel has fan_in 1, which makes
    # weight standardization degenerate (kernel identically zero)
    floor = 1 if m >= 1.0 else 2
    slow_stems = [max(floor, int(round(w * m))) for w in cfg.slow_stem_widths]
    fast_stems = [max(floor, int(round(w * m))) for w in cfg.fast_stem_widths]
    slow_blocks = [_round_to_group(w * m, cfg.group_size_slow) for w in cfg.slow_block_widths]
    fast_blocks = [_round_to_group(w * m, cfg.group_size_fast) for w in cfg.fast_block_widths]
    return slow_stems, fast_stems, slow_blocks, fast_blocks


@dataclass
class ShapeTrace:
    rows: list[tuple[str, tuple[int, int], tuple[int, int]]]
    feature_dim: int

    def as_lines(self) -> list[str]:
        lines = [f"{name:>10s}  slow {st[0]:4d}x{st[1]:<4d}  fast {ft[0]:4d}x{ft[1]:<4d}"
                 for name, st, ft in self.rows]
        lines.append(f"feature dim: {self.feature_dim}")
        return lines


def _conv_tf(tf: tuple[int, int], kernel: tuple[int, int], stride: tuple[int, int]) -> tuple[int, int]:
    out = []
    for n, k, s in zip(tf, kernel, stride):
        p = (k - 1) // 2
        o = (n + 2 * p - k) // s + 1
        if o < 1:
            raise ConfigurationError(f"non-positive extent: size {n}, kernel {k}, stride {s}")
        out.append(o)
    return tuple(out)


def shape_trace(cfg: ModelConfig, input_tf: tuple[int, int] | None = None) -> ShapeTrace:
    """Symbolic per-stage slow/fast T x F, without allocating parameters."""
    tf = tuple(input_tf or cfg.input_tf)
    # frame subsampling keeps ceil(T/stride) frames
    slow = (-(-tf[0] // cfg.slow_temporal_stride), tf[1])
    fast = tf
    if slow[0] < 1:
        raise ConfigurationError(f"input too short for temporal stride {cfg.slow_temporal_stride}")
    rows = [("data layer", slow, fast)]
    for i in range(4):
        slow = _conv_tf(slow, SLOW_STEM_KERNELS[i], STEM_STRIDES[i])
        fast = _conv_tf(fast, FAST_STEM_KERNELS[i], STEM_STRIDES[i])
        rows.append((STAGE_NAMES[i], slow, fast))
    for i in range(4):
        k_slow = (SLOW_TIME_KERNELS[i], FREQ_KERNEL)
        k_fast = (FAST_TIME_KERNELS[i], FREQ_KERNEL)
        slow = _conv_tf(slow, k_slow, STAGE_STRIDES[i])
        fast = _conv_tf(fast, k_fast, STAGE_STRIDES[i])
        rows.append((STAGE_NAMES[4 + i], slow, fast))
    _, _, slow_blocks, fast_blocks = _scaled_widths(cfg)
    return ShapeTrace(rows=rows, feature_dim=slow_blocks[-1] + fast_blocks[-1])


class NFBlock:
    """Pre-activation bottleneck: 1x1 down, separable kTx1 + 1xkF grouped,
    1x1 up, optional squeeze-excite, residual joined as h + alpha * branch."""

    def __init__(self, store, prefix, in_ch, out_ch, time_kernel, stride, group_size,
                 cfg: ModelConfig, rng, transition: bool):
        self.transition = transition
        self.alpha = cfg.alpha
        mid = _round_to_group(out_ch * cfg.bottleneck_ratio, group_size)
        groups = mid // group_size
        self.conv_in = WSConv2d(store, f"{prefix}.conv_in", in_ch, mid, (1, 1), rng)
        self.sep = SeparableConvTF(store, f"{prefix}.sep", mid, time_kernel, FREQ_KERNEL, rng,
                                   stride=stride, groups=groups)
        self.conv_out = WSConv2d(store, f"{prefix}.conv_out", mid, out_ch, (1, 1), rng)
        self.shortcut = None
        if transition:
            self.shortcut = WSConv2d(store, f"{prefix}.shortcut", in_ch, out_ch, (1, 1), rng,
                                     stride=stride)
        self.se = SqueezeExcite(store, f"{prefix}.se", out_ch, rng) if cfg.include_se else None
        kind = cfg.norm_kind
        self.norms = None
        if kind is not NormKind.NONE:
            self.norms = [
                Normalizer(store, f"{prefix}.norm{i}", ch, kind)
                for i, ch in enumerate([mid, mid, mid, out_ch])
            ]

    def _maybe_norm(self, x, i, training):
        return self.norms[i](x, training=training) if self.norms else x

    def __call__(self, x: Tensor, beta: float, training: bool, rng, sd_rate: float) -> Tensor:
        pre = activation(x * beta)
        shortcut = self.shortcut(pre) if self.transition else x
        h = self._maybe_norm(self.conv_in(pre), 0, training)
        h = self._maybe_norm(self.sep.time(activation(h)), 1, training)
        h = self._maybe_norm(self.sep.freq(activation(h)), 2, training)
        h = self._maybe_norm(self.conv_out(activation(h)), 3, training)
        if self.se is not None:
            h = self.se(h)
        h = stochastic_depth(h, rate=sd_rate, training=training, rng=rng)
        return shortcut + self.alpha * h


class Pathway:
    """One of the two streams: a 4-conv stem plus 4 block stages."""

    def __init__(self, store, name, cfg: ModelConfig, rng, stem_widths, block_widths,
                 stem_kernels, time_kernels, group_size, fusion_extra):
        self.name = name
        self.cfg = cfg
        self.stems = []
        in_ch = 1
        for i in range(4):
            self.stems.append(WSConv2d(store, f"{name}.stem{i + 1}", in_ch, stem_widths[i],
                                       stem_kernels[i], rng, stride=STEM_STRIDES[i]))
            in_ch = stem_widths[i]
        self.stages: list[list[NFBlock]] = []
        for s in range(4):
            blocks = []
            stage_in = in_ch + fusion_extra[s]
            for b in range(cfg.block_repeats[s]):
                blocks.append(NFBlock(
                    store, f"{name}.block{s + 1}.{b}",
                    stage_in if b == 0 else block_widths[s], block_widths[s],
                    time_kernels[s], STAGE_STRIDES[s] if b == 0 else (1, 1),
                    group_size, cfg, rng, transition=(b == 0),
                ))
            self.stages.append(blocks)
            in_ch = block_widths[s]
        self.out_channels = in_ch

    def run_stems(self, x, training):
        h = x
        for i, stem in enumerate(self.stems):
            h = stem(h)
            if i < 3:
                h = activation(h)
        return h

    def run_stage(self, s, x, training, rng):
        # beta tracks the analytic activation std; reset at each stage start
        # (post-fusion for the slow pathway) and after the transition block.
        expected_std = 1.0
        h = x
        for block in self.stages[s]:
            # normalizers own the scale; beta tracking is for the NF recipe only
            beta = 1.0 if self.cfg.norm_kind is not NormKind.NONE else 1.0 / expected_std
            h = block(h, beta=beta, training=training, rng=rng,
                      sd_rate=self.cfg.sd_rate)
            if block.transition:
                expected_std = 1.0
            expected_std = float(np.sqrt(expected_std**2 + self.cfg.alpha**2))
        return h


class Model:
    """Instantiated Slowfast network; parameters live in a flat named store."""

    def __init__(self, cfg: ModelConfig, store: ParamStore, slow: Pathway, fast: Pathway,
                 fusions: list[WSConv2d]):
        self.cfg = cfg
        self.store = store
        self.slow = slow
        self.fast = fast
        self.fusions = fusions
        self.training = False

    @property
    def params(self) -> dict[str, Tensor]:
        return self.store.params

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    @property
    def feature_dim(self) -> int:
        return self.slow.out_channels + self.fast.out_channels

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def parameter_breakdown(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for name, p in self.params.items():
            stage = ".".join(name.split(".")[:2])
            out[stage] = out.get(stage, 0) + p.size
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name].data).tobytes())
        for name in sorted(self.store.buffers):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.store.buffers[name].data).tobytes())
        return h.hexdigest()


def build_model(cfg: ModelConfig, rng: np.random.Generator, dtype=None) -> Model:
    """Deterministic construction under a seeded generator."""
    slow_stems, fast_stems, slow_blocks, fast_blocks = _scaled_widths(cfg)
    for w, g in [(w, cfg.group_size_slow) for w in slow_blocks] + [
        (w, cfg.group_size_fast) for w in fast_blocks
    ]:
        if w % g:
            raise ConfigurationError(f"block width {w} not divisible by group size {g}")
    store = ParamStore(dtype=dtype)
    fusions = []
    fusion_extra = []
    fast_in = fast_stems[3]
    for s in range(4):
        fusions.append(None)  # placeholder, filled below with stable naming
        fusion_extra.append(2 * fast_in)
        fast_in = fast_blocks[s]
    slow = Pathway(store, "slow", cfg, rng, slow_stems, slow_blocks,
                   SLOW_STEM_KERNELS, SLOW_TIME_KERNELS, cfg.group_size_slow, fusion_extra)
    fast = Pathway(store, "fast", cfg, rng, fast_stems, fast_blocks,
                   FAST_STEM_KERNELS, FAST_TIME_KERNELS, cfg.group_size_fast, [0, 0, 0, 0])
    fast_in = fast_stems[3]
    for s in range(4):
        fusions[s] = WSConv2d(store, f"fusion.stage{s + 1}", fast_in, 2 * fast_in,
                              (cfg.fusion_kernel, 1), rng,
                              stride=(cfg.slow_temporal_stride, 1))
        fast_in = fast_blocks[s]
    return Model(cfg, store, slow, fast, fusions)


def fuse_fast_to_slow(fusion: WSConv2d, slow: Tensor, fast: Tensor) -> Tensor:
    """Strided temporal conv on the fast stream, concatenated onto slow channels."""
    if fast.shape[2] != 4 * slow.shape[2]:
        raise DimensionError(
            f"fast/slow temporal ratio must be 4, got {fast.shape[2]}/{slow.shape[2]}"
        )
    if fast.shape[3] != slow.shape[3]:
        raise DimensionError(f"frequency extents differ: {fast.shape[3]} vs {slow.shape[3]}")
    reduced = fusion(fast)
    if reduced.shape[2] != slow.shape[2]:
        raise DimensionError(
            f"fusion produced T={reduced.shape[2]}, expected {slow.shape[2]}"
        )
    return T.concat([slow, reduced], axis=1)


def forward_features(model: Model, batch: Tensor, rng: np.random.Generator | None = None) -> Tensor:
    """[N,1,T,F] spectrogram batch -> [N,D] pooled two-pathway features."""
    if not isinstance(batch, Tensor):
        batch = Tensor(batch)
    if batch.ndim != 4 or batch.shape[1] != 1:
        raise DimensionError(f"expected [N,1,T,F] input, got {batch.shape}")
    cfg = model.cfg
    training = model.training
    if batch.shape[2] < cfg.slow_temporal_stride:
        raise DimensionError(f"stage data layer: input T={batch.shape[2]} shorter than "
                             f"temporal stride {cfg.slow_temporal_stride}")
    slow = batch[:, :, :: cfg.slow_temporal_stride, :]
    fast = batch

    def _staged(stage_name, fn, *args):
        try:
            return fn(*args)
        except ConfigurationError as e:
            raise DimensionError(f"stage {stage_name}: {e}") from e

    slow = _staged("stems(slow)", model.slow.run_stems, slow, training)
    fast = _staged("stems(fast)", model.fast.run_stems, fast, training)
    for s in range(4):
        name = STAGE_NAMES[4 + s]
        slow = _staged(name, fuse_fast_to_slow, model.fusions[s], slow, fast)
        slow = _staged(name, model.slow.run_stage, s, slow, training, rng)
        fast = _staged(name, model.fast.run_stage, s, fast, training, rng)
    pooled_slow = T.global_avg_pool(slow)
    pooled_fast = T.global_avg_pool(fast)
    return T.concat([pooled_slow, pooled_fast], axis=1)


REFERENCE_TRACE = [
    ("data layer", (100, 128), (400, 128)),
    ("stem1", (50, 64), (200, 64)),
    ("stem2", (50, 64), (200, 64)),
    ("stem3", (50, 64), (200, 64)),
    ("stem4", (25, 32), (100, 32)),
    ("block1", (25, 32), (100, 32)),
    ("block2", (25, 16), (100, 16)),
    ("block3", (25, 8), (100, 8)),
    ("block4", (25, 4), (100, 4)),
]
REFERENCE_FEATURE_DIM = 1728


def diff_against_reference(trace: ShapeTrace) -> list[str]:
    """Mismatched rows between a trace and the published full-scale table."""
    diffs = []
    for (name, st, ft), (rname, rst, rft) in zip(trace.rows, REFERENCE_TRACE):
        if name != rname or st != rst or ft != rft:
            diffs.append(f"{name}: got slow {st} fast {ft}, reference slow {rst} fast {rft}")
    if len(trace.rows) != len(REFERENCE_TRACE):
        diffs.append(f"row count {len(trace.rows)} != {len(REFERENCE_TRACE)}")
    if trace.feature_dim != REFERENCE_FEATURE_DIM:
        diffs.append(f"feature dim {trace.feature_dim} != {REFERENCE_FEATURE_DIM}")
    return diffs
