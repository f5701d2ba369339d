"""Frozen-feature evaluation: windowed feature extraction, linear / MLP-512
probes trained with Adam + warmup-cosine, ranking metrics, and the
per-domain / overall report aggregation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dsp import SAMPLE_RATE, FrontendConfig, pad_to_length, waveforms_to_model_input
from .errors import ConfigurationError, MetricError, StepError, UsageError
from .layers import Linear, ParamStore, activation
from .model import Model, forward_features
from .objectives import classification_loss
from .tensor import Tensor, backward, tape, zero_grads
from .training import AdamState, ScheduleConfig, adam_step, lr_at

DOMAINS = ("environment", "speech", "music")
METRICS = ("accuracy", "mAP", "multi_slot_accuracy")
HEADS = ("linear", "mlp512")
WINDOWINGS = ("whole_clip", "nonoverlap_avg", "overlap10_avg")
OVERLAP_WINDOWS = 10
MLP_HIDDEN = 512


@dataclass
class TaskSpec:
    name: str
    domain: str
    window_seconds: float
    metric: str = "accuracy"
    head: str = "linear"
    eval_windowing: str = "whole_clip"
    num_classes: int | None = None
    slot_arities: list[int] | None = None

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ConfigurationError(f"unknown domain {self.domain!r}")
        if self.metric not in METRICS:
            raise ConfigurationError(f"unknown metric {self.metric!r}")
        if self.head not in HEADS:
            raise ConfigurationError(f"unknown head {self.head!r}")
        if self.eval_windowing not in WINDOWINGS:
            raise ConfigurationError(f"unknown windowing {self.eval_windowing!r}")
        if self.metric == "multi_slot_accuracy":
            if not self.slot_arities:
                raise ConfigurationError("multi_slot_accuracy needs slot_arities")
        elif not self.num_classes:
            raise ConfigurationError(f"task {self.name} needs num_classes")
        if self.head == "mlp512" and self.metric != "mAP":
            raise ConfigurationError("mlp512 head is reserved for tagging-style (mAP) tasks")

    @property
    def multi_label(self) -> bool:
        return self.metric == "mAP"


def window_starts(clip_samples: int, window_samples: int, mode: str) -> list[int]:
    """Start offsets of evaluation windows for one clip (post-padding)."""
    if mode == "whole_clip":
        return [0]
    if clip_samples <= window_samples:
        return [0] if mode == "nonoverlap_avg" else [0] * OVERLAP_WINDOWS
    if mode == "nonoverlap_avg":
        n = math.ceil(clip_samples / window_samples)
        return [i * window_samples for i in range(n)]
    if mode == "overlap10_avg":
        span = clip_samples - window_samples
        return [round(i * span / (OVERLAP_WINDOWS - 1)) for i in range(OVERLAP_WINDOWS)]
    raise ConfigurationError(f"unknown windowing {mode!r}")


def extract_features(
    model: Model,
    clips: list[np.ndarray],
    task: TaskSpec,
    frontend: FrontendConfig,
    batch_size: int = 64,
):
    """Frozen eval-mode features per window; returns (features, clip_index)."""
    model.eval()
    window_samples = int(round(task.window_seconds * SAMPLE_RATE))
    windows = []
    clip_index = []
    for ci, clip in enumerate(clips):
        samples = pad_to_length(np.asarray(clip, dtype=np.float64), window_samples)
        for start in window_starts(len(samples), window_samples, task.eval_windowing):
            end = min(start + window_samples, len(samples))
            windows.append(pad_to_length(samples[start:end], window_samples))
            clip_index.append(ci)
    feats = []
    for lo in range(0, len(windows), batch_size):
        batch = np.stack(windows[lo : lo + batch_size])
        x = Tensor(waveforms_to_model_input(batch, frontend).astype(model.store.dtype))
        feats.append(forward_features(model, x).data)
    return np.concatenate(feats, axis=0), np.asarray(clip_index)


class Probe:
    """Linear or one-hidden-layer head trained on frozen features."""

    def __init__(self, task: TaskSpec, feature_dim: int, rng: np.random.Generator):
        self.task = task
        self.store = ParamStore(dtype=np.float64)
        self.hidden = None
        in_dim = feature_dim
        if task.head == "mlp512":
            self.hidden = Linear(self.store, "hidden", feature_dim, MLP_HIDDEN, rng)
            in_dim = MLP_HIDDEN
        if task.metric == "multi_slot_accuracy":
            self.outs = [Linear(self.store, f"slot{i}", in_dim, k, rng)
                         for i, k in enumerate(task.slot_arities)]
        else:
            self.outs = [Linear(self.store, "out", in_dim, task.num_classes, rng)]

    def logits(self, feats: Tensor) -> list[Tensor]:
        h = feats
        if self.hidden is not None:
            h = activation(self.hidden(h))
        return [out(h) for out in self.outs]

    def probabilities(self, feats: np.ndarray) -> list[np.ndarray]:
        logits = self.logits(Tensor(feats))
        if self.task.multi_label:
            return [0.5 * (1.0 + np.tanh(0.5 * logits[0].data))]
        out = []
        for lg in logits:
            z = lg.data - lg.data.max(axis=1, keepdims=True)
            e = np.exp(z)
            out.append(e / e.sum(axis=1, keepdims=True))
        return out


@dataclass
class ProbeConfig:
    steps: int = 2000
    batch_size: int = 64
    peak_lr: float = 2e-4
    warmup_fraction: float = 0.05
    seed: int = 0


def _slot_targets(labels: np.ndarray, slot_arities) -> list[np.ndarray]:
    labels = np.asarray(labels)
    return [labels[:, s] for s in range(len(slot_arities))]


def train_probe(features: np.ndarray, labels: np.ndarray, task: TaskSpec,
                cfg: ProbeConfig | None = None) -> Probe:
    """Adam + warmup-cosine on the probe parameters only."""
    cfg = cfg or ProbeConfig()
    rng = np.random.default_rng(cfg.seed)
    probe = Probe(task, features.shape[1], rng)
    schedule = ScheduleConfig(
        peak_lr=cfg.peak_lr,
        warmup_steps=max(1, int(cfg.steps * cfg.warmup_fraction)),
        total_steps=cfg.steps,
    )
    labels = np.asarray(labels)
    if not task.multi_label and task.metric == "accuracy":
        if labels.min() < 0 or labels.max() >= task.num_classes:
            raise UsageError(f"label out of range for {task.num_classes} classes")
    state = AdamState()
    n = features.shape[0]
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, n, size=min(cfg.batch_size, n))
        with tape():
            logits = probe.logits(Tensor(features[idx]))
            if task.metric == "multi_slot_accuracy":
                loss = classification_loss(logits, _slot_targets(labels[idx], task.slot_arities))
            else:
                loss = classification_loss(logits[0], labels[idx], multi_label=task.multi_label)
            if not math.isfinite(loss.item()):
                raise StepError(f"non-finite probe loss at step {step}")
            backward(loss)
        adam_step(probe.store.params, state, lr_at(step, schedule))
        zero_grads(probe.store.tensors())
    return probe


def _group_mean(values: np.ndarray, clip_index: np.ndarray) -> np.ndarray:
    """Mean of per-window rows grouped by clip id (ids are 0..n_clips-1)."""
    n_clips = int(clip_index.max()) + 1
    sums = np.zeros((n_clips,) + values.shape[1:])
    np.add.at(sums, clip_index, values)
    counts = np.bincount(clip_index, minlength=n_clips).astype(float)
    if np.any(counts == 0):
        raise MetricError("clip with no windows")
    return sums / counts.reshape((n_clips,) + (1,) * (values.ndim - 1))


def clip_scores(probe: Probe, features: np.ndarray, clip_index: np.ndarray):
    """Per-clip probability scores: mean of per-window probabilities."""
    probs = probe.probabilities(features)
    return [_group_mean(p, clip_index) for p in probs]


def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(pred == np.asarray(labels)))


def multi_slot_accuracy(slot_preds: list[np.ndarray], labels: np.ndarray) -> float:
    """A clip counts as correct only when every slot is predicted correctly."""
    labels = np.asarray(labels)
    ok = np.ones(len(labels), dtype=bool)
    for s, pred in enumerate(slot_preds):
        ok &= pred == labels[:, s]
    return float(np.mean(ok))


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP for one class: precision averaged at each positive's rank.

    Ranking is by descending score with ties broken by stable index order.
    """
    labels = np.asarray(labels).astype(bool)
    order = np.argsort(-np.asarray(scores), kind="stable")
    ranked = labels[order]
    positives = np.flatnonzero(ranked)
    if positives.size == 0:
        raise MetricError("average_precision needs at least one positive")
    ranks = positives + 1
    precisions = np.cumsum(ranked)[positives] / ranks
    return float(precisions.mean())


def mean_average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Macro mean over classes with >= 1 positive; errors if none qualify."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise MetricError(f"scores {scores.shape} and labels {labels.shape} must be N x K")
    aps = [average_precision(scores[:, k], labels[:, k])
           for k in range(scores.shape[1]) if labels[:, k].any()]
    if not aps:
        raise MetricError("no class has a positive example")
    return float(np.mean(aps))


def score(probe: Probe, features: np.ndarray, labels: np.ndarray,
          clip_index: np.ndarray, task: TaskSpec) -> float:
    """Clip-level metric from window features: probabilities are averaged per
    clip before the task metric is applied."""
    per_clip = clip_scores(probe, features, clip_index)
    if task.metric == "mAP":
        return mean_average_precision(per_clip[0], labels)
    if task.metric == "multi_slot_accuracy":
        preds = [p.argmax(axis=1) for p in per_clip]
        return multi_slot_accuracy(preds, labels)
    return accuracy(per_clip[0].argmax(axis=1), labels)


@dataclass
class HaresReport:
    task_scores: dict[str, float]
    task_domains: dict[str, str]
    domain_means: dict[str, float] = field(default_factory=dict)
    overall: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "tasks": {k: self.task_scores[k] for k in sorted(self.task_scores)},
                "domains": self.domain_means,
                "overall": self.overall,
            },
            indent=2,
        )

    def rounded(self, digits: int = 1) -> dict:
        return {
            "tasks": {k: round(v, digits) for k, v in self.task_scores.items()},
            "domains": {k: round(v, digits) for k, v in self.domain_means.items()},
            "overall": round(self.overall, digits),
        }


def hares_aggregate(task_scores: list[tuple[str, str, float]]) -> HaresReport:
    """Unweighted domain means plus the unweighted mean over all tasks
    (not the mean of domain means)."""
    if not task_scores:
        raise MetricError("no task scores to aggregate")
    scores = {}
    domains = {}
    for name, domain, value in task_scores:
        if domain not in DOMAINS:
            raise MetricError(f"task {name} has unknown domain {domain!r}")
        scores[name] = float(value)
        domains[name] = domain
    domain_means = {}
    for d in DOMAINS:
        vals = [scores[t] for t in scores if domains[t] == d]
        if vals:
            domain_means[d] = float(np.mean(vals))
    overall = float(np.mean(list(scores.values())))
    return HaresReport(task_scores=scores, task_domains=domains,
                       domain_means=domain_means, overall=overall)
