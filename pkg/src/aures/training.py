"""Adam with warmup-cosine scheduling and the seeded pretraining loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .dsp import FrontendConfig, crop_samples_for_frames, pad_to_length, waveforms_to_model_input
from .errors import ConfigurationError, StepError, UsageError
from .layers import Linear, ParamStore
from .model import Model, forward_features
from .objectives import (
    Projector,
    ProjectorConfig,
    classification_loss,
    desk_projector_config,
    mix_examples,
    simclr_loss,
)
from .tensor import Tensor, backward, tape, zero_grads


@dataclass
class ScheduleConfig:
    peak_lr: float = 2e-4
    warmup_steps: int = 5000
    total_steps: int = 200_000

    def __post_init__(self):
        if not 0 < self.warmup_steps < self.total_steps:
            raise ConfigurationError(
                f"need 0 < warmup_steps < total_steps, got {self.warmup_steps}/{self.total_steps}"
            )


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    """Linear 0 -> peak over warmup, then cosine decay back to 0."""
    if not 0 <= step <= cfg.total_steps:
        raise UsageError(f"step {step} outside [0, {cfg.total_steps}]")
    if step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    frac = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


class AdamState:
    def __init__(self):
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Textbook Adam with bias correction; parameters without grads are skipped."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise StepError(f"non-finite gradient in {name} at adam step {t}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)


@dataclass
class RunConfig:
    steps: int = 2000
    batch_size: int = 32
    seed: int = 0
    schedule: ScheduleConfig = field(default_factory=lambda: ScheduleConfig(total_steps=2000, warmup_steps=100))
    crop_frames: int = 128
    checkpoint_every: int = 0  # 0 = final only
    dtype: str = "float32"


@dataclass
class PretrainResult:
    loss_log: list[tuple[int, float, float]]  # (step, lr, loss)
    final_loss: float


def _batch_waveforms(dataset, idx, crop_samples, rng):
    out = np.zeros((len(idx), crop_samples), dtype=np.float64)
    for row, i in enumerate(idx):
        samples = pad_to_length(dataset[i][0], crop_samples)
        start = int(rng.integers(0, len(samples) - crop_samples + 1))
        out[row] = samples[start : start + crop_samples]
    return out


def write_loss_log(path: Path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "lr", "loss"])
        for step, lr, loss in rows:
            w.writerow([step, f"{lr:.10e}", f"{loss:.10e}"])
    tmp.rename(path)


def pretrain(
    objective: str,
    model: Model,
    dataset: list[tuple[np.ndarray, object]],
    run_cfg: RunConfig,
    frontend: FrontendConfig,
    num_classes: int | None = None,
    multi_label: bool = False,
    projector_cfg: ProjectorConfig | None = None,
    loss_log_path: Path | None = None,
    checkpoint_path: Path | None = None,
) -> PretrainResult:
    """Seeded single-threaded pretraining; deterministic given the run config.

    ``dataset`` rows are (waveform samples, label); labels are ignored for
    the contrastive objective.
    """
    if objective not in ("simclr", "supervised"):
        raise ConfigurationError(f"unknown objective {objective!r}")
    if not dataset:
        raise ConfigurationError("dataset is empty")
    from .data import save_checkpoint  # deferred: data imports model

    rng = np.random.default_rng(run_cfg.seed)
    crop_samples = crop_samples_for_frames(run_cfg.crop_frames)
    head_store = ParamStore(dtype=model.store.dtype)
    feature_rng = np.random.default_rng(run_cfg.seed + 1)
    if objective == "simclr":
        projector = Projector(head_store, model.feature_dim,
                              projector_cfg or desk_projector_config(), feature_rng)
    else:
        if num_classes is None:
            raise ConfigurationError("supervised objective needs num_classes")
        classifier = Linear(head_store, "classifier", model.feature_dim, num_classes, feature_rng)

    all_params = {**model.params, **head_store.params}
    state = AdamState()
    log: list[tuple[int, float, float]] = []
    model.train()
    for step in range(1, run_cfg.steps + 1):
        idx = rng.integers(0, len(dataset), size=run_cfg.batch_size)
        lr = lr_at(step, run_cfg.schedule)
        with tape():
            if objective == "simclr":
                view_a = mix_examples(_batch_waveforms(dataset, idx, crop_samples, rng), rng)
                view_b = mix_examples(_batch_waveforms(dataset, idx, crop_samples, rng), rng)
                xa = Tensor(waveforms_to_model_input(view_a, frontend).astype(model.store.dtype))
                xb = Tensor(waveforms_to_model_input(view_b, frontend).astype(model.store.dtype))
                loss = simclr_loss(model, projector, xa, xb, rng=rng)
            else:
                waves = _batch_waveforms(dataset, idx, crop_samples, rng)
                labels = _as_label_matrix([dataset[i][1] for i in idx], num_classes, multi_label)
                waves, labels = mix_examples(waves, rng, labels=labels)
                x = Tensor(waveforms_to_model_input(waves, frontend).astype(model.store.dtype))
                logits = classifier(forward_features(model, x, rng=rng))
                loss = classification_loss(logits, labels, multi_label=multi_label)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise StepError(f"non-finite loss at step {step}")
            backward(loss)
        adam_step(all_params, state, lr)
        zero_grads(all_params.values())
        log.append((step, lr, loss_val))
        if checkpoint_path and run_cfg.checkpoint_every and step % run_cfg.checkpoint_every == 0:
            save_checkpoint(model, checkpoint_path, step=step, rng_state=rng.bit_generator.state)
    model.eval()
    if loss_log_path:
        write_loss_log(loss_log_path, log)
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path, step=run_cfg.steps, rng_state=rng.bit_generator.state)
    return PretrainResult(loss_log=log, final_loss=log[-1][2])


def _as_label_matrix(labels, num_classes: int, multi_label: bool) -> np.ndarray:
    out = np.zeros((len(labels), num_classes), dtype=np.float64)
    for i, lab in enumerate(labels):
        if multi_label:
            for k in np.atleast_1d(lab):
                out[i, int(k)] = 1.0
        else:
            out[i, int(lab)] = 1.0
    return out
