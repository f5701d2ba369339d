"""Command-line entry points: corpus synthesis, shape tracing, pretraining,
probing, task-suite evaluation, and report aggregation.

Config files are JSON; explicit CLI flags override file values.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from .data import (
    SynthSpec,
    load_checkpoint,
    load_dataset,
    load_manifest,
    save_checkpoint,
    split_dataset,
    synth_corpus,
)
from .dsp import SAMPLE_RATE, FrontendConfig, crop_samples_for_frames
from .errors import AuresError
from .evaluation import ProbeConfig, TaskSpec, extract_features, hares_aggregate, score, train_probe
from .layers import NormKind
from .model import build_model, desk_config, diff_against_reference, full_config, shape_trace
from .training import PretrainResult, RunConfig, ScheduleConfig, pretrain

PRESETS = {"full": full_config, "desk": desk_config}


def _fail(stage: str, err: Exception) -> None:
    click.echo(f"error [{stage}]: {err}", err=True)
    sys.exit(1)


def _load_config_file(path):
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        _fail("config", e)


def _pick(flag, file_cfg, key, default):
    if flag is not None:
        return flag
    if key in file_cfg:
        return file_cfg[key]
    return default


def _model_config(preset: str, norm: str | None, file_cfg: dict):
    cfg = PRESETS[preset](norm_kind=NormKind(norm) if norm else NormKind.NONE)
    for key, value in file_cfg.get("model", {}).items():
        if not hasattr(cfg, key):
            _fail("config", AuresError(f"unknown model config key {key!r}"))
        setattr(cfg, key, tuple(value) if key == "input_tf" else value)
    return cfg


@click.group()
def main():
    """Slowfast audio representation learning toolbox."""


@main.command()
@click.option("--kind", type=click.Choice(["tones", "chirps", "noise-scenes", "multilabel-mix"]),
              default="tones", show_default=True)
@click.option("--classes", "num_classes", type=int, default=8, show_default=True)
@click.option("--clips-per-class", type=int, default=50, show_default=True)
@click.option("--seconds", type=float, default=2.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def synth(kind, num_classes, clips_per_class, seconds, seed, out_dir):
    """Generate a deterministic labeled WAV corpus with a manifest."""
    try:
        spec = SynthSpec(kind=kind, num_classes=num_classes, clips_per_class=clips_per_class,
                         clip_seconds=seconds, seed=seed)
        manifest = synth_corpus(spec, out_dir)
    except AuresError as e:
        _fail("synth", e)
    click.echo(f"wrote {len(manifest)} clips and manifest.csv to {out_dir}")


@main.command()
@click.option("--config", "preset", type=click.Choice(list(PRESETS)), default="full",
              show_default=True)
@click.option("--input", "input_tf", type=str, default=None,
              help="Override input TxF, e.g. 400x128.")
@click.option("--reference", is_flag=True,
              help="Diff the trace against the published full-scale table.")
def shapes(preset, input_tf, reference):
    """Print the per-stage shape trace for a model config."""
    try:
        cfg = PRESETS[preset]()
        tf = None
        if input_tf:
            t, f = input_tf.lower().split("x")
            tf = (int(t), int(f))
        trace = shape_trace(cfg, input_tf=tf)
    except (AuresError, ValueError) as e:
        _fail("shapes", e)
    for line in trace.as_lines():
        click.echo(line)
    if reference:
        diffs = diff_against_reference(trace)
        if diffs:
            for d in diffs:
                click.echo(f"DIFF {d}", err=True)
            sys.exit(1)
        click.echo("reference: all stage rows match")


@main.command(name="pretrain")
@click.option("--objective", type=click.Choice(["simclr", "supervised"]), required=True)
@click.option("--preset", type=click.Choice(list(PRESETS)), default="desk", show_default=True)
@click.option("--norm", type=click.Choice(["bn", "ln", "in", "none"]), default=None)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--batch", "batch_size", type=int, default=None)
@click.option("--peak-lr", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def pretrain_cmd(objective, preset, norm, manifest_path, seed, steps, batch_size, peak_lr,
                 config_path, out_dir):
    """Pretrain on a manifest corpus; writes loss.csv and checkpoint.aures."""
    file_cfg = _load_config_file(config_path)
    seed = int(_pick(seed, file_cfg, "seed", 0))
    steps = int(_pick(steps, file_cfg, "steps", 2000))
    batch_size = int(_pick(batch_size, file_cfg, "batch_size", 32))
    peak_lr = float(_pick(peak_lr, file_cfg, "peak_lr", 2e-4))
    norm = _pick(norm, file_cfg, "norm", "none")
    try:
        cfg = _model_config(preset, norm, file_cfg)
        run_cfg = RunConfig(
            steps=steps,
            batch_size=batch_size,
            seed=seed,
            schedule=ScheduleConfig(peak_lr=peak_lr,
                                    warmup_steps=max(1, steps // 20),
                                    total_steps=steps),
            crop_frames=cfg.input_tf[0],
        )
        manifest = load_manifest(manifest_path)
        dataset = load_dataset(manifest)
        model = build_model(cfg, np.random.default_rng(seed), dtype=np.float32)
        out = Path(out_dir)
        multi_label = any(isinstance(lab, list) for _, lab in dataset)
        result: PretrainResult = pretrain(
            objective,
            model,
            dataset,
            run_cfg,
            FrontendConfig(n_mels=cfg.input_tf[1]),
            num_classes=manifest.num_classes,
            multi_label=multi_label,
            loss_log_path=out / "loss.csv",
            checkpoint_path=out / "checkpoint.aures",
        )
    except AuresError as e:
        _fail("pretrain", e)
    click.echo(f"final loss {result.final_loss:.6f}; artifacts in {out_dir}")


def _task_from_options(name, domain, window_seconds, metric, head, windowing, num_classes,
                       slot_arities=None):
    return TaskSpec(name=name, domain=domain, window_seconds=window_seconds, metric=metric,
                    head=head, eval_windowing=windowing, num_classes=num_classes,
                    slot_arities=slot_arities)


def _run_task(model, task: TaskSpec, dataset_train, dataset_test, probe_cfg: ProbeConfig,
              n_mels: int):
    frontend = FrontendConfig(n_mels=n_mels)
    train_clips = [row[0] for row in dataset_train]
    test_clips = [row[0] for row in dataset_test]
    feats, clip_idx = extract_features(model, train_clips, task, frontend)
    labels = _labels_array([row[1] for row in dataset_train], task)
    window_labels = labels[clip_idx]
    before = model.checksum()
    probe = train_probe(feats, window_labels, task, probe_cfg)
    assert model.checksum() == before, "backbone changed during probe training"
    test_feats, test_idx = extract_features(model, test_clips, task, frontend)
    test_labels = _labels_array([row[1] for row in dataset_test], task)
    return score(probe, test_feats, test_labels, test_idx, task)


def _labels_array(labels, task: TaskSpec):
    if task.metric == "mAP":
        out = np.zeros((len(labels), task.num_classes))
        for i, lab in enumerate(labels):
            for k in np.atleast_1d(lab):
                out[i, int(k)] = 1.0
        return out
    if task.metric == "multi_slot_accuracy":
        return np.asarray([list(lab) for lab in labels], dtype=int)
    return np.asarray(labels, dtype=int)


@main.command()
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--task-name", default="probe-task", show_default=True)
@click.option("--domain", type=click.Choice(["environment", "speech", "music"]),
              default="environment", show_default=True)
@click.option("--metric", type=click.Choice(["accuracy", "mAP", "multi_slot_accuracy"]),
              default="accuracy", show_default=True)
@click.option("--head", type=click.Choice(["linear", "mlp512"]), default="linear",
              show_default=True)
@click.option("--windowing", type=click.Choice(["whole_clip", "nonoverlap_avg", "overlap10_avg"]),
              default="whole_clip", show_default=True)
@click.option("--window-seconds", type=float, default=None,
              help="Defaults to the model's configured input length.")
@click.option("--test-fraction", type=float, default=0.25, show_default=True)
@click.option("--steps", type=int, default=2000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def probe(ckpt_path, manifest_path, task_name, domain, metric, head, windowing, window_seconds,
          test_fraction, steps, seed, out_dir):
    """Train a frozen-feature probe on a manifest and report the test score."""
    try:
        model = load_checkpoint(ckpt_path)
        manifest = load_manifest(manifest_path)
        dataset = load_dataset(manifest)
        train, test = split_dataset(dataset, test_fraction, seed)
        if window_seconds is None:
            window_seconds = crop_samples_for_frames(model.cfg.input_tf[0]) / SAMPLE_RATE
        task = _task_from_options(task_name, domain, window_seconds, metric, head, windowing,
                                  manifest.num_classes)
        value = _run_task(model, task, train, test, ProbeConfig(steps=steps, seed=seed),
                          model.cfg.input_tf[1])
    except AuresError as e:
        _fail("probe", e)
    click.echo(f"{task_name} ({domain}, {metric}): {value:.4f}")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _append_score(out / "scores.csv", task_name, domain, value)


def _append_score(path: Path, name: str, domain: str, value: float) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(["task", "domain", "score"])
        w.writerow([name, domain, f"{value:.10f}"])


@main.command()
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--tasks", "tasks_path", type=click.Path(exists=True), required=True,
              help="JSON list of task specs with manifest paths.")
@click.option("--steps", type=int, default=2000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def evaluate(ckpt_path, tasks_path, steps, seed, out_dir):
    """Run the frozen-probe protocol over a JSON task list; write scores.csv."""
    try:
        model = load_checkpoint(ckpt_path)
        tasks = json.loads(Path(tasks_path).read_text())
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        scores_path = out / "scores.csv"
        if scores_path.exists():
            scores_path.unlink()
        for entry in tasks:
            manifest = load_manifest(Path(tasks_path).parent / entry["manifest"])
            dataset = load_dataset(manifest)
            train, test = split_dataset(dataset, entry.get("test_fraction", 0.25), seed)
            task = TaskSpec(
                name=entry["name"],
                domain=entry["domain"],
                window_seconds=entry.get(
                    "window_seconds",
                    crop_samples_for_frames(model.cfg.input_tf[0]) / SAMPLE_RATE,
                ),
                metric=entry.get("metric", "accuracy"),
                head=entry.get("head", "linear"),
                eval_windowing=entry.get("eval_windowing", "whole_clip"),
                num_classes=entry.get("num_classes", manifest.num_classes),
                slot_arities=entry.get("slot_arities"),
            )
            value = _run_task(model, task, train, test, ProbeConfig(steps=steps, seed=seed),
                              model.cfg.input_tf[1])
            _append_score(scores_path, task.name, task.domain, value)
            click.echo(f"{task.name}: {value:.4f}")
    except AuresError as e:
        _fail("evaluate", e)
    click.echo(f"scores written to {scores_path}")


@main.command()
@click.option("--scores", "score_paths", type=click.Path(exists=True), multiple=True,
              required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def report(score_paths, out_path):
    """Aggregate score CSVs into per-domain means and the overall mean."""
    rows = []
    try:
        for path in score_paths:
            with open(path, newline="") as f:
                reader = csv.DictReader(f)
                for row in reader:
                    rows.append((row["task"], row["domain"], float(row["score"])))
        rep = hares_aggregate(rows)
    except (AuresError, KeyError, ValueError) as e:
        _fail("report", e)
    click.echo(rep.to_json())
    if out_path:
        Path(out_path).write_text(rep.to_json())


if __name__ == "__main__":
    main()
