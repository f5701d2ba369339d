"""Ingestion and persistence: 16-bit PCM WAV I/O, CSV dataset manifests,
deterministic synthetic corpora, and the binary checkpoint format.

Checkpoint layout: 8-byte magic ``AURESCKP``, little-endian u32 header
length, UTF-8 JSON header (format version, model config, step, rng state,
parameter table, blob hash), then concatenated little-endian float32 blobs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, Waveform
from .errors import CheckpointError, ConfigurationError, IngestionError
from .model import Model, ModelConfig, build_model

CHECKPOINT_MAGIC = b"AURESCKP"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# WAV


def load_wav(path) -> Waveform:
    """Mono 16-bit PCM at 16 kHz, scaled to [-1, 1] by /32768."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            rate = wf.getframerate()
            width = wf.getsampwidth()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except (wave.Error, EOFError, OSError) as e:
        raise IngestionError(f"{path}: not a readable WAV file ({e})") from e
    if channels != 1:
        raise IngestionError(f"{path}: channels must be 1 (mono), got {channels}")
    if rate != SAMPLE_RATE:
        raise IngestionError(f"{path}: sample rate must be {SAMPLE_RATE}, got {rate}")
    if width != 2:
        raise IngestionError(f"{path}: sample width must be 16-bit, got {8 * width}-bit")
    if len(raw) != 2 * n:
        raise IngestionError(f"{path}: length mismatch, file truncated")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples)


def save_wav(path, samples: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    quantized = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with wave.open(str(tmp), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(quantized.tobytes())
    tmp.rename(path)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class Manifest:
    """Rows of (relative wav path, label spec) with task metadata.

    Label specs: single int ``3``; multi-label list ``1;4;7``; slot triple
    ``2|0|5``.
    """

    task: str
    num_classes: int
    rows: list[tuple[str, object]] = field(default_factory=list)
    root: Path | None = None

    def __len__(self):
        return len(self.rows)


def _format_label(label) -> str:
    # single-element collections keep a trailing separator so the kind
    # survives the round trip ("2;" is a one-hot label set, "2" a class index)
    if isinstance(label, (list, np.ndarray)):
        text = ";".join(str(int(x)) for x in label)
        return text + ";" if len(label) == 1 else text
    if isinstance(label, tuple):
        text = "|".join(str(int(x)) for x in label)
        return text + "|" if len(label) == 1 else text
    return str(int(label))


def _parse_label(text: str, row_num: int):
    try:
        if "|" in text:
            return tuple(int(x) for x in text.split("|") if x != "")
        if ";" in text:
            return [int(x) for x in text.split(";") if x != ""]
        return int(text)
    except ValueError as e:
        raise IngestionError(f"manifest row {row_num}: bad label {text!r}") from e


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as f:
        f.write(f"# task={manifest.task}\n")
        f.write(f"# num_classes={manifest.num_classes}\n")
        w = csv.writer(f)
        w.writerow(["path", "label"])
        for rel, label in manifest.rows:
            w.writerow([rel, _format_label(label)])
    tmp.rename(path)


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"manifest not found: {path}")
    task = "unknown"
    num_classes = 0
    data_lines = []
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key.strip() == "task":
                    task = value.strip()
                elif key.strip() == "num_classes":
                    try:
                        num_classes = int(value)
                    except ValueError as e:
                        raise IngestionError(f"manifest header: bad num_classes {value!r}") from e
            elif line:
                data_lines.append(line)
    reader = csv.reader(data_lines)
    header = next(reader, None)
    if header != ["path", "label"]:
        raise IngestionError(f"manifest {path}: expected header 'path,label', got {header}")
    rows = []
    for row_num, row in enumerate(reader, start=2):
        if len(row) != 2:
            raise IngestionError(f"manifest row {row_num}: expected 2 fields, got {len(row)}")
        rel, label_text = row
        label = _parse_label(label_text, row_num)
        for k in np.atleast_1d(np.asarray(label if not isinstance(label, tuple) else list(label))):
            if num_classes and not isinstance(label, tuple) and not 0 <= int(k) < num_classes:
                raise IngestionError(f"manifest row {row_num}: label {int(k)} outside "
                                     f"[0, {num_classes})")
        if not (path.parent / rel).exists():
            raise IngestionError(f"manifest row {row_num}: missing file {rel}")
        rows.append((rel, label))
    return Manifest(task=task, num_classes=num_classes, rows=rows, root=path.parent)


def load_dataset(manifest: Manifest) -> list[tuple[np.ndarray, object]]:
    return [(load_wav(manifest.root / rel).samples, label) for rel, label in manifest.rows]


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass
class SynthSpec:
    kind: str = "tones"  # tones | chirps | noise-scenes | multilabel-mix
    num_classes: int = 8
    clips_per_class: int = 50
    clip_seconds: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("tones", "chirps", "noise-scenes", "multilabel-mix"):
            raise ConfigurationError(f"unknown corpus kind {self.kind!r}")


def tone_frequency(k: int) -> float:
    return 200.0 * 2.0 ** (k / 2.0)


def _tone(freq, t, rng, noise=0.01):
    phase = rng.uniform(0, 2 * np.pi)
    return 0.4 * np.sin(2 * np.pi * freq * t + phase) + noise * rng.standard_normal(len(t))


def synth_corpus(spec: SynthSpec, out_dir) -> Manifest:
    """Deterministic labeled WAV corpus; desk-scale stand-in for real datasets."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    n_samples = int(round(spec.clip_seconds * SAMPLE_RATE))
    t = np.arange(n_samples) / SAMPLE_RATE
    rows = []
    for k in range(spec.num_classes):
        for c in range(spec.clips_per_class):
            rel = f"{spec.kind}_{k:02d}_{c:04d}.wav"
            if spec.kind == "tones":
                samples = _tone(tone_frequency(k), t, rng)
                label: object = k
            elif spec.kind == "chirps":
                # class controls sweep direction and rate
                direction = 1.0 if k % 2 == 0 else -1.0
                rate = 200.0 * (1 + k // 2)
                f0 = 1000.0 - direction * rate * spec.clip_seconds / 2
                phase = 2 * np.pi * (f0 * t + 0.5 * direction * rate * t * t)
                samples = 0.4 * np.sin(phase + rng.uniform(0, 2 * np.pi))
                samples += 0.01 * rng.standard_normal(n_samples)
                label = k
            elif spec.kind == "noise-scenes":
                # class controls the band of band-passed noise
                white = rng.standard_normal(n_samples)
                spectrum = np.fft.rfft(white)
                freqs = np.fft.rfftfreq(n_samples, 1 / SAMPLE_RATE)
                lo = 200.0 * 2 ** (k / 2)
                band = (freqs >= lo) & (freqs < lo * 1.6)
                samples = np.fft.irfft(spectrum * band, n=n_samples)
                peak = np.max(np.abs(samples))
                samples = 0.4 * samples / max(peak, 1e-9)
                label = k
            else:  # multilabel-mix: superposed tones with multi-hot labels
                count = int(rng.integers(1, min(4, spec.num_classes) + 1))
                chosen = sorted(rng.choice(spec.num_classes, size=count, replace=False).tolist())
                samples = sum(_tone(tone_frequency(j), t, rng, noise=0.0) for j in chosen)
                samples = samples / count + 0.01 * rng.standard_normal(n_samples)
                label = [int(j) for j in chosen]
            save_wav(out_dir / rel, samples)
            rows.append((rel, label))
    manifest = Manifest(task=f"synthetic-{spec.kind}", num_classes=spec.num_classes, rows=rows,
                        root=out_dir)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest


def split_dataset(dataset, test_fraction: float, seed: int):
    """Deterministic train/test split of (samples, label) rows."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    n_test = max(1, int(round(len(dataset) * test_fraction)))
    test_idx = set(order[:n_test].tolist())
    train = [dataset[i] for i in range(len(dataset)) if i not in test_idx]
    test = [dataset[i] for i in range(len(dataset)) if i in test_idx]
    return train, test


# ---------------------------------------------------------------------------
# checkpoints


def _named_arrays(model: Model) -> list[tuple[str, str, np.ndarray]]:
    entries = [("param", n, model.params[n].data) for n in sorted(model.params)]
    entries += [("buffer", n, model.store.buffers[n].data) for n in sorted(model.store.buffers)]
    return entries


def save_checkpoint(model: Model, path, step: int = 0, rng_state: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = _named_arrays(model)
    blobs = [np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, _, arr in entries]
    payload = b"".join(blobs)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_json_dict(),
        "step": step,
        "rng_state": _jsonable(rng_state),
        "params": [
            {"kind": kind, "name": name, "shape": list(arr.shape), "bytes": len(blob)}
            for (kind, name, arr), blob in zip(entries, blobs)
        ],
        "blob_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
    tmp.rename(path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _read_checkpoint(path) -> tuple[dict, bytes]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", f.read(4))
        raw_header = f.read(hlen)
        try:
            header = json.loads(raw_header.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt header ({e})") from e
        payload = f.read()
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    return header, payload


def read_checkpoint_header(path) -> dict:
    return _read_checkpoint(path)[0]


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Model:
    """Rebuild a model and restore parameters; refuses corrupt or mismatched files."""
    path = Path(path)
    header, payload = _read_checkpoint(path)
    if hashlib.sha256(payload).hexdigest() != header["blob_sha256"]:
        raise CheckpointError(f"{path}: blob hash mismatch, file corrupt")
    cfg = ModelConfig.from_json_dict(header["config"])
    if expected_config is not None and cfg != expected_config:
        raise CheckpointError(f"{path}: checkpoint config does not match the requested config")
    model = build_model(cfg, np.random.default_rng(0), dtype=np.float32)
    offset = 0
    pending = {f"param.{n}" for n in model.params} | {f"buffer.{n}" for n in model.store.buffers}
    for entry in header["params"]:
        kind, name = entry.get("kind", "param"), entry["name"]
        shape, nbytes = tuple(entry["shape"]), entry["bytes"]
        key = f"{kind}.{name}"
        if key not in pending:
            raise CheckpointError(f"{path}: unknown {kind} {name}")
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4").reshape(shape)
        target = model.params[name] if kind == "param" else model.store.buffers[name]
        if arr.shape != target.data.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        target.data = arr.astype(np.float32).copy()
        offset += nbytes
        pending.discard(key)
    if pending:
        raise CheckpointError(f"{path}: missing entries {sorted(pending)[:3]}...")
    return model
