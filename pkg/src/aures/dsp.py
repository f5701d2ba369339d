"""Waveform-to-spectrogram frontend: framed STFT power, HTK mel filterbank,
log compression, per-spectrogram standardization, and random cropping.

All functions are pure; random cropping takes a caller-supplied generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError

SAMPLE_RATE = 16000
WINDOW_SAMPLES = 400  # 25 ms
HOP_SAMPLES = 160  # 10 ms
FFT_SIZE = 512
N_MELS = 80
LOG_FLOOR = 1e-6


@dataclass
class Waveform:
    """Mono 16 kHz audio samples, nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise InputError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise InputError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class Spectrogram:
    """T x F log-mel matrix with its framing metadata."""

    values: np.ndarray
    frame_hop: float = HOP_SAMPLES / SAMPLE_RATE
    window: float = WINDOW_SAMPLES / SAMPLE_RATE
    n_mels: int = N_MELS

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise InputError(f"spectrogram must be T x F with T >= 1, got {self.values.shape}")
        if self.values.shape[1] != self.n_mels:
            raise InputError(f"spectrogram has {self.values.shape[1]} bins, expected n_mels={self.n_mels}")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class MelFilterbank:
    """Peak-1 triangular filters, rows ordered by ascending center frequency."""

    weights: np.ndarray
    fmin: float
    fmax: float
    center_freqs: np.ndarray = field(repr=False, default=None)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_count(num_samples: int, window_samples: int = WINDOW_SAMPLES, hop_samples: int = HOP_SAMPLES) -> int:
    if num_samples < window_samples:
        raise InputError(f"waveform of {num_samples} samples shorter than window {window_samples}")
    return (num_samples - window_samples) // hop_samples + 1


def stft_power(
    w: Waveform,
    window_samples: int = WINDOW_SAMPLES,
    hop_samples: int = HOP_SAMPLES,
    fft_size: int = FFT_SIZE,
) -> np.ndarray:
    """Hann-windowed framed power spectrum, T x (fft_size/2 + 1).

    Frame k covers samples [k*hop, k*hop + window); tail samples are dropped.
    """
    n = len(w)
    t = frame_count(n, window_samples, hop_samples)
    idx = np.arange(window_samples)[None, :] + hop_samples * np.arange(t)[:, None]
    frames = w.samples[idx]
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window_samples) / window_samples)
    spec = np.fft.rfft(frames * hann, n=fft_size, axis=1)
    return (spec.real**2 + spec.imag**2).astype(np.float64)


def mel_filterbank(
    n_mels: int = N_MELS,
    sample_rate: int = SAMPLE_RATE,
    fft_size: int = FFT_SIZE,
    fmin: float = 60.0,
    fmax: float = 7800.0,
) -> MelFilterbank:
    if not (0 <= fmin < fmax <= sample_rate / 2):
        raise ConfigurationError(f"invalid frequency range [{fmin}, {fmax}] for rate {sample_rate}")
    if n_mels < 2:
        raise ConfigurationError(f"n_mels must be >= 2, got {n_mels}")
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_freqs = np.arange(fft_size // 2 + 1) * (sample_rate / fft_size)
    lower, center, upper = edges_hz[:-2], edges_hz[1:-1], edges_hz[2:]
    rising = (bin_freqs[None, :] - lower[:, None]) / (center - lower)[:, None]
    falling = (upper[:, None] - bin_freqs[None, :]) / (upper - center)[:, None]
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(weights=weights, fmin=fmin, fmax=fmax, center_freqs=center)


def log_mel(w: Waveform, fb: MelFilterbank, **stft_kwargs) -> Spectrogram:
    power = stft_power(w, **stft_kwargs)
    mel_power = power @ fb.weights.T
    values = np.log(mel_power + LOG_FLOOR)
    return Spectrogram(values=values, n_mels=fb.weights.shape[0])


def standardize(s: Spectrogram) -> Spectrogram:
    """Zero-mean, unit-std per spectrogram; constant inputs map to zeros."""
    v = s.values
    std = v.std()
    out = (v - v.mean()) / max(std, 1e-8)
    return Spectrogram(values=out, frame_hop=s.frame_hop, window=s.window, n_mels=s.n_mels)


def standardize_batch(batch: np.ndarray) -> np.ndarray:
    """Per-example standardization of a [N, T, F] spectrogram batch."""
    mean = batch.mean(axis=(1, 2), keepdims=True)
    std = np.maximum(batch.std(axis=(1, 2), keepdims=True), 1e-8)
    return (batch - mean) / std


def pad_to_length(samples: np.ndarray, length: int) -> np.ndarray:
    if len(samples) >= length:
        return samples
    return np.pad(samples, (0, length - len(samples)))


def random_crop(w: Waveform, seconds: float, rng: np.random.Generator) -> Waveform:
    """Uniformly positioned contiguous crop; short clips are right-zero-padded first."""
    target = int(round(seconds * SAMPLE_RATE))
    samples = pad_to_length(w.samples, target)
    start = int(rng.integers(0, len(samples) - target + 1))
    return Waveform(samples=samples[start : start + target])


def crop_samples_for_frames(n_frames: int) -> int:
    """Number of samples whose framed STFT yields exactly ``n_frames`` frames."""
    return (n_frames - 1) * HOP_SAMPLES + WINDOW_SAMPLES


@dataclass
class FrontendConfig:
    n_mels: int = N_MELS
    fmin: float = 60.0
    fmax: float = 7800.0
    standardize: bool = True


def waveforms_to_model_input(batch: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """[N, L] waveform batch -> [N, 1, T, F] standardized log-mel batch."""
    fb = mel_filterbank(n_mels=cfg.n_mels, fmin=cfg.fmin, fmax=cfg.fmax)
    specs = np.stack([log_mel(Waveform(row), fb).values for row in batch])
    if cfg.standardize:
        specs = standardize_batch(specs)
    return specs[:, None, :, :]
