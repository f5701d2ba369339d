"""scikit-learn style wrappers so the pipeline composes with the wider
ecosystem: a log-mel transformer, a frozen-feature extractor, and a probe
classifier with the usual fit/transform/predict surface.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .dsp import FrontendConfig, waveforms_to_model_input
from .errors import InputError
from .evaluation import Probe, ProbeConfig, TaskSpec, train_probe
from .model import Model, forward_features
from .tensor import Tensor


def _check_waveform_batch(X) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if not np.all(np.isfinite(X)):
        raise InputError("waveform batch contains non-finite samples")
    return X


class LogMelTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer: [N, L] waveforms -> [N, T, F] standardized log-mels."""

    def __init__(self, n_mels: int = 80, fmin: float = 60.0, fmax: float = 7800.0,
                 standardize: bool = True):
        self.n_mels = n_mels
        self.fmin = fmin
        self.fmax = fmax
        self.standardize = standardize

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        X = _check_waveform_batch(X)
        cfg = FrontendConfig(n_mels=self.n_mels, fmin=self.fmin, fmax=self.fmax,
                             standardize=self.standardize)
        return waveforms_to_model_input(X, cfg)[:, 0]


class SlowfastFeaturizer(TransformerMixin, BaseEstimator):
    """Frozen eval-mode feature extractor around a built or loaded model."""

    def __init__(self, model: Model = None, n_mels: int = 40, batch_size: int = 64):
        self.model = model
        self.n_mels = n_mels
        self.batch_size = batch_size

    def fit(self, X, y=None):
        if self.model is None:
            raise NotFittedError("SlowfastFeaturizer needs a model (pretrained or random)")
        return self

    def transform(self, X):
        if self.model is None:
            raise NotFittedError("SlowfastFeaturizer needs a model (pretrained or random)")
        X = _check_waveform_batch(X)
        self.model.eval()
        cfg = FrontendConfig(n_mels=self.n_mels)
        feats = []
        for lo in range(0, len(X), self.batch_size):
            x = Tensor(waveforms_to_model_input(X[lo : lo + self.batch_size], cfg)
                       .astype(self.model.store.dtype))
            feats.append(forward_features(self.model, x).data)
        return np.concatenate(feats, axis=0)


class ProbeClassifier(ClassifierMixin, BaseEstimator):
    """Linear probe over precomputed features; Adam + warmup-cosine inside."""

    def __init__(self, num_classes: int = None, steps: int = 2000, batch_size: int = 64,
                 peak_lr: float = 2e-4, seed: int = 0):
        self.num_classes = num_classes
        self.steps = steps
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.seed = seed

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        n_classes = self.num_classes or int(y.max()) + 1
        task = TaskSpec(name="probe", domain="environment", window_seconds=1.0,
                        num_classes=n_classes)
        cfg = ProbeConfig(steps=self.steps, batch_size=self.batch_size,
                          peak_lr=self.peak_lr, seed=self.seed)
        self.probe_: Probe = train_probe(X, y, task, cfg)
        self.classes_ = np.arange(n_classes)
        return self

    def predict_proba(self, X):
        if not hasattr(self, "probe_"):
            raise NotFittedError("ProbeClassifier is not fitted")
        X = check_array(X, dtype=np.float64)
        return self.probe_.probabilities(X)[0]

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)
