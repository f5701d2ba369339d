"""scikit-learn wrapper tests: transformer contracts, fitted-state checks,
and probe classifier behavior on easy data."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from aures.dsp import SAMPLE_RATE, frame_count
from aures.errors import InputError
from aures.estimators import LogMelTransformer, ProbeClassifier, SlowfastFeaturizer
from aures.model import build_model, desk_config


def tone_batch(num_classes=3, per_class=8, seconds=0.5, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    X, y = [], []
    for k in range(num_classes):
        freq = 300.0 * (k + 1)
        for _ in range(per_class):
            X.append(0.4 * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi)))
            y.append(k)
    return np.stack(X), np.array(y)


class TestLogMelTransformer:
    def test_transform_shape(self):
        X, _ = tone_batch()
        out = LogMelTransformer(n_mels=40).fit_transform(X)
        assert out.shape == (X.shape[0], frame_count(X.shape[1]), 40)

    def test_standardize_flag(self):
        X, _ = tone_batch()
        std = LogMelTransformer(n_mels=40).transform(X)
        raw = LogMelTransformer(n_mels=40, standardize=False).transform(X)
        assert abs(std[0].mean()) < 1e-8
        assert abs(raw[0].mean()) > 1e-3

    def test_sklearn_clone_keeps_params(self):
        t = LogMelTransformer(n_mels=64, fmin=100.0)
        c = clone(t)
        assert c.get_params()["n_mels"] == 64
        assert c.get_params()["fmin"] == 100.0

    def test_nonfinite_rejected(self):
        X = np.zeros((2, 16000))
        X[0, 5] = np.inf
        with pytest.raises((InputError, ValueError)):
            LogMelTransformer().transform(X)


class TestSlowfastFeaturizer:
    def test_requires_model(self):
        X, _ = tone_batch(per_class=2)
        with pytest.raises(NotFittedError):
            SlowfastFeaturizer().fit(X)
        with pytest.raises(NotFittedError):
            SlowfastFeaturizer().transform(X)

    def test_transform_yields_feature_matrix(self):
        model = build_model(desk_config(), np.random.default_rng(0), dtype=np.float32)
        X, _ = tone_batch(per_class=2)
        feats = SlowfastFeaturizer(model=model, n_mels=40).fit(X).transform(X)
        assert feats.shape == (X.shape[0], model.feature_dim)
        assert np.all(np.isfinite(feats))

    def test_transform_is_deterministic(self):
        model = build_model(desk_config(), np.random.default_rng(0), dtype=np.float32)
        X, _ = tone_batch(per_class=1)
        f = SlowfastFeaturizer(model=model, n_mels=40)
        assert np.array_equal(f.fit(X).transform(X), f.transform(X))


class TestProbeClassifier:
    def test_fit_predict_separable(self, rng):
        labels = np.repeat(np.arange(3), 30)
        centers = rng.normal(size=(3, 8)) * 3
        X = centers[labels] + 0.1 * rng.normal(size=(90, 8))
        clf = ProbeClassifier(steps=600, peak_lr=2e-3).fit(X, labels)
        assert (clf.predict(X) == labels).mean() >= 0.95
        probs = clf.predict_proba(X)
        assert np.allclose(probs.sum(axis=1), 1.0)

    def test_unfitted_raises(self, rng):
        with pytest.raises(NotFittedError):
            ProbeClassifier().predict(rng.normal(size=(2, 4)))

    def test_pipeline_with_frozen_features(self):
        """End-to-end sklearn pipeline: random frozen backbone + linear probe
        still separates well-spaced tones."""
        model = build_model(desk_config(), np.random.default_rng(0), dtype=np.float32)
        X, y = tone_batch(num_classes=3, per_class=10)
        pipe = make_pipeline(SlowfastFeaturizer(model=model, n_mels=40),
                             ProbeClassifier(steps=600, peak_lr=2e-3))
        pipe.fit(X, y)
        assert (pipe.predict(X) == y).mean() >= 0.9
