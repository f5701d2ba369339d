"""Evaluation protocol tests: windowing offsets, probe training on frozen
features, metric oracles, and suite aggregation arithmetic."""

import numpy as np
import pytest

from aures.dsp import SAMPLE_RATE, FrontendConfig
from aures.errors import ConfigurationError, MetricError, UsageError
from aures.evaluation import (
    MLP_HIDDEN,
    OVERLAP_WINDOWS,
    HaresReport,
    Probe,
    ProbeConfig,
    TaskSpec,
    accuracy,
    average_precision,
    clip_scores,
    extract_features,
    hares_aggregate,
    mean_average_precision,
    multi_slot_accuracy,
    score,
    train_probe,
    window_starts,
)
from aures.model import build_model, desk_config

# Published per-task suite scores used for the aggregation check:
# (task, domain, score) for all twelve tasks of the evaluation suite.
PUBLISHED_SUITE_SCORES = [
    ("audioset", "environment", 37.8),
    ("birdsong", "environment", 77.6),
    ("tut18", "environment", 96.8),
    ("esc-50", "environment", 91.1),
    ("speech-commands-v1", "speech", 91.7),
    ("speech-commands-v2", "speech", 93.0),
    ("voxforge", "speech", 90.4),
    ("voxceleb", "speech", 64.9),
    ("fluent-commands", "speech", 46.1),
    ("nsynth-pitch", "music", 88.0),
    ("nsynth-instrument", "music", 78.2),
    ("magnatagatune", "music", 39.5),
]


class TestWindowStarts:
    def test_whole_clip_is_single_window(self):
        assert window_starts(30 * SAMPLE_RATE, 3 * SAMPLE_RATE, "whole_clip") == [0]

    def test_nonoverlap_covers_with_ceil(self):
        starts = window_starts(30 * SAMPLE_RATE, 3 * SAMPLE_RATE, "nonoverlap_avg")
        assert starts == [i * 3 * SAMPLE_RATE for i in range(10)]
        # 10 s clip, 3 s window: ceil(10/3) = 4 windows
        assert len(window_starts(10 * SAMPLE_RATE, 3 * SAMPLE_RATE, "nonoverlap_avg")) == 4

    def test_overlap10_evenly_spans_the_clip(self):
        clip, win = 30 * SAMPLE_RATE, 3 * SAMPLE_RATE
        starts = window_starts(clip, win, "overlap10_avg")
        assert len(starts) == OVERLAP_WINDOWS
        span = clip - win
        assert starts == [round(i * span / 9) for i in range(10)]
        assert starts[0] == 0 and starts[-1] == span

    def test_short_clip_degenerates_to_zero_starts(self):
        assert window_starts(100, 16000, "nonoverlap_avg") == [0]
        assert window_starts(100, 16000, "overlap10_avg") == [0] * 10

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigurationError):
            window_starts(100, 10, "sliding")


class TestTaskSpec:
    def test_map_tasks_are_multi_label(self):
        t = TaskSpec(name="tagging", domain="environment", window_seconds=1.0,
                     metric="mAP", num_classes=10)
        assert t.multi_label

    def test_mlp_head_reserved_for_tagging(self):
        with pytest.raises(ConfigurationError):
            TaskSpec(name="x", domain="speech", window_seconds=1.0, head="mlp512",
                     num_classes=4)
        TaskSpec(name="x", domain="environment", window_seconds=1.0, head="mlp512",
                 metric="mAP", num_classes=4)

    def test_slot_metric_needs_arities(self):
        with pytest.raises(ConfigurationError):
            TaskSpec(name="x", domain="music", window_seconds=1.0,
                     metric="multi_slot_accuracy")
        TaskSpec(name="x", domain="music", window_seconds=1.0,
                 metric="multi_slot_accuracy", slot_arities=[3, 4, 5])

    def test_unknown_fields_rejected(self):
        with pytest.raises(ConfigurationError):
            TaskSpec(name="x", domain="cooking", window_seconds=1.0, num_classes=2)
        with pytest.raises(ConfigurationError):
            TaskSpec(name="x", domain="music", window_seconds=1.0, num_classes=2,
                     eval_windowing="everywhere")


def ap_oracle(scores, labels):
    """Average precision by explicit rank walk (stable order on ties)."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    precisions = []
    for rank, i in enumerate(order, start=1):
        if labels[i]:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


class TestMetrics:
    def test_accuracy(self):
        assert accuracy(np.array([0, 1, 2, 2]), np.array([0, 1, 1, 2])) == 0.75

    def test_average_precision_hand_cases(self):
        # single positive ranked second: AP = 1/2
        assert abs(average_precision(np.array([3.0, 2.0, 1.0]), np.array([0, 1, 0])) - 0.5) < 1e-12
        # single positive ranked last of three: AP = 1/3
        assert abs(average_precision(np.array([3.0, 2.0, 1.0]), np.array([0, 0, 1])) - 1 / 3) < 1e-12
        # positives at ranks 1 and 3: AP = (1 + 2/3) / 2
        got = average_precision(np.array([0.9, 0.8, 0.7]), np.array([1, 0, 1]))
        assert abs(got - (1.0 + 2.0 / 3.0) / 2.0) < 1e-12

    def test_perfect_and_worst_ranking(self):
        scores = np.array([0.9, 0.5, 0.1])
        assert average_precision(scores, np.array([1, 1, 0])) == 1.0
        assert average_precision(scores, np.array([0, 0, 1])) == pytest.approx(1 / 3)

    def test_matches_brute_force_on_random_instances(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 30))
            scores = rng.normal(size=n)
            labels = rng.integers(0, 2, size=n)
            if labels.sum() == 0:
                labels[int(rng.integers(0, n))] = 1
            got = average_precision(scores, labels)
            assert abs(got - ap_oracle(scores, labels)) < 1e-10

    def test_monotone_transform_invariance(self, rng):
        scores = rng.normal(size=20)
        labels = rng.integers(0, 2, size=20)
        labels[0] = 1
        a = average_precision(scores, labels)
        b = average_precision(np.tanh(scores) * 3 + 1, labels)
        assert abs(a - b) < 1e-12

    def test_no_positive_raises(self):
        with pytest.raises(MetricError):
            average_precision(np.array([0.1, 0.2]), np.array([0, 0]))

    def test_map_is_macro_over_classes_with_positives(self, rng):
        scores = rng.normal(size=(10, 3))
        labels = rng.integers(0, 2, size=(10, 3))
        labels[:, 2] = 0  # class without positives is excluded from the mean
        labels[0, 0] = 1
        labels[1, 1] = 1
        got = mean_average_precision(scores, labels)
        ref = np.mean([ap_oracle(scores[:, c], labels[:, c]) for c in range(2)])
        assert abs(got - ref) < 1e-10

    def test_multi_slot_requires_all_slots_correct(self):
        preds = [np.array([0, 1, 1]), np.array([2, 2, 0])]
        labels = np.array([[0, 2], [1, 0], [1, 0]])
        # clip 0: both right; clip 1: slot 1 wrong; clip 2: both right
        assert multi_slot_accuracy(preds, labels) == pytest.approx(2 / 3)


class TestProbe:
    def accuracy_task(self, num_classes=4):
        return TaskSpec(name="toy", domain="environment", window_seconds=1.0,
                        num_classes=num_classes)

    def separable_features(self, rng, n_per_class=40, num_classes=4, dim=16):
        labels = np.repeat(np.arange(num_classes), n_per_class)
        centers = rng.normal(size=(num_classes, dim)) * 3
        feats = centers[labels] + 0.1 * rng.normal(size=(len(labels), dim))
        return feats, labels

    def test_learns_separable_clusters(self, rng):
        feats, labels = self.separable_features(rng)
        probe = train_probe(feats, labels, self.accuracy_task(),
                            ProbeConfig(steps=1000, batch_size=32))
        pred = probe.probabilities(feats)[0].argmax(axis=1)
        assert accuracy(pred, labels) >= 0.95

    def test_uninformative_features_stay_near_chance(self, rng):
        """Chance control: with features carrying no label information the
        probe cannot beat random guessing on held-out data."""
        feats = rng.normal(size=(400, 16))
        labels = rng.integers(0, 4, size=400)
        probe = train_probe(feats[:200], labels[:200], self.accuracy_task(),
                            ProbeConfig(steps=500, batch_size=32))
        pred = probe.probabilities(feats[200:])[0].argmax(axis=1)
        assert accuracy(pred, labels[200:]) < 0.45

    def test_mlp_head_has_hidden_layer(self, rng):
        task = TaskSpec(name="tag", domain="environment", window_seconds=1.0,
                        metric="mAP", head="mlp512", num_classes=5)
        probe = Probe(task, feature_dim=12, rng=rng)
        assert probe.hidden is not None
        assert probe.store.params["hidden.weight"].shape == (12, MLP_HIDDEN)

    def test_linear_probe_is_linear_only(self, rng):
        probe = Probe(self.accuracy_task(), feature_dim=12, rng=rng)
        assert probe.hidden is None
        assert sorted(probe.store.params) == ["out.bias", "out.weight"]

    def test_slot_probe_one_head_per_slot(self, rng):
        task = TaskSpec(name="slots", domain="music", window_seconds=1.0,
                        metric="multi_slot_accuracy", slot_arities=[3, 5, 2])
        probe = Probe(task, feature_dim=8, rng=rng)
        assert len(probe.outs) == 3
        assert probe.store.params["slot1.weight"].shape == (8, 5)

    def test_label_range_guard(self, rng):
        feats = rng.normal(size=(10, 4))
        with pytest.raises(UsageError):
            train_probe(feats, np.array([0, 1, 2, 3, 4, 0, 1, 2, 3, 4]),
                        self.accuracy_task(num_classes=4), ProbeConfig(steps=2))

    def test_probabilities_are_normalized(self, rng):
        probe = Probe(self.accuracy_task(), feature_dim=6, rng=rng)
        probs = probe.probabilities(rng.normal(size=(5, 6)))[0]
        assert np.allclose(probs.sum(axis=1), 1.0)
        assert np.all(probs >= 0)


class TestClipScoring:
    def test_window_probabilities_average_per_clip(self, rng):
        task = TaskSpec(name="toy", domain="environment", window_seconds=1.0,
                        num_classes=3)
        probe = Probe(task, feature_dim=4, rng=rng)
        feats = rng.normal(size=(6, 4))
        clip_index = np.array([0, 0, 0, 1, 1, 2])
        per_clip = clip_scores(probe, feats, clip_index)[0]
        probs = probe.probabilities(feats)[0]
        assert np.allclose(per_clip[0], probs[:3].mean(axis=0), atol=1e-12)
        assert np.allclose(per_clip[2], probs[5], atol=1e-12)

    def test_identical_windows_match_single_window_score(self, rng):
        task = TaskSpec(name="toy", domain="environment", window_seconds=1.0,
                        num_classes=3)
        probe = Probe(task, feature_dim=4, rng=rng)
        base = rng.normal(size=(2, 4))
        repeated = np.repeat(base, 10, axis=0)
        clip_index = np.repeat(np.arange(2), 10)
        labels = np.array([0, 1])
        ten = score(probe, repeated, labels, clip_index, task)
        one = score(probe, base, labels, np.arange(2), task)
        assert abs(ten - one) < 1e-10

    def test_extract_features_respects_windowing_and_freezes_model(self, rng):
        model = build_model(desk_config(), rng)
        before = model.checksum()
        clips = [np.random.default_rng(1).normal(size=32000) * 0.1,
                 np.random.default_rng(2).normal(size=8000) * 0.1]
        task = TaskSpec(name="toy", domain="environment", window_seconds=0.5,
                        num_classes=2, eval_windowing="nonoverlap_avg")
        feats, clip_index = extract_features(model, clips, task, FrontendConfig(n_mels=40))
        # 2 s / 0.5 s = 4 windows, then a padded 0.5 s clip = 1 window
        assert list(clip_index) == [0, 0, 0, 0, 1]
        assert feats.shape == (5, model.feature_dim)
        assert model.checksum() == before
        assert model.training is False


class TestAggregation:
    def test_published_scores_reproduce_reported_means(self):
        """The twelve per-task scores must aggregate back to the reported
        domain averages and suite score."""
        report = hares_aggregate(PUBLISHED_SUITE_SCORES)
        assert abs(report.domain_means["environment"] - 75.8) < 0.05
        assert abs(report.domain_means["speech"] - 77.2) < 0.05
        assert abs(report.domain_means["music"] - 68.6) < 0.05
        assert abs(report.overall - 74.6) < 0.05

    def test_hares_report_json(self):
        import json

        report = hares_aggregate([("a", "music", 50.0), ("b", "speech", 70.0)])
        parsed = json.loads(report.to_json())
        assert parsed["domains"]["music"] == 50.0
        assert parsed["overall"] == 60.0

    def test_unknown_domain_rejected(self):
        with pytest.raises(MetricError):
            hares_aggregate([("a", "cooking", 1.0)])
        with pytest.raises(MetricError):
            hares_aggregate([])

    def test_overall_is_task_mean_not_domain_mean(self):
        report = hares_aggregate([
            ("a", "music", 0.0),
            ("b", "music", 0.0),
            ("c", "speech", 90.0),
        ])
        assert report.overall == 30.0
        assert report.domain_means == {"music": 0.0, "speech": 90.0}
