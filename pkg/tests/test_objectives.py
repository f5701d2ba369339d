"""Objective tests: example mixing statistics, NT-Xent against closed forms
and a brute-force oracle, and the supervised losses against formula oracles."""

import math

import numpy as np
import pytest

from aures.errors import DimensionError, UsageError
from aures.objectives import (
    MIX_BETA_A,
    MIX_BETA_B,
    ProjectorConfig,
    classification_loss,
    desk_projector_config,
    mix_examples,
    nt_xent,
)
from aures.tensor import Tensor


def nt_xent_oracle(z_a, z_b, temperature):
    """Loop-based NT-Xent, written independently of the tensor engine."""
    z = np.concatenate([z_a, z_b])
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    n2 = len(z)
    sims = z @ z.T / temperature
    total = 0.0
    for i in range(n2):
        pos = (i + n2 // 2) % n2
        others = [j for j in range(n2) if j != i]
        log_denom = math.log(sum(math.exp(sims[i, j] - sims[i].max()) for j in others)) + sims[i].max()
        total += -(sims[i, pos] - log_denom)
    return total / n2


class TestMixing:
    def test_lambda_one_is_identity(self, rng):
        batch = rng.normal(size=(6, 50))
        mixed = mix_examples(batch, rng, lam=np.ones(6))
        assert np.allclose(mixed, batch)

    def test_lambda_zero_gives_partner_rows(self, rng):
        batch = rng.normal(size=(6, 50))
        mixed = mix_examples(batch, rng, lam=np.zeros(6))
        # every output row is some other input row
        for row in mixed:
            matches = np.where(np.all(np.isclose(batch, row), axis=1))[0]
            assert len(matches) == 1
        assert not np.allclose(mixed, batch)

    def test_half_lambda_is_symmetric_average(self, rng):
        batch = rng.normal(size=(4, 10))
        mixed = mix_examples(batch, rng, lam=np.full(4, 0.5))
        # each row is the mean of two distinct input rows
        for row in mixed:
            found = any(
                np.allclose(row, 0.5 * (batch[i] + batch[j]))
                for i in range(4)
                for j in range(4)
                if i != j
            )
            assert found

    def test_beta_ratio_statistics(self):
        """Recover the drawn ratios from one-hot inputs: with basis rows and a
        fixed-point-free partner map, mixed[i, i] equals lambda_i exactly."""
        rng = np.random.default_rng(0)
        n = 512
        batch = np.eye(n)
        lams = []
        for _ in range(100):
            mixed = mix_examples(batch, rng)
            lams.append(np.diag(mixed).copy())
        lams = np.concatenate(lams)
        assert np.all(lams > 0) and np.all(lams < 1)
        assert abs(lams.mean() - MIX_BETA_A / (MIX_BETA_A + MIX_BETA_B)) < 0.005

    def test_labels_share_the_ratio(self, rng):
        batch = rng.normal(size=(5, 8))
        labels = np.eye(5)
        lam = rng.beta(MIX_BETA_A, MIX_BETA_B, size=5)
        mixed, mixed_labels = mix_examples(batch, rng, labels=labels, lam=lam)
        for i in range(5):
            # recover the partner from the label row and verify the waveform ratio
            partner = int(np.argmax(mixed_labels[i] - lam[i] * labels[i]))
            assert np.allclose(mixed[i], lam[i] * batch[i] + (1 - lam[i]) * batch[partner])
            assert abs(mixed_labels[i, i] - lam[i]) < 1e-12

    def test_no_fixed_points(self, rng):
        batch = np.arange(64, dtype=np.float64).reshape(64, 1)
        for _ in range(20):
            mixed = mix_examples(batch, rng, lam=np.zeros(64))
            assert not np.any(mixed == batch)

    def test_single_example_unchanged(self, rng):
        batch = rng.normal(size=(1, 10))
        assert mix_examples(batch, rng) is not None
        assert np.allclose(mix_examples(batch, rng), batch)
        out, labs = mix_examples(batch, rng, labels=np.array([[1.0]]))
        assert np.allclose(out, batch) and np.allclose(labs, [[1.0]])


class TestNtXent:
    def test_closed_form_identical_orthogonal_pairs(self):
        """Two pairs with matching views on orthogonal axes: every anchor sees
        one positive at similarity 1 and two negatives at 0, so the loss is
        log(1 + 2 * exp(-1/tau))."""
        z = np.eye(2, 4)
        loss = nt_xent(Tensor(z), Tensor(z), temperature=0.1).item()
        assert abs(loss - 9.079573746725622e-05) < 1e-8
        assert abs(loss - math.log(1.0 + 2.0 * math.exp(-10.0))) < 1e-12

    def test_matches_brute_force_oracle(self, rng):
        for n in (2, 3, 4):
            for _ in range(5):
                a = rng.normal(size=(n, 6))
                b = rng.normal(size=(n, 6))
                got = nt_xent(Tensor(a), Tensor(b), temperature=0.1).item()
                assert abs(got - nt_xent_oracle(a, b, 0.1)) < 1e-8

    def test_symmetry_in_views(self, rng):
        a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
        assert abs(nt_xent(Tensor(a), Tensor(b)).item() - nt_xent(Tensor(b), Tensor(a)).item()) < 1e-12

    def test_row_scale_invariance(self, rng):
        a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
        scales = rng.uniform(0.1, 10.0, size=(3, 1))
        assert abs(nt_xent(Tensor(a), Tensor(b)).item() - nt_xent(Tensor(a * scales), Tensor(b)).item()) < 1e-10

    def test_joint_rotation_invariance(self, rng):
        a, b = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
        q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        assert abs(nt_xent(Tensor(a), Tensor(b)).item() - nt_xent(Tensor(a @ q), Tensor(b @ q)).item()) < 1e-10

    def test_pair_permutation_invariance(self, rng):
        a, b = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
        perm = rng.permutation(4)
        assert abs(nt_xent(Tensor(a), Tensor(b)).item() - nt_xent(Tensor(a[perm]), Tensor(b[perm])).item()) < 1e-10

    def test_aligned_pairs_score_below_shuffled(self, rng):
        a = rng.normal(size=(8, 16))
        aligned = nt_xent(Tensor(a), Tensor(a + 0.01 * rng.normal(size=a.shape))).item()
        shuffled = nt_xent(Tensor(a), Tensor(np.roll(a, 1, axis=0))).item()
        assert aligned < shuffled

    def test_input_validation(self, rng):
        with pytest.raises(UsageError):
            nt_xent(Tensor(rng.normal(size=(1, 4))), Tensor(rng.normal(size=(1, 4))))
        with pytest.raises(DimensionError):
            nt_xent(Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(2, 5))))


class TestClassificationLoss:
    def test_cross_entropy_formula_oracle(self, rng):
        logits = rng.normal(size=(6, 5)) * 3
        labels = rng.integers(0, 5, size=6)
        got = classification_loss(Tensor(logits), labels).item()
        ref = 0.0
        for i in range(6):
            ref -= logits[i, labels[i]] - math.log(np.exp(logits[i]).sum())
        assert abs(got - ref / 6) < 1e-10

    def test_bce_formula_oracle(self, rng):
        logits = rng.normal(size=(4, 7)) * 2
        targets = rng.integers(0, 2, size=(4, 7)).astype(float)
        got = classification_loss(Tensor(logits), targets, multi_label=True).item()
        p = 1.0 / (1.0 + np.exp(-logits))
        ref = -(targets * np.log(p) + (1 - targets) * np.log(1 - p)).mean()
        assert abs(got - ref) < 1e-10

    def test_uniform_logits_give_log_k(self):
        logits = np.zeros((3, 10))
        got = classification_loss(Tensor(logits), np.array([0, 3, 9])).item()
        assert abs(got - math.log(10)) < 1e-12

    def test_zero_logits_bce_is_log_two(self):
        logits = np.zeros((2, 4))
        targets = np.array([[1, 0, 1, 0], [0, 0, 1, 1]], dtype=float)
        got = classification_loss(Tensor(logits), targets, multi_label=True).item()
        assert abs(got - math.log(2)) < 1e-12

    def test_mixed_targets_are_linear_in_the_label(self, rng):
        logits = rng.normal(size=(5, 6))
        y1 = np.eye(6)[rng.integers(0, 6, size=5)]
        y2 = np.eye(6)[rng.integers(0, 6, size=5)]
        lam = 0.3
        lhs = classification_loss(Tensor(logits), lam * y1 + (1 - lam) * y2).item()
        rhs = lam * classification_loss(Tensor(logits), y1).item() + (1 - lam) * classification_loss(Tensor(logits), y2).item()
        assert abs(lhs - rhs) < 1e-10

    def test_slot_lists_sum_per_slot_losses(self, rng):
        lg = [Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 2)))]
        tg = [rng.integers(0, 4, size=3), rng.integers(0, 2, size=3)]
        total = classification_loss(lg, tg).item()
        parts = sum(classification_loss(l, t).item() for l, t in zip(lg, tg))
        assert abs(total - parts) < 1e-12

    def test_target_range_checked(self, rng):
        logits = Tensor(rng.normal(size=(2, 3)))
        with pytest.raises(DimensionError):
            classification_loss(logits, np.array([[0.5, 0.7, -0.2], [0, 1, 0]]))
        with pytest.raises(DimensionError):
            classification_loss(logits, np.zeros((2, 4)))


class TestProjectorConfig:
    def test_published_and_desk_dimensions(self):
        full = ProjectorConfig()
        assert (full.hidden_width, full.hidden_layers, full.output_width) == (4096, 3, 256)
        desk = desk_projector_config()
        assert desk.hidden_layers == 3
        assert desk.hidden_width < full.hidden_width
