"""Loss functions: fixtures computed by hand or by independent oracles."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from eqsearch.losses import (EmptyBatchError, histogram_loss, infonce_loss,
                             masking_loss, masking_loss_from_logits,
                             triangular_weight, triplet_loss)


def brute_force_histogram_loss(s_pos, s_neg, n_bins=64):
    """Independent oracle: literal double loop over bin pairs."""
    m_pos, m_neg = len(s_pos), len(s_neg)
    total = 0.0
    for r in range(1, n_bins + 1):
        for r_prime in range(1, r + 1):
            mass_neg = sum(triangular_weight(float(np.clip(s, -1, 1)), r, n_bins)
                           for s in s_neg)
            mass_pos = sum(triangular_weight(float(np.clip(s, -1, 1)), r_prime, n_bins)
                           for s in s_pos)
            total += mass_neg * mass_pos
    return total / (m_pos * m_neg)


class TestTriplet:
    def test_satisfied_margin(self):
        assert float(triplet_loss(torch.tensor(1.0), torch.tensor(-1.0))) == 0.0

    def test_zero_similarities(self):
        assert float(triplet_loss(torch.tensor(0.0), torch.tensor(0.0))) == 1.0

    def test_direct_formula(self):
        value = triplet_loss(torch.tensor(0.5), torch.tensor(0.2))
        assert float(value) == pytest.approx(0.7)

    @given(st.floats(-1, 1), st.floats(-1, 1))
    @settings(max_examples=100, deadline=None)
    def test_nonnegative_and_zero_iff_margin_met(self, s_ap, s_an):
        value = float(triplet_loss(torch.tensor(s_ap), torch.tensor(s_an)))
        assert value >= 0.0
        assert (value == 0.0) == (s_ap - s_an >= 1.0)


class TestTriangularKernel:
    def test_apex(self):
        width = 2.0 / 63
        assert triangular_weight(-1.0 + 4 * width, 5, 64) == pytest.approx(1.0)

    def test_left_boundary(self):
        assert triangular_weight(-1.0, 1, 64) == 1.0
        assert all(triangular_weight(-1.0, r, 64) == 0.0 for r in range(2, 65))

    def test_partition_of_unity(self):
        rng = np.random.default_rng(0)
        for s in rng.uniform(-1, 1, size=10_000):
            total = sum(triangular_weight(float(s), r, 64) for r in range(1, 65))
            assert abs(total - 1.0) < 1e-9

    def test_continuity_at_bin_boundary(self):
        width = 2.0 / 63
        t3 = -1.0 + 2 * width
        eps = 1e-9
        left = triangular_weight(t3 - eps, 3, 64)
        right = triangular_weight(t3 + eps, 3, 64)
        assert abs(left - right) < 1e-6


class TestHistogramLoss:
    def test_perfectly_ordered(self):
        s_pos = torch.ones(8, dtype=torch.float64)
        s_neg = -torch.ones(8, dtype=torch.float64)
        assert float(histogram_loss(s_pos, s_neg)) == pytest.approx(0.0, abs=1e-12)

    def test_perfectly_inverted(self):
        s_pos = -torch.ones(8, dtype=torch.float64)
        s_neg = torch.ones(8, dtype=torch.float64)
        assert float(histogram_loss(s_pos, s_neg)) == pytest.approx(1.0, abs=1e-12)

    def test_single_pair_matches_brute_force(self):
        s_pos = torch.tensor([0.0], dtype=torch.float64)
        s_neg = torch.tensor([0.0], dtype=torch.float64)
        expected = brute_force_histogram_loss([0.0], [0.0])
        assert float(histogram_loss(s_pos, s_neg)) == pytest.approx(expected, abs=1e-12)

    def test_random_batches_match_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            s_pos = rng.uniform(-1.2, 1.2, size=6)
            s_neg = rng.uniform(-1.2, 1.2, size=6)
            expected = brute_force_histogram_loss(s_pos, s_neg)
            got = float(histogram_loss(torch.as_tensor(s_pos), torch.as_tensor(s_neg)))
            assert got == pytest.approx(expected, abs=1e-10)

    def test_bounds_on_random_batches(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            m = int(rng.integers(1, 32))
            s_pos = torch.as_tensor(rng.uniform(-2, 2, size=m))
            s_neg = torch.as_tensor(rng.uniform(-2, 2, size=m))
            value = float(histogram_loss(s_pos, s_neg))
            assert 0.0 <= value <= 1.0

    def test_empty_batch_rejected(self):
        with pytest.raises(EmptyBatchError):
            histogram_loss(torch.zeros(0), torch.zeros(0))

    def test_per_histogram_normalization_allows_unequal_sizes(self):
        s_pos = torch.tensor([1.0, 1.0], dtype=torch.float64)
        s_neg = -torch.ones(5, dtype=torch.float64)
        value = histogram_loss(s_pos, s_neg, per_histogram_normalization=True)
        assert float(value) == pytest.approx(0.0, abs=1e-12)

    def test_differentiable(self):
        s_pos = torch.tensor([0.2, -0.4], dtype=torch.float64, requires_grad=True)
        s_neg = torch.tensor([0.1, 0.3], dtype=torch.float64)
        histogram_loss(s_pos, s_neg).backward()
        assert s_pos.grad is not None and torch.isfinite(s_pos.grad).all()


class TestMaskingLoss:
    def test_uniform_distributions(self):
        preds = [(torch.full((32,), 1 / 32, dtype=torch.float64),
                  torch.full((33,), 1 / 33, dtype=torch.float64),
                  torch.full((193,), 1 / 193, dtype=torch.float64))]
        value = float(masking_loss(preds, [(0, 0, 0)]))
        expected = (math.log(32) + math.log(33) + math.log(193)) / 3
        assert value == pytest.approx(expected, rel=1e-9)
        assert expected == pytest.approx(4.0750, abs=5e-5)

    def test_perfect_prediction_limit(self):
        def one_hot(n, i):
            v = torch.full((n,), 1e-9)
            v[i] = 1.0 - 1e-9 * (n - 1)
            return v

        preds = [(one_hot(32, 3), one_hot(33, 32), one_hot(193, 7))]
        assert float(masking_loss(preds, [(3, 32, 7)])) == pytest.approx(0.0, abs=1e-6)

    def test_order_invariance(self):
        rng = np.random.default_rng(0)

        def random_pred():
            return tuple(torch.softmax(torch.as_tensor(rng.normal(size=n)), dim=0)
                         for n in (32, 33, 193))

        preds = [random_pred() for _ in range(4)]
        targets = [(1, 2, 3), (4, 5, 6), (7, 8, 9), (0, 0, 0)]
        forward = float(masking_loss(preds, targets))
        backward = float(masking_loss(preds[::-1], targets[::-1]))
        assert forward == pytest.approx(backward, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            masking_loss([], [(0, 0, 0)])

    def test_logit_form_agrees_with_distribution_form(self):
        rng = np.random.default_rng(5)
        tag = torch.as_tensor(rng.normal(size=(3, 32)))
        attr = torch.as_tensor(rng.normal(size=(3, 33)))
        char = torch.as_tensor(rng.normal(size=(3, 193)))
        targets = torch.tensor([[0, 1, 2], [3, 4, 5], [31, 32, 192]])
        via_logits = float(masking_loss_from_logits(tag, attr, char, targets))
        preds = [tuple(torch.softmax(h[i], dim=0) for h in (tag, attr, char))
                 for i in range(3)]
        via_dists = float(masking_loss(preds, [tuple(t) for t in targets.tolist()]))
        assert via_logits == pytest.approx(via_dists, rel=1e-9)


class TestInfoNCE:
    def test_orthonormal_pairs(self):
        lhs = torch.eye(2, dtype=torch.float64)
        rhs = torch.eye(2, dtype=torch.float64)
        value = float(infonce_loss(lhs, rhs, tau=1.0))
        assert value == pytest.approx(-math.log(math.e / (math.e + 1)), rel=1e-9)
        assert value == pytest.approx(0.3133, abs=5e-5)

    def test_complete_indifference_gives_log_m(self):
        m = 5
        lhs = torch.zeros((m, 4), dtype=torch.float64)
        lhs[:, 0] = 1.0
        value = float(infonce_loss(lhs, lhs.clone(), tau=0.5))
        assert value == pytest.approx(math.log(m), rel=1e-9)

    def test_monotone_in_matching_similarity(self):
        rng = np.random.default_rng(1)
        base = torch.as_tensor(rng.normal(size=(4, 8)))
        base = torch.nn.functional.normalize(base, dim=1)
        partner = base.clone()
        lower = float(infonce_loss(base, partner, tau=1.0))
        partner_worse = partner.clone()
        partner_worse[0] = torch.roll(partner_worse[0], 1)
        higher = float(infonce_loss(base, partner_worse, tau=1.0))
        assert higher > lower

    def test_single_pair_rejected(self):
        with pytest.raises(ValueError):
            infonce_loss(torch.ones((1, 4)), torch.ones((1, 4)))

    def test_printed_variant_excludes_diagonal(self):
        lhs = torch.eye(2, dtype=torch.float64)
        value = float(infonce_loss(lhs, lhs.clone(), tau=1.0, exclude_diagonal=True))
        # denominator holds only the one off-diagonal term exp(0) = 1,
        # so each term is log(1) - 1 = -1
        assert value == pytest.approx(-1.0, rel=1e-9)

    def test_nonnegative_with_full_denominator(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            lhs = torch.nn.functional.normalize(
                torch.as_tensor(rng.normal(size=(6, 16))), dim=1)
            rhs = torch.nn.functional.normalize(
                torch.as_tensor(rng.normal(size=(6, 16))), dim=1)
            assert float(infonce_loss(lhs, rhs, tau=0.1)) >= 0.0
