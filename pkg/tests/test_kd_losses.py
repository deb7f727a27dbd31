import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxlogit_kd import kd_losses, logit_core
from maxlogit_kd.errors import DegenerateLogits, LabelOutOfRange, LengthMismatch
from maxlogit_kd.kd_losses import LossWeights
from maxlogit_kd.temperature import STATIC, TemperaturePolicy
from maxlogit_kd.verify import (finite_difference_gradient, random_batch, reference_gradient,
                                reference_sample_losses, relative_error)

CE_ONLY = LossWeights(1.0, 0.0)
KD_ONLY = LossWeights(0.0, 1.0)


class TestCe:
    def test_examples(self):
        assert kd_losses.ce_loss([10, -10], 0) == pytest.approx(0.0, abs=1e-8)
        assert kd_losses.ce_loss([0, 0], 1) == pytest.approx(math.log(2))
        assert kd_losses.ce_loss([math.log(2), 0], 0) == pytest.approx(-math.log(2 / 3))

    def test_label_range(self):
        with pytest.raises(LabelOutOfRange):
            kd_losses.ce_loss([0.0, 1.0], 2)


class TestKd:
    def test_identical_logits(self):
        assert kd_losses.kd_loss([1, 5, 2], [1, 5, 2], 3.0) == pytest.approx(0.0, abs=1e-15)

    def test_composition(self):
        z = np.array([-1.22474487139, 0.0, 1.22474487139])
        p = np.exp(z) / np.exp(z).sum()
        q = p[::-1]
        expected = float(np.sum(p * np.log(p / q)))
        assert kd_losses.kd_loss([1, 2, 3], [3, 2, 1], 1.0) == pytest.approx(expected, rel=1e-9)

    def test_tau_squared_scaling_and_class_norm(self):
        t, s = [1.0, 2.0, 5.0, 0.0], [0.5, 3.0, 1.0, 1.0]
        tau = 2.5
        kl = logit_core.kl_divergence(logit_core.softmax_t(logit_core.zscore(t), tau),
                                      logit_core.softmax_t(logit_core.zscore(s), tau))
        assert kd_losses.kd_loss(t, s, tau) == pytest.approx(tau**2 * kl)
        assert kd_losses.kd_loss(t, s, tau, kl_per_class=True) == pytest.approx(tau**2 * kl / 4)

    def test_shape_mismatch(self):
        with pytest.raises(LengthMismatch):
            kd_losses.kd_loss([1, 2], [1, 2, 3], 1.0)

    @given(st.sampled_from([5, 10, 100]), st.integers(0, 2**32 - 1), st.floats(0.1, 10), st.floats(-5, 5))
    def test_zero_only_for_matching_z_scores(self, k, seed, a, b):
        rng = np.random.default_rng(seed)
        v, w = rng.normal(size=k), rng.normal(size=k)
        assert abs(kd_losses.kd_loss(v, a * v + b, 2.0)) <= 1e-9
        assert kd_losses.kd_loss(v, w, 2.0) > 0

    @given(st.integers(0, 2**32 - 1))
    def test_over_tau_squared_decreases(self, seed):
        rng = np.random.default_rng(seed)
        v, w = rng.normal(size=10), rng.normal(size=10)
        values = [kd_losses.kd_loss(v, w, t) / t**2 for t in (4.0, 6.0, 8.0, 16.0, 32.0)]
        assert all(b < a for a, b in zip(values, values[1:]))


class TestCombined:
    def test_ce_only_weights(self):
        t, s, y = random_batch(np.random.default_rng(0), 8, 10)
        out = kd_losses.combined_loss(t, s, y, CE_ONLY)
        assert out.total == out.ce
        assert out.ce == pytest.approx(np.mean([kd_losses.ce_loss(row, lab) for row, lab in zip(s, y)]))

    def test_reference_weights_mix_terms(self):
        t, s, y = random_batch(np.random.default_rng(1), 8, 10)
        out = kd_losses.combined_loss(t, s, y)
        assert out.total == pytest.approx(0.1 * out.ce + 9 * out.kd)
        expected_kd = np.mean([kd_losses.kd_loss(a, b, tau) for a, b, tau in zip(t, s, out.per_sample_tau)])
        assert out.kd == pytest.approx(expected_kd)

    def test_single_matching_sample(self):
        v = np.array([[0.3, 2.0, -1.0, 0.5]])
        out = kd_losses.combined_loss(v, v, [1])
        assert out.kd == pytest.approx(0.0, abs=1e-15)
        assert out.total == pytest.approx(0.1 * out.ce)

    def test_degenerate_rows_raise(self):
        with pytest.raises(DegenerateLogits):
            kd_losses.combined_loss([[1.0, 1.0, 1.0]], [[1.0, 2.0, 3.0]], [0])

    def test_validation(self):
        with pytest.raises(LengthMismatch):
            kd_losses.combined_loss(np.ones((2, 3)), np.ones((2, 4)), [0, 1])
        with pytest.raises(LengthMismatch):
            kd_losses.combined_loss(np.eye(3), np.eye(3), [0, 1])
        with pytest.raises(LabelOutOfRange):
            kd_losses.combined_loss(np.eye(3), np.eye(3), [0, 1, 3])
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.0)
        with pytest.raises(ValueError):
            LossWeights(-1.0, 1.0)

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-50, 50))
    def test_teacher_affine_invariance(self, seed, a, b):
        t, s, y = random_batch(np.random.default_rng(seed))
        base = kd_losses.combined_loss(t, s, y).total
        assert kd_losses.combined_loss(a * t + b, s, y).total == pytest.approx(base, rel=1e-6)

    def test_per_sample_temperatures_vary(self):
        t, s, y = random_batch(np.random.default_rng(2), 8, 10)
        taus = kd_losses.combined_loss(t, s, y).per_sample_tau
        assert len(set(taus.tolist())) > 1

    def test_static_policy(self):
        t, s, y = random_batch(np.random.default_rng(3), 8, 10)
        out = kd_losses.combined_loss(t, s, y, policy=TemperaturePolicy(kind=STATIC, static_tau=4))
        assert np.all(out.per_sample_tau == 4.0)

    def test_reference_loss_agrees(self):
        t, s, y = random_batch(np.random.default_rng(4), 8, 100)
        for weights in (LossWeights(), LossWeights(0.3, 2.0, kl_per_class=True)):
            out = kd_losses.combined_loss(t, s, y, weights)
            ref = reference_sample_losses(t, s, y, out.per_sample_tau, weights)
            assert out.total == pytest.approx(float(np.mean(ref)), rel=1e-12)


class TestGradient:
    def test_ce_only_is_softmax_minus_onehot(self):
        t, s, y = random_batch(np.random.default_rng(5), 8, 10)
        grad = kd_losses.loss_gradient(t, s, y, CE_ONLY)
        expected = logit_core.softmax_t(s, 1.0) - np.eye(10)[y]
        np.testing.assert_allclose(grad, expected / 8, atol=1e-15)

    def test_vanishes_at_the_kl_minimum(self):
        v = np.random.default_rng(6).normal(size=(4, 10))
        grad = kd_losses.loss_gradient(v, 2 * v + 1, [0, 1, 2, 3], KD_ONLY)
        assert np.abs(grad).max() <= 1e-10

    def test_rows_sum_to_zero_under_kd(self):
        # the z-score Jacobian projects out constant shifts of the student logits
        t, s, y = random_batch(np.random.default_rng(7), 8, 10)
        grad = kd_losses.loss_gradient(t, s, y, KD_ONLY)
        np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)
        np.testing.assert_allclose(np.sum(grad * logit_core.zscore(s), axis=1), 0, atol=1e-14)

    @pytest.mark.parametrize("weights", [LossWeights(), KD_ONLY, LossWeights(0.5, 3.0, kl_per_class=True)])
    @pytest.mark.parametrize("policy", [TemperaturePolicy(), TemperaturePolicy(kind=STATIC, static_tau=2),
                                        TemperaturePolicy(strict_abs_max=True, order_a=3)])
    def test_float64_central_differences(self, weights, policy):
        t, s, y = random_batch(np.random.default_rng(8), 4, 5)
        taus = kd_losses.combined_loss(t, s, y, weights, policy).per_sample_tau
        analytic = kd_losses.loss_gradient(t, s, y, weights, policy, taus=taus)
        numeric = finite_difference_gradient(
            lambda x: kd_losses.combined_loss(t, x, y, weights, policy, taus=taus).total, s, h=1e-5)
        assert relative_error(analytic, numeric, floor=1e-3) < 1e-6

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 8]), st.sampled_from([5, 10, 100]))
    def test_matches_extended_precision_differences(self, seed, batch, k):
        rng = np.random.default_rng(seed)
        t, s, y = random_batch(rng, batch, k)
        weights = LossWeights()
        taus = kd_losses.combined_loss(t, s, y, weights).per_sample_tau
        analytic = kd_losses.loss_gradient(t, s, y, weights, taus=taus)
        assert relative_error(analytic, reference_gradient(t, s, y, taus, weights)) < 1e-4

    def test_loss_and_gradient_share_one_pass(self):
        t, s, y = random_batch(np.random.default_rng(9), 8, 10)
        out, grad = kd_losses.loss_and_gradient(t, s, y, LossWeights(), TemperaturePolicy())
        assert out.total == kd_losses.combined_loss(t, s, y).total
        assert np.array_equal(grad, kd_losses.loss_gradient(t, s, y))

    def test_ce_only_helper(self):
        s = np.random.default_rng(10).normal(size=(6, 4))
        y = np.array([0, 1, 2, 3, 0, 1])
        loss, grad = kd_losses.ce_only(s, y)
        assert loss == pytest.approx(np.mean([kd_losses.ce_loss(r, c) for r, c in zip(s, y)]))
        np.testing.assert_allclose(grad, (logit_core.softmax_t(s) - np.eye(4)[y]) / 6, atol=1e-15)
