import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maxlogit_kd import logit_core
from maxlogit_kd.errors import DegenerateLogits, LengthMismatch
from maxlogit_kd.verify import pearson_two_pass

finite = st.floats(-50, 50, allow_nan=False)
logit_vectors = st.integers(2, 40).flatmap(lambda k: arrays(np.float64, k, elements=finite)).filter(
    lambda v: np.std(v) > 1e-3)


class TestZscore:
    def test_three_values(self):
        np.testing.assert_allclose(logit_core.zscore([1, 2, 3]), [-1.22474487, 0, 1.22474487], atol=1e-8)

    def test_uses_population_std(self):
        # mean 1, population sigma sqrt(2)
        np.testing.assert_allclose(logit_core.zscore([0, 0, 3]),
                                   [-1 / math.sqrt(2), -1 / math.sqrt(2), math.sqrt(2)], atol=1e-12)

    def test_constant_vector_is_an_error(self):
        with pytest.raises(DegenerateLogits):
            logit_core.zscore([5, 5])

    def test_batch_error_names_the_row(self):
        with pytest.raises(DegenerateLogits) as info:
            logit_core.zscore([[1, 2, 3], [4, 5, 6], [2, 2, 2]])
        assert info.value.index == 2

    def test_rows_mask_degenerate_rows(self):
        z, sigma, bad = logit_core.zscore_rows(np.array([[1.0, 2.0, 3.0], [7.0, 7.0, 7.0]]))
        assert bad.tolist() == [False, True]
        assert np.all(z[1] == 0)
        assert sigma[0] == pytest.approx(math.sqrt(2 / 3))

    @given(logit_vectors)
    def test_moments(self, v):
        z = logit_core.zscore(v)
        assert abs(z.sum()) <= 1e-9 * len(z)
        assert np.mean(z * z) == pytest.approx(1.0, abs=1e-9)

    @given(logit_vectors, st.floats(1e-2, 1e2), st.floats(-100, 100))
    def test_affine_invariance(self, v, a, b):
        np.testing.assert_allclose(logit_core.zscore(a * v + b), logit_core.zscore(v), atol=1e-7)


class TestSoftmax:
    def test_symmetric_pair(self):
        np.testing.assert_allclose(logit_core.softmax_t([0, 0], 1.0), [0.5, 0.5])

    def test_log_two(self):
        np.testing.assert_allclose(logit_core.softmax_t([math.log(2), 0], 1.0), [2 / 3, 1 / 3], atol=1e-12)

    def test_huge_temperature_is_uniform(self):
        np.testing.assert_allclose(logit_core.softmax_t([3, -1, 0.5], 1e9), [1 / 3] * 3, atol=1e-8)

    def test_large_logits_do_not_overflow(self):
        p = logit_core.softmax_t([1000.0, 0.0, -1000.0], 0.5)
        assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)

    def test_rejects_non_positive_tau(self):
        with pytest.raises(ValueError):
            logit_core.softmax_t([1.0, 2.0], 0.0)

    def test_per_row_temperatures(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0]])
        p = logit_core.softmax_t(z, np.array([1.0, 4.0]))
        np.testing.assert_allclose(p[1], logit_core.softmax_t([1.0, 0.0], 4.0))

    @given(logit_vectors, st.floats(0.05, 100))
    def test_temperature_is_a_rescale(self, z, tau):
        np.testing.assert_allclose(logit_core.softmax_t(z, tau), logit_core.softmax_t(z / tau, 1.0), atol=1e-12)

    @given(logit_vectors, st.floats(0.05, 1e4))
    def test_top_class_kept(self, z, tau):
        p = logit_core.softmax_t(z, tau)
        assert p.sum() == pytest.approx(1.0, abs=1e-12 * len(z))
        assert p[np.argmax(z)] == p.max()


class TestKl:
    def test_identical(self):
        assert logit_core.kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_values(self):
        expected = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
        assert logit_core.kl_divergence([0.5, 0.5], [0.9, 0.1]) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.51083, abs=1e-5)
        assert logit_core.kl_divergence([0.5, 0.5], [0.9, 0.1], mean_normalized=True) == pytest.approx(
            expected / 2, abs=1e-12)
        assert logit_core.kl_divergence([0.7, 0.3], [0.3, 0.7]) == pytest.approx(0.4 * math.log(7 / 3), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            logit_core.kl_divergence([0.5, 0.5], [0.2, 0.3, 0.5])

    @settings(max_examples=200)
    @given(st.integers(2, 30), st.integers(0, 2**32 - 1))
    def test_gibbs(self, k, seed):
        rng = np.random.default_rng(seed)
        p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        assert logit_core.kl_divergence(p, q) > 0
        assert abs(logit_core.kl_divergence(p, p)) <= 1e-9


class TestCorrelation:
    def test_self_and_opposite(self):
        z = logit_core.zscore([1.0, 4.0, 2.0, 8.0])
        assert logit_core.correlation(z, z) == pytest.approx(1.0, abs=1e-12)
        assert logit_core.correlation(z, -z) == pytest.approx(-1.0, abs=1e-12)

    def test_worked_pair(self):
        a = logit_core.zscore([0, 0, 3])
        b = logit_core.zscore([1, 2, 3])
        assert logit_core.correlation(a, b) == pytest.approx(math.sqrt(3) / 2, abs=1e-12)

    @given(st.integers(2, 50).flatmap(lambda k: st.tuples(
        arrays(np.float64, k, elements=finite), arrays(np.float64, k, elements=finite))))
    def test_matches_two_pass_pearson(self, pair):
        a, b = pair
        if np.std(a) < 1e-3 or np.std(b) < 1e-3:
            return
        rho = logit_core.correlation(logit_core.zscore(a), logit_core.zscore(b))
        assert rho == pytest.approx(pearson_two_pass(a, b), abs=1e-9)


class TestEntropy:
    def test_point_mass(self):
        assert logit_core.entropy([1 - 1e-15, 1e-15]) == pytest.approx(0.0, abs=1e-12)

    def test_uniform(self):
        assert logit_core.entropy([0.25] * 4) == pytest.approx(math.log(4), abs=1e-12)
        assert logit_core.entropy([0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)

    @given(logit_vectors)
    def test_grows_with_temperature(self, z):
        z = logit_core.zscore(z)
        h = [logit_core.entropy(logit_core.softmax_t(z, tau)) for tau in (1, 2, 4, 8, 16)]
        assert all(b > a for a, b in zip(h, h[1:]))
