import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from faultxfer.bayes import (FAULT, LOG_2PI, NORMAL, ClassifierFeatures, LogisticModel,
                             LogLikRatio, classify_sequence, classify_single, classify_windows,
                             extract_features, feature_matrix, logistic_loss_and_grad,
                             loglik_fault, loglik_fault_marginal, loglik_normal, loglik_ratios,
                             mc_posterior_oracle, predict_logistic, rank_one_inverse,
                             rank_one_logdet, train_logistic, window_sums)
from faultxfer.errors import NumericalFailureError, RejectedInputError
from faultxfer.kernel import Dataset, TransitionMatrix, concat, perturb_matrix, simulate


def random_instance(rng, n_max=5, p_max=10):
    n = int(rng.integers(1, n_max + 1))
    p = int(rng.integers(1, p_max + 1))
    return rng.standard_normal(n) * 2, rng.standard_normal(p), rng.standard_normal((n, p))


def dense_features(x, s, A):
    """Literal trace form with explicit C, D and a dense inverse."""
    x, s = x[:, None], s[:, None]
    C = s @ s.T + np.eye(s.shape[0])
    D = x @ s.T + A
    Ci = np.linalg.inv(C)
    r = x - A @ s
    cross = np.trace(x @ x.T + A @ A.T - D @ Ci @ D.T)
    return float(np.sum(r * r)), float(cross), float(np.linalg.slogdet(Ci)[1])


class TestRankOne:
    @pytest.mark.parametrize("p", [1, 2, 5, 17, 50])
    def test_match_dense(self, p):
        rng = np.random.default_rng(p)
        for _ in range(10):
            s = rng.standard_normal(p)
            C = np.eye(p) + np.outer(s, s)
            np.testing.assert_allclose(rank_one_inverse(s), np.linalg.inv(C), atol=1e-10)
            assert abs(rank_one_logdet(s) - np.linalg.slogdet(C)[1]) < 1e-10


class TestLikelihoods:
    def test_zero_residual(self):
        A = np.eye(2)
        s = np.array([0.3, -1.2])
        assert loglik_normal(A @ s, s, A) == pytest.approx(-LOG_2PI, abs=1e-12)
        assert -LOG_2PI == pytest.approx(-1.837877, abs=1e-6)

    def test_scalar_residual(self):
        value = loglik_normal([math.sqrt(2.0)], [0.0], [[1.0]])
        assert value == pytest.approx(-0.5 * LOG_2PI - 1.0, abs=1e-12)
        assert value == pytest.approx(-1.918939, abs=1e-6)

    def test_normal_matches_density(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x, s, A = random_instance(rng)
            expected = multivariate_normal(A @ s, np.eye(x.size)).logpdf(x)
            assert loglik_normal(x, s, A) == pytest.approx(expected, abs=1e-10)

    def test_fault_scalar_examples(self):
        assert loglik_fault([0.0], [0.0], [[0.0]]) == pytest.approx(-0.918939, abs=1e-6)
        assert loglik_fault([1.0], [1.0], [[1.0]]) == pytest.approx(-0.5 * math.log(4 * math.pi), abs=1e-12)
        assert loglik_fault([1.0], [1.0], [[1.0]]) == pytest.approx(-1.265512, abs=1e-6)

    def test_fault_matches_gaussian_marginal(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            x, s, A = random_instance(rng)
            cov = (1.0 + s @ s) * np.eye(x.size)
            expected = multivariate_normal(A @ s, cov).logpdf(x)
            assert abs(loglik_fault(x, s, A) - expected) < 1e-10
            assert abs(loglik_fault_marginal(x, s, A) - expected) < 1e-10

    def test_dimension_errors(self):
        with pytest.raises(RejectedInputError, match="2x3"):
            loglik_normal([1.0], np.ones(3), np.ones((2, 3)))
        with pytest.raises(RejectedInputError):
            loglik_fault([1.0, 2.0], np.ones(2), np.ones((2, 3)))
        with pytest.raises(RejectedInputError):
            extract_features(np.ones(2), [1.0], np.ones((1, 3)))


class TestOracle:
    def test_scalar_zero(self):
        est, se = mc_posterior_oracle([0.0], [0.0], [[0.0]], draws=2000)
        assert abs(est + 0.5 * LOG_2PI) <= max(se, 1e-12)

    def test_scalar_unit(self):
        est, se = mc_posterior_oracle([1.0], [1.0], [[1.0]], draws=100_000, seed=1)
        assert abs(est - (-1.265512)) < 3 * se

    def test_deterministic(self):
        a = mc_posterior_oracle([0.5, 1.0], [1.0, 0.2, 1.0], np.ones((2, 3)), draws=5000, seed=9)
        b = mc_posterior_oracle([0.5, 1.0], [1.0, 0.2, 1.0], np.ones((2, 3)), draws=5000, seed=9)
        assert a == b

    def test_rejects_few_draws(self):
        with pytest.raises(RejectedInputError):
            mc_posterior_oracle([0.0], [0.0], [[0.0]], draws=999)

    def test_agreement_on_random_instances(self):
        rng = np.random.default_rng(11)
        for i in range(10):
            x, s, A = random_instance(rng, 3, 6)
            est, se = mc_posterior_oracle(x, s, A, draws=100_000, seed=i)
            assert abs(loglik_fault(x, s, A) - est) < 3 * se


class TestFeatures:
    def test_zero(self):
        assert extract_features(np.zeros(2), np.zeros(1), np.zeros((1, 2))) == ClassifierFeatures(0.0, 0.0, 0.0)

    def test_scalar_hand_values(self):
        f = extract_features([1.0], [3.0], [[0.0]])
        assert f.residual_trace == pytest.approx(9.0)
        assert f.logdet_term == pytest.approx(-math.log(2.0), abs=1e-12)

    def test_matches_dense_trace_form(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            x, s, A = random_instance(rng)
            f = extract_features(s, x, A)
            np.testing.assert_allclose(f.as_array(), dense_features(x, s, A), rtol=1e-9, atol=1e-9)

    def test_recombination(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            x, s, A = random_instance(rng)
            n = x.size
            f = extract_features(s, x, A)
            assert abs(-0.5 * f.residual_trace - 0.5 * n * LOG_2PI - loglik_normal(x, s, A)) < 1e-12
            fault = -0.5 * n * LOG_2PI - 0.5 * f.cross_trace + 0.5 * n * f.logdet_term
            assert fault == loglik_fault(x, s, A)

    def test_trace_order_equivalence(self):
        # Tr[(D C^-1)' D] == Tr[C^-1 D' D] because C^-1 is symmetric
        rng = np.random.default_rng(7)
        x, s, A = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal((3, 4))
        D = np.outer(x, s) + A
        Ci = rank_one_inverse(s)
        assert np.trace((D @ Ci).T @ D) == pytest.approx(np.trace(Ci @ D.T @ D), rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_feature_signs(self, n, p, seed):
        rng = np.random.default_rng(seed)
        x, s, A = rng.standard_normal(n) * 3, rng.standard_normal(p) * 3, rng.standard_normal((n, p))
        f = extract_features(s, x, A)
        assert f.residual_trace >= 0
        assert f.logdet_term <= 0

    def test_batch_matches_single(self):
        rng = np.random.default_rng(8)
        S = rng.standard_normal((4, 30))
        S[-1] = 1.0
        A = rng.standard_normal((2, 4))
        D = simulate(TransitionMatrix(A), S, 1.0, 1)
        F = feature_matrix(D, A)
        for t in range(D.T):
            np.testing.assert_allclose(F[t], extract_features(D.S[:, t], D.X[:, t], A).as_array(),
                                       rtol=1e-12, atol=1e-12)


class TestClassifier:
    def test_zero_residual_is_normal(self):
        A = np.array([[0.5, -1.0]])
        s = np.array([1.0, 2.0])
        r = classify_single(s, A @ s, A)
        assert r.value > 0 and r.decision == NORMAL

    def test_scalar_fault_example(self):
        r = classify_single([1.0], [3.0], [[0.0]])
        expected = (-0.5 * LOG_2PI - 4.5) - (-0.5 * math.log(4 * math.pi) - 2.25)
        assert r.value == pytest.approx(expected, abs=1e-12)
        assert r.value == pytest.approx(-1.903, abs=1e-3)
        assert r.decision == FAULT

    def test_zero_input_tie(self):
        r = classify_single(np.zeros(3), [1.7, -2.0], np.ones((2, 3)))
        assert r.value == 0.0 and r.decision == NORMAL

    def test_tie_rule(self):
        assert LogLikRatio(0.0).decision == NORMAL
        assert LogLikRatio(-1e-300).decision == FAULT

    def test_ratio_equals_difference(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            x, s, A = random_instance(rng)
            diff = loglik_normal(x, s, A) - loglik_fault_marginal(x, s, A)
            assert classify_single(s, x, A).value == pytest.approx(diff, abs=1e-9)

    def test_sequence_single_pair(self):
        D = Dataset(np.array([[1.0]]), np.array([[3.0]]), intercept=False)
        assert classify_sequence(D, [[0.0]]).value == classify_single([1.0], [3.0], [[0.0]]).value

    def test_sequence_constructed_sum(self):
        # scalar a = 0: ratio = log(1 + s^2)/2 - x^2 s^2 / (2 (1 + s^2))
        s1, x1 = math.sqrt(math.e ** 2 - 1.0), 0.0          # ratio +1
        s2, x2 = 1.0, math.sqrt(2.0 + 2.0 * math.log(2.0))  # ratio -0.5
        D = Dataset(np.array([[s1, s2]]), np.array([[x1, x2]]), intercept=False)
        np.testing.assert_allclose(loglik_ratios(D, [[0.0]]), [1.0, -0.5], atol=1e-12)
        r = classify_sequence(D, [[0.0]])
        assert r.value == pytest.approx(0.5, abs=1e-12)
        assert r.decision == NORMAL

    def test_sequence_empty(self):
        with pytest.raises(RejectedInputError):
            classify_sequence(Dataset(np.ones((1, 0)), np.ones((1, 0))), [[1.0]])

    def test_additivity(self):
        rng = np.random.default_rng(10)
        A = rng.standard_normal((2, 3))
        S = rng.standard_normal((3, 500))
        S[-1] = 1.0
        D = simulate(TransitionMatrix(A), S, 1.0, 2)
        for cut in (1, 7, 250, 499):
            whole = classify_sequence(concat(D[:cut], D[cut:]), A).value
            parts = classify_sequence(D[:cut], A).value + classify_sequence(D[cut:], A).value
            assert abs(whole - parts) <= 4 * np.spacing(abs(whole))

    def test_additivity_exact_on_dyadic_ratios(self):
        # scalar pairs with s = 1, a = 0: ratio = -x^2/4 + log(2)/2; choose x so sums stay exact
        xs = np.sqrt(np.array([2.0, 6.0, 10.0, 14.0]) + 2 * math.log(2.0))
        ratios = loglik_ratios(Dataset(np.ones((1, 4)), xs[None, :], intercept=False), [[0.0]])
        D = Dataset(np.ones((1, 4)), xs[None, :], intercept=False)
        whole = classify_sequence(D, [[0.0]]).value
        assert whole == math.fsum(ratios)
        assert whole == classify_sequence(D[:2], [[0.0]]).value + classify_sequence(D[2:], [[0.0]]).value

    def test_mean_sign_flips_with_generator(self):
        A = TransitionMatrix(np.diag([0.9, -0.4]))
        rng = np.random.default_rng(12)
        for seed in range(40):
            B = perturb_matrix(A, 1.0, seed)
            if np.linalg.norm(B.entries - A.entries) >= 2:
                break
        S = rng.standard_normal((2, 1000))
        assert loglik_ratios(simulate(A, S, 1.0, 1), A).mean() > 0
        assert loglik_ratios(simulate(B, S, 1.0, 2), A).mean() < 0

    def test_windows(self):
        np.testing.assert_array_equal(window_sums(np.arange(7.0), 3), [3.0, 12.0])
        with pytest.raises(RejectedInputError):
            window_sums(np.arange(3.0), 0)
        D = Dataset(np.ones((1, 4)), np.arange(4.0)[None, :], intercept=False)
        np.testing.assert_allclose(classify_windows(D, [[0.0]], 2),
                                   window_sums(loglik_ratios(D, [[0.0]]), 2))


def fd_logistic(w, b, F, y, h=1e-6):
    theta = np.r_[w, b]
    g = np.empty(4)
    for i in range(4):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (logistic_loss_and_grad(tp[:3], tp[3], F, y)[0]
                - logistic_loss_and_grad(tm[:3], tm[3], F, y)[0]) / (2 * h)
    return g


class TestLogistic:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        F = rng.standard_normal((60, 3))
        y = (rng.random(60) < 0.5).astype(float)
        for _ in range(20):
            w, b = rng.standard_normal(3), float(rng.standard_normal())
            _, gw, gb = logistic_loss_and_grad(w, b, F, y)
            g = np.r_[gw, gb]
            num = fd_logistic(w, b, F, y)
            err = np.abs(g - num) / np.maximum(np.abs(num), 1e-8)
            assert np.all((err <= 1e-5) | (np.abs(g - num) <= 1e-8))

    def test_zero_epochs(self):
        F = np.random.default_rng(0).standard_normal((10, 3))
        m = train_logistic(F, np.r_[np.zeros(5), np.ones(5)], epochs=0)
        np.testing.assert_array_equal(m.weights, 0.0)
        assert m.bias == 0.0
        for f in F:
            assert predict_logistic(m, f) == (0.5, 0)

    def test_separable_one_dimensional(self):
        rng = np.random.default_rng(1)
        normal = np.column_stack([rng.uniform(0, 1, 50), np.zeros(50), np.zeros(50)])
        fault = np.column_stack([rng.uniform(5, 10, 50), np.zeros(50), np.zeros(50)])
        F = np.vstack([normal, fault])
        y = np.r_[np.zeros(50), np.ones(50)]
        m = train_logistic(F, y, learn_rate=0.5, epochs=500)
        _, labels = zip(*(predict_logistic(m, f) for f in F))
        assert np.mean(np.array(labels) == y) == 1.0

    def test_accepts_feature_objects(self):
        feats = [ClassifierFeatures(0.1, 0.2, -0.1), ClassifierFeatures(4.0, 1.0, -0.5)]
        m = train_logistic(feats, [0, 1], epochs=10)
        assert m.iterations == 10 and math.isfinite(m.final_loss)

    def test_errors(self):
        with pytest.raises(RejectedInputError):
            train_logistic(np.empty((0, 3)), [])
        with pytest.raises(RejectedInputError):
            train_logistic(np.ones((2, 3)), [0, 1, 1])
        with pytest.raises(NumericalFailureError):
            train_logistic(np.array([[1e308, 0, 0], [-1e308, 0, 0]]), [0, 1], learn_rate=1e300,
                           epochs=5, transform="identity", standardize=False)

    def test_deterministic(self):
        F = np.random.default_rng(2).standard_normal((40, 3))
        y = np.r_[np.zeros(20), np.ones(20)]
        a, b = train_logistic(F, y, epochs=50), train_logistic(F, y, epochs=50)
        np.testing.assert_array_equal(a.weights, b.weights)
        assert a.bias == b.bias

    def test_predict_examples(self):
        zero = LogisticModel(np.zeros(3))
        assert predict_logistic(zero, ClassifierFeatures(1.0, 2.0, -0.5)) == (0.5, 0)
        m = LogisticModel(np.array([1.0, 0.0, 0.0]))
        prob, label = predict_logistic(m, ClassifierFeatures(100.0, 0.0, 0.0))
        assert prob == pytest.approx(1.0) and label == FAULT

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 5), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
    def test_probability_monotone_in_residual(self, w0, w1, w2, b):
        m = LogisticModel(np.array([w0, w1, w2]), b)
        grid = np.linspace(0, 20, 50)
        probs = [predict_logistic(m, ClassifierFeatures(r, 1.0, -0.3))[0] for r in grid]
        assert np.all(np.diff(probs) >= 0)

    def test_synthetic_fault_dataset(self):
        from faultxfer.experiments import precision_recall_f1

        A = TransitionMatrix(np.diag([0.9, -0.4]))
        # first draw that is separable in the sense ||A - B||_F >= 2
        B = next(B for B in (perturb_matrix(A, 1.0, s) for s in range(100))
                 if np.linalg.norm(B.entries - A.entries) >= 2)
        rng = np.random.default_rng(14)
        Fn = feature_matrix(simulate(A, rng.standard_normal((2, 2000)), 1.0, 1), A)
        Ff = feature_matrix(simulate(B, rng.standard_normal((2, 2000)), 1.0, 2), A)
        Fn, Ff = window_sums(Fn, 10), window_sums(Ff, 10)
        m = train_logistic(np.vstack([Fn[::2], Ff[::2]]), np.r_[np.zeros(100), np.ones(100)])
        _, pred = zip(*(predict_logistic(m, f) for f in np.vstack([Fn[1::2], Ff[1::2]])))
        precision, recall, _ = precision_recall_f1(np.r_[np.zeros(100), np.ones(100)], pred)
        assert precision >= 0.9 and recall >= 0.9
