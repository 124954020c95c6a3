import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyvisc import gpr
from polyvisc.data import ScaledSamples
from polyvisc.errors import DimensionMismatch, NotPositiveDefinite
from polyvisc.gpr import GprHyperparams, gpr_fit, gpr_predict


def sin_grid(n=20):
    x = np.linspace(0, 2 * math.pi, n)[:, None]
    return x, np.sin(x[:, 0])


def dense_oracle(X, y, Xs, a, l, c):
    def k(p, q):
        return c * math.exp(-sum((pi - qi) ** 2 for pi, qi in zip(p, q)) / (2 * l * l))

    K = np.array([[k(p, q) for q in X] for p in X]) + a * np.eye(len(X))
    Ks = np.array([[k(p, q) for q in Xs] for p in X])
    return Ks.T @ np.linalg.solve(K, y)


def as_scaled(X, y):
    X = np.asarray(X, dtype=float)
    return ScaledSamples(chem=X, cond_graph=np.zeros((len(y), 3)), cond_ann=np.zeros((len(y), 0)), y=np.asarray(y))


class TestFitPredict:
    def test_single_point_closed_form(self):
        hp = GprHyperparams(alpha=0.3, length_scale=1.0, constant_value=2.0)
        m = gpr_fit([[0.5, -1.0]], [4.0], hp)
        mean, _ = gpr_predict(m, [[0.5, -1.0]])
        assert mean[0] == pytest.approx(4.0 * 2.0 / 2.3)

    def test_huge_noise_gives_prior_mean(self):
        X, y = sin_grid()
        m = gpr_fit(X, y, GprHyperparams(alpha=1e9))
        assert np.abs(gpr_predict(m, X)[0]).max() < 1e-7

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(5, 3)), rng.normal(size=5)
        Xs = rng.normal(size=(4, 3))
        m = gpr_fit(X, y, GprHyperparams(0.05, 0.8, 1.7))
        np.testing.assert_allclose(gpr_predict(m, Xs)[0], dense_oracle(X, y, Xs, 0.05, 0.8, 1.7), rtol=1e-10)

    def test_sin_grid_interpolation(self):
        X, y = sin_grid()
        mean, var = gpr_predict(gpr_fit(X, y, GprHyperparams(alpha=1e-2)), X)
        assert np.abs(mean - y).max() < 0.05
        assert np.all(var >= 0)

    def test_variance_ordering(self):
        X, y = sin_grid()
        m = gpr_fit(X, y, GprHyperparams(alpha=1e-2))
        _, var = gpr_predict(m, np.array([[X[3, 0]], [50.0]]))
        assert var[0] <= var[1]
        assert var[1] == pytest.approx(1.0)

    def test_prior_variance_scales_with_constant(self):
        X, y = sin_grid()
        far = np.array([[100.0]])
        v1 = gpr_predict(gpr_fit(X, y, GprHyperparams(constant_value=1.0)), far)[1][0]
        v3 = gpr_predict(gpr_fit(X, y, GprHyperparams(constant_value=3.0)), far)[1][0]
        assert v3 == pytest.approx(3 * v1)

    def test_width_mismatch(self):
        X, y = sin_grid()
        with pytest.raises(DimensionMismatch):
            gpr_predict(gpr_fit(X, y, GprHyperparams()), np.zeros((1, 2)))

    def test_not_positive_definite(self):
        X, y = sin_grid()
        with pytest.raises(NotPositiveDefinite):
            gpr_fit(X, y, GprHyperparams(alpha=-5.0))

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        X, y, Xs = rng.normal(size=(8, 2)), rng.normal(size=8), rng.normal(size=(3, 2))
        hp = GprHyperparams(0.1, 1.0, 1.0)
        perm = rng.permutation(8)
        a = gpr_predict(gpr_fit(X, y, hp), Xs)[0]
        b = gpr_predict(gpr_fit(X[perm], y[perm], hp), Xs)[0]
        np.testing.assert_allclose(a, b, atol=1e-10)

    @given(st.integers(0, 10_000), st.integers(1, 7))
    @settings(max_examples=25, deadline=None)
    def test_nested_sets_reduce_variance(self, seed, k):
        rng = np.random.default_rng(seed)
        X, y, Xs = rng.normal(size=(8, 2)), rng.normal(size=8), rng.normal(size=(5, 2))
        hp = GprHyperparams(0.05, 0.7, 2.0)
        va = gpr_predict(gpr_fit(X[:k], y[:k], hp), Xs)[1]
        vb = gpr_predict(gpr_fit(X, y, hp), Xs)[1]
        assert np.all(vb <= va + 1e-9)


class TestSearch:
    def test_single_iteration_returns_proposal(self):
        X, y = sin_grid()
        best, trials = gpr.gpr_search(as_scaled(X, y), iterations=1, seed=4)
        assert best == gpr.propose(np.random.default_rng([4, 2]))
        assert len(trials) == 1

    def test_proposals_in_ranges(self):
        rng = np.random.default_rng(0)
        assert all(gpr.propose(rng).in_ranges() for _ in range(500))

    def test_smooth_noise_free_prefers_small_alpha(self):
        x = np.linspace(0, 6, 40)[:, None]
        y = np.sin(x[:, 0])
        best, _ = gpr.gpr_search(as_scaled(x, y), iterations=30, seed=1, folds=5)
        # selected noise sits in the lowest quarter of the log range
        assert (math.log10(best.alpha) + 2) / 3 < 0.25
        # grid-scan oracle: with the other two fixed, CV error grows with alpha
        grid = np.logspace(-2, 1, 7)
        scores = [gpr.cv_ome(x, y, GprHyperparams(a, best.length_scale, best.constant_value), 5, 1) for a in grid]
        assert int(np.argmin(scores)) == 0

    def test_deterministic(self):
        X, y = sin_grid()
        a = gpr.gpr_search(as_scaled(X, y), iterations=5, seed=2, folds=4)
        b = gpr.gpr_search(as_scaled(X, y), iterations=5, seed=2, folds=4)
        assert a == b


class TestSerialization:
    def test_round_trip(self):
        X, y = sin_grid()
        m = gpr_fit(X, y, GprHyperparams(0.02, 0.9, 1.3))
        back = gpr.model_from_dict(json.loads(json.dumps(gpr.model_to_dict(m))))
        Xs = np.linspace(-1, 7, 13)[:, None]
        for a, b in zip(gpr_predict(m, Xs), gpr_predict(back, Xs)):
            np.testing.assert_array_equal(a, b)

    def test_weight_count_mismatch(self):
        X, y = sin_grid()
        d = gpr.model_to_dict(gpr_fit(X, y, GprHyperparams()))
        d["dual_weights"].pop()
        with pytest.raises(DimensionMismatch):
            gpr.model_from_dict(d)
