import math

import numpy as np
import pytest

from polyvisc import nn, tuning
from polyvisc.data import ScaledSamples, apply_scaling, fit_scaling
from polyvisc.errors import EmptyGrid, TooFewSamples
from polyvisc.synthetic import generate


def linear_data(n=37, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = X @ np.array([0.5, -1.0, 0.25]) + 0.1 * rng.normal(size=n)
    return ScaledSamples(chem=X, cond_graph=np.zeros((n, 3)), cond_ann=np.zeros((n, 0)), y=y)


def least_squares_fit_predict(train, held):
    coef, *_ = np.linalg.lstsq(train.chem, train.y, rcond=None)
    return held.chem @ coef


class TestFolds:
    @pytest.mark.parametrize("n,k", [(10, 10), (37, 10), (100, 7), (5, 2)])
    def test_partition(self, n, k):
        folds = tuning.kfold_indices(n, k, seed=3)
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1
        allidx = np.concatenate(folds)
        assert sorted(allidx) == list(range(n))

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            tuning.kfold_indices(4, 5, 0)

    def test_k_below_two(self):
        with pytest.raises(ValueError):
            tuning.kfold_indices(10, 1, 0)

    def test_seeded(self):
        a = tuning.kfold_indices(50, 5, 1)
        b = tuning.kfold_indices(50, 5, 1)
        c = tuning.kfold_indices(50, 5, 2)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))


class TestCrossValidate:
    def test_linear_oracle(self):
        data = linear_data()
        res = tuning.cross_validate(data, nn.MlpConfig(), "ann", k=5, seed=2, fit_predict=least_squares_fit_predict)
        # recompute every fold by hand
        expected = []
        for test in res.folds:
            train = np.setdiff1d(np.arange(len(data)), test)
            coef = np.linalg.solve(data.chem[train].T @ data.chem[train], data.chem[train].T @ data.y[train])
            expected.append(np.mean((data.chem[test] @ coef - data.y[test]) ** 2))
        assert res.mean == pytest.approx(np.mean(expected), rel=1e-10)

    def test_real_training_runs(self):
        samples, _ = generate(6, 6, 0.05, seed=1)
        spec = fit_scaling(samples)
        res = tuning.cross_validate(apply_scaling(spec, samples), nn.MlpConfig(layer1_size=8, layer2_size=8),
                                    "penn", k=3, seed=0, max_epochs=3)
        assert len(res.losses) == 3 and all(math.isfinite(v) for v in res.losses)


class TestSearch:
    def test_rung_schedule(self):
        assert tuning.rung_sizes(1) == [1]
        assert tuning.rung_sizes(10) == [10, 4, 2, 1]
        assert tuning.rung_sizes(27) == [27, 9, 3, 1]

    def test_samples_distinct_and_in_grid(self):
        cfgs = tuning.sample_configs(nn.GRID, 50, seed=0)
        assert len(set(cfgs)) == 50
        assert all(c.in_grid() for c in cfgs)

    def test_budget_capped_by_grid(self):
        grid = {"layer1_size": (64, 128), "w_alpha": (0.01,)}
        assert len(tuning.sample_configs(grid, 10, 0)) == 2

    def test_empty_grid(self):
        with pytest.raises(EmptyGrid):
            tuning.hyperparameter_search(None, {"layer1_size": ()}, 3)

    def test_budget_one(self):
        calls = []
        best, _ = tuning.hyperparameter_search(None, nn.GRID, 1, seed=5, evaluate=lambda c, e: calls.append(c))
        assert best == tuning.sample_configs(nn.GRID, 1, 5)[0]
        assert calls == []

    def test_planted_best(self):
        grid = {"layer1_size": (64, 128, 256, 512), "weight_decay": (1e-5, 5e-5, 1e-4, 5e-4, 1e-3)}
        planted = (256, 5e-4)

        def evaluate(cfg, epochs):
            # only the planted point reaches a loss below 1
            floor = 0.5 if (cfg.layer1_size, cfg.weight_decay) == planted else 1.0
            return floor + 10.0 / epochs + 1e-3 * cfg.layer1_size / 512

        best, hist = tuning.hyperparameter_search(None, grid, 20, seed=0, evaluate=evaluate, min_epochs=5)
        assert (best.layer1_size, best.weight_decay) == planted
        # exhaustive oracle agrees
        all_cfgs = tuning.sample_configs(grid, 20, 0)
        assert min(all_cfgs, key=lambda c: evaluate(c, 1000)) == best

    def test_survivor_counts(self):
        counts = {}
        _, hist = tuning.hyperparameter_search(None, nn.GRID, 10, seed=1, evaluate=lambda c, e: c.layer1_size / e)
        for h in hist:
            counts[h["rung"]] = counts.get(h["rung"], 0) + 1
        assert [counts[r] for r in sorted(counts)] == [10, 4, 2]
        epochs = sorted({h["epochs"] for h in hist})
        assert epochs == [20, 60, 180]

    def test_deterministic_with_training(self):
        samples, _ = generate(6, 6, 0.05, seed=2)
        spec = fit_scaling(samples)
        data = apply_scaling(spec, samples)
        grid = {"layer1_size": (64,), "layer2_size": (64,), "weight_decay": (1e-5, 1e-3)}
        a = tuning.hyperparameter_search(data, grid, 2, seed=0, folds=2, min_epochs=2)
        b = tuning.hyperparameter_search(data, grid, 2, seed=0, folds=2, min_epochs=2)
        assert a == b
