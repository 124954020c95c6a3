"""k-fold cross-validation and successive-halving hyperparameter search."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import nn
from .data import ScaledSamples
from .errors import EmptyGrid, TooFewSamples

log = logging.getLogger(__name__)

KEEP_FRACTION = 3  # keep the best ceil(m / 3) configurations per rung
EPOCH_GROWTH = 3


@dataclass(frozen=True)
class CvResult:
    folds: tuple  # held-out index arrays
    losses: tuple  # held-out viscosity loss per fold

    @property
    def mean(self) -> float:
        return float(np.mean(self.losses))


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Shuffle ``range(n)`` under ``seed`` and cut it into ``k`` near-equal folds."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise TooFewSamples(f"{n} samples cannot fill {k} folds")
    return np.array_split(np.random.default_rng([seed, 3]).permutation(n), k)


def _default_fit_predict(config, kind, max_epochs, scaling):
    def run(train_set, val_set):
        model = nn.train(train_set, val_set, config, kind, scaling=scaling, max_epochs=max_epochs)
        return nn.predict_scaled(model, val_set, strict=False)

    return run


def cross_validate(data: ScaledSamples, config: nn.MlpConfig, kind: str, k: int = 10, *, seed: int = 0,
                   max_epochs: int | None = None, scaling=None,
                   fit_predict: Callable | None = None) -> CvResult:
    """Per-fold held-out viscosity loss.

    Each fold is held out once; it also serves as the early-stopping
    validation set for the model trained on the other folds.  ``fit_predict``
    (train_set, held_out) -> predictions replaces the network for testing.
    """
    folds = kfold_indices(len(data), k, seed)
    run = fit_predict or _default_fit_predict(config, kind, max_epochs, scaling)
    losses = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        held = data.subset(test)
        losses.append(nn.viscosity_loss(run(data.subset(train), held), held.y))
        log.debug("fold %d/%d: L_eta %.4g", i + 1, k, losses[-1])
    return CvResult(tuple(folds), tuple(losses))


def grid_size(grid: dict) -> int:
    return math.prod(len(v) for v in grid.values())


def sample_configs(grid: dict, m: int, seed: int, base: nn.MlpConfig | None = None) -> list[nn.MlpConfig]:
    """``m`` distinct grid points drawn uniformly without replacement."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise EmptyGrid("hyperparameter grid has no points")
    base = base or nn.MlpConfig()
    keys = list(grid)
    total = grid_size(grid)
    picks = np.random.default_rng([seed, 4]).choice(total, size=min(m, total), replace=False)
    out = []
    for flat in picks:
        values = {}
        rest = int(flat)
        for key in reversed(keys):
            rest, j = divmod(rest, len(grid[key]))
            values[key] = grid[key][j]
        out.append(replace(base, **values))
    return out


def rung_sizes(m: int) -> list[int]:
    """Survivor counts per rung: m, ceil(m/3), ... down to 1."""
    sizes = [m]
    while sizes[-1] > 1:
        sizes.append(math.ceil(sizes[-1] / KEEP_FRACTION))
    return sizes


def hyperparameter_search(data: ScaledSamples, grid: dict | None = None, budget: int = 9, *, seed: int = 0,
                          kind: str = "penn", folds: int = 3, min_epochs: int = 20,
                          base: nn.MlpConfig | None = None, scaling=None,
                          evaluate: Callable | None = None) -> tuple[nn.MlpConfig, list]:
    """Single successive-halving bracket over ``budget`` sampled configurations.

    Every rung scores its configurations by mean CV held-out viscosity loss
    with an epoch cap that grows threefold per rung, keeping the best third.
    ``evaluate(config, epochs) -> score`` overrides the CV scoring.

    Returns the winning configuration and a list of per-trial records.
    """
    grid = nn.GRID if grid is None else grid
    if budget < 1:
        raise ValueError("budget must be >= 1")
    configs = sample_configs(grid, budget, seed, base)
    if evaluate is None:
        def evaluate(cfg, epochs):
            return cross_validate(data, cfg, kind, folds, seed=seed, max_epochs=epochs, scaling=scaling).mean

    history = []
    alive = list(range(len(configs)))
    epochs = min_epochs
    for rung, keep in enumerate(rung_sizes(len(configs))[1:] or [1]):
        scores = {}
        for i in alive:
            scores[i] = float(evaluate(configs[i], epochs)) if len(configs) > 1 else math.nan
            history.append({"rung": rung, "epochs": epochs, "trial": i, "score": scores[i],
                            "config": {k: getattr(configs[i], k) for k in grid}})
        # stable ordering: score, then sampling order
        alive = sorted(alive, key=lambda i: (scores[i], i))[:keep]
        log.info("rung %d (%d epochs): kept %d of %d", rung, epochs, len(alive), len(scores))
        epochs *= EPOCH_GROWTH
    return configs[alive[0]], history
