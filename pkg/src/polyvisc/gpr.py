"""Exact Gaussian process regression baseline.

Zero-mean GP with kernel ``constant_value * exp(-|x - x'|^2 / (2 l^2))`` and
homoscedastic noise ``alpha`` on the diagonal.  Inputs are the same scaled
features the ANN consumes (fingerprint, PDI, conditions) and the target is
the scaled log-viscosity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial.distance import cdist

from .data import ScaledSamples, ScalingSpec, apply_scaling
from .errors import DimensionMismatch, EmptyInput, NotPositiveDefinite, PolyviscError, TooFewSamples

log = logging.getLogger(__name__)

RANGES = {
    "alpha": (1e-2, 1e1),
    "length_scale": (1e-2, 1e2),
    "constant_value": (1e-2, 1e2),
}
_FULL_CHECK_MAX_N = 600
_CHECK_COLUMNS = 64


@dataclass(frozen=True)
class GprHyperparams:
    alpha: float = 1e-2
    length_scale: float = 1.0
    constant_value: float = 1.0

    def in_ranges(self) -> bool:
        return all(lo <= getattr(self, k) <= hi for k, (lo, hi) in RANGES.items())

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "length_scale": self.length_scale, "constant_value": self.constant_value}


@dataclass
class GprModel:
    X: np.ndarray
    L: np.ndarray  # lower Cholesky factor of K + alpha I
    weights: np.ndarray  # (K + alpha I)^-1 y
    hp: GprHyperparams
    scaling: ScalingSpec | None = None
    kind: str = "gpr"
    seed: int = 0
    search_log: list = field(default_factory=list)

    @property
    def input_width(self) -> int:
        return self.X.shape[1]


def rbf_kernel(A, B, hp: GprHyperparams) -> np.ndarray:
    d2 = cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")
    return hp.constant_value * np.exp(-0.5 * d2 / hp.length_scale**2)


def _factor(X, hp, seed=0):
    n = X.shape[0]
    A = rbf_kernel(X, X, hp)
    A[np.diag_indices(n)] += hp.alpha
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"K + alpha I is not positive definite ({hp})") from exc
    # reconstruction check; sampled columns for large n
    cols = np.arange(n) if n <= _FULL_CHECK_MAX_N else np.random.default_rng(seed).choice(n, _CHECK_COLUMNS, replace=False)
    resid = np.max(np.abs(L @ L[cols].T - A[:, cols]))
    if not resid < 1e-8 * n:
        raise NotPositiveDefinite(f"Cholesky residual {resid:.3g} exceeds {1e-8 * n:.3g}")
    return L


def gpr_fit(X, y, hp: GprHyperparams, *, scaling=None, seed: int = 0) -> GprModel:
    """Factor ``K + alpha I`` and solve for the dual weights.

    Raises
    ------
    NotPositiveDefinite
        The regularised kernel matrix could not be factored accurately.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise EmptyInput("GPR needs at least one training point")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} inputs but {y.shape[0]} targets")
    L = _factor(X, hp, seed)
    w = cho_solve((L, True), y)
    return GprModel(X, L, w, hp, scaling, seed=seed)


def gpr_predict(model: GprModel, Xs) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and (noise-free) variance at ``Xs``."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    if Xs.shape[1] != model.input_width:
        raise DimensionMismatch(f"model expects {model.input_width} features, got {Xs.shape[1]}")
    Ks = rbf_kernel(model.X, Xs, model.hp)
    mean = Ks.T @ model.weights
    v = solve_triangular(model.L, Ks, lower=True)
    var = model.hp.constant_value - np.sum(v * v, axis=0)
    return mean, np.where(var < 1e-12, np.maximum(var, 0.0), var)


def predict(model: GprModel, samples) -> np.ndarray:
    """log10 viscosity in physical units for raw samples."""
    X, _ = apply_scaling(model.scaling, samples).features("gpr")
    return model.scaling.unscale_log_eta(gpr_predict(model, X)[0])


def propose(rng: np.random.Generator) -> GprHyperparams:
    """Log-uniform draw over :data:`RANGES`."""
    vals = {k: float(10.0 ** rng.uniform(math.log10(lo), math.log10(hi))) for k, (lo, hi) in RANGES.items()}
    return GprHyperparams(**vals)


def cv_ome(X, y, hp: GprHyperparams, folds: int, seed: int, *, scale: float = 1.0) -> float:
    """k-fold held-out mean absolute error, multiplied by ``scale``."""
    n = len(y)
    if n < folds:
        raise TooFewSamples(f"{n} samples cannot fill {folds} folds")
    parts = np.array_split(np.random.default_rng(seed).permutation(n), folds)
    err = 0.0
    for k, test in enumerate(parts):
        train = np.concatenate([p for j, p in enumerate(parts) if j != k])
        m = gpr_fit(X[train], y[train], hp)
        err += np.sum(np.abs(gpr_predict(m, X[test])[0] - y[test]))
    return scale * err / n


def gpr_search(data: ScaledSamples, iterations: int = 50, *, seed: int = 0, folds: int = 10,
               scaling: ScalingSpec | None = None) -> tuple[GprHyperparams, list]:
    """Seeded log-uniform random search scored by k-fold CV OME.

    Scores are in log10 units when ``scaling`` is given, else in scaled units.
    Proposals whose fit fails are skipped and logged.  Returns the best
    hyperparameters and the per-trial log.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    X, _ = data.features("gpr")
    y = data.y
    scale = 1.0 if scaling is None else 0.5 * (scaling.log_eta[1] - scaling.log_eta[0])
    rng = np.random.default_rng([seed, 2])
    trials = []
    best, best_score = None, math.inf
    for i in range(iterations):
        hp = propose(rng)
        try:
            score = cv_ome(X, y, hp, folds, seed, scale=scale)
        except PolyviscError as exc:
            log.info("GPR trial %d skipped: %s", i, exc)
            trials.append({"trial": i, **hp.as_dict(), "cv_ome": None})
            continue
        trials.append({"trial": i, **hp.as_dict(), "cv_ome": score})
        if score < best_score:
            best, best_score = hp, score
    if best is None:
        raise NotPositiveDefinite("every GPR proposal failed to fit")
    return best, trials


def train_gpr(train_set: ScaledSamples, hp: GprHyperparams, *, scaling=None, seed: int = 0) -> GprModel:
    X, _ = train_set.features("gpr")
    return gpr_fit(X, train_set.y, hp, scaling=scaling, seed=seed)


def model_to_dict(model: GprModel) -> dict:
    return {
        "format": "polyvisc-model",
        "version": 1,
        "kind": "gpr",
        "seed": model.seed,
        "hyperparams": model.hp.as_dict(),
        "layer_dims": [model.input_width],
        "X": model.X.tolist(),
        "dual_weights": model.weights.tolist(),
        "scaling": None if model.scaling is None else model.scaling.to_dict(),
        "search_log": model.search_log,
    }


def model_from_dict(d: dict) -> GprModel:
    X = np.array(d["X"], dtype=float).reshape(-1, d["layer_dims"][0])
    w = np.array(d["dual_weights"], dtype=float)
    if w.shape != (X.shape[0],):
        raise DimensionMismatch(f"{X.shape[0]} training rows but {w.shape} dual weights")
    hp = GprHyperparams(**d["hyperparams"])
    seed = int(d.get("seed", 0))
    scaling = None if d.get("scaling") is None else ScalingSpec.from_dict(d["scaling"])
    return GprModel(X, _factor(X, hp, seed), w, hp, scaling, seed=seed, search_log=list(d.get("search_log", [])))
