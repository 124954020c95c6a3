"""Bounded nonlinear least-squares fits of the three viscosity laws.

Each law is fitted to (x, log10 eta) points in physical units: x is log10 Mw
for :data:`MW_LAW`, log10 shear rate for :data:`SHEAR_LAW` and temperature in
kelvin for :data:`TEMP_LAW`.  The solver is scipy's trust-region-reflective
least squares with analytic Jacobians, restarted from jittered initial
guesses; the best solution wins.

The temperature law ``e - C1 (T - Tr) / (C2 + T - Tr)`` only identifies three
combinations of its four parameters (``e - C1``, ``C1 C2`` and ``C2 - Tr``),
so a unique answer needs one of them held fixed through ``FitProblem.fixed``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit

from .errors import DidNotConverge, InvariantViolation, TooFewPoints, ValidationError
from .physics import BETA_SHEAR

log = logging.getLogger(__name__)

MW_LAW = "MwLaw"
SHEAR_LAW = "ShearLaw"
TEMP_LAW = "TempLaw"
LAWS = (MW_LAW, SHEAR_LAW, TEMP_LAW)

PARAMS = {
    MW_LAW: ("log_k1", "alpha1", "alpha2", "log_Mcr"),
    SHEAR_LAW: ("log_eta0", "n", "log_gcr"),
    TEMP_LAW: ("log_eta_mw", "C1", "C2", "Tr"),
}
MIN_POINTS = 5
WLF_C1 = 7.60
WLF_C2 = 227.3
N_RESTARTS = 3
MAX_NFEV = 500


# ---------------------------------------------------------------------------
# the laws and their Jacobians
# ---------------------------------------------------------------------------


def mw_law(x, p):
    k1, a1, a2, mcr = p
    x = np.asarray(x, dtype=float)
    return np.where(x < mcr, k1 + a1 * x, k1 + (a1 - a2) * mcr + a2 * x)


def _mw_jac(x, p):
    k1, a1, a2, mcr = p
    below = x < mcr
    J = np.empty((x.size, 4))
    J[:, 0] = 1.0
    J[:, 1] = np.where(below, x, mcr)
    J[:, 2] = np.where(below, 0.0, x - mcr)
    J[:, 3] = np.where(below, 0.0, a1 - a2)
    return J


def shear_law(x, p, beta=BETA_SHEAR):
    eta0, n, gcr = p
    d = np.asarray(x, dtype=float) - gcr
    return eta0 + expit(beta * d) * (n - 1.0) * d


def _shear_jac(x, p, beta=BETA_SHEAR):
    eta0, n, gcr = p
    d = x - gcr
    s = expit(beta * d)
    J = np.empty((x.size, 3))
    J[:, 0] = 1.0
    J[:, 1] = s * d
    J[:, 2] = (n - 1.0) * (-s - d * beta * s * (1.0 - s))
    return J


def temp_law(x, p):
    e, c1, c2, tr = p
    u = np.asarray(x, dtype=float) - tr
    return e - c1 * u / (c2 + u)


def _temp_jac(x, p):
    e, c1, c2, tr = p
    u = x - tr
    den = c2 + u
    J = np.empty((x.size, 4))
    J[:, 0] = 1.0
    J[:, 1] = -u / den
    J[:, 2] = c1 * u / den**2
    J[:, 3] = c1 * c2 / den**2
    return J


_MODEL = {MW_LAW: (mw_law, _mw_jac), SHEAR_LAW: (shear_law, _shear_jac), TEMP_LAW: (temp_law, _temp_jac)}


def evaluate(law: str, x, params) -> np.ndarray:
    """Value of ``law`` at ``x`` for a full parameter vector."""
    return _MODEL[_check_law(law)][0](np.asarray(x, dtype=float), np.asarray(params, dtype=float))


def _check_law(law):
    if law not in LAWS:
        raise ValidationError(f"unknown law {law!r}; expected one of {LAWS}")
    return law


# ---------------------------------------------------------------------------
# problem definition
# ---------------------------------------------------------------------------


def _as_points(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError(f"points must be (x, log_eta) pairs, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("points must be finite")
    return pts[np.argsort(pts[:, 0], kind="stable")]


def collapse_duplicates(points) -> np.ndarray:
    """Average log-viscosities that share an x value (replicate measurements)."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return pts.reshape(0, 2)
    xs, inv = np.unique(pts[:, 0], return_inverse=True)
    ys = np.bincount(inv, weights=pts[:, 1]) / np.bincount(inv)
    return np.column_stack([xs, ys])


def default_bounds(law: str, points) -> np.ndarray:
    """(n_params, 2) box used when a problem gives none."""
    pts = _as_points(points)
    x, y = pts[:, 0], pts[:, 1]
    x_lo, x_hi = float(x.min()), float(x.max())
    y_lo, y_hi = float(y.min()), float(y.max())
    if law == MW_LAW:
        return np.array([[-50.0, 50.0], [0.0, 3.0], [0.0, 8.0], [x_lo, x_hi]])
    if law == SHEAR_LAW:
        return np.array([[y_lo - 10.0, y_hi + 10.0], [0.0, 1.0], [x_lo - 1.0, x_hi + 1.0]])
    if law == TEMP_LAW:
        return np.array([[y_lo - 10.0, y_hi + 40.0], [0.1, 50.0], [1.0, 1000.0], [max(1.0, x_lo - 400.0), x_lo - 1e-3]])
    raise ValidationError(f"unknown law {law!r}")


def default_initial_guess(law: str, points) -> np.ndarray:
    """Physically motivated starting point for :func:`fit`.

    Raises
    ------
    TooFewPoints
        Fewer than five points.
    """
    pts = _as_points(points)
    if len(pts) < MIN_POINTS:
        raise TooFewPoints(f"{law} needs at least {MIN_POINTS} points, got {len(pts)}")
    x, y = pts[:, 0], pts[:, 1]
    _check_law(law)
    if law == MW_LAW:
        return np.array([y[0] - 1.0 * x[0], 1.0, 3.4, float(np.median(x))])
    if law == SHEAR_LAW:
        return np.array([float(y.max()), 0.5, float(np.median(x))])
    tr = float(x.min()) - 20.0
    plateau = float(y.max()) + WLF_C1 * 20.0 / (WLF_C2 + 20.0)
    return np.array([plateau, WLF_C1, WLF_C2, tr])


@dataclass(frozen=True)
class FitProblem:
    """One law fitted to one point set.

    ``fixed`` maps parameter names to values held constant during the fit
    (their bounds and guesses are ignored).
    """

    law: str
    points: np.ndarray
    initial_guess: np.ndarray | None = None
    bounds: np.ndarray | None = None
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_law(self.law)
        pts = _as_points(self.points)
        if len(pts) < MIN_POINTS:
            raise TooFewPoints(f"{self.law} needs at least {MIN_POINTS} points, got {len(pts)}")
        if np.any(np.diff(pts[:, 0]) <= 0):
            raise InvariantViolation(self.law, "x values must be distinct; collapse replicates first")
        object.__setattr__(self, "points", pts)
        names = PARAMS[self.law]
        unknown = set(self.fixed) - set(names)
        if unknown:
            raise ValidationError(f"unknown fixed parameter(s) {sorted(unknown)} for {self.law}")
        bounds = default_bounds(self.law, pts) if self.bounds is None else np.asarray(self.bounds, dtype=float)
        if bounds.shape != (len(names), 2) or np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ValidationError(f"bounds must be {len(names)} (lo, hi) pairs with lo < hi")
        object.__setattr__(self, "bounds", bounds)
        guess = default_initial_guess(self.law, pts) if self.initial_guess is None else self.initial_guess
        guess = np.asarray(guess, dtype=float).copy()
        if guess.shape != (len(names),):
            raise ValidationError(f"initial guess must have {len(names)} entries")
        for k, v in self.fixed.items():
            guess[names.index(k)] = float(v)
        object.__setattr__(self, "initial_guess", guess)

    @property
    def names(self) -> tuple:
        return PARAMS[self.law]

    @property
    def free(self) -> np.ndarray:
        return np.array([n not in self.fixed for n in self.names])


@dataclass(frozen=True)
class FitResult:
    params: np.ndarray
    residual_rms: float
    converged: bool
    iterations: int
    law: str = ""

    def as_dict(self) -> dict:
        return dict(zip(PARAMS[self.law], (float(v) for v in self.params))) if self.law else {}


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


def _interior(v, lo, hi):
    span = hi - lo
    return np.clip(v, lo + 1e-9 * span, hi - 1e-9 * span)


def _rms(r):
    return float(math.sqrt(np.mean(r * r)))


def fit(problem: FitProblem, *, seed: int = 0, raise_on_failure: bool = False) -> FitResult:
    """Least-squares fit of ``problem.law`` to ``problem.points``.

    Runs from the initial guess and ``N_RESTARTS`` jittered copies of it and
    keeps the lowest residual.  The result never fits worse than the initial
    guess itself.  ``converged`` is False when the best run hit the
    evaluation cap; with ``raise_on_failure`` that case raises
    :class:`DidNotConverge` carrying the best-so-far result as ``.result``.
    """
    f, jac = _MODEL[problem.law]
    x, y = problem.points[:, 0], problem.points[:, 1]
    free = problem.free
    full = problem.initial_guess.copy()
    lo, hi = problem.bounds[free, 0], problem.bounds[free, 1]

    def expand(q):
        p = full.copy()
        p[free] = q
        return p

    def resid(q):
        return f(x, expand(q)) - y

    def jacobian(q):
        return jac(x, expand(q))[:, free]

    g0 = full[free]
    r0 = resid(g0)
    best = (_rms(r0) if np.all(np.isfinite(r0)) else math.inf, g0, True, 0)
    if free.any():
        rng = np.random.default_rng(seed)
        starts = [_interior(g0, lo, hi)]
        for _ in range(N_RESTARTS):
            jitter = rng.normal(size=g0.size) * 0.1 * np.maximum(np.abs(g0), 1.0)
            starts.append(_interior(g0 + jitter, lo, hi))
        for x0 in starts:
            res = least_squares(resid, x0, jac=jacobian, bounds=(lo, hi), method="trf", xtol=1e-10,
                                ftol=1e-12, gtol=1e-12, max_nfev=MAX_NFEV, x_scale="jac")
            rms = _rms(res.fun)
            if rms < best[0]:
                best = (rms, res.x, res.status > 0, int(res.nfev))
    rms, q, converged, iters = best
    result = FitResult(expand(q), rms, bool(converged), iters, problem.law)
    if not converged:
        log.warning("%s fit hit the %d evaluation cap (rms %.3g)", problem.law, MAX_NFEV, rms)
        if raise_on_failure:
            err = DidNotConverge(f"{problem.law} fit did not converge within {MAX_NFEV} evaluations")
            err.result = result
            raise err
    return result


def fit_points(law: str, points, *, fixed=None, seed: int = 0) -> FitResult:
    """Convenience wrapper: collapse replicates, build the problem, fit."""
    return fit(FitProblem(law, collapse_duplicates(points), fixed=dict(fixed or {})), seed=seed)


def wlf_invariants(params) -> tuple[float, float, float]:
    """The identifiable combinations (e - C1, C1 C2, C2 - Tr) of a WLF fit."""
    e, c1, c2, tr = params
    return e - c1, c1 * c2, c2 - tr
