"""Differentiable viscosity graph.

Every function here works on Python floats or on numpy arrays that
broadcast against each other, so the same code evaluates one
(conditions, params) pair or a whole training batch.  All logarithms are
base 10 and all quantities are in whatever coordinate system the caller
uses consistently (scaled graph units during training, physical units in
the synthetic generator).

The graph is::

    log_eta_mw = H(Mcr - Mw) * [k1 + a1*Mw] + H(Mw - Mcr) * [k1 + (a1 - a2)*Mcr + a2*Mw]
    log_eta0   = log_eta_mw - C1*(T - Tr) / (C2 + T - Tr)
    log_eta    = H(gcr - g) * log_eta0 + H(g - gcr) * [log_eta0 + (n - 1)*(g - gcr)]

with ``H`` the logistic step, using ``beta_Mw`` for the molecular-weight
switch and ``beta_g`` for the shear switch.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from .errors import DenominatorTooSmall

#: Parameter order used by every vector view of :class:`EmpiricalParams`.
PARAM_NAMES = (
    "log_k1",
    "alpha1",
    "alpha2",
    "log_Mcr",
    "beta_Mw",
    "C1",
    "C2",
    "Tr",
    "n",
    "log_gcr",
    "beta_g",
)
N_PARAMS = len(PARAM_NAMES)
N_RAW = N_PARAMS - 1  # beta_g is a constant, not a network output
COND_NAMES = ("log_Mw", "T", "log_g")

#: Open bounding intervals for the learned parameters, scaled graph units.
PARAM_BOUNDS = {
    "log_k1": (-1.5, 0.5),
    "alpha1": (0.0, 3.0),
    "alpha2": (0.0, 6.0),
    "log_Mcr": (-1.0, 1.0),
    "beta_Mw": (20.0, 50.0),
    "C1": (0.0, 2.0),
    "C2": (0.0, 2.0),
    "Tr": (-1.5, 1.0),
    "n": (0.0, 1.0),
    "log_gcr": (-1.0, 1.0),
}
BETA_SHEAR = 30.0
EPS_DENOM = 1e-6

_LO = np.array([PARAM_BOUNDS[k][0] for k in PARAM_NAMES[:N_RAW]])
_HI = np.array([PARAM_BOUNDS[k][1] for k in PARAM_NAMES[:N_RAW]])
# expit(+-30) is still distinguishable from 0/1 after the affine map, so the
# bounded values stay strictly inside their open intervals.
_RAW_CLIP = 30.0


@dataclass(frozen=True)
class EmpiricalParams:
    """The eleven physics parameters.

    Fields may be scalars or equally-shaped arrays (one entry per sample).
    """

    log_k1: float
    alpha1: float
    alpha2: float
    log_Mcr: float
    beta_Mw: float
    C1: float
    C2: float
    Tr: float
    n: float
    log_gcr: float
    beta_g: float = BETA_SHEAR

    def to_vector(self) -> np.ndarray:
        """Stack fields along the last axis, shape ``(..., 11)``."""
        return np.stack(
            np.broadcast_arrays(*(np.asarray(getattr(self, k), dtype=float) for k in PARAM_NAMES)),
            axis=-1,
        )

    @classmethod
    def from_vector(cls, vec) -> "EmpiricalParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape[-1] != N_PARAMS:
            raise ValueError(f"expected trailing dimension {N_PARAMS}, got {vec.shape}")
        vals = [vec[..., i] for i in range(N_PARAMS)]
        if vec.ndim == 1:
            vals = [float(v) for v in vals]
        return cls(*vals)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def violations(self) -> list[str]:
        """Return the names of fields breaking the bounding invariants."""
        bad = []
        for name in PARAM_NAMES:
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(v)):
                bad.append(name)
                continue
            if name == "beta_g":
                if not np.all(v == BETA_SHEAR):
                    bad.append(name)
                continue
            lo, hi = PARAM_BOUNDS[name]
            if not (np.all(v > lo) and np.all(v < hi)):
                bad.append(name)
        return bad


@dataclass(frozen=True)
class PhysicalConditions:
    """Molecular weight, temperature and shear rate in graph coordinates."""

    log_Mw: float
    T: float
    log_g: float

    def to_vector(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(*(np.asarray(getattr(self, k), dtype=float) for k in COND_NAMES)), axis=-1)

    @classmethod
    def from_vector(cls, vec) -> "PhysicalConditions":
        vec = np.asarray(vec, dtype=float)
        if vec.ndim == 1:
            return cls(float(vec[0]), float(vec[1]), float(vec[2]))
        return cls(vec[..., 0], vec[..., 1], vec[..., 2])


def smooth_heaviside(x, beta):
    """Logistic step ``1 / (1 + exp(-beta * x))``; saturates to exactly 0 or 1."""
    return expit(np.multiply(beta, x))


def log_eta_mw(log_Mw, p: EmpiricalParams):
    """Zero-shear viscosity at the reference temperature versus molecular weight."""
    low = p.log_k1 + p.alpha1 * log_Mw
    high = p.log_k1 + (p.alpha1 - p.alpha2) * p.log_Mcr + p.alpha2 * log_Mw
    return (
        smooth_heaviside(p.log_Mcr - log_Mw, p.beta_Mw) * low
        + smooth_heaviside(log_Mw - p.log_Mcr, p.beta_Mw) * high
    )


def _wlf_denominator(T, p, strict):
    denom = p.C2 + (T - p.Tr)
    small = np.asarray(denom) <= EPS_DENOM
    if np.any(small):
        if strict:
            raise DenominatorTooSmall(
                f"C2 + (T - Tr) <= {EPS_DENOM} for {int(np.count_nonzero(small))} point(s); "
                "temperature lies outside the WLF validity window"
            )
        denom = np.where(small, EPS_DENOM, denom)
    return denom, small


def wlf_log_shift(T, p: EmpiricalParams, *, strict: bool = True):
    """WLF shift ``-C1 (T - Tr) / (C2 + T - Tr)`` in log10 units.

    With ``strict=False`` denominators at or below ``EPS_DENOM`` are clamped
    instead of raising; the training loop uses this so that one runaway
    batch cannot abort a run.
    """
    denom, _ = _wlf_denominator(T, p, strict)
    return -p.C1 * (T - p.Tr) / denom


def log_eta0(log_Mw, T, p: EmpiricalParams, *, strict: bool = True):
    """Zero-shear viscosity: molecular-weight law plus the WLF shift."""
    return log_eta_mw(log_Mw, p) + wlf_log_shift(T, p, strict=strict)


def log_eta(cond: PhysicalConditions, p: EmpiricalParams, *, strict: bool = True):
    """Full viscosity graph."""
    eta0 = log_eta0(cond.log_Mw, cond.T, p, strict=strict)
    v = cond.log_g - p.log_gcr
    return (
        smooth_heaviside(-v, p.beta_g) * eta0
        + smooth_heaviside(v, p.beta_g) * (eta0 + (p.n - 1.0) * v)
    )


def log_eta_with_grad(cond: PhysicalConditions, p: EmpiricalParams, *, strict: bool = True):
    """Evaluate :func:`log_eta` with closed-form partial derivatives.

    Returns
    -------
    value : float or ndarray
    grad_params : ndarray, shape (..., 11)
        Derivatives in ``PARAM_NAMES`` order.
    grad_cond : ndarray, shape (..., 3)
        Derivatives in ``COND_NAMES`` order.
    """
    L, T, g = cond.log_Mw, cond.T, cond.log_g

    # molecular-weight law; high - low == (a1 - a2) * u
    u = p.log_Mcr - L
    h_low = smooth_heaviside(u, p.beta_Mw)
    h_high = smooth_heaviside(-u, p.beta_Mw)
    s_mw = h_low * h_high
    da = p.alpha1 - p.alpha2
    mw = log_eta_mw(L, p)
    d_mw_k1 = np.ones_like(np.asarray(mw, dtype=float))
    d_mw_a1 = L + h_high * u
    d_mw_a2 = -h_high * u
    d_mw_mcr = da * (h_high - p.beta_Mw * s_mw * u)
    d_mw_beta = -da * s_mw * u * u
    d_mw_L = p.alpha1 + da * (p.beta_Mw * s_mw * u - h_high)

    # WLF shift
    dT = T - p.Tr
    denom, clamped = _wlf_denominator(T, p, strict)
    shift = -p.C1 * dT / denom
    d_sh_c1 = -dT / denom
    d_sh_c2 = np.where(clamped, 0.0, p.C1 * dT / denom**2)
    d_sh_T = np.where(clamped, -p.C1 / denom, -p.C1 * p.C2 / denom**2)
    d_sh_tr = -d_sh_T

    eta0 = mw + shift

    # shear law; value == eta0 + H(v) (n - 1) v
    v = g - p.log_gcr
    h_v = smooth_heaviside(v, p.beta_g)
    s_v = h_v * smooth_heaviside(-v, p.beta_g)
    value = smooth_heaviside(-v, p.beta_g) * eta0 + h_v * (eta0 + (p.n - 1.0) * v)
    d_v = (p.n - 1.0) * (h_v + p.beta_g * s_v * v)
    d_n = h_v * v
    d_beta_g = (p.n - 1.0) * s_v * v * v

    grad_params = np.stack(
        np.broadcast_arrays(
            d_mw_k1, d_mw_a1, d_mw_a2, d_mw_mcr, d_mw_beta,
            d_sh_c1, d_sh_c2, d_sh_tr,
            d_n, -d_v, d_beta_g,
        ),
        axis=-1,
    )
    grad_cond = np.stack(np.broadcast_arrays(d_mw_L, d_sh_T, d_v), axis=-1)
    if np.ndim(value) == 0:
        value = float(value)
    return value, grad_params, grad_cond


def bound_params(raw) -> EmpiricalParams:
    """Map 10 unconstrained network outputs into the bounding intervals.

    Each entry goes through ``lo + (hi - lo) * sigmoid(raw)``; ``beta_g`` is
    appended as the constant 30.  ``raw`` may be ``(10,)`` or ``(n, 10)``.
    """
    return EmpiricalParams.from_vector(_bounded_vector(raw))


def _bounded_vector(raw):
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != N_RAW:
        raise ValueError(f"expected {N_RAW} raw outputs, got shape {raw.shape}")
    sig = expit(np.clip(raw, -_RAW_CLIP, _RAW_CLIP))
    vals = _LO + (_HI - _LO) * sig
    beta = np.full(raw.shape[:-1] + (1,), BETA_SHEAR)
    return np.concatenate([vals, beta], axis=-1)


def bound_params_jacobian(raw) -> np.ndarray:
    """Diagonal of d(bounded)/d(raw), shape like ``raw``."""
    raw = np.asarray(raw, dtype=float)
    sig = expit(np.clip(raw, -_RAW_CLIP, _RAW_CLIP))
    inside = np.abs(raw) < _RAW_CLIP
    return np.where(inside, (_HI - _LO) * sig * (1.0 - sig), 0.0)


def exact_log_eta_mw(log_Mw, log_k1, alpha1, alpha2, log_Mcr):
    """Unsmoothed two-branch molecular-weight law (branch switch at Mcr)."""
    log_Mw = np.asarray(log_Mw, dtype=float)
    low = log_k1 + alpha1 * log_Mw
    high = log_k1 + (alpha1 - alpha2) * log_Mcr + alpha2 * log_Mw
    return np.where(log_Mw < log_Mcr, low, high)


def exact_shear_law(log_g, log_eta0, n, log_gcr):
    """Unsmoothed zero-shear / power-law shear law."""
    log_g = np.asarray(log_g, dtype=float)
    return np.where(log_g <= log_gcr, log_eta0, log_eta0 + (n - 1.0) * (log_g - log_gcr))
