"""Metrics, physical-variable splits, extrapolation sweeps and reports.

Sweep curves are expressed in the coordinate each law is fitted in: log10
Mw, log10 shear rate (with the same 1e-5 offset as the models), or kelvin.
All parameter comparisons happen in physical units.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import curvefit, models, nn
from .curvefit import MW_LAW, SHEAR_LAW, TEMP_LAW, FitResult
from .data import PolymerSample, log_shear
from .errors import (
    DenominatorTooSmall,
    EmptyInput,
    EmptySamples,
    LengthMismatch,
    PolyviscError,
    TooFewMonomers,
    ValidationError,
    ZeroVariance,
)
from .physics import EmpiricalParams, PhysicalConditions, log_eta

log = logging.getLogger(__name__)

VARIABLES = ("Mw", "shear", "T")
_ALIASES = {"mw": "Mw", "Mw": "Mw", "shear": "shear", "T": "T", "t": "T", "temp": "T"}
LAW_FOR = {"Mw": MW_LAW, "shear": SHEAR_LAW, "T": TEMP_LAW}
#: physical parameters whose distributions are compared for each sweep variable
DIST_PARAMS = {"Mw": ("alpha1", "alpha2", "log_Mcr"), "shear": ("n", "log_gcr"), "T": ("C1", "C2")}
#: position of each compared parameter in the corresponding curve-fit vector
_FIT_INDEX = {"alpha1": 1, "alpha2": 2, "log_Mcr": 3, "n": 1, "log_gcr": 2, "C1": 1, "C2": 2}

THETA_ACC = 1.0
THETA_FIT = 0.15
KL_BINS = 20
KL_EPS = 1e-10
MIN_MONOMERS = 10
TEST_FRACTION = 0.1

SUCCESS = "Success"
WRONG_TREND = "FitButWrongTrend"
FAIL = "Fail"
OUTCOMES = (SUCCESS, WRONG_TREND, FAIL)


def canonical_variable(variable: str) -> str:
    try:
        return _ALIASES[variable]
    except KeyError:
        raise ValidationError(f"unknown split variable {variable!r}; expected one of {VARIABLES}") from None


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _paired(pred, true):
    pred = np.asarray(pred, dtype=float).ravel()
    true = np.asarray(true, dtype=float).ravel()
    if pred.shape != true.shape:
        raise LengthMismatch(f"{pred.size} predictions for {true.size} targets")
    if pred.size == 0:
        raise EmptyInput("metric over empty input")
    return pred, true


def ome(pred, true) -> float:
    """Order-of-magnitude error: mean |pred - true| of log10 viscosities."""
    pred, true = _paired(pred, true)
    return float(np.mean(np.abs(pred - true)))


def r_squared(pred, true) -> float:
    pred, true = _paired(pred, true)
    ss_tot = float(np.sum((true - true.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance("R^2 undefined: all true values are equal")
    return 1.0 - float(np.sum((pred - true) ** 2)) / ss_tot


def kl_divergence(samples_p, samples_q, bins: int = KL_BINS) -> float:
    """Histogram estimate of KL(P || Q) on shared bins.

    Bins span the union range of both sample sets; each normalized histogram
    gets ``1e-10`` added per bin and is renormalized, so the result is always
    finite.  Non-finite samples are ignored.
    """
    p = np.asarray(samples_p, dtype=float).ravel()
    q = np.asarray(samples_q, dtype=float).ravel()
    p, q = p[np.isfinite(p)], q[np.isfinite(q)]
    if p.size == 0 or q.size == 0:
        raise EmptySamples("KL divergence needs two non-empty sample sets")
    lo = min(p.min(), q.min())
    hi = max(p.max(), q.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    hp = _smoothed_hist(p, edges)
    hq = _smoothed_hist(q, edges)
    return float(max(0.0, np.sum(hp * np.log(hp / hq))))


def _smoothed_hist(x, edges):
    h = np.histogram(x, bins=edges)[0].astype(float)
    h /= h.sum()
    h += KL_EPS
    return h / h.sum()


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def variable_value(s: PolymerSample, variable: str) -> float:
    variable = canonical_variable(variable)
    if variable == "Mw":
        return s.log_mw
    if variable == "shear":
        return float(s.log_shear)
    return s.temp


@dataclass(frozen=True)
class SplitPlan:
    variable: str  # "Mw", "shear", "T" or "random"
    seed: int
    train_ids: tuple
    test_ids: tuple
    medians: dict = field(default_factory=dict)  # test monomer -> median of the variable
    sides: dict = field(default_factory=dict)  # test monomer -> "lower" | "upper" (side sent to test)

    @property
    def test_monomers(self) -> tuple:
        return tuple(sorted(self.sides))

    def apply(self, samples: Sequence[PolymerSample]) -> tuple[list, list]:
        train, test = set(self.train_ids), set(self.test_ids)
        return [s for s in samples if s.record_id in train], [s for s in samples if s.record_id in test]

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "seed": self.seed,
            "train_ids": list(self.train_ids),
            "test_ids": list(self.test_ids),
            "medians": self.medians,
            "sides": self.sides,
        }

    @classmethod
    def from_dict(cls, d) -> "SplitPlan":
        return cls(d["variable"], int(d["seed"]), tuple(d["train_ids"]), tuple(d["test_ids"]),
                   dict(d.get("medians", {})), dict(d.get("sides", {})))


def _by_chemistry(samples):
    groups: dict = {}
    for s in samples:
        groups.setdefault(s.chemistry, []).append(s)
    return groups


def physical_split(samples: Sequence[PolymerSample], variable: str, seed: int, *,
                   test_fraction: float = TEST_FRACTION) -> SplitPlan:
    """Hold out one side of each test monomer's median in ``variable``.

    A seeded tenth of the monomers is drawn for testing.  For each, records
    strictly above the monomer's median go to the upper side and the rest
    (ties included) to the lower side; a seeded coin picks which side is
    tested, and the other side trains.  Every other monomer trains in full.

    Raises
    ------
    TooFewMonomers
        Fewer than ten distinct chemistries.
    """
    variable = canonical_variable(variable)
    groups = _by_chemistry(samples)
    monomers = sorted(groups)
    if len(monomers) < MIN_MONOMERS:
        raise TooFewMonomers(f"physical split needs >= {MIN_MONOMERS} monomers, got {len(monomers)}")
    rng = np.random.default_rng([seed, 5])
    n_test = max(1, int(round(test_fraction * len(monomers))))
    chosen = sorted(rng.choice(len(monomers), size=n_test, replace=False).tolist())
    test_set = {monomers[i] for i in chosen}
    train_ids, test_ids, medians, sides = [], [], {}, {}
    for chem in monomers:
        recs = groups[chem]
        if chem not in test_set:
            train_ids.extend(s.record_id for s in recs)
            continue
        values = np.array([variable_value(s, variable) for s in recs])
        med = float(np.median(values))
        side = "upper" if rng.random() < 0.5 else "lower"
        medians[chem], sides[chem] = med, side
        for s, v in zip(recs, values):
            upper = v > med
            (test_ids if upper == (side == "upper") else train_ids).append(s.record_id)
    return SplitPlan(variable, seed, tuple(train_ids), tuple(test_ids), medians, sides)


def random_split(samples: Sequence[PolymerSample], seed: int, *, test_fraction: float = TEST_FRACTION) -> SplitPlan:
    """Uniformly random record-level split (interpolative baseline)."""
    if not samples:
        raise EmptyInput("cannot split an empty dataset")
    n = len(samples)
    order = np.random.default_rng([seed, 6]).permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    test = set(order[:n_test].tolist())
    ids = [s.record_id for s in samples]
    return SplitPlan("random", seed, tuple(i for k, i in enumerate(ids) if k not in test),
                     tuple(i for k, i in enumerate(ids) if k in test))


def check_plan(plan: SplitPlan, samples: Sequence[PolymerSample]) -> None:
    """Raise ValidationError if ``plan`` breaks its invariants on ``samples``."""
    train, test = set(plan.train_ids), set(plan.test_ids)
    if train & test:
        raise ValidationError("train and test record ids overlap")
    if plan.variable == "random":
        return
    for s in samples:
        if s.record_id not in test:
            continue
        chem = s.chemistry
        if chem not in plan.sides:
            raise ValidationError(f"test record {s.record_id} belongs to a training monomer")
        upper = variable_value(s, plan.variable) > plan.medians[chem]
        if upper != (plan.sides[chem] == "upper"):
            raise ValidationError(f"test record {s.record_id} lies on the training side of its median")


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

MW_RANGE = (1e2, 1e7)
SHEAR_RANGE = (1e-5, 1e6)
T_HALF_WIDTH = 20.0


@dataclass(frozen=True)
class SweepSpec:
    """A grid over one physical variable (g/mol, 1/s or K) with the others held."""

    variable: str
    grid: np.ndarray
    fixed: dict  # mw, temp, shear of the base sample

    def __post_init__(self):
        variable = canonical_variable(self.variable)
        object.__setattr__(self, "variable", variable)
        g = np.asarray(self.grid, dtype=float)
        if g.size == 0:
            raise EmptyInput("sweep grid is empty")
        tol = 1e-9
        if variable == "Mw":
            ok = g.min() >= MW_RANGE[0] * (1 - tol) and g.max() <= MW_RANGE[1] * (1 + tol)
        elif variable == "shear":
            ok = g.min() >= SHEAR_RANGE[0] * (1 - tol) and g.max() <= SHEAR_RANGE[1] * (1 + tol)
        else:
            t0 = self.fixed["temp"]
            ok = g.min() >= t0 - T_HALF_WIDTH - tol and g.max() <= t0 + T_HALF_WIDTH + tol
        if not ok:
            raise ValidationError(f"{variable} sweep grid leaves its allowed range")
        object.__setattr__(self, "grid", g)

    @property
    def x(self) -> np.ndarray:
        """Grid in the fitting coordinate."""
        if self.variable == "Mw":
            return np.log10(self.grid)
        if self.variable == "shear":
            return np.asarray(log_shear(self.grid))
        return self.grid


def default_sweep(variable: str, base: PolymerSample, n: int = 101) -> SweepSpec:
    variable = canonical_variable(variable)
    fixed = {"mw": base.mw, "temp": base.temp, "shear": base.shear}
    if variable == "Mw":
        grid = np.logspace(math.log10(MW_RANGE[0]), math.log10(MW_RANGE[1]), n)
    elif variable == "shear":
        grid = np.logspace(math.log10(SHEAR_RANGE[0]), math.log10(SHEAR_RANGE[1]), n)
    else:
        grid = np.linspace(base.temp - T_HALF_WIDTH, base.temp + T_HALF_WIDTH, n)
    return SweepSpec(variable, grid, fixed)


def sweep_samples(base: PolymerSample, spec: SweepSpec) -> list[PolymerSample]:
    key = {"Mw": "mw", "shear": "shear", "T": "temp"}[spec.variable]
    return [replace(base, **{key: float(v)}) for v in spec.grid]


@dataclass
class CurveTable:
    record_id: str
    chemistry: str
    variable: str
    grid: np.ndarray  # physical grid values
    x: np.ndarray  # fitting coordinate
    pred: np.ndarray  # log10 viscosity, NaN where the model failed
    params: dict | None = None  # PENN parameters at the base sample, physical units
    true: np.ndarray | None = None

    def valid(self):
        ok = np.isfinite(self.pred)
        return self.x[ok], self.pred[ok]


def sweep_predict(model, base: PolymerSample, spec: SweepSpec, *, truth: EmpiricalParams | None = None) -> CurveTable:
    """Evaluate ``model`` along ``spec``; failing points become NaN gaps."""
    pts = sweep_samples(base, spec)
    try:
        pred = models.predict(model, pts)
    except DenominatorTooSmall:
        pred = np.empty(len(pts))
        for i, s in enumerate(pts):
            try:
                pred[i] = models.predict(model, [s])[0]
            except DenominatorTooSmall:
                pred[i] = np.nan
    params = None
    if model.kind == "penn":
        p = nn.predict_params(model, [base])
        params = {k: float(np.ravel(v)[0]) for k, v in model.scaling.params_to_physical(p).items()}
    true = None
    if truth is not None:
        true = np.array([true_log_eta(truth, s) for s in pts])
    return CurveTable(base.record_id, base.chemistry, spec.variable, spec.grid, spec.x, np.asarray(pred, dtype=float),
                      params, true)


def true_log_eta(truth: EmpiricalParams, s: PolymerSample) -> float:
    """Noise-free log10 viscosity of a synthetic chemistry with physical-unit parameters."""
    return float(log_eta(PhysicalConditions(s.log_mw, s.temp, float(s.log_shear)), truth, strict=False))


def estimate_params_from_sweep(curve: CurveTable, law: str | None = None) -> FitResult:
    """Fit the variable's law to a sweep curve (gaps dropped)."""
    law = law or LAW_FOR[curve.variable]
    x, y = curve.valid()
    return curvefit.fit(curvefit.FitProblem(law, np.column_stack([x, y])))


# ---------------------------------------------------------------------------
# extrapolation classifier
# ---------------------------------------------------------------------------


def trend_ok(curve: CurveTable, law: str, fit: FitResult | None, theta_fit: float = THETA_FIT) -> bool:
    if fit is None:
        return False
    p = fit.params
    if law == MW_LAW:
        a1, a2 = p[1], p[2]
        return bool(0.5 <= a1 <= 1.5 and 2.0 <= a2 <= 5.0 and a2 > a1)
    x, y = curve.valid()
    if law == SHEAR_LAW:
        low = x <= x.min() + 1.0
        if low.sum() < 2:
            return False
        slope = np.polyfit(x[low], y[low], 1)[0]
        return bool(0.2 <= p[1] <= 0.8 and abs(slope) < 0.05)
    # temperature: strictly decreasing and WLF-shaped
    return bool(np.all(np.diff(y) < 0) and fit.residual_rms < theta_fit)


def classify_extrapolation(curve: CurveTable, held_out, law: str | None = None, *, theta_acc: float = THETA_ACC,
                           theta_fit: float = THETA_FIT) -> tuple[str, dict]:
    """Label one sweep Success, FitButWrongTrend or Fail.

    ``held_out`` holds (x, log10 eta) pairs in the curve's fitting coordinate;
    the curve is linearly interpolated at their x.  Accuracy requires the
    held-out OME below ``theta_acc``; the law-specific trend test decides
    between the two accurate outcomes.
    """
    law = law or LAW_FOR[curve.variable]
    held = np.asarray(held_out, dtype=float).reshape(-1, 2)
    x, y = curve.valid()
    details: dict = {"held_out_ome": None, "fit": None, "trend": False}
    accurate = False
    if held.size and x.size >= 2:
        err = ome(np.interp(held[:, 0], x, y), held[:, 1])
        details["held_out_ome"] = err
        accurate = err < theta_acc
    fit = None
    try:
        fit = estimate_params_from_sweep(curve, law)
        details["fit"] = [float(v) for v in fit.params]
    except PolyviscError as exc:
        log.debug("sweep fit failed for %s: %s", curve.record_id, exc)
    details["trend"] = trend_ok(curve, law, fit, theta_fit)
    if not accurate:
        return FAIL, details
    return (SUCCESS if details["trend"] else WRONG_TREND), details


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


def _condition_key(s: PolymerSample, variable: str):
    held = {"Mw": (s.temp, s.shear), "shear": (s.mw, s.temp), "T": (s.mw, s.shear)}[variable]
    return (s.chemistry,) + tuple(float(f"{v:.9g}") for v in held)


def ground_truth_params(samples: Sequence[PolymerSample], variable: str, *, min_points: int = curvefit.MIN_POINTS):
    """Fit the variable's law on every chemistry subset with enough distinct points.

    Subsets share the chemistry and the two other conditions.  Returns
    ``{param: [values]}`` for :data:`DIST_PARAMS` of the variable.
    """
    variable = canonical_variable(variable)
    law = LAW_FOR[variable]
    groups: dict = {}
    for s in samples:
        groups.setdefault(_condition_key(s, variable), []).append(s)
    out = {k: [] for k in DIST_PARAMS[variable]}
    for key in sorted(groups):
        pts = curvefit.collapse_duplicates([(variable_value(s, variable), s.log_eta) for s in groups[key]])
        if len(pts) < min_points:
            continue
        try:
            r = curvefit.fit(curvefit.FitProblem(law, pts))
        except PolyviscError as exc:
            log.debug("ground-truth fit skipped for %s: %s", key, exc)
            continue
        for k in out:
            out[k].append(float(r.params[_FIT_INDEX[k]]))
    return out


# ---------------------------------------------------------------------------
# full protocol
# ---------------------------------------------------------------------------


def held_out_points(base: PolymerSample, test: Sequence[PolymerSample], variable: str) -> np.ndarray:
    """Test records of the base's chemistry that share its other two conditions."""
    key = _condition_key(base, variable)
    return np.array([(variable_value(s, variable), s.log_eta) for s in test if _condition_key(s, variable) == key])


def run_trial(named_models: Mapping[str, object], test: Sequence[PolymerSample], variable: str, *,
              truth: Mapping[str, EmpiricalParams] | None = None, theta_acc: float = THETA_ACC,
              theta_fit: float = THETA_FIT, n_grid: int = 101, label: str = "") -> dict:
    """Score every model on one test split and sweep each test record.

    Returns a JSON-ready dict with per-model OME, R^2, outcome tallies,
    parameter values and curve rows.
    """
    variable = canonical_variable(variable)
    if not test:
        raise EmptyInput("no test records")
    law = LAW_FOR[variable]
    true = np.array([s.log_eta for s in test])
    result = {"label": label, "variable": variable, "n_test": len(test), "models": {}}
    truth_vals = {k: [] for k in DIST_PARAMS[variable]}
    if truth is not None:
        for s in test:
            tp = truth[s.chemistry]
            for k in truth_vals:
                truth_vals[k].append(float(getattr(tp, k)))
        result["truth_params"] = truth_vals
    for name, model in named_models.items():
        pred = models.predict(model, test, strict=False)
        try:
            r2 = r_squared(pred, true)
        except ZeroVariance:
            r2 = None
        tallies = {o: 0 for o in OUTCOMES}
        params = {k: [] for k in DIST_PARAMS[variable]}
        curves = []
        for s in test:
            spec = default_sweep(variable, s, n_grid)
            curve = sweep_predict(model, s, spec, truth=None if truth is None else truth[s.chemistry])
            outcome, det = classify_extrapolation(curve, held_out_points(s, test, variable), law,
                                                  theta_acc=theta_acc, theta_fit=theta_fit)
            tallies[outcome] += 1
            for k in params:
                if curve.params is not None:
                    params[k].append(curve.params[k])
                elif det["fit"] is not None:
                    params[k].append(det["fit"][_FIT_INDEX[k]])
            curves.append({"record_id": s.record_id, "chemistry": s.chemistry, "outcome": outcome,
                           "held_out_ome": det["held_out_ome"], "grid": curve.grid.tolist(),
                           "pred": _nan_to_none(curve.pred),
                           "true": None if curve.true is None else _nan_to_none(curve.true)})
        result["models"][name] = {
            "kind": model.kind,
            "ome": ome(pred, true),
            "r_squared": r2,
            "tallies": tallies,
            "params": params,
            "curves": curves,
        }
    return result


def _nan_to_none(a):
    return [None if not math.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]


@dataclass
class EvaluationReport:
    variable: str
    thresholds: dict
    summary: dict  # model -> pooled ome, r_squared, tallies, success_rate
    trials: list
    distributions: dict  # "truth" and model names -> {param: [values]}
    kl: dict  # model -> {param: KL(model || truth)}

    def to_dict(self) -> dict:
        return {
            "format": "polyvisc-evaluation",
            "version": 1,
            "variable": self.variable,
            "thresholds": self.thresholds,
            "summary": self.summary,
            "distributions": self.distributions,
            "kl_per_parameter": self.kl,
            "trials": self.trials,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        if d.get("format") != "polyvisc-evaluation":
            raise ValidationError("not an evaluation report")
        return cls(d["variable"], d["thresholds"], d["summary"], d["trials"], d["distributions"],
                   d["kl_per_parameter"])


def build_report(trials: Sequence[dict], *, truth_distribution: dict | None = None, bins: int = KL_BINS,
                 theta_acc: float = THETA_ACC, theta_fit: float = THETA_FIT) -> EvaluationReport:
    """Pool trials into one report.

    The reference distribution is the trials' pooled ``truth_params`` when
    present, else ``truth_distribution`` (e.g. from :func:`ground_truth_params`).
    """
    if not trials:
        raise EmptyInput("no trials to report")
    variable = trials[0]["variable"]
    names = list(trials[0]["models"])
    dists: dict = {}
    if all("truth_params" in t for t in trials):
        dists["truth"] = {k: sum((t["truth_params"][k] for t in trials), []) for k in DIST_PARAMS[variable]}
    elif truth_distribution is not None:
        dists["truth"] = {k: list(v) for k, v in truth_distribution.items()}
    summary, kl = {}, {}
    for name in names:
        per = [t["models"][name] for t in trials]
        tallies = {o: sum(p["tallies"][o] for p in per) for o in OUTCOMES}
        total = sum(tallies.values())
        n = [t["n_test"] for t in trials]
        summary[name] = {
            "kind": per[0]["kind"],
            "ome": float(np.average([p["ome"] for p in per], weights=n)),
            "ome_per_trial": [p["ome"] for p in per],
            "r_squared_per_trial": [p["r_squared"] for p in per],
            "tallies": tallies,
            "sweeps": total,
            "success_rate": tallies[SUCCESS] / total if total else 0.0,
        }
        dists[name] = {k: sum((p["params"][k] for p in per), []) for k in DIST_PARAMS[variable]}
        if "truth" in dists:
            kl[name] = {}
            for k in DIST_PARAMS[variable]:
                try:
                    kl[name][k] = kl_divergence(dists[name][k], dists["truth"][k], bins)
                except EmptySamples:
                    kl[name][k] = None
    return EvaluationReport(variable, {"theta_acc": theta_acc, "theta_fit": theta_fit, "bins": bins}, summary,
                            list(trials), dists, kl)


CURVE_COLUMNS = ("model", "record_id", "variable", "grid_value", "pred_log10_eta", "true_log10_eta")


def curve_rows(report: EvaluationReport):
    """Flat rows for plotting, straight from the stored report (no model calls)."""
    for t in report.trials:
        for name, m in t["models"].items():
            for c in m["curves"]:
                true = c.get("true") or [None] * len(c["grid"])
                for g, p, tv in zip(c["grid"], c["pred"], true):
                    yield (name, c["record_id"], t["variable"], g, p, tv)


def write_curve_csv(report: EvaluationReport, path) -> int:
    n = 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for row in curve_rows(report):
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
        n += 1
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    return n
