"""Dataset ingestion, fingerprint aggregation and the shared scaling layer.

CSV layout (UTF-8, header required)::

    record_id, kind, smiles_1..smiles_k, fraction_1..fraction_k,
    mw_gmol, pdi, temp_K, shear_1_per_s, viscosity, [fp_0..fp_d]

Rows sharing a ``record_id`` are constituent rows of one measurement and
are merged.  A single-row record's ``fp_*`` columns are taken as the
record's fingerprint; on multi-row records they are per-unit fingerprints
that get aggregated.  Without ``fp_*`` columns a hashed n-gram fingerprint
of each SMILES string is used.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateRange,
    EmptyDataset,
    EmptySmiles,
    InvariantViolation,
    MissingMcr,
    NonPositiveComponent,
    ParseError,
    TooFewPoints,
)
from .physics import EmpiricalParams

log = logging.getLogger(__name__)

KINDS = ("homopolymer", "copolymer", "blend")
MEDIAN_PDI = 2.06
SHEAR_OFFSET = 1e-5
FRACTION_TOL = 1e-6
FALLBACK_WIDTH = 128

REQUIRED_COLUMNS = ("record_id", "kind", "mw_gmol", "pdi", "temp_K", "shear_1_per_s", "viscosity")


@dataclass(frozen=True)
class Constituent:
    smiles: str
    fraction: float
    mw: float | None = None
    pdi: float | None = None


@dataclass(frozen=True)
class PolymerSample:
    """One viscosity measurement.

    ``pdi`` is ``None`` until :func:`impute_pdi` fills it.  ``log_eta`` is
    log10 of the melt viscosity.
    """

    record_id: str
    kind: str
    constituents: tuple[Constituent, ...]
    fingerprint: np.ndarray = field(repr=False, compare=False)
    mw: float
    pdi: float | None
    temp: float
    shear: float
    log_eta: float
    pdi_imputed: bool = False
    augmented: bool = False
    warnings: tuple[str, ...] = ()

    @property
    def chemistry(self) -> str:
        """Key identifying the repeat unit(s), independent of composition."""
        return "|".join(sorted({c.smiles for c in self.constituents}))

    @property
    def log_mw(self) -> float:
        return math.log10(self.mw)

    @property
    def log_shear(self) -> float:
        return log_shear(self.shear)


def log_shear(shear):
    """Shear-rate coordinate: ``log10(shear + 1e-5)`` so zero shear is finite."""
    return np.log10(np.asarray(shear, dtype=float) + SHEAR_OFFSET)


# ---------------------------------------------------------------------------
# fingerprints
# ---------------------------------------------------------------------------


def fallback_fingerprint(smiles: str, width: int = FALLBACK_WIDTH) -> np.ndarray:
    """Hashed character 2/3-gram counts, L2-normalized.

    Stand-in for real polymer descriptors; deterministic across processes.
    """
    if not smiles:
        raise EmptySmiles("SMILES string is empty")
    grams = [smiles[i : i + n] for n in (2, 3) for i in range(len(smiles) - n + 1)]
    if not grams:
        grams = [smiles]  # single character
    vec = np.zeros(width)
    for g in grams:
        h = int.from_bytes(hashlib.blake2b(g.encode("utf-8"), digest_size=8).digest(), "little")
        vec[h % width] += 1.0
    return vec / np.linalg.norm(vec)


def aggregate_fingerprint(fingerprints, weights, kind: str, *, strict: bool = False, return_fallback: bool = False):
    """Combine per-unit fingerprints into one vector.

    Copolymers (and homopolymers) use the weighted arithmetic mean.  Blends
    use the weighted harmonic mean on components that are positive in every
    unit; other components fall back to the arithmetic mean, unless
    ``strict`` is set, in which case :class:`NonPositiveComponent` is raised.

    With ``return_fallback=True`` also returns the boolean mask of
    components that fell back.
    """
    fps = np.atleast_2d(np.asarray(fingerprints, dtype=float))
    w = np.asarray(weights, dtype=float)
    if fps.shape[0] != w.shape[0]:
        raise ValueError("one weight per fingerprint required")
    w = w / w.sum()
    arith = w @ fps
    fallback = np.zeros(fps.shape[1], dtype=bool)
    if kind != "blend":
        out = arith
    else:
        positive = np.all(fps > 0, axis=0)
        fallback = ~positive
        if strict and fallback.any():
            raise NonPositiveComponent(
                f"{int(fallback.sum())} fingerprint component(s) are non-positive; harmonic mean undefined"
            )
        out = arith.copy()
        if positive.any():
            out[positive] = 1.0 / (w @ (1.0 / fps[:, positive]))
    if return_fallback:
        return out, fallback
    return out


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def _parse_float(text, line, column, *, allow_empty=False):
    text = (text or "").strip()
    if not text:
        if allow_empty:
            return None
        raise ParseError(line, column, "missing value")
    try:
        return float(text)
    except ValueError:
        raise ParseError(line, column, f"not a number: {text!r}") from None


def _numbered(header, prefix):
    out = []
    for name in header:
        if name.startswith(prefix) and name[len(prefix) :].isdigit():
            out.append((int(name[len(prefix) :]), name))
    return [name for _, name in sorted(out)]


def load_dataset(path, *, fallback_width: int = FALLBACK_WIDTH) -> list[PolymerSample]:
    """Parse and validate a dataset CSV.

    Raises
    ------
    EmptyDataset
        No header or no data rows.
    ParseError
        A cell could not be parsed (``line`` is 1-based, header is line 1).
    InvariantViolation
        A record breaks a data invariant.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise EmptyDataset(f"{path}: empty file")
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise ParseError(1, col, "required column missing from header")
        smiles_cols = _numbered(header, "smiles_")
        if not smiles_cols:
            raise ParseError(1, "smiles_1", "at least one smiles column required")
        fp_cols = _numbered(header, "fp_")

        groups: dict[str, list[tuple[int, dict]]] = {}
        for row in reader:
            line = reader.line_num
            rid = (row.get("record_id") or "").strip()
            if not rid:
                raise ParseError(line, "record_id", "missing value")
            groups.setdefault(rid, []).append((line, row))

    if not groups:
        raise EmptyDataset(f"{path}: no data rows")

    samples = [_build_record(rid, rows, smiles_cols, fp_cols, fallback_width) for rid, rows in groups.items()]
    widths = {s.fingerprint.shape[0] for s in samples}
    if len(widths) > 1:
        raise InvariantViolation(samples[0].record_id, f"fingerprint lengths differ across dataset: {sorted(widths)}")
    return samples


def _build_record(rid, rows, smiles_cols, fp_cols, fallback_width):
    units = []  # (constituents of the row, row fingerprint or None)
    scalars = []
    kinds = set()
    for line, row in rows:
        kinds.add((row.get("kind") or "").strip())
        constituents = []
        for col in smiles_cols:
            smi = (row.get(col) or "").strip()
            frac_col = "fraction_" + col.split("_", 1)[1]
            frac = _parse_float(row.get(frac_col), line, frac_col, allow_empty=True)
            if not smi:
                if frac not in (None, 0.0):
                    raise ParseError(line, frac_col, "fraction given without smiles")
                continue
            constituents.append([smi, frac])
        if not constituents:
            raise ParseError(line, smiles_cols[0], "no constituents on row")
        if len(constituents) == 1 and constituents[0][1] is None and len(rows) == 1:
            constituents[0][1] = 1.0
        for smi, frac in constituents:
            if frac is None:
                raise ParseError(line, "fraction", f"missing fraction for {smi!r}")
        mw = _parse_float(row["mw_gmol"], line, "mw_gmol")
        pdi = _parse_float(row["pdi"], line, "pdi", allow_empty=True)
        temp = _parse_float(row["temp_K"], line, "temp_K")
        shear = _parse_float(row["shear_1_per_s"], line, "shear_1_per_s")
        visc = _parse_float(row["viscosity"], line, "viscosity")
        fp = None
        if fp_cols:
            cells = [(row.get(c) or "").strip() for c in fp_cols]
            if any(cells):
                fp = np.array([_parse_float(v, line, c) for v, c in zip(cells, fp_cols)])
        units.append((constituents, fp))
        scalars.append((mw, pdi, temp, shear, visc))

    if len(kinds) != 1:
        raise InvariantViolation(rid, f"conflicting kinds {sorted(kinds)}")
    kind = kinds.pop()
    if kind not in KINDS:
        raise InvariantViolation(rid, f"unknown kind {kind!r}")

    temps, shears, viscs = ({s[i] for s in scalars} for i in (2, 3, 4))
    if len(temps) > 1 or len(shears) > 1 or len(viscs) > 1:
        raise InvariantViolation(rid, "constituent rows disagree on temperature, shear rate or viscosity")
    temp, shear, visc = temps.pop(), shears.pop(), viscs.pop()

    constituents = []
    for (cons, _), (mw, pdi, *_rest) in zip(units, scalars):
        per_unit = len(rows) > 1
        for smi, frac in cons:
            constituents.append(Constituent(smi, frac, mw if per_unit else None, pdi if per_unit else None))
    fractions = np.array([c.fraction for c in constituents])
    if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > FRACTION_TOL:
        raise InvariantViolation(rid, f"composition fractions sum to {fractions.sum():.6g}, expected 1")
    if kind == "homopolymer" and len({c.smiles for c in constituents}) != 1:
        raise InvariantViolation(rid, "homopolymer must have exactly one repeat unit")

    # molecular weight / PDI
    mws = [s[0] for s in scalars]
    pdis = [s[1] for s in scalars]
    if len(rows) > 1 and (len(set(mws)) > 1 or len(set(pdis)) > 1):
        if kind != "blend":
            raise InvariantViolation(rid, "per-unit Mw/PDI only allowed for blends")
        w = np.array([sum(f for _, f in cons) for cons, _ in units])
        mw = float(w @ np.array(mws))
        pdi = None if any(p is None for p in pdis) else float(w @ np.array(pdis))
    else:
        mw, pdi = mws[0], pdis[0]

    # fingerprint
    warnings = []
    if any(fp is not None for _, fp in units):
        if any(fp is None for _, fp in units):
            raise InvariantViolation(rid, "fingerprint columns filled on some constituent rows only")
        fps = [fp for _, fp in units]
        weights = [sum(f for _, f in cons) for cons, _ in units]
    else:
        fps = [fallback_fingerprint(c.smiles, fallback_width) for c in constituents]
        weights = [c.fraction for c in constituents]
    if len(fps) == 1:
        fingerprint = np.asarray(fps[0], dtype=float)
    else:
        fingerprint, fell_back = aggregate_fingerprint(fps, weights, kind, return_fallback=True)
        if fell_back.any():
            msg = f"harmonic mean fell back to arithmetic on {int(fell_back.sum())} component(s)"
            log.warning("record %s: %s", rid, msg)
            warnings.append(msg)

    sample = PolymerSample(
        record_id=rid,
        kind=kind,
        constituents=tuple(constituents),
        fingerprint=fingerprint,
        mw=mw,
        pdi=pdi,
        temp=temp,
        shear=shear,
        log_eta=math.log10(visc) if visc > 0 else float("nan"),
        warnings=tuple(warnings),
    )
    validate_sample(sample, viscosity=visc)
    return sample


def validate_sample(s: PolymerSample, *, viscosity: float | None = None) -> None:
    if viscosity is not None and not viscosity > 0:
        raise InvariantViolation(s.record_id, f"viscosity must be positive, got {viscosity}")
    if not (s.mw > 0 and math.isfinite(s.mw)):
        raise InvariantViolation(s.record_id, f"Mw must be positive, got {s.mw}")
    if not (s.temp > 0 and math.isfinite(s.temp)):
        raise InvariantViolation(s.record_id, f"temperature must be positive, got {s.temp}")
    if not (s.shear >= 0 and math.isfinite(s.shear)):
        raise InvariantViolation(s.record_id, f"shear rate must be non-negative, got {s.shear}")
    if s.pdi is not None and not s.pdi >= 1.0:
        raise InvariantViolation(s.record_id, f"PDI must be >= 1, got {s.pdi}")
    if not math.isfinite(s.log_eta):
        raise InvariantViolation(s.record_id, "viscosity is not finite")
    if not np.all(np.isfinite(s.fingerprint)):
        raise InvariantViolation(s.record_id, "fingerprint contains non-finite values")


def write_dataset(samples: Sequence[PolymerSample], path, *, flags: bool = True) -> None:
    """Write samples in the ingestion CSV format (one row per record).

    Fingerprints are always written explicitly; ``flags`` adds the
    ``pdi_imputed`` and ``augmented`` columns.
    """
    if not samples:
        raise EmptyDataset("nothing to write")
    k = max(len(s.constituents) for s in samples)
    d = samples[0].fingerprint.shape[0]
    header = ["record_id", "kind"]
    header += [f"smiles_{i + 1}" for i in range(k)] + [f"fraction_{i + 1}" for i in range(k)]
    header += ["mw_gmol", "pdi", "temp_K", "shear_1_per_s", "viscosity"]
    header += [f"fp_{j}" for j in range(d)]
    if flags:
        header += ["pdi_imputed", "augmented"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for s in samples:
            cons = list(s.constituents) + [None] * (k - len(s.constituents))
            row = [s.record_id, s.kind]
            row += [c.smiles if c else "" for c in cons]
            row += [repr(float(c.fraction)) if c else "" for c in cons]
            row += [
                repr(float(s.mw)),
                "" if s.pdi is None else repr(float(s.pdi)),
                repr(float(s.temp)),
                repr(float(s.shear)),
                repr(float(10.0**s.log_eta)),
            ]
            row += [repr(float(v)) for v in s.fingerprint]
            if flags:
                row += [str(int(s.pdi_imputed)), str(int(s.augmented))]
            w.writerow(row)


# ---------------------------------------------------------------------------
# PDI imputation and low-Mw augmentation
# ---------------------------------------------------------------------------


def impute_pdi(samples: Iterable[PolymerSample], value: float = MEDIAN_PDI, *, recompute: bool = False):
    """Fill missing PDI values.

    ``value`` defaults to the frozen dataset median 2.06; ``recompute=True``
    uses the median of the PDIs present in ``samples`` instead.
    """
    samples = list(samples)
    if recompute:
        present = [s.pdi for s in samples if s.pdi is not None]
        if present:
            value = float(np.median(present))
    return [s if s.pdi is not None else replace(s, pdi=value, pdi_imputed=True) for s in samples]


def augment_chemistry(points: Sequence[PolymerSample], mcr: float | None, *, n_points: int = 5,
                      grid=None, alpha1: float = 1.0, min_points: int = 6) -> list[PolymerSample]:
    """Synthesize low-Mw zero-shear points for one chemistry at one temperature.

    The entangled branch is fitted by least squares on ``points`` (all with
    Mw above ``mcr``); the unentangled branch is continued below ``mcr``
    with slope ``alpha1`` through the continuity point.
    """
    if mcr is None:
        raise MissingMcr("no reference critical molecular weight for this chemistry")
    high = [p for p in points if p.mw > mcr]
    if len(high) < min_points:
        raise TooFewPoints(f"{len(high)} high-Mw zero-shear points, need at least {min_points}")
    x = np.array([p.log_mw for p in high])
    y = np.array([p.log_eta for p in high])
    alpha2, intercept = np.polyfit(x, y, 1)
    log_mcr = math.log10(mcr)
    y_cr = intercept + alpha2 * log_mcr
    if grid is None:
        grid = np.logspace(2.0, math.log10(mcr / 2.0), n_points)
    grid = np.asarray(grid, dtype=float)
    if np.any(grid >= mcr):
        raise ValueError("augmentation grid must lie below Mcr")
    base = high[0]
    out = []
    for i, mw in enumerate(grid):
        out.append(
            replace(
                base,
                record_id=f"{base.record_id}-aug{i}",
                mw=float(mw),
                shear=0.0,
                log_eta=float(y_cr + alpha1 * (math.log10(mw) - log_mcr)),
                augmented=True,
            )
        )
    return out


def augment_low_mw(samples: Sequence[PolymerSample], mcr_reference: dict, **kwargs) -> list[PolymerSample]:
    """Augment every chemistry in ``mcr_reference`` that has enough data.

    Zero-shear points are grouped by (chemistry, temperature); the largest
    qualifying group of each chemistry is used.  Chemistries that fail the
    thresholds are skipped.  Returns only the added samples.
    """
    added = []
    by_chem: dict[str, dict[float, list]] = {}
    for s in samples:
        if s.shear == 0.0 and not s.augmented:
            by_chem.setdefault(s.chemistry, {}).setdefault(s.temp, []).append(s)
    for chem in sorted(by_chem):
        groups = sorted(by_chem[chem].values(), key=len, reverse=True)
        try:
            added.extend(augment_chemistry(groups[0], mcr_reference.get(chem), **kwargs))
        except (TooFewPoints, MissingMcr) as exc:
            log.info("augmentation skipped for %s: %s", chem, exc)
    return added


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------


def _bounds(values):
    return float(np.min(values)), float(np.max(values))


def _to_unit(x, lo, hi):
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    if half == 0.0:
        half = 1.0
    return (np.asarray(x, dtype=float) - center) / half


def _from_unit(z, lo, hi):
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    if half == 0.0:
        half = 1.0
    return np.asarray(z, dtype=float) * half + center


@dataclass
class ScaledSamples:
    """Model-ready arrays.

    ``chem`` is the scaled fingerprint with PDI appended; ``cond_graph`` holds
    (log Mw, T, log shear) in physics-graph coordinates and ``cond_ann`` the
    same channels with their own min-max bounds.
    """

    chem: np.ndarray
    cond_graph: np.ndarray
    cond_ann: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.y.shape[0]

    def subset(self, idx) -> "ScaledSamples":
        return ScaledSamples(self.chem[idx], self.cond_graph[idx], self.cond_ann[idx], self.y[idx])

    def features(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        """Return the (network input, conditions) pair a model kind consumes."""
        if kind == "penn":
            return self.chem, self.cond_graph
        return np.hstack([self.chem, self.cond_ann]), self.cond_ann


@dataclass(frozen=True)
class ScalingSpec:
    """Min-max maps of every channel onto (-1, 1).

    Molecular weight and shear rate are log10-transformed first.  In the
    physics graph they reuse the log-viscosity bounds so that slopes
    (alpha1, alpha2, n) are unit-free; the ANN/GPR inputs use their own
    bounds.  Maps are affine and extend linearly outside the fitted range.
    """

    fp_lo: tuple
    fp_hi: tuple
    pdi: tuple
    temp: tuple
    log_mw: tuple
    log_shear: tuple
    log_eta: tuple

    # --- individual channels
    def scale_log_eta(self, y):
        return _to_unit(y, *self.log_eta)

    def unscale_log_eta(self, z):
        return _from_unit(z, *self.log_eta)

    def scale_temp(self, t):
        return _to_unit(t, *self.temp)

    def unscale_temp(self, z):
        return _from_unit(z, *self.temp)

    def graph_conditions(self, log_mw, temp, log_g):
        """(log Mw, T, log shear) in graph coordinates, shape (n, 3)."""
        return np.stack(
            np.broadcast_arrays(
                _to_unit(log_mw, *self.log_eta), _to_unit(temp, *self.temp), _to_unit(log_g, *self.log_eta)
            ),
            axis=-1,
        )

    def ann_conditions(self, log_mw, temp, log_g):
        return np.stack(
            np.broadcast_arrays(
                _to_unit(log_mw, *self.log_mw), _to_unit(temp, *self.temp), _to_unit(log_g, *self.log_shear)
            ),
            axis=-1,
        )

    def chem_features(self, fingerprints, pdi):
        fp = np.atleast_2d(np.asarray(fingerprints, dtype=float))
        lo, hi = np.array(self.fp_lo), np.array(self.fp_hi)
        center = 0.5 * (lo + hi)
        half = np.where(hi > lo, 0.5 * (hi - lo), 1.0)
        fp_s = (fp - center) / half
        pdi_s = _to_unit(np.asarray(pdi, dtype=float).reshape(-1, 1), *self.pdi)
        return np.hstack([fp_s, pdi_s])

    @property
    def n_fingerprint(self) -> int:
        return len(self.fp_lo)

    # --- parameter units
    def params_to_physical(self, p: EmpiricalParams) -> dict:
        """Express graph-unit parameters in physical units.

        log quantities are log10 of g/mol, 1/s and viscosity units; ``Tr`` and
        ``C2`` are in kelvin; the transition sharpnesses are per decade.
        """
        a = 1.0 / (0.5 * (self.log_eta[1] - self.log_eta[0]))  # slope of the eta map
        b = -0.5 * (self.log_eta[0] + self.log_eta[1]) * a
        c = 1.0 / (0.5 * (self.temp[1] - self.temp[0]) or 1.0)
        return {
            "log_k1": (p.log_k1 - b * (1.0 - p.alpha1)) / a,
            "alpha1": p.alpha1,
            "alpha2": p.alpha2,
            "log_Mcr": (p.log_Mcr - b) / a,
            "beta_Mw": p.beta_Mw * a,
            "C1": p.C1 / a,
            "C2": p.C2 / c,
            "Tr": self.unscale_temp(p.Tr),
            "n": p.n,
            "log_gcr": (p.log_gcr - b) / a,
            "beta_g": p.beta_g * a,
        }

    def to_dict(self) -> dict:
        return {
            "fp_lo": list(self.fp_lo),
            "fp_hi": list(self.fp_hi),
            "pdi": list(self.pdi),
            "temp": list(self.temp),
            "log_mw": list(self.log_mw),
            "log_shear": list(self.log_shear),
            "log_eta": list(self.log_eta),
        }

    @classmethod
    def from_dict(cls, d) -> "ScalingSpec":
        return cls(**{k: tuple(float(x) for x in v) for k, v in d.items()})


def fit_scaling(samples: Sequence[PolymerSample]) -> ScalingSpec:
    """Fit every channel's bounds on ``samples`` (the training split).

    Raises :class:`DegenerateRange` when all log-viscosities coincide, since
    the graph coordinates of Mw and shear are defined through them.  Other
    constant channels map to 0.
    """
    if not samples:
        raise EmptyDataset("cannot fit scaling on an empty set")
    if any(s.pdi is None for s in samples):
        raise InvariantViolation(next(s.record_id for s in samples if s.pdi is None), "PDI missing; impute first")
    fps = np.array([s.fingerprint for s in samples])
    eta = _bounds([s.log_eta for s in samples])
    if eta[0] == eta[1]:
        raise DegenerateRange("log viscosity is constant over the training set")
    return ScalingSpec(
        fp_lo=tuple(float(v) for v in fps.min(axis=0)),
        fp_hi=tuple(float(v) for v in fps.max(axis=0)),
        pdi=_bounds([s.pdi for s in samples]),
        temp=_bounds([s.temp for s in samples]),
        log_mw=_bounds([s.log_mw for s in samples]),
        log_shear=_bounds([s.log_shear for s in samples]),
        log_eta=eta,
    )


def raw_arrays(samples: Sequence[PolymerSample]) -> dict:
    """Unscaled channels as arrays (log10 for Mw, shear and viscosity)."""
    return {
        "fingerprint": np.array([s.fingerprint for s in samples]),
        "pdi": np.array([s.pdi for s in samples], dtype=float),
        "log_mw": np.array([s.log_mw for s in samples]),
        "temp": np.array([s.temp for s in samples]),
        "log_shear": np.array([float(s.log_shear) for s in samples]),
        "log_eta": np.array([s.log_eta for s in samples]),
    }


def apply_scaling(spec: ScalingSpec, samples: Sequence[PolymerSample]) -> ScaledSamples:
    r = raw_arrays(samples)
    return scale_arrays(spec, r)


def scale_arrays(spec: ScalingSpec, r: dict) -> ScaledSamples:
    return ScaledSamples(
        chem=spec.chem_features(r["fingerprint"], r["pdi"]),
        cond_graph=spec.graph_conditions(r["log_mw"], r["temp"], r["log_shear"]),
        cond_ann=spec.ann_conditions(r["log_mw"], r["temp"], r["log_shear"]),
        y=spec.scale_log_eta(r["log_eta"]),
    )


def invert_scaling(spec: ScalingSpec, scaled: ScaledSamples) -> dict:
    """Recover the raw channels from scaled arrays (inverse of :func:`apply_scaling`)."""
    d = spec.n_fingerprint
    lo, hi = np.array(spec.fp_lo), np.array(spec.fp_hi)
    half = np.where(hi > lo, 0.5 * (hi - lo), 1.0)
    g = scaled.cond_graph
    return {
        "fingerprint": scaled.chem[:, :d] * half + 0.5 * (lo + hi),
        "pdi": _from_unit(scaled.chem[:, d], *spec.pdi),
        "log_mw": _from_unit(g[:, 0], *spec.log_eta),
        "temp": _from_unit(g[:, 1], *spec.temp),
        "log_shear": _from_unit(g[:, 2], *spec.log_eta),
        "log_eta": spec.unscale_log_eta(scaled.y),
    }
