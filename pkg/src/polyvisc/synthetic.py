"""Labelled synthetic datasets generated from the physics graph.

Each chemistry gets a random unit-vector fingerprint; its parameters are a
fixed random smooth function of that fingerprint, so a network can in
principle learn the chemistry-to-parameter map.  Records come in three
series per chemistry (Mw sweep at zero shear, shear sweep, temperature
sweep at zero shear), the shape of real literature data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import Constituent, PolymerSample, log_shear, write_dataset
from .errors import InvalidCounts, ValidationError
from .physics import BETA_SHEAR, EmpiricalParams, PhysicalConditions, log_eta

#: Physical-unit ranges the truth parameters are drawn from.
TRUTH_RANGES = {
    "alpha1": (0.9, 1.1),
    "alpha2": (3.0, 3.8),
    "n": (0.2, 0.8),
    "log_Mcr": (2.5, 5.0),
    "log_gcr": (-3.0, 4.0),
    "beta_Mw": (100.0, 200.0),  # per decade; sharp enough that the exact piecewise law fits it
    "C1": (5.0, 10.0),
    "C2": (100.0, 250.0),
    "Tr": (200.0, 330.0),
    "log_eta_cr": (2.0, 5.0),  # log10 viscosity at Mcr and Tr; fixes log_k1
}
_LINKED = tuple(TRUTH_RANGES)
_LINK_GAIN = 1.7


@dataclass(frozen=True)
class SyntheticChemistry:
    name: str
    fingerprint: np.ndarray
    true_params: EmpiricalParams  # physical units
    pdi: float


def _link_map(fp_dim, rng):
    return rng.normal(size=(len(_LINKED), fp_dim))


def make_chemistry(index: int, fingerprint: np.ndarray, link: np.ndarray, pdi: float) -> SyntheticChemistry:
    u = expit(_LINK_GAIN * (link @ fingerprint))
    v = {k: lo + (hi - lo) * ui for (k, (lo, hi)), ui in zip(TRUTH_RANGES.items(), u)}
    log_k1 = v["log_eta_cr"] - v["alpha1"] * v["log_Mcr"]
    params = EmpiricalParams(
        log_k1=float(log_k1), alpha1=float(v["alpha1"]), alpha2=float(v["alpha2"]), log_Mcr=float(v["log_Mcr"]),
        beta_Mw=float(v["beta_Mw"]), C1=float(v["C1"]), C2=float(v["C2"]), Tr=float(v["Tr"]),
        n=float(v["n"]), log_gcr=float(v["log_gcr"]), beta_g=BETA_SHEAR,
    )
    return SyntheticChemistry(f"SYN{index:03d}", fingerprint, params, float(pdi))


def _series_sizes(pts):
    n_mw = max(1, round(0.4 * pts))
    n_sh = max(1, round(0.3 * pts))
    return n_mw, n_sh, pts - n_mw - n_sh


def _spread(rng, lo, hi, n):
    """n stratified points on [lo, hi] with jitter inside each stratum."""
    edges = np.linspace(lo, hi, n + 1)
    return np.sort(edges[:-1] + rng.uniform(0.0, 1.0, n) * np.diff(edges))


def chemistry_conditions(chem: SyntheticChemistry, pts: int, rng: np.random.Generator):
    """(log10 Mw, T in K, shear in 1/s) triples for one chemistry."""
    p = chem.true_params
    n_mw, n_sh, n_t = _series_sizes(pts)
    t0 = p.Tr + rng.uniform(80.0, 150.0)
    rows = []
    for lm in np.clip(_spread(rng, p.log_Mcr - 1.2, p.log_Mcr + 1.5, n_mw), 2.0, 7.0):
        rows.append((lm, t0, 0.0))
    lm_s = p.log_Mcr + rng.uniform(0.0, 1.2)
    for lg in np.clip(_spread(rng, p.log_gcr - 2.0, p.log_gcr + 2.5, n_sh), -4.5, 6.0):
        rows.append((lm_s, t0, 10.0**lg))
    lm_t = p.log_Mcr + rng.uniform(0.0, 1.2)
    for t in np.maximum(_spread(rng, t0 - 40.0, t0 + 60.0, n_t), p.Tr + 30.0):
        rows.append((lm_t, t, 0.0))
    return rows


def generate(n_chem: int, pts_per_chem: int, noise_sigma: float, seed: int, *, fp_dim: int = 16):
    """Build a synthetic dataset.

    Returns
    -------
    samples : list of PolymerSample
        ``n_chem * pts_per_chem`` records (homopolymers, PDI present).
    truth : list of SyntheticChemistry
    """
    if n_chem < 1 or pts_per_chem < 3 or fp_dim < 1:
        raise InvalidCounts(f"need n_chem >= 1, pts_per_chem >= 3, fp_dim >= 1 (got {n_chem}, {pts_per_chem}, {fp_dim})")
    if not noise_sigma >= 0:
        raise ValidationError(f"noise_sigma must be non-negative, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    link = _link_map(fp_dim, rng)
    samples, truth = [], []
    for ci in range(n_chem):
        fp = rng.normal(size=fp_dim)
        fp /= np.linalg.norm(fp)
        chem = make_chemistry(ci, fp, link, pdi=rng.uniform(1.2, 3.5))
        truth.append(chem)
        for j, (lm, t, shear) in enumerate(chemistry_conditions(chem, pts_per_chem, rng)):
            clean = log_eta(PhysicalConditions(lm, t, float(log_shear(shear))), chem.true_params)
            samples.append(
                PolymerSample(
                    record_id=f"{chem.name}-{j:02d}",
                    kind="homopolymer",
                    constituents=(Constituent(chem.name, 1.0),),
                    fingerprint=fp,
                    mw=float(10.0**lm),
                    pdi=chem.pdi,
                    temp=float(t),
                    shear=float(shear),
                    log_eta=float(clean + noise_sigma * rng.normal()),
                )
            )
    return samples, truth


def truth_to_json(truth) -> list:
    return [
        {
            "chemistry": c.name,
            "pdi": c.pdi,
            "fingerprint": c.fingerprint.tolist(),
            "params": {k: float(v) for k, v in c.true_params.as_dict().items()},
        }
        for c in truth
    ]


def write_synthetic(out_dir, n_chem, pts_per_chem, noise_sigma, seed, *, fp_dim=16):
    """Write ``dataset.csv`` and ``truth.json`` into ``out_dir``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples, truth = generate(n_chem, pts_per_chem, noise_sigma, seed, fp_dim=fp_dim)
    csv_path = out / "dataset.csv"
    truth_path = out / "truth.json"
    write_dataset(samples, csv_path, flags=False)
    truth_path.write_text(json.dumps(truth_to_json(truth), indent=1) + "\n", encoding="utf-8")
    return csv_path, truth_path


def load_truth(path) -> dict:
    """chemistry name -> physical-unit EmpiricalParams."""
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    return {r["chemistry"]: EmpiricalParams(**r["params"]) for r in rows}
