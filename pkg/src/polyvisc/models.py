"""Kind-agnostic save/load and prediction for PENN, ANN and GPR models."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import gpr, nn
from .data import apply_scaling, fit_scaling
from .errors import TooFewSamples, ValidationError

FORMAT = "polyvisc-model"
VERSION = 1
KINDS = ("penn", "ann", "gpr")


def to_dict(model) -> dict:
    return gpr.model_to_dict(model) if model.kind == "gpr" else nn.model_to_dict(model)


def from_dict(d: dict):
    if d.get("format") != FORMAT or d.get("version") != VERSION:
        raise ValidationError(f"not a {FORMAT} v{VERSION} document")
    kind = d.get("kind")
    if kind == "gpr":
        return gpr.model_from_dict(d)
    if kind in nn.KINDS:
        return nn.model_from_dict(d)
    raise ValidationError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model), separators=(",", ":")) + "\n", encoding="utf-8")


def load_model(path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(d)


def predict(model, samples, *, strict: bool = True) -> np.ndarray:
    """Physical log10 viscosity for raw samples, whatever the model kind."""
    if model.scaling is None:
        raise ValidationError("model carries no scaling; cannot map raw samples")
    if model.kind == "gpr":
        return gpr.predict(model, samples)
    return nn.predict(model, samples, strict=strict)


VAL_FRACTION = 0.1


def holdout_indices(n: int, seed: int, fraction: float = VAL_FRACTION):
    """Seeded (train, validation) index split used for early stopping."""
    if n < 2:
        raise TooFewSamples("need at least two samples to carve out a validation set")
    order = np.random.default_rng([seed, 7]).permutation(n)
    n_val = min(n - 1, max(1, int(round(fraction * n))))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def fit_model(samples, kind: str, *, config: nn.MlpConfig | None = None, hp: gpr.GprHyperparams | None = None,
              seed: int = 0, val_fraction: float = VAL_FRACTION, max_epochs: int | None = None):
    """Fit scaling on ``samples`` and train one model of ``kind``.

    Networks early-stop on a seeded ``val_fraction`` of the samples; the GPR
    uses all of them.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    spec = fit_scaling(samples)
    scaled = apply_scaling(spec, samples)
    if kind == "gpr":
        return gpr.train_gpr(scaled, hp or gpr.GprHyperparams(), scaling=spec, seed=seed)
    tr, va = holdout_indices(len(scaled), seed, val_fraction)
    return nn.train(scaled.subset(tr), scaled.subset(va), config or nn.MlpConfig(seed=seed), kind, scaling=spec,
                    max_epochs=max_epochs)
