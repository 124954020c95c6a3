"""Two-hidden-layer perceptrons for the PENN and the plain ANN baseline.

The PENN maps (fingerprint, PDI) to ten raw outputs, bounds them into
:class:`~polyvisc.physics.EmpiricalParams` and pushes the conditions through
the physics graph.  The ANN maps (fingerprint, PDI, conditions) straight to
log-viscosity.  Both are plain numpy with hand-written backprop; everything
runs in float64 so gradients can be checked by finite differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import physics
from .data import PolymerSample, ScaledSamples, ScalingSpec, apply_scaling
from .errors import DimensionMismatch, EmptyBatch, EmptyDataset, NonFiniteLoss
from .physics import EmpiricalParams, PhysicalConditions

log = logging.getLogger(__name__)

KINDS = ("penn", "ann")
ALPHA1_TARGET = 1.0
ALPHA2_TARGET = 3.4
DEFAULT_LR = {"penn": 1e-4, "ann": 1e-3}

LR_FACTOR = 0.5
LR_PATIENCE = 20
EARLY_STOP_PATIENCE = 25
IMPROVEMENT_RTOL = 1e-4

#: Hyperparameter grid searched by :func:`polyvisc.tuning.hyperparameter_search`.
GRID = {
    "layer1_size": (64, 128, 256, 512),
    "layer1_dropout": (0.0, 0.01, 0.015, 0.02, 0.025, 0.03),
    "layer2_size": (64, 128, 256, 512),
    "layer2_dropout": (0.0, 0.01, 0.015, 0.02, 0.025, 0.03),
    "weight_decay": (1e-5, 5e-5, 1e-4, 5e-4, 1e-3),
    "w_alpha": (0.001, 0.005, 0.01, 0.03, 0.05),
}


@dataclass(frozen=True)
class MlpConfig:
    """Architecture and optimizer settings.

    ``initial_lr=None`` resolves to the kind's default (1e-4 PENN, 1e-3 ANN).
    ``w_alpha`` is ignored by the ANN.
    """

    layer1_size: int = 128
    layer1_dropout: float = 0.0
    layer2_size: int = 128
    layer2_dropout: float = 0.0
    weight_decay: float = 1e-5
    w_alpha: float = 0.01
    initial_lr: float | None = None
    seed: int = 0
    batch_size: int = 64
    max_epochs: int = 1000

    def lr_for(self, kind: str) -> float:
        return DEFAULT_LR[kind] if self.initial_lr is None else self.initial_lr

    def validate(self) -> None:
        if self.layer1_size < 1 or self.layer2_size < 1:
            raise ValueError("layer sizes must be positive")
        for p in (self.layer1_dropout, self.layer2_dropout):
            if not 0.0 <= p < 1.0:
                raise ValueError(f"dropout {p} outside [0, 1)")
        if self.weight_decay < 0 or self.w_alpha < 0:
            raise ValueError("weight_decay and w_alpha must be non-negative")
        if self.initial_lr is not None and not self.initial_lr > 0:
            raise ValueError("initial_lr must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")

    def in_grid(self) -> bool:
        return all(getattr(self, k) in v for k, v in GRID.items())

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# dense network
# ---------------------------------------------------------------------------


def init_layers(sizes: Sequence[int], rng: np.random.Generator):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return weights, biases


def mlp_forward(weights, biases, X, *, dropout=(0.0, 0.0), rng=None):
    """tanh hidden layers, linear output.  Returns (output, cache).

    Dropout (inverted scaling) is applied only when ``rng`` is given.
    """
    inputs = [X]  # what each layer consumes (post-dropout)
    acts = []  # tanh outputs before dropout
    masks = []
    h = X
    for i in range(len(weights) - 1):
        a = np.tanh(h @ weights[i] + biases[i])
        acts.append(a)
        p = dropout[i] if i < len(dropout) else 0.0
        mask = (rng.random(a.shape) >= p) / (1.0 - p) if p > 0.0 and rng is not None else None
        masks.append(mask)
        h = a if mask is None else a * mask
        inputs.append(h)
    out = h @ weights[-1] + biases[-1]
    return out, (inputs, acts, masks)


def mlp_backward(weights, cache, d_out):
    """Gradients of a scalar loss given d(loss)/d(output)."""
    inputs, acts, masks = cache
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    d = d_out
    for i in range(len(weights) - 1, -1, -1):
        gw[i] = inputs[i].T @ d
        gb[i] = d.sum(axis=0)
        if i == 0:
            break
        d = d @ weights[i].T
        if masks[i - 1] is not None:
            d = d * masks[i - 1]
        d = d * (1.0 - acts[i - 1] ** 2)
    return gw, gb


@dataclass
class TrainedModel:
    """Weights plus everything needed to reproduce and apply them."""

    kind: str
    weights: list
    biases: list
    config: MlpConfig
    scaling: ScalingSpec | None = None
    training_log: list = field(default_factory=list)
    init: str = "uniform_fan_in"

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    def check(self) -> None:
        dims = self.layer_dims
        for w, b, (i, o) in zip(self.weights, self.biases, zip(dims[:-1], dims[1:])):
            if w.shape != (i, o) or b.shape != (o,):
                raise DimensionMismatch(f"inconsistent layer shapes {w.shape}, {b.shape}")
        expected = physics.N_RAW if self.kind == "penn" else 1
        if dims[-1] != expected:
            raise DimensionMismatch(f"{self.kind} output width must be {expected}, got {dims[-1]}")


def build_model(kind: str, n_chem: int, config: MlpConfig, scaling=None) -> TrainedModel:
    """Freshly initialised (untrained) model for ``n_chem`` chemistry features."""
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    rng = np.random.default_rng(config.seed)
    n_in = n_chem if kind == "penn" else n_chem + 3
    n_out = physics.N_RAW if kind == "penn" else 1
    w, b = init_layers([n_in, config.layer1_size, config.layer2_size, n_out], rng)
    return TrainedModel(kind, w, b, config, scaling)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _as_batch(fingerprint, pdi, cond):
    fp = np.atleast_2d(np.asarray(fingerprint, dtype=float))
    pdi = np.asarray(pdi, dtype=float).reshape(-1, 1)
    c = cond.to_vector() if isinstance(cond, PhysicalConditions) else np.asarray(cond, dtype=float)
    c = np.atleast_2d(c)
    return fp, pdi, c


def penn_forward(fingerprint, pdi, cond, model: TrainedModel):
    """Scaled log-viscosity and the bounded parameters for scaled inputs.

    Accepts one sample (vectors / scalars) or a batch (2-D fingerprint).
    """
    if model.kind != "penn":
        raise ValueError("penn_forward needs a PENN model")
    fp, pdi, c = _as_batch(fingerprint, pdi, cond)
    chem = np.hstack([fp, pdi])
    y, params, _ = penn_predict_arrays(model, chem, c)
    if np.ndim(fingerprint) == 1:
        return float(y[0]), EmpiricalParams.from_vector(params.to_vector()[0])
    return y, params


def penn_predict_arrays(model: TrainedModel, chem, cond, *, strict: bool = True):
    if chem.shape[1] != model.input_width:
        raise DimensionMismatch(f"model expects {model.input_width} chemistry features, got {chem.shape[1]}")
    raw, _ = mlp_forward(model.weights, model.biases, chem)
    params = physics.bound_params(raw)
    y = physics.log_eta(PhysicalConditions.from_vector(cond), params, strict=strict)
    return np.asarray(y), params, raw


def ann_forward(fingerprint, pdi, cond, model: TrainedModel):
    """Scaled log-viscosity from concat(fingerprint, pdi, conditions)."""
    if model.kind != "ann":
        raise ValueError("ann_forward needs an ANN model")
    fp, pdi, c = _as_batch(fingerprint, pdi, cond)
    y = ann_predict_arrays(model, np.hstack([fp, pdi, c]))
    return float(y[0]) if np.ndim(fingerprint) == 1 else y


def ann_predict_arrays(model: TrainedModel, X):
    if X.shape[1] != model.input_width:
        raise DimensionMismatch(f"model expects {model.input_width} features, got {X.shape[1]}")
    out, _ = mlp_forward(model.weights, model.biases, X)
    return out[:, 0]


def predict_scaled(model: TrainedModel, scaled: ScaledSamples, *, strict: bool = True):
    X, cond = scaled.features(model.kind)
    if model.kind == "penn":
        return penn_predict_arrays(model, X, cond, strict=strict)[0]
    return ann_predict_arrays(model, X)


def predict(model: TrainedModel, samples: Sequence[PolymerSample], *, strict: bool = True) -> np.ndarray:
    """log10 viscosity in physical units for raw samples.

    With ``strict=False`` a PENN query inside the WLF pole is evaluated with
    the clamped denominator instead of raising DenominatorTooSmall.
    """
    scaled = apply_scaling(model.scaling, samples)
    return model.scaling.unscale_log_eta(predict_scaled(model, scaled, strict=strict))


def predict_params(model: TrainedModel, samples: Sequence[PolymerSample]) -> EmpiricalParams:
    """Graph-unit parameters the PENN assigns to each sample."""
    if model.kind != "penn":
        raise ValueError("only PENN models expose parameters")
    scaled = apply_scaling(model.scaling, samples)
    raw, _ = mlp_forward(model.weights, model.biases, scaled.chem)
    return physics.bound_params(raw)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def viscosity_loss(pred, target) -> float:
    """Mean squared error on scaled log-viscosity."""
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.size == 0:
        raise EmptyBatch("loss over an empty batch")
    return float(np.mean((pred - target) ** 2))


def loss_penn(pred, target, alpha1, alpha2, w_alpha: float) -> float:
    """Viscosity MSE plus the slope penalty pulling alpha1 to 1 and alpha2 to 3.4."""
    pred = np.asarray(pred, dtype=float)
    if pred.size == 0:
        raise EmptyBatch("loss over an empty batch")
    penalty = w_alpha * ((np.asarray(alpha1) - ALPHA1_TARGET) ** 2 + (np.asarray(alpha2) - ALPHA2_TARGET) ** 2)
    return viscosity_loss(pred, target) + float(np.mean(penalty))


def penn_loss_and_grads(weights, biases, chem, cond, y, w_alpha, *, dropout=(0.0, 0.0), rng=None, strict=False):
    """Total PENN loss and its gradients with respect to every layer."""
    n = y.shape[0]
    if n == 0:
        raise EmptyBatch("loss over an empty batch")
    raw, cache = mlp_forward(weights, biases, chem, dropout=dropout, rng=rng)
    params = physics.bound_params(raw)
    pred, g_params, _ = physics.log_eta_with_grad(PhysicalConditions.from_vector(cond), params, strict=strict)
    resid = pred - y
    d_a1 = params.alpha1 - ALPHA1_TARGET
    d_a2 = params.alpha2 - ALPHA2_TARGET
    loss = float(np.mean(resid**2) + np.mean(w_alpha * (d_a1**2 + d_a2**2)))
    d_params = (2.0 / n) * resid[:, None] * g_params[:, : physics.N_RAW]
    d_params[:, 1] += (2.0 * w_alpha / n) * d_a1
    d_params[:, 2] += (2.0 * w_alpha / n) * d_a2
    d_raw = d_params * physics.bound_params_jacobian(raw)
    gw, gb = mlp_backward(weights, cache, d_raw)
    return loss, gw, gb


def ann_loss_and_grads(weights, biases, X, y, *, dropout=(0.0, 0.0), rng=None):
    n = y.shape[0]
    if n == 0:
        raise EmptyBatch("loss over an empty batch")
    out, cache = mlp_forward(weights, biases, X, dropout=dropout, rng=rng)
    resid = out[:, 0] - y
    loss = float(np.mean(resid**2))
    gw, gb = mlp_backward(weights, cache, (2.0 / n) * resid[:, None])
    return loss, gw, gb


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params, lr, *, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlateauTracker:
    """Halve the LR after ``lr_patience`` stale epochs; stop after ``stop_patience``."""

    def __init__(self, lr_patience=LR_PATIENCE, stop_patience=EARLY_STOP_PATIENCE, factor=LR_FACTOR,
                 rtol=IMPROVEMENT_RTOL):
        self.lr_patience = lr_patience
        self.stop_patience = stop_patience
        self.factor = factor
        self.rtol = rtol
        self.best = math.inf
        self.since_best = 0
        self.since_reduce = 0

    def update(self, value: float) -> tuple[bool, bool, bool]:
        """Return (improved, reduce_lr, stop)."""
        improved = value < self.best * (1.0 - self.rtol)
        if improved:
            self.best = value
            self.since_best = 0
            self.since_reduce = 0
        else:
            self.since_best += 1
            self.since_reduce += 1
        reduce = self.since_reduce > self.lr_patience
        if reduce:
            self.since_reduce = 0
        return improved, reduce, self.since_best >= self.stop_patience


def train(train_set: ScaledSamples, val_set: ScaledSamples, config: MlpConfig, kind: str, *,
          scaling: ScalingSpec | None = None, max_epochs: int | None = None) -> TrainedModel:
    """Fit a PENN or ANN with Adam, LR-on-plateau and early stopping.

    The validation metric is the plain viscosity MSE on ``val_set``; the
    returned weights are those of the best validation epoch.  Training is a
    pure function of ``config.seed`` and the data.

    Raises
    ------
    EmptyDataset
        Either split is empty.
    NonFiniteLoss
        A batch loss became NaN or infinite.
    """
    config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    max_epochs = config.max_epochs if max_epochs is None else max_epochs
    model = build_model(kind, train_set.chem.shape[1], config, scaling)
    rng = np.random.default_rng([config.seed, 1])
    params = model.weights + model.biases
    opt = Adam(params, config.lr_for(kind), weight_decay=config.weight_decay)
    tracker = PlateauTracker()
    dropout = (config.layer1_dropout, config.layer2_dropout)
    X_tr, c_tr = train_set.features(kind)
    y_tr = train_set.y
    n = len(train_set)
    n_layers = len(model.weights)

    best_w = [p.copy() for p in params]
    best_epoch = 0
    history = []
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if kind == "penn":
                loss, gw, gb = penn_loss_and_grads(
                    model.weights, model.biases, X_tr[idx], c_tr[idx], y_tr[idx], config.w_alpha,
                    dropout=dropout, rng=rng,
                )
            else:
                loss, gw, gb = ann_loss_and_grads(model.weights, model.biases, X_tr[idx], y_tr[idx],
                                                  dropout=dropout, rng=rng)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"{kind} loss became {loss} at epoch {epoch}, batch starting {start}")
            opt.step(gw + gb)
            total += loss * len(idx)
        val = viscosity_loss(predict_scaled(model, val_set, strict=False), val_set.y)
        if not math.isfinite(val):
            raise NonFiniteLoss(f"{kind} validation loss became {val} at epoch {epoch}")
        improved, reduce, stop = tracker.update(val)
        history.append({"epoch": epoch, "train_loss": total / n, "val_loss": val, "lr": opt.lr, "best": improved})
        if improved:
            best_w = [p.copy() for p in params]
            best_epoch = epoch
        if reduce:
            opt.lr *= LR_FACTOR
        if stop:
            break

    log.info("%s training stopped after %d epochs; best epoch %d (val %.4g)", kind, len(history), best_epoch,
             tracker.best)
    return TrainedModel(
        kind=kind,
        weights=best_w[:n_layers],
        biases=best_w[n_layers:],
        config=config,
        scaling=scaling,
        training_log=history,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format": "polyvisc-model",
        "version": 1,
        "kind": model.kind,
        "seed": model.config.seed,
        "config": asdict(model.config),
        "init": model.init,
        "layer_dims": model.layer_dims,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "scaling": None if model.scaling is None else model.scaling.to_dict(),
        "training_log": model.training_log,
    }


def model_from_dict(d: dict) -> TrainedModel:
    model = TrainedModel(
        kind=d["kind"],
        weights=[np.array(w, dtype=float).reshape(i, o) for w, i, o in
                 zip(d["weights"], d["layer_dims"][:-1], d["layer_dims"][1:])],
        biases=[np.array(b, dtype=float) for b in d["biases"]],
        config=MlpConfig.from_dict(d["config"]),
        scaling=None if d.get("scaling") is None else ScalingSpec.from_dict(d["scaling"]),
        training_log=list(d.get("training_log", [])),
        init=d.get("init", "uniform_fan_in"),
    )
    model.check()
    return model


def with_config(model: TrainedModel, **changes) -> TrainedModel:
    return replace(model, config=replace(model.config, **changes))
