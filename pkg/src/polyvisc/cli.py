"""Command-line entry point: ``polyvisc <command> [flags]``.

Every command writes into ``--out`` and leaves a ``manifest.json`` there
recording input hashes, the resolved configuration, the seed, package
versions and output hashes.  Exit status is 0 on success, 1 for invalid
input or usage, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import curvefit, gpr, models, nn, synthetic, tuning
from . import evaluation as ev
from .data import apply_scaling, fit_scaling, impute_pdi, load_dataset, write_dataset
from .errors import PolyviscError, ValidationError

log = logging.getLogger("polyvisc")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

# defaults applied beneath any config file and flags
DEFAULTS = {
    "kind": "penn",
    "variable": "mw",
    "w_alpha": None,
    "folds": 10,
    "trials": 0,
    "noise_sigma": 0.1,
    "bins": ev.KL_BINS,
    "theta_acc": ev.THETA_ACC,
    "theta_fit": ev.THETA_FIT,
    "n_chem": 93,
    "pts_per_chem": 20,
    "n_grid": 101,
    "max_epochs": None,
    "lr": None,
    "mlp": {},
    "gpr": {},
}


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", help="JSON file of settings; flags override it")
    p.add_argument("--seed", type=int, help="seed for every random choice (required)")
    p.add_argument("--out", help="output directory (required)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polyvisc", description="Physics-enforced viscosity models and baselines.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="load and validate a raw CSV, impute PDI, write a clean CSV")
    _common(p)
    p.add_argument("--dataset")

    p = sub.add_parser("split", help="physical-variable or random train/test split")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--variable", choices=["mw", "shear", "temp", "random"])

    p = sub.add_parser("train", help="train a PENN, ANN or GPR model")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--split", help="split.json; trains on its train records")
    p.add_argument("--kind", choices=list(models.KINDS))
    p.add_argument("--w-alpha", type=float)
    p.add_argument("--folds", type=int, help="CV folds used by the hyperparameter search")
    p.add_argument("--trials", type=int, help="search budget; 0 trains the configured model directly")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")

    p = sub.add_parser("predict", help="predict log10 viscosity for a dataset")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--model")

    p = sub.add_parser("fit-params", help="fit a law to every subset with enough points")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--variable", choices=["mw", "shear", "temp"])

    p = sub.add_parser("extrapolate", help="sweep a model along one variable for each record")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--split", help="sweep only the split's test records")
    p.add_argument("--variable", choices=["mw", "shear", "temp"])

    p = sub.add_parser("evaluate", help="score models on a split and write an evaluation report")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--model", action="append", help="model JSON; repeat for several models")
    p.add_argument("--split")
    p.add_argument("--truth", help="synthetic truth.json; default uses curve-fit ground truth")
    p.add_argument("--bins", type=int)
    p.add_argument("--theta-acc", type=float)
    p.add_argument("--theta-fit", type=float)

    p = sub.add_parser("synth", help="generate a labelled synthetic dataset")
    _common(p)
    p.add_argument("--n-chem", type=int)
    p.add_argument("--pts-per-chem", type=int)
    p.add_argument("--noise-sigma", type=float)

    p = sub.add_parser("report", help="flatten an evaluation report into CSV tables")
    _common(p)
    p.add_argument("--report", help="report.json written by evaluate")
    return parser


# ---------------------------------------------------------------------------
# configuration and manifest
# ---------------------------------------------------------------------------


# settings read from the config file only, per command
EXTRA_KEYS = {"train": ("mlp", "gpr"), "extrapolate": ("n_grid",), "evaluate": ("n_grid",)}


def resolve_config(args) -> dict:
    """Defaults, then ``--config``, then explicit flags.

    Only keys the command uses are kept; other config-file keys are ignored
    so one file can serve several commands.
    """
    keys = {k for k in vars(args) if k not in ("config", "command")} | set(EXTRA_KEYS.get(args.command, ()))
    cfg = {k: DEFAULTS.get(k) for k in keys}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("--config must hold a JSON object")
        for k, v in loaded.items():
            k = k.replace("-", "_")
            if k in keys:
                cfg[k] = v
            else:
                log.debug("config key %r unused by %s", k, args.command)
    for k, v in vars(args).items():
        if k in keys and v is not None:
            cfg[k] = v
    cfg["command"] = args.command
    if cfg.get("seed") is None:
        raise UsageError("--seed is required (no implicit seeds)")
    if not cfg.get("out"):
        raise UsageError("--out is required")
    return cfg


def _need(cfg, *keys):
    for k in keys:
        if not cfg.get(k):
            raise UsageError(f"--{k.replace('_', '-')} is required for {cfg['command']}")
        if k in ("dataset", "model", "split", "truth", "report"):
            for path in cfg[k] if isinstance(cfg[k], list) else [cfg[k]]:
                if not Path(path).is_file():
                    raise UsageError(f"--{k} {path}: no such file")


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"polyvisc": own, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def write_manifest(cfg: dict, inputs: list, out: Path, outputs: list) -> None:
    config = {k: v for k, v in sorted(cfg.items()) if k != "out"}
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": cfg["command"],
        "seed": cfg["seed"],
        "config": config,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "inputs": [{"path": str(p), "sha256": sha256(p)} for p in inputs],
        "outputs": [{"path": p.name, "sha256": sha256(p)} for p in outputs],
        "versions": _versions(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
    return path


def _load(path):
    return impute_pdi(load_dataset(path))


def _split_samples(samples, split_path):
    plan = ev.SplitPlan.from_dict(json.loads(Path(split_path).read_text(encoding="utf-8")))
    ids = {s.record_id for s in samples}
    missing = (set(plan.train_ids) | set(plan.test_ids)) - ids
    if missing:
        raise ValidationError(f"split refers to {len(missing)} record(s) absent from the dataset")
    return plan, *plan.apply(samples)


def _mlp_config(cfg) -> nn.MlpConfig:
    mlp = cfg.get("mlp") or {}
    if not isinstance(mlp, dict):
        raise UsageError("config key 'mlp' must be an object")
    fields = dict(mlp)
    fields["seed"] = cfg["seed"]
    if cfg.get("w_alpha") is not None:
        fields["w_alpha"] = cfg["w_alpha"]
    if cfg.get("lr") is not None:
        fields["initial_lr"] = cfg["lr"]
    if cfg.get("max_epochs") is not None:
        fields["max_epochs"] = cfg["max_epochs"]
    try:
        c = nn.MlpConfig.from_dict(fields)
        c.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid network settings: {exc}") from exc
    return c


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(cfg, out):
    _need(cfg, "dataset")
    samples = _load(cfg["dataset"])
    path = out / "dataset.csv"
    write_dataset(samples, path)
    summary = {
        "records": len(samples),
        "monomers": len({s.chemistry for s in samples}),
        "pdi_imputed": sum(s.pdi_imputed for s in samples),
        "warnings": sum(bool(s.warnings) for s in samples),
    }
    return [cfg["dataset"]], [path, _write_json(out / "summary.json", summary)]


def cmd_split(cfg, out):
    _need(cfg, "dataset")
    samples = _load(cfg["dataset"])
    if cfg["variable"] == "random":
        plan = ev.random_split(samples, cfg["seed"])
    else:
        plan = ev.physical_split(samples, cfg["variable"], cfg["seed"])
    ev.check_plan(plan, samples)
    return [cfg["dataset"]], [_write_json(out / "split.json", plan.to_dict())]


def cmd_train(cfg, out):
    _need(cfg, "dataset")
    samples = _load(cfg["dataset"])
    inputs = [cfg["dataset"]]
    if cfg.get("split"):
        _need(cfg, "split")
        _, samples, _ = _split_samples(samples, cfg["split"])
        inputs.append(cfg["split"])
    kind, seed = cfg["kind"], cfg["seed"]
    search_log = []
    if kind == "gpr":
        try:
            hp = gpr.GprHyperparams(**(cfg.get("gpr") or {}))
        except TypeError as exc:
            raise UsageError(f"invalid gpr settings: {exc}") from exc
        if cfg["trials"] > 0:
            spec = fit_scaling(samples)
            hp, search_log = gpr.gpr_search(apply_scaling(spec, samples), cfg["trials"], seed=seed,
                                            folds=cfg["folds"], scaling=spec)
        model = models.fit_model(samples, "gpr", hp=hp, seed=seed)
        model.search_log = search_log
    else:
        config = _mlp_config(cfg)
        if cfg["trials"] > 0:
            spec = fit_scaling(samples)
            config, search_log = tuning.hyperparameter_search(
                apply_scaling(spec, samples), nn.GRID, cfg["trials"], seed=seed, kind=kind, folds=cfg["folds"],
                base=config, scaling=spec)
        model = models.fit_model(samples, kind, config=config, seed=seed)
    pred = models.predict(model, samples, strict=False)
    metrics = {"kind": kind, "train_records": len(samples),
               "train_ome": ev.ome(pred, [s.log_eta for s in samples])}
    if kind != "gpr":
        metrics["epochs"] = len(model.training_log)
        metrics["best_val_loss"] = min(e["val_loss"] for e in model.training_log)
        metrics["config"] = asdict(model.config)
    else:
        metrics["hyperparams"] = model.hp.as_dict()
    if search_log:
        metrics["search"] = search_log
    path = out / "model.json"
    models.save_model(model, path)
    return inputs, [path, _write_json(out / "metrics.json", metrics)]


def cmd_predict(cfg, out):
    _need(cfg, "dataset", "model")
    model = models.load_model(cfg["model"])
    samples = _load(cfg["dataset"])
    pred = models.predict(model, samples, strict=False)
    true = [s.log_eta for s in samples]
    rows = [(s.record_id, t, p) for s, t, p in zip(samples, true, pred)]
    metrics = {"records": len(samples), "ome": ev.ome(pred, true)}
    try:
        metrics["r_squared"] = ev.r_squared(pred, true)
    except ValidationError:
        metrics["r_squared"] = None
    return [cfg["dataset"], cfg["model"]], [
        _write_csv(out / "predictions.csv", ("record_id", "true_log10_eta", "pred_log10_eta"), rows),
        _write_json(out / "metrics.json", metrics),
    ]


def cmd_fit_params(cfg, out):
    _need(cfg, "dataset")
    variable = ev.canonical_variable(cfg["variable"])
    law = ev.LAW_FOR[variable]
    samples = _load(cfg["dataset"])
    groups: dict = {}
    for s in samples:
        groups.setdefault(ev._condition_key(s, variable), []).append(s)
    names = curvefit.PARAMS[law]
    rows = []
    for key in sorted(groups):
        pts = curvefit.collapse_duplicates([(ev.variable_value(s, variable), s.log_eta) for s in groups[key]])
        if len(pts) < curvefit.MIN_POINTS:
            continue
        try:
            r = curvefit.fit(curvefit.FitProblem(law, pts), seed=cfg["seed"])
        except PolyviscError as exc:
            log.warning("fit skipped for %s: %s", key[0], exc)
            continue
        rows.append((key[0], *key[1:], len(pts), *r.params, r.residual_rms, int(r.converged)))
    held = {"Mw": ("temp_K", "shear_1_per_s"), "shear": ("mw_gmol", "temp_K"), "T": ("mw_gmol", "shear_1_per_s")}
    header = ("chemistry", *held[variable], "n_points", *names, "residual_rms", "converged")
    return [cfg["dataset"]], [_write_csv(out / "params.csv", header, rows)]


def cmd_extrapolate(cfg, out):
    _need(cfg, "dataset", "model")
    model = models.load_model(cfg["model"])
    samples = _load(cfg["dataset"])
    inputs = [cfg["dataset"], cfg["model"]]
    if cfg.get("split"):
        _need(cfg, "split")
        _, _, samples = _split_samples(samples, cfg["split"])
        inputs.append(cfg["split"])
    variable = ev.canonical_variable(cfg["variable"])
    rows, fits = [], []
    for s in samples:
        curve = ev.sweep_predict(model, s, ev.default_sweep(variable, s, cfg["n_grid"]))
        rows.extend((s.record_id, variable, g, None if not np.isfinite(p) else p) for g, p in zip(curve.grid, curve.pred))
        try:
            fit = ev.estimate_params_from_sweep(curve)
            fits.append((s.record_id, *fit.params, fit.residual_rms, int(fit.converged)))
        except PolyviscError as exc:
            log.warning("sweep fit failed for %s: %s", s.record_id, exc)
    law = ev.LAW_FOR[variable]
    return inputs, [
        _write_csv(out / "curves.csv", ("record_id", "variable", "grid_value", "pred_log10_eta"), rows),
        _write_csv(out / "sweep_fits.csv", ("record_id", *curvefit.PARAMS[law], "residual_rms", "converged"), fits),
    ]


def cmd_evaluate(cfg, out):
    if isinstance(cfg.get("model"), str):
        cfg["model"] = [cfg["model"]]
    _need(cfg, "dataset", "model", "split")
    samples = _load(cfg["dataset"])
    plan, _, test = _split_samples(samples, cfg["split"])
    if plan.variable == "random":
        raise UsageError("evaluate needs a physical-variable split")
    named = {}
    for path in cfg["model"]:
        m = models.load_model(path)
        name = m.kind if m.kind not in named else f"{m.kind}_{len(named)}"
        named[name] = m
    inputs = [cfg["dataset"], *cfg["model"], cfg["split"]]
    truth = None
    truth_dist = None
    if cfg.get("truth"):
        _need(cfg, "truth")
        truth = synthetic.load_truth(cfg["truth"])
        inputs.append(cfg["truth"])
    else:
        truth_dist = ev.ground_truth_params(samples, plan.variable)
    trial = ev.run_trial(named, test, plan.variable, truth=truth, theta_acc=cfg["theta_acc"],
                         theta_fit=cfg["theta_fit"], n_grid=cfg["n_grid"], label=f"seed{plan.seed}")
    report = ev.build_report([trial], truth_distribution=truth_dist, bins=cfg["bins"], theta_acc=cfg["theta_acc"],
                             theta_fit=cfg["theta_fit"])
    path = out / "report.json"
    path.write_text(report.to_json(), encoding="utf-8")
    return inputs, [path]


def cmd_synth(cfg, out):
    csv_path, truth_path = synthetic.write_synthetic(out, cfg["n_chem"], cfg["pts_per_chem"], cfg["noise_sigma"],
                                                     cfg["seed"])
    return [], [csv_path, truth_path]


def cmd_report(cfg, out):
    _need(cfg, "report")
    try:
        report = ev.EvaluationReport.from_dict(json.loads(Path(cfg["report"]).read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError) as exc:
        raise ValidationError(f"{cfg['report']}: not an evaluation report ({exc})") from exc
    curves = out / "curves.csv"
    ev.write_curve_csv(report, curves)
    rows = []
    for name, s in sorted(report.summary.items()):
        kl = report.kl.get(name, {})
        rows.append((name, s["ome"], s["sweeps"], s["tallies"]["Success"], s["tallies"]["FitButWrongTrend"],
                     s["tallies"]["Fail"], s["success_rate"], *(kl.get(k) for k in ev.DIST_PARAMS[report.variable])))
    header = ("model", "ome", "sweeps", "success", "fit_but_wrong_trend", "fail", "success_rate",
              *(f"kl_{k}" for k in ev.DIST_PARAMS[report.variable]))
    return [cfg["report"]], [curves, _write_csv(out / "summary.csv", header, rows)]


COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "train": cmd_train,
    "predict": cmd_predict,
    "fit-params": cmd_fit_params,
    "extrapolate": cmd_extrapolate,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "report": cmd_report,
}


def main(argv=None) -> int:
    level = LOG_LEVELS.get(os.environ.get("RHEO_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        inputs, outputs = COMMANDS[args.command](cfg, out)
        write_manifest(cfg, inputs, out, outputs)
    except ValidationError as exc:
        print(f"polyvisc {args.command}: invalid input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("traceback", exc_info=True)
        print(f"polyvisc {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
