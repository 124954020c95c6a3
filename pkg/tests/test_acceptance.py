"""Acceptance criteria 1-9.

Each test records ``criterion`` and a one-line ``detail``; the conftest hook
prints a PASS/FAIL/SKIP line per criterion after the run.  Tolerances and
runtime budgets are pinned here, not derived from the implementation.
"""

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from fit_cases import CASES, relative_error
from helpers import (
    assert_rel_close,
    fd_grads,
    finite_difference,
    oracle_value,
    random_batch,
    random_conditions,
    random_params,
    tiny_penn,
)
from polyvisc import cli, curvefit, models, nn, synthetic
from polyvisc import evaluation as ev
from polyvisc.data import impute_pdi, load_dataset
from polyvisc.gpr import GprHyperparams, gpr_fit, gpr_predict
from polyvisc.physics import (
    COND_NAMES,
    PARAM_NAMES,
    PhysicalConditions,
    exact_log_eta_mw,
    exact_shear_law,
    log_eta,
    log_eta_with_grad,
    wlf_log_shift,
)

POLYVERSE_ENV = "POLYVISC_POLYVERSE_CSV"


@pytest.fixture
def criterion(record_property):
    def note(n, detail):
        record_property("criterion", n)
        record_property("detail", detail)
        print(f"criterion {n}: {detail}")

    return note


def test_criterion_1_physics_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(1000):
        p = random_params(rng, margin=0.0)
        c = random_conditions(rng, p)
        worst = max(worst, abs(log_eta(c, p) - oracle_value(c, p)))
    # smoothed vs exact piecewise, at least 0.5 log units from both critical points
    smooth_gap = 0.0
    for _ in range(1000):
        p = random_params(rng, margin=0.0)
        c = random_conditions(rng, p)
        x = p.log_Mcr + rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)
        g = p.log_gcr + rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)
        eta0 = exact_log_eta_mw(x, p.log_k1, p.alpha1, p.alpha2, p.log_Mcr) + float(wlf_log_shift(c.T, p))
        exact = exact_shear_law(g, eta0, p.n, p.log_gcr)
        smooth_gap = max(smooth_gap, abs(float(log_eta(PhysicalConditions(x, c.T, g), p)) - exact))
    elapsed = time.perf_counter() - t0
    criterion(1, f"max |pkg - oracle| {worst:.2e}, max smooth-exact gap {smooth_gap:.2e}, {elapsed:.2f}s")
    assert worst <= 1e-12
    assert smooth_gap < 1e-3
    assert elapsed < 1.0


def test_criterion_2_gradients(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    assert len(PARAM_NAMES) + len(COND_NAMES) == 14
    for _ in range(100):
        p = random_params(rng)
        c = random_conditions(rng, p)
        _, gp, gc = log_eta_with_grad(c, p)
        fp, fc = finite_difference(c, p)
        assert_rel_close(gp, fp, 1e-4)
        assert_rel_close(gc, fc, 1e-4)
    m = tiny_penn(seed=5)
    chem, cond, y = random_batch(np.random.default_rng(6), n=16)
    _, gw, gb = nn.penn_loss_and_grads(m.weights, m.biases, chem, cond, y, 0.01)
    fd = fd_grads(lambda: nn.penn_loss_and_grads(m.weights, m.biases, chem, cond, y, 0.01)[0], m.weights + m.biases)
    worst = max(float(np.max(np.abs(g - e) / (np.abs(e) + 1e-8))) for g, e in zip(gw + gb, fd))
    elapsed = time.perf_counter() - t0
    criterion(2, f"14 partials x 100 draws ok, PENN loss grad max rel err {worst:.2e}, {elapsed:.2f}s")
    for g, e in zip(gw + gb, fd):
        np.testing.assert_allclose(g, e, rtol=1e-3, atol=1e-8)
    assert elapsed < 10.0


def test_criterion_3_curve_fit_recovery(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    rates = {}
    for law, make in CASES.items():
        ok = converged = 0
        for _ in range(200):
            truth, pts, fixed = make(rng)
            r = curvefit.fit(curvefit.FitProblem(law, pts, fixed=fixed))
            if r.converged:
                converged += 1
                ok += bool(np.all(relative_error(r.params, truth) <= 1e-2))
        rates[law] = ok / max(converged, 1)
    x = np.linspace(400.0, 560.0, 12)
    y = 5.0 + np.array([oracles.wlf(v, 7.60, 227.3, 373.0) for v in x])
    wlf = curvefit.fit(curvefit.FitProblem("TempLaw", np.column_stack([x, y]), fixed={"Tr": 373.0}))
    wlf_err = max(abs(wlf.params[1] - 7.60) / 7.60, abs(wlf.params[2] - 227.3) / 227.3)
    elapsed = time.perf_counter() - t0
    summary = ", ".join(f"{k} {v:.1%}" for k, v in rates.items())
    criterion(3, f"within 1%: {summary}; WLF 7.60/227.3 rel err {wlf_err:.1e}; {elapsed:.1f}s")
    assert all(v >= 0.95 for v in rates.values())
    assert wlf_err < 1e-2
    assert elapsed < 30.0


def test_criterion_4_central_claim(criterion):
    t0 = time.perf_counter()
    samples, truth = synthetic.generate(93, 20, 0.1, seed=0)
    tmap = {c.name: c.true_params for c in truth}
    trials = []
    for seed in (0, 1, 2):
        plan = ev.physical_split(samples, "Mw", seed)
        train, test = plan.apply(samples)
        trained = {k: models.fit_model(train, k, config=nn.MlpConfig(seed=seed), seed=seed) for k in ("penn", "ann")}
        trials.append(ev.run_trial(trained, test, "Mw", truth=tmap, label=f"seed{seed}"))
    rep = ev.build_report(trials)
    penn, ann = rep.summary["penn"], rep.summary["ann"]
    kl_penn, kl_ann = rep.kl["penn"]["alpha2"], rep.kl["ann"]["alpha2"]
    elapsed = time.perf_counter() - t0
    criterion(4, f"PENN OME {penn['ome']:.3f}; success PENN {penn['success_rate']:.1%} vs ANN "
                 f"{ann['success_rate']:.1%}; alpha2 KL PENN {kl_penn:.2f} vs ANN {kl_ann:.2f}; {elapsed:.0f}s")
    assert penn["ome"] < 0.5
    assert penn["success_rate"] >= 2.0 * ann["success_rate"]
    assert kl_penn < kl_ann
    assert elapsed < 15 * 60


def test_criterion_5_penalty(criterion):
    t0 = time.perf_counter()
    samples, _ = synthetic.generate(93, 20, 0.1, seed=0)
    m = models.fit_model(samples, "penn", config=nn.MlpConfig(seed=0, w_alpha=1e3), seed=0)
    p = nn.predict_params(m, samples)
    a1, a2 = float(np.mean(p.alpha1)), float(np.mean(p.alpha2))
    elapsed = time.perf_counter() - t0
    criterion(5, f"mean alpha1 {a1:.4f}, mean alpha2 {a2:.4f}, {len(m.training_log)} epochs, {elapsed:.0f}s")
    assert abs(a1 - 1.0) <= 0.05
    assert abs(a2 - 3.4) <= 0.05
    assert elapsed < 5 * 60


def test_criterion_6_gpr(criterion):
    t0 = time.perf_counter()
    X = np.linspace(0.0, 2.0 * np.pi, 20)[:, None]
    y = np.sin(X[:, 0])
    model = gpr_fit(X, y, GprHyperparams(alpha=1e-2, length_scale=1.0, constant_value=1.0))
    mean, _ = gpr_predict(model, X)
    _, var = gpr_predict(model, np.linspace(-10.0, 20.0, 1001)[:, None])
    err = float(np.max(np.abs(mean - y)))
    elapsed = time.perf_counter() - t0
    criterion(6, f"max train error {err:.3e}, min variance {var.min():.2e}, {elapsed:.3f}s")
    assert err < 0.05
    assert np.all(var >= 0)
    assert elapsed < 1.0


def test_criterion_7_metrics(criterion):
    t0 = time.perf_counter()
    pred, true = np.array([1.5, 2.0, 4.0]), np.array([1.0, 2.0, 3.0])
    ome = ev.ome(pred, true)
    r2 = ev.r_squared(pred, true)
    # by hand: |d| = .5, 0, 1; mean(true) = 2; SS_tot = 2; SS_res = 1.25
    hand_r2 = 0.375
    p = np.random.default_rng(7).normal(size=500)
    kl = ev.kl_divergence(p, p)
    elapsed = time.perf_counter() - t0
    criterion(7, f"ome {ome!r}, r2 {r2!r} (hand {hand_r2!r}), KL(P,P) {kl:.1e}")
    assert ome == 0.5
    assert r2 == hand_r2
    assert abs(kl) <= 1e-9
    assert elapsed < 1.0


def _run_all_commands(root: Path, data: Path):
    out = root / "out"
    split = out / "split" / "split.json"
    runs = [
        ("synth", "--n-chem", 12, "--pts-per-chem", 12, "--noise-sigma", 0.1),
        ("ingest", "--dataset", data),
        ("split", "--dataset", data, "--variable", "mw"),
        ("train", "--dataset", data, "--split", split, "--kind", "penn", "--max-epochs", 30),
        ("train", "--dataset", data, "--split", split, "--kind", "ann", "--trials", 2, "--folds", 2),
        ("train", "--dataset", data, "--split", split, "--kind", "gpr", "--trials", 3, "--folds", 2),
        ("predict", "--dataset", data, "--model", out / "train-penn" / "model.json"),
        ("fit-params", "--dataset", data, "--variable", "shear"),
        ("extrapolate", "--dataset", data, "--split", split, "--variable", "temp",
         "--model", out / "train-penn" / "model.json"),
        ("evaluate", "--dataset", data, "--split", split, "--truth", root / "truth.json",
         "--model", out / "train-penn" / "model.json", "--model", out / "train-ann" / "model.json",
         "--model", out / "train-gpr" / "model.json"),
        ("report", "--report", out / "evaluate" / "report.json"),
    ]
    dirs = []
    for cmd, *rest in runs:
        name = cmd if cmd != "train" else f"train-{rest[rest.index('--kind') + 1]}"
        target = out / name if cmd != "synth" else root / "synth"
        code = cli.main([cmd, "--seed", "0", "--out", str(target), *map(str, rest)])
        assert code == 0, (cmd, code)
        dirs.append(target)
    return dirs


def _snapshot(dirs):
    return {f"{d.name}/{f.name}": f.read_bytes() for d in dirs for f in sorted(d.iterdir())}


def test_criterion_8_determinism(criterion, tmp_path, monkeypatch):
    t0 = time.perf_counter()
    # fixed inputs shared by both runs; outputs go to the same relative place
    data, truth = synthetic.write_synthetic(tmp_path, 12, 12, 0.1, seed=0)
    monkeypatch.chdir(tmp_path)
    snaps = []
    for _ in range(2):
        dirs = _run_all_commands(Path("."), Path(data.name))
        snaps.append(_snapshot(dirs))
        for d in dirs:
            for f in d.iterdir():
                f.unlink()
    same = [k for k in snaps[0] if snaps[0][k] == snaps[1].get(k)]
    manifests = [k for k in snaps[0] if k.endswith("manifest.json")]
    verified = all(
        o["sha256"] == hashlib.sha256(snaps[0][f"{k.split('/')[0]}/{o['path']}"]).hexdigest()
        for k in manifests for o in json.loads(snaps[0][k])["outputs"]
    )
    elapsed = time.perf_counter() - t0
    criterion(8, f"{len(same)}/{len(snaps[0])} files byte-identical over {len(manifests)} commands, "
                 f"manifest hashes verified {verified}, {elapsed:.1f}s")
    assert snaps[0].keys() == snaps[1].keys() and len(same) == len(snaps[0])
    assert verified and len(manifests) == 11
    assert elapsed < 60.0


def test_criterion_9_polyverse(criterion, tmp_path):
    path = os.environ.get(POLYVERSE_ENV)
    if not path or not Path(path).is_file():
        criterion(9, f"skipped: set {POLYVERSE_ENV} to the dataset CSV to run")
        pytest.skip(f"{POLYVERSE_ENV} not set")
    samples = impute_pdi(load_dataset(path))
    plan = ev.random_split(samples, seed=0)
    train, test = plan.apply(samples)
    model = models.fit_model(train, "penn", seed=0)
    ome = ev.ome(models.predict(model, test, strict=False), [s.log_eta for s in test])
    criterion(9, f"random-split held-out OME {ome:.3f} on {len(test)} records")
    assert ome < 1.5
