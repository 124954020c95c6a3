"""Shared test helpers: random draws, finite differences, tiny networks."""

import numpy as np

import oracles
from polyvisc import nn
from polyvisc.physics import PARAM_BOUNDS, PARAM_NAMES, EmpiricalParams, PhysicalConditions, log_eta


def random_params(rng, margin=0.05):
    vals = {}
    for name, (lo, hi) in PARAM_BOUNDS.items():
        span = hi - lo
        vals[name] = rng.uniform(lo + margin * span, hi - margin * span)
    return EmpiricalParams(**vals)


def random_conditions(rng, p):
    # keep T above Tr so the WLF denominator stays well away from its pole
    return PhysicalConditions(
        log_Mw=rng.uniform(-1.5, 1.5),
        T=p.Tr + rng.uniform(0.0, 2.0),
        log_g=rng.uniform(-1.5, 1.5),
    )


def oracle_value(c, p):
    return oracles.log_eta(c.log_Mw, c.T, c.log_g, *[getattr(p, k) for k in PARAM_NAMES])


def finite_difference(c, p, h=1e-5):
    pv, cv = p.to_vector(), c.to_vector()
    gp, gc = np.zeros(len(pv)), np.zeros(len(cv))
    for i in range(len(pv)):
        up, dn = pv.copy(), pv.copy()
        up[i] += h
        dn[i] -= h
        gp[i] = (log_eta(c, EmpiricalParams.from_vector(up)) - log_eta(c, EmpiricalParams.from_vector(dn))) / (2 * h)
    for i in range(len(cv)):
        up, dn = cv.copy(), cv.copy()
        up[i] += h
        dn[i] -= h
        gc[i] = (log_eta(PhysicalConditions.from_vector(up), p) - log_eta(PhysicalConditions.from_vector(dn), p)) / (
            2 * h
        )
    return gp, gc


def assert_rel_close(actual, expected, rtol, floor=1e-7):
    err = np.abs(actual - expected)
    assert np.all(err <= rtol * np.abs(expected) + floor), (actual, expected)


def tiny_penn(seed=0, n_in=5, h1=7, h2=6):
    cfg = nn.MlpConfig(layer1_size=h1, layer2_size=h2, seed=seed)
    return nn.build_model("penn", n_in, cfg)


def random_batch(rng, n=16, n_in=5):
    chem = rng.uniform(-1, 1, size=(n, n_in))
    cond = np.column_stack([rng.uniform(-1, 1, n), rng.uniform(0.2, 1.0, n), rng.uniform(-1, 1, n)])
    y = rng.uniform(-1, 1, n)
    return chem, cond, y


def fd_grads(f, arrays, h=1e-4):
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = f()
            a[idx] = old - h
            dn = f()
            a[idx] = old
            g[idx] = (up - dn) / (2 * h)
        out.append(g)
    return out
