"""Acceptance run: one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line that is printed in the session summary.
The heavy criteria (8 to 10) take a few minutes in total on one core.
"""

import math
import time

import numpy as np
import pytest

from acceptance_log import record
from bumpforge.cli import run
from bumpforge.decomp import (
    BumpLayout,
    make_thresholds,
    ray_derivatives,
    split,
    theta_for_part,
    theta_project,
)
from bumpforge.diagnostics import b_scan, ground_state_probe
from bumpforge.energy import Problem, action_I, action_I_inf, action_J, action_J_inf, grad_I
from bumpforge.field import Domain, e1_pair, e2_pair
from bumpforge.limit import decay_fit, solve_ground_state
from bumpforge.maxmin import OuterOptions, initial_guess, minimize_on_S, outer_maximize


def _check(number, title, checks, detail):
    ok = all(checks)
    record(number, title, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- 1

def test_c01_limit_oracle():
    t0 = time.perf_counter()
    pack = solve_ground_state(1.0, 3.0, Domain(1, 12.0, 481))
    secs = time.perf_counter() - t0
    r = pack.profile.r
    err = float(np.max(np.abs(pack.profile.w - math.sqrt(2) / np.cosh(r))))
    dm = abs(pack.m_inf - 4 / 3)
    _check(1, "limit oracle", [err <= 1e-6, dm <= 1e-4, secs < 1.0],
           f"sup|w - sqrt2 sech| = {err:.2e}, |m_inf - 4/3| = {dm:.2e}, {secs:.2f} s")


# ---------------------------------------------------------------- 2

def test_c02_decay_law():
    parts, checks = [], []
    for N, dom in ((1, Domain(1, 12.0, 481)), (2, Domain(2, 12.0, 129))):
        for a in (1.0, 4.0):
            sigma, kappa = decay_fit(solve_ground_state(a, 3.0, dom))
            rel = abs(sigma / math.sqrt(a) - 1)
            checks.append(rel <= 0.05)
            if N == 2:
                checks.append(abs(kappa - 0.5) <= 0.1)
            parts.append(f"N={N} a={a:g}: rate {sigma:.4f} power {kappa:.3f}")
    _check(2, "decay law", checks, "; ".join(parts))


# ---------------------------------------------------------------- 3

def test_c03_scaling_law():
    worst = 0.0
    for dom in (Domain(1, 12.0, 481), Domain(2, 12.0, 129)):
        m1 = solve_ground_state(1.0, 3.0, dom).m_inf
        for a in (0.5, 2.0, 4.0):
            ratio = solve_ground_state(a, 3.0, dom).m_inf / m1
            expected = a ** ((3 + 1) / (3 - 1) - dom.N / 2)
            worst = max(worst, abs(ratio / expected - 1))
    _check(3, "scaling law", [worst <= 1e-3], f"worst relative error {worst:.2e}")


# ---------------------------------------------------------------- 4

def _random_nonneg(rng, dom):
    u = rng.random(dom.shape) * rng.uniform(0.5, 3.0)
    r = dom.radius(rng.uniform(-2, 2, dom.N))
    u = u * np.exp(-0.2 * r**2) + rng.uniform(0.5, 3.0) * np.exp(-r**2)
    u[~dom.interior] = 0.0
    return u


def test_c04_splitting_identities():
    dom = Domain(2, 6.0, 49)
    prob = Problem.from_pair(e1_pair(0.1), dom)
    delta = 0.25
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        u = _random_nonneg(rng, dom)
        s = split(u, delta)
        i1 = action_I(u, prob, delta).total
        r1 = action_I(s.low, prob, delta).total + action_J(s.high, prob, delta)
        i2 = action_I_inf(u, prob, delta).total
        r2 = action_I_inf(s.low, prob, delta).total + action_J_inf(s.high, prob, delta)
        worst = max(worst, abs(r1 - i1) / abs(i1), abs(r2 - i2) / abs(i2))
    _check(4, "splitting identities", [worst <= 1e-10],
           f"worst relative defect over 100 fields {worst:.2e}")


# ---------------------------------------------------------------- 5

def _brute_argmax(g, hi=4.0, n=10_000):
    ts = np.linspace(0.0, hi, n)
    j = int(np.argmax([g(t) for t in ts]))
    ts = np.linspace(ts[max(j - 1, 0)], ts[min(j + 1, n - 1)], n)
    return ts[int(np.argmax([g(t) for t in ts]))]


def test_c05_theta_projection():
    dom = Domain(2, 12.0, 97)
    pack = solve_ground_state(1.0, 3.0, dom)
    thr = make_thresholds(pack, 1.0, 0.5, 2.0)
    flat = Problem.flat(dom, 1.0)
    lay = BumpLayout(np.zeros((1, 2)), thr.R)
    # theta on w
    t_w = theta_project(pack.grid, lay, 0, flat, thr)
    # scale law
    u = pack.grid + 0.3 * np.maximum(0.0, 1.0 - dom.radius([0.4, -0.3]) / 2.5)
    sp = split(u, thr.delta)
    t1 = theta_project(u, lay, 0, flat, thr)
    scale_err = max(abs(theta_project(sp.low + s * sp.high, lay, 0, flat, thr) * s / t1 - 1)
                    for s in (0.5, 2.0, 5.0))
    # brute force against action_I on a smaller grid
    small = Domain(2, 6.0, 49)
    rng = np.random.default_rng(5)
    brute = 0.0
    for _ in range(2):
        prob = Problem(small, np.ones(small.shape), np.full(small.shape, 0.5 * thr.B1),
                       3.0, 2.0, 1.0)
        tent = np.maximum(0.0, rng.uniform(1.2, 2.5) * (1 - small.radius(rng.uniform(-1, 1, 2))
                                                        / rng.uniform(2.0, 3.5)))
        s2 = split(tent, thr.delta)
        t = theta_for_part(s2.high, prob, thr.delta, thr.B1, low=s2.low)
        tb = _brute_argmax(lambda x: action_I(s2.low + x * s2.high, prob).total)
        brute = max(brute, abs(t - tb))
    # third-derivative certificate at |b| = 0.9 B1
    prob = Problem(dom, np.ones(dom.shape), np.full(dom.shape, 0.9 * thr.B1), 3.0, 2.0, 1.0)
    cert = True
    for _ in range(20):
        v = rng.random(dom.shape) * np.maximum(0.0, 2 - dom.radius(rng.uniform(-3, 3, 2)))
        d3 = ray_derivatives(v, prob, thr.delta)[2]
        cert &= all(d3(t) < 0 for t in np.linspace(0.0, 20.0, 64))
    _check(5, "theta projection",
           [brute <= 1e-4, abs(t_w - 1) <= 1e-2, scale_err <= 1e-8, cert],
           f"brute-force gap {brute:.1e}, theta(w) = {t_w:.5f}, scale-law error "
           f"{scale_err:.1e}, g''' < 0 on 20 random parts: {cert}")


# ---------------------------------------------------------------- 6

def test_c06_gradient_consistency():
    dom = Domain(2, 6.0, 49)
    prob = Problem.from_pair(e1_pair(0.1), dom)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        u = _random_nonneg(rng, dom)
        v = rng.standard_normal(dom.shape)
        v[~dom.interior] = 0.0
        eps = 1e-5 * float(np.max(u))
        fd = (action_I(u + eps * v, prob).total - action_I(u - eps * v, prob).total) / (2 * eps)
        an = float(np.sum(grad_I(u, prob) * v)) * dom.h**2
        worst = max(worst, abs(an - fd) / abs(fd))
    _check(6, "gradient consistency", [worst <= 1e-5], f"worst relative FD gap {worst:.2e}")


# ---------------------------------------------------------------- 7

MEASURED = {}


def _flat_solve(L, centers):
    dom = Domain(2, L, 129)
    pack = solve_ground_state(1.0, 3.0, dom)
    thr = make_thresholds(pack, 1.0, 0.5, 2.0)
    flat = Problem.flat(dom, 1.0)
    lay = BumpLayout(np.asarray(centers, float), thr.R)
    t0 = time.perf_counter()
    res = minimize_on_S(lay, initial_guess(lay, pack, flat, thr), flat, thr)
    return res, pack, thr, time.perf_counter() - t0


def test_c07_mu_recovery():
    res1, pack1, thr, s1 = _flat_solve(10.0, [[0.0, 0.0]])
    e1 = res1.mu / pack1.m_inf - 1
    # diagonal pair 6R apart; the box keeps each ball four decay lengths from the wall
    dom2 = Domain(2, 18.5, 129)
    c = 34 * dom2.h
    res2, pack2, thr2, s2 = _flat_solve(18.5, [[c, c], [-c, -c]])
    sep = res2.layout.min_separation()
    e2 = res2.mu / (2 * pack2.m_inf) - 1
    MEASURED["k1_rel_error"] = abs(e1)
    _check(7, "mu recovery",
           [abs(e1) <= 0.02, abs(e2) <= 0.03, sep >= 6 * thr2.R, s1 < 30, s2 < 30],
           f"k=1 mu {res1.mu:.4f} vs m_inf {pack1.m_inf:.4f} ({100 * e1:+.2f}%, {s1:.1f} s); "
           f"k=2 at separation {sep:.2f} >= 6R = {6 * thr2.R:.2f}: mu {res2.mu:.4f} vs "
           f"2 m_inf ({100 * e2:+.2f}%, {s2:.1f} s)")


# ---------------------------------------------------------------- 8

def test_c08_ladder_e1():
    err = MEASURED.get("k1_rel_error")
    if err is None:
        res1, pack1, _, _ = _flat_solve(10.0, [[0.0, 0.0]])
        err = abs(res1.mu / pack1.m_inf - 1)
    pair = e1_pair(0.1)
    dom = Domain(2, 16.0, 129)
    pack = solve_ground_state(pair.a_inf, 3.0, dom)
    thr = make_thresholds(pack, pair.a0, pair.eta, 2.0)
    prob = Problem.from_pair(pair, dom)
    # the limit level on this very grid is the discrete counterpart of m_inf
    flat = Problem.flat(dom, pair.a_inf)
    lay0 = BumpLayout(np.zeros((1, 2)), thr.R)
    m_grid = minimize_on_S(lay0, initial_guess(lay0, pack, flat, thr), flat, thr).mu
    tol = err * m_grid
    rep1 = outer_maximize(1, prob, thr, pack, pair.a0, zeta=pair.zeta)
    c = rep1.layout.centers
    rep2 = outer_maximize(2, prob, thr, pack, pair.a0, zeta=pair.zeta, seeds=[np.vstack([c, -c])])
    m1 = rep1.mu - m_grid
    m2 = rep2.mu - rep1.mu - m_grid
    cont = rep1.mu - pack.m_inf
    _check(8, "energy ladder on E1 (C=0.1)", [m1 > tol, m2 > -tol],
           f"mu1 = {rep1.mu:.4f}, mu2 = {rep2.mu:.4f}, grid m_inf = {m_grid:.4f}, "
           f"tol = {tol:.4f}; mu1 - m_inf = {m1:+.4f}, mu2 - mu1 - m_inf = {m2:+.4f} "
           f"(against the continuum m_inf {pack.m_inf:.4f}: mu1 - m_inf = {cont:+.4f})")


# ---------------------------------------------------------------- 9

def test_c09_b_scan_trends():
    pair = e1_pair(0.1)
    dom = Domain(2, 16.0, 129)
    pack = solve_ground_state(pair.a_inf, 3.0, dom)
    thr = make_thresholds(pack, pair.a0, pair.eta, 2.0)
    t0 = time.perf_counter()
    res = b_scan(pair, [0.2, 0.1, 0.05, 0.025], 2, dom, pack, thr=thr,
                 outer=OuterOptions(max_evals=40))
    secs = time.perf_counter() - t0
    lam = res.trends["max_lambda"]
    sep = res.trends["min_separation"]
    _check(9, "multiplier and separation trends",
           [lam["pass"], sep["pass"], res.trends["converged_rows"] == 4],
           f"max|lambda| {['%.2e' % v for v in lam['values']]} ({lam['violations']} "
           f"violations), min separation {['%.2f' % v for v in sep['values']]} "
           f"({sep['violations']} violations), {secs:.0f} s")


# ---------------------------------------------------------------- 10

def test_c10_ground_state_probes():
    t0 = time.perf_counter()
    v1 = ground_state_probe(e1_pair(0.05), [20.0, 30.0])
    s1 = time.perf_counter() - t0
    t0 = time.perf_counter()
    v2 = ground_state_probe(e2_pair(16, 0.05), [20.0, 30.0])
    s2 = time.perf_counter() - t0
    _check(10, "ground-state probes",
           [v1.verdict == "exists", v1.margin > 0, v2.verdict == "escape", s1 < 300, s2 < 300],
           f"E1: {v1.verdict}, margin {v1.margin:.4f} ({s1:.0f} s); E2 (n=16): {v2.verdict}, "
           f"centers {[round(float(np.linalg.norm(c)), 2) for c in v2.centers]} "
           f"at L = 20, 30 ({s2:.0f} s)")


# ---------------------------------------------------------------- 11

@pytest.mark.parametrize("argv", [
    ["maxmin", "--config", "configs/e1.cfg", "--k", "1", "--M", "65", "--max-evals", "12",
     "--n-random", "2", "--seed", "11"],
])
def test_c11_determinism(tmp_path, argv, monkeypatch):
    from pathlib import Path

    monkeypatch.chdir(Path(__file__).resolve().parents[1])
    blobs = []
    for j in range(2):
        out = tmp_path / f"run{j}.json"
        csv = tmp_path / f"run{j}.csv"
        assert run(argv + ["--out", str(out), "--csv", str(csv)]) == 0
        blobs.append(out.read_bytes() + csv.read_bytes())
    same = blobs[0] == blobs[1]
    _check(11, "determinism", [same], f"two seeded maxmin runs byte-identical (JSON + CSV): {same}")
