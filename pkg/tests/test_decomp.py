import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bumpforge.decomp import (
    ALL,
    BumpLayout,
    assemble,
    b1_threshold,
    barycenter,
    choose_delta,
    choose_R,
    constraint_residuals,
    delta_conditions,
    emerging_parts,
    make_thresholds,
    project_to_S,
    ray_derivatives,
    split,
    theta_certificate,
    theta_for_part,
    theta_project,
)
from bumpforge.energy import Problem, action_I, action_J
from bumpforge.errors import (
    ConfigError,
    DomainError,
    EmergingOutsideBalls,
    EmptyBump,
    ThresholdViolated,
)
from bumpforge.field import Domain
from bumpforge.limit import solve_ground_state

DOM = Domain(2, 12.0, 97)


@pytest.fixture(scope="module")
def pack():
    return solve_ground_state(1.0, 3.0, DOM)


@pytest.fixture(scope="module")
def thr(pack):
    return make_thresholds(pack, 1.0, 0.5, 2.0)


@pytest.fixture(scope="module")
def flat():
    return Problem.flat(DOM, 1.0)


def tent(center, height, radius, dom=DOM):
    return np.maximum(0.0, height * (1.0 - dom.radius(center) / radius))


# ---------------------------------------------------------------- thresholds

def test_delta_example():
    assert all(delta_conditions(0.25, 1.0, 3.0, 0.5))
    assert all(delta_conditions(0.125, 1.0, 3.0, 0.5))
    assert choose_delta(1.0, 3.0, 2.0, 0.5) == 0.25


def test_delta_shrinks_near_eta_limit():
    d = choose_delta(1.0, 3.0, 2.0, 0.999)
    assert d < 0.05
    # (iii) is the binding condition
    assert 1.0 - d ** 2 > 0.999 ** 2


@pytest.mark.parametrize("eta", [1.0, 1.5])
def test_delta_rejects_large_eta(eta):
    with pytest.raises(ConfigError):
        choose_delta(1.0, 3.0, 2.0, eta)


def test_R_one_dimensional():
    dom = Domain(1, 12.0, 481)
    pk = solve_ground_state(1.0, 3.0, dom)
    R = choose_R(pk, 0.1)
    r_cross = math.acosh(math.sqrt(2) / 0.1)
    assert R == pytest.approx(2 * r_cross, abs=dom.h)
    assert choose_R(pk, 0.05) >= R
    with pytest.raises(ConfigError):
        choose_R(pk, pk.peak)


@pytest.mark.parametrize("delta,p,q,expected", [(0.1, 3, 2, 0.3), (0.25, 5, 2, 0.15625)])
def test_b1(delta, p, q, expected):
    assert b1_threshold(delta, p, q) == pytest.approx(expected)


def test_b1_rejects_q():
    with pytest.raises(ConfigError):
        b1_threshold(0.1, 3, 1)


# ---------------------------------------------------------------- split

def test_split_examples():
    d = 0.25
    s = split(np.full(5, d / 2), d)
    assert np.all(s.low == d / 2) and np.all(s.high == 0)
    s = split(np.full(5, 2 * d), d)
    assert np.all(s.low == d) and np.all(s.high == d)
    with pytest.raises(DomainError):
        split(np.array([-1.0, 0.0]), d)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), m=st.integers(2, 6))
def test_split_exact(seed, m):
    delta = 2.0 ** -m
    u = np.random.default_rng(seed).random(200) * 4 * delta
    s = split(u, delta)
    assert np.array_equal(s.low + s.high, u)
    assert s.low.min() >= 0 and s.low.max() <= delta and s.high.min() >= 0


def test_split_of_w_inside_half_ball(pack, thr):
    high = split(pack.grid, thr.delta).high
    assert np.all(DOM.radius()[high > 0] < thr.R / 2)


# ---------------------------------------------------------------- layouts and parts

def test_single_part_is_high(pack, thr):
    lay = BumpLayout(np.zeros((1, 2)), thr.R)
    high = split(pack.grid, thr.delta).high
    parts = emerging_parts(high, lay, DOM).parts
    assert len(parts) == 1 and np.array_equal(parts[0], high)


def test_two_parts_disjoint(pack, thr):
    c = np.array([[-1.5 * thr.R, 0.0], [1.5 * thr.R, 0.0]])
    u = pack.translate(c[0]) + pack.translate(c[1])
    lay = BumpLayout(c, thr.R)
    parts = emerging_parts(split(u, thr.delta).high, lay, DOM).parts
    assert len(parts) == 2
    assert not np.any((parts[0] > 0) & (parts[1] > 0))


def test_stray_mass_raises(pack, thr):
    c = np.array([[-2 * thr.R, 0.0], [2 * thr.R, 0.0]])
    lay = BumpLayout(c, thr.R)
    u = pack.translate([0.0, 0.0]) + pack.translate(c[0]) + pack.translate(c[1])
    with pytest.raises(EmergingOutsideBalls):
        emerging_parts(split(u, thr.delta).high, lay, DOM)


def test_empty_part_raises(pack, thr):
    lay = BumpLayout(np.array([[0.0, 0.0], [2.5 * thr.R, 0.0]]), thr.R)
    with pytest.raises(EmptyBump):
        emerging_parts(split(pack.grid, thr.delta).high, lay, DOM)


def test_layout_validation(thr):
    with pytest.raises(ConfigError):
        BumpLayout(np.array([[0.0, 0.0], [thr.R, 0.0]]), thr.R).validate(DOM)
    with pytest.raises(ConfigError):
        BumpLayout(np.array([[DOM.L - 1.0, 0.0]]), thr.R).validate(DOM, 1.0)
    BumpLayout(np.zeros((1, 2)), thr.R).validate(DOM, 1.0)


# ---------------------------------------------------------------- barycenter

def test_barycenter_symmetric(pack):
    assert np.max(np.abs(barycenter(pack.grid, [0.0, 0.0], DOM))) <= DOM.h


@pytest.mark.parametrize("s", [0.1, 0.37, -0.6])
def test_barycenter_shift(pack, s):
    u = pack.translate([s, 0.0])
    beta = barycenter(u, [0.0, 0.0], DOM)
    assert beta[0] == pytest.approx(s, abs=DOM.h**2)
    assert abs(beta[1]) < 1e-12


def test_barycenter_equivariance(pack):
    shift = np.array([3 * DOM.h, -2 * DOM.h])
    b0 = barycenter(pack.translate([0.2, 0.1]), [0.0, 0.0], DOM)
    b1 = barycenter(pack.translate(shift + [0.2, 0.1]), shift, DOM)
    np.testing.assert_allclose(b1, b0, atol=DOM.h**2)


def test_barycenter_empty():
    with pytest.raises(EmptyBump):
        barycenter(np.zeros(DOM.shape), [0.0, 0.0], DOM)


# ---------------------------------------------------------------- theta

def test_theta_on_w(pack, thr, flat):
    lay = BumpLayout(np.zeros((1, 2)), thr.R)
    assert theta_project(pack.grid, lay, 0, flat, thr) == pytest.approx(1.0, abs=1e-2)
    assert theta_project(pack.grid, lay, ALL, flat, thr) == pytest.approx(1.0, abs=1e-2)


@pytest.mark.parametrize("s", [0.5, 2.0, 5.0])
@pytest.mark.parametrize("coupled", [True, False])
def test_theta_scale_law(pack, thr, flat, s, coupled):
    lay = BumpLayout(np.zeros((1, 2)), thr.R)
    u = tent([0.3, -0.2], 2.0, 3.0) + 0.5 * pack.grid
    sp = split(u, thr.delta)
    t1 = theta_project(u, lay, 0, flat, thr, coupled=coupled)
    t2 = theta_project(sp.low + s * sp.high, lay, 0, flat, thr, coupled=coupled)
    assert t2 * s == pytest.approx(t1, rel=1e-10)


def _brute_argmax(g, hi=4.0, n=10_000):
    # two passes of 10^4 samples: coarse over [0, hi], then one coarse cell either side
    ts = np.linspace(0.0, hi, n)
    vals = np.array([g(t) for t in ts])
    j = int(np.argmax(vals))
    ts = np.linspace(ts[max(j - 1, 0)], ts[min(j + 1, n - 1)], n)
    vals = np.array([g(t) for t in ts])
    return ts[int(np.argmax(vals))], ts[1] - ts[0]


@pytest.mark.parametrize("seed", range(3))
def test_theta_brute_force(thr, seed):
    dom = Domain(2, 6.0, 49)
    rng = np.random.default_rng(seed)
    prob = Problem(dom, np.full(dom.shape, 1.0), np.full(dom.shape, 0.5 * thr.B1), 3.0, 2.0, 1.0)
    u = tent(rng.uniform(-1, 1, 2), rng.uniform(1.2, 2.5), rng.uniform(2.0, 3.5), dom)
    sp = split(u, thr.delta)
    # coupled ray of the plain functional: t -> I(low + t v)
    t_c = theta_for_part(sp.high, prob, thr.delta, thr.B1, low=sp.low)
    t_b, res = _brute_argmax(lambda t: action_I(sp.low + t * sp.high, prob).total)
    assert abs(t_c - t_b) <= max(res, 1e-4 * t_c)
    # pure J ray
    t_j = theta_for_part(sp.high, prob, thr.delta, thr.B1)
    t_b, res = _brute_argmax(lambda t: action_J(t * sp.high, prob, thr.delta))
    assert abs(t_j - t_b) <= max(res, 1e-4 * t_j)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_third_derivative_certificate(thr, seed):
    rng = np.random.default_rng(seed)
    prob = Problem(DOM, np.full(DOM.shape, 1.0), np.full(DOM.shape, 0.9 * thr.B1), 3.0, 2.0, 1.0)
    v = rng.random(DOM.shape) * tent(rng.uniform(-2, 2, 2), 2.0, rng.uniform(1.0, 3.0))
    if not np.any(v > 0):
        return
    d1, d2, d3 = ray_derivatives(v, prob, thr.delta)
    assert all(d3(t) < 0 for t in np.linspace(0.0, 20.0, 64))


def test_theta_certificate(thr, flat, pack):
    v = split(pack.grid, thr.delta).high
    t = theta_for_part(v, flat, thr.delta, thr.B1)
    cert = theta_certificate(v, flat, thr.delta, t)
    assert cert["ok"] and cert["sign_changes"] == 1 and cert["g2"] < 0


def test_theta_threshold_violation(thr, pack):
    prob = Problem(DOM, np.full(DOM.shape, 1.0), np.full(DOM.shape, thr.B1), 3.0, 2.0, 1.0)
    with pytest.raises(ThresholdViolated):
        theta_for_part(split(pack.grid, thr.delta).high, prob, thr.delta, thr.B1)


def test_theta_empty(thr, flat):
    with pytest.raises(EmptyBump):
        theta_for_part(np.zeros(DOM.shape), flat, thr.delta, thr.B1)


# ---------------------------------------------------------------- projection

def test_project_lands_in_S(pack, thr, flat):
    c = np.array([[-1.5 * thr.R, 0.3], [1.5 * thr.R, -0.2]])
    lay = BumpLayout(np.round(c / DOM.h) * DOM.h, thr.R)
    u = 1.2 * pack.translate(c[0]) + 0.8 * pack.translate(c[1])
    out, res = project_to_S(u, lay, flat, thr)
    assert res.within(1e-6)
    again = constraint_residuals(out, lay, flat, thr)
    assert again.within(1e-6)
    # each part carries positive J (a genuine member of S)
    parts = emerging_parts(split(out, thr.delta).high, lay, DOM).parts
    assert all(action_J(v, flat, thr.delta) > 0 for v in parts)


def test_project_idempotent(pack, thr, flat):
    lay = BumpLayout(np.zeros((1, 2)), thr.R)
    out, _ = project_to_S(1.3 * pack.grid, lay, flat, thr)
    out2, _ = project_to_S(out, lay, flat, thr)
    assert np.max(np.abs(out2 - out)) <= 1e-8


def test_translates_have_theta_near_one(pack, thr, flat):
    c = np.array([[-1.5 * thr.R, 0.0], [1.5 * thr.R, 0.0]])
    lay = BumpLayout(c, thr.R)
    u = pack.translate(c[0]) + pack.translate(c[1])
    for i in range(2):
        assert theta_project(u, lay, i, flat, thr) == pytest.approx(1.0, abs=0.02)


def test_cap_construction_is_member(thr, flat):
    # radial caps above delta at each center, then projected
    c = np.array([[-2.0 * thr.R, 0.0], [2.0 * thr.R, 0.0]])
    lay = BumpLayout(c, thr.R)
    u = sum(tent(ci, 3 * thr.delta, thr.R / 2) for ci in c)
    out, res = project_to_S(u, lay, flat, thr)
    assert res.within(1e-6)


def test_assemble_raises_low():
    low = np.array([0.1, 0.2, 0.0])
    v = np.array([0.0, 0.5, 0.0])
    np.testing.assert_array_equal(assemble(low, [v], 0.25), [0.1, 0.75, 0.0])
