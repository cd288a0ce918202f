"""Finite checks of the qualitative claims: decay, shape, trends in the
b-amplitude, Nehari projections and ground-state existence probes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from .decomp import BumpLayout, ThresholdSet, split
from .energy import Problem, action_I, grad_I
from .errors import ConfigError, EmptyBump, FitError, IndeterminateVerdict, SolverError
from .field import CoefficientPair, Domain, integrate, laplacian_matrix, weak_gradient_energy
from .limit import LimitPack, solve_ground_state
from .maxmin import InnerOptions, MaxMinReport, OuterOptions, outer_maximize

__all__ = [
    "ScanRow",
    "ScanResult",
    "GroundStateVerdict",
    "decay_check",
    "shape_distance",
    "trend_stats",
    "b_scan",
    "nehari_project",
    "ground_state_probe",
]


# ---------------------------------------------------------------- decay

def decay_check(result, layout: BumpLayout, thr: ThresholdSet, dom: Domain,
                a0: float = 1.0, window=(2.0, 6.0)):
    """Fitted exponential decay rate of the submerged part.

    Fits log u + (N-1)/2 log(rho) against the distance to supp u^delta,
    where rho is the distance to the nearest center; the second term takes
    out the algebraic prefactor of the tail. Nodes within two decay lengths
    of the box boundary are skipped. Returns (rate, rate >= eta_s).
    """
    u = getattr(result, "u", result)
    ell = 1.0 / math.sqrt(a0)
    S = u > thr.delta
    if not S.any():
        raise EmptyBump("no emerging support to measure distances from")
    dist = ndimage.distance_transform_edt(~S) * dom.h
    rho = np.min([dom.radius(c) for c in layout.centers], axis=0)
    edge = dom.L - np.max(np.abs(np.stack(dom.coords)), axis=0)
    sel = ((u > 0) & (u < thr.delta) & (dist >= window[0] * ell) & (dist <= window[1] * ell)
           & (edge >= 2 * ell) & (rho > 0))
    if sel.sum() < 10:
        raise FitError(f"only {int(sel.sum())} nodes in the decay window")
    y = np.log(u[sel]) + 0.5 * (dom.N - 1) * np.log(rho[sel])
    A = np.column_stack([np.ones(int(sel.sum())), dist[sel]])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    rate = float(-coef[1])
    return rate, rate >= thr.eta_s


# ---------------------------------------------------------------- shape

def shape_distance(result, layout: BumpLayout, pack: LimitPack, r: float,
                   dom: Domain | None = None, delta: float | None = None):
    """Per bump: sup over |x| < r of |u(x + x_i) - w(x)|.

    w is evaluated at the exact node offsets, so u is never interpolated.
    With ``delta`` given, also reports per bump whether {u > delta} near x_i
    sits strictly inside B_R(x_i) (otherwise the flags are None).
    """
    u = getattr(result, "u", result)
    dom = dom or pack.domain
    if np.any(np.abs(layout.centers).max(axis=1) + r > dom.L):
        raise ConfigError("shape radius reaches past the box")
    dists, inside = [], []
    S = u > delta if delta is not None else None
    for c in layout.centers:
        rad = dom.radius(c)
        sel = rad < r
        dists.append(float(np.max(np.abs(u[sel] - pack.radial(rad[sel])))))
        if S is None:
            inside.append(None)
        else:
            own = S & (rad < layout.R + dom.h)
            inside.append(bool(own.any() and rad[own].max() < layout.R - 0.5 * dom.h))
    return dists, inside


# ---------------------------------------------------------------- scans

@dataclass(frozen=True)
class ScanRow:
    C: float
    mu: float
    max_lambda: float
    min_separation: float
    shape_distance: float
    decay_rate: float
    converged: bool

    def __post_init__(self):
        if not self.C > 0:
            raise ConfigError("scan amplitude must be positive")

    def as_dict(self) -> dict:
        return {
            "C": self.C, "mu": self.mu, "max_lambda": self.max_lambda,
            "min_separation": self.min_separation, "shape_distance": self.shape_distance,
            "decay_rate": self.decay_rate, "converged": self.converged,
        }


@dataclass
class ScanResult:
    rows: list
    trends: dict
    reports: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {"rows": [r.as_dict() for r in self.rows], "trends": self.trends}


def trend_stats(values, direction: str, rel: float = 0.05, budget: int = 1) -> dict:
    """Count steps against ``direction`` ('down' = non-increasing, 'up' = non-decreasing).

    The trend passes when there are at most ``budget`` violations and each
    is no larger than ``rel`` times the magnitude of the earlier value.
    """
    if direction not in ("down", "up"):
        raise ConfigError("direction must be 'down' or 'up'")
    sign = 1.0 if direction == "down" else -1.0
    viol, worst = 0, 0.0
    for a, b in zip(values[:-1], values[1:]):
        step = sign * (b - a)
        if step > 1e-12 * max(abs(a), abs(b), 1e-300):
            viol += 1
            worst = max(worst, step / max(abs(a), 1e-300))
    return {"values": [float(v) for v in values], "direction": direction,
            "violations": viol, "worst_relative": worst,
            "pass": viol <= budget and worst <= rel}


def b_scan(pair: CoefficientPair, C_list, k: int, dom: Domain, pack: LimitPack,
           p: float = 3.0, q: float = 2.0, thr: ThresholdSet | None = None,
           inner: InnerOptions | None = None, outer: OuterOptions | None = None,
           shape_radius: float | None = None) -> ScanResult:
    """Run outer_maximize(k) for each amplitude C (descending) and collect trends.

    The best layout of each row seeds the next one. Trend statistics use
    converged rows only.
    """
    from .decomp import make_thresholds

    C_list = [float(c) for c in C_list]
    if len(C_list) < 4:
        raise ConfigError("b_scan needs at least four amplitudes")
    if any(b >= a for a, b in zip(C_list[:-1], C_list[1:])):
        raise ConfigError("amplitudes must be strictly descending")
    if thr is None:
        thr = make_thresholds(pack, pair.a0, pair.eta, q)
    rows, reports = [], []
    seeds = None
    for C in C_list:
        pr = pair.with_b_amplitude(C)
        prob = Problem.from_pair(pr, dom, p, q)
        if prob.b_sup >= thr.B1:
            raise ConfigError(f"amplitude {C} is not below B1 = {thr.B1}")
        rep = outer_maximize(k, prob, thr, pack, pr.a0, zeta=pr.zeta, inner=inner,
                             opts=outer, seeds=seeds)
        res = rep.result
        seeds = [rep.layout.centers]
        try:
            rate = decay_check(res, rep.layout, thr, dom, pr.a0)[0]
        except FitError:
            rate = float("nan")
        rad = shape_radius if shape_radius is not None else thr.R / 2
        try:
            sd = max(shape_distance(res, rep.layout, pack, rad, dom)[0])
        except ConfigError:
            sd = float("nan")
        rows.append(ScanRow(C, res.mu, float(np.max(np.linalg.norm(res.lambdas, axis=1))),
                            rep.layout.min_separation(), sd, rate, res.converged))
        reports.append(rep)
    ok = [r for r in rows if r.converged]
    trends = {
        "max_lambda": trend_stats([r.max_lambda for r in ok], "down"),
        "min_separation": trend_stats([r.min_separation for r in ok], "up"),
        "converged_rows": len(ok),
        "flagged_rows": [r.C for r in rows if not r.converged],
    }
    return ScanResult(rows, trends, reports)


# ---------------------------------------------------------------- Nehari

def _nehari_parts(u, prob: Problem):
    dom = prob.domain
    Q = weak_gradient_energy(u, dom) + integrate(prob.a * u * u, dom)
    au = np.abs(u)
    B = integrate(prob.b * au ** (prob.q + 1), dom)
    P = integrate(au ** (prob.p + 1), dom)
    return Q, B, P


def nehari_project(u: np.ndarray, prob: Problem) -> float:
    """The t > 0 with d/dt I(t u) = 0.

    With b = 0 this is (||u||^2 / |u|_{p+1}^{p+1})^{1/(p-1)}. Otherwise
    Q t^{1-p} + B t^{q-p} - P is strictly decreasing in t and its root is
    found by Brent's method on a doubling bracket.
    """
    if not np.any(u):
        raise EmptyBump("cannot project the zero field")
    Q, B, P = _nehari_parts(u, prob)
    p, q = prob.p, prob.q
    t0 = (Q / P) ** (1.0 / (p - 1))
    if B == 0.0:
        return t0

    def f(t):
        return Q * t ** (1 - p) + B * t ** (q - p) - P

    hi = max(t0, 1e-300)
    while f(hi) > 0:
        hi *= 2.0
    lo = hi / 2.0
    while f(lo) < 0:
        lo /= 2.0
    ts = np.linspace(lo, hi, 64)
    vals = np.array([f(t) for t in ts])
    if int(np.sum(np.diff(np.sign(vals)) != 0)) != 1:
        raise SolverError("Nehari bracket does not hold a single root")
    return float(brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))


# ---------------------------------------------------------------- probes

@dataclass
class GroundStateVerdict:
    m_candidate: float
    reference: float
    margin: float
    escape: bool
    drift: float
    verdict: str
    centers: list = field(default_factory=list)
    levels: list = field(default_factory=list)
    box_sizes: list = field(default_factory=list)
    details: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict, "m_candidate": self.m_candidate,
            "reference": self.reference, "margin": self.margin,
            "escape": self.escape, "drift": self.drift,
            "centers": self.centers, "levels": self.levels,
            "box_sizes": self.box_sizes, "starts": self.details,
        }


def _nehari_descent(u, prob: Problem, lu, iters: int, tol: float):
    """Sobolev-preconditioned descent of I on the Nehari manifold from u."""
    dom = prob.domain
    inner = dom.interior
    u = np.abs(u)
    u = u * nehari_project(u, prob)
    E = action_I(u, prob).total
    tau = 1.0
    stall = 0
    for _ in range(iters):
        g = grad_I(u, prob)
        d = np.zeros(dom.shape)
        d[inner] = -lu.solve(g[inner])
        accepted = False
        while tau > 1e-8:
            trial = np.abs(u + tau * d)
            if np.any(trial):
                trial = trial * nehari_project(trial, prob)
                Et = action_I(trial, prob).total
                if Et < E:
                    accepted = True
                    break
            tau *= 0.5
        if not accepted:
            break
        dec = E - Et
        u, E = trial, Et
        tau = min(2.0 * tau, 4.0)
        stall = stall + 1 if dec <= tol * abs(E) else 0
        if stall >= 3:
            break
    return u, E


def _mass_center(u, dom):
    sq = u * u
    tot = float(np.sum(sq))
    return np.array([float(np.sum(sq * x)) / tot for x in dom.coords])


def ground_state_probe(pair: CoefficientPair, L_list, N: int = 2, p: float = 3.0,
                       q: float = 2.0, h_target: float = 0.25, budget: int = 150,
                       n_graded: int = 3, tol: float = 1e-3, flat_tol: float = 1e-3,
                       drift_ratio: float = 0.5) -> GroundStateVerdict:
    """Compare the Nehari minimum with the level of escaping translates.

    For every box size, starts are w placed at the origin, at graded radii
    along zeta and at the margin (8/sqrt(a0) inside the wall). The margin
    start, projected on the Nehari manifold, also gives the reference level.
    Verdicts: 'exists' when the minimum undercuts the reference and its
    center is stable across boxes; 'escape' when the center moves out with
    the box; 'indeterminate' when all starts give the same level.
    """
    L_list = sorted(float(L) for L in L_list)
    if len(L_list) < 2:
        raise ConfigError("ground_state_probe needs at least two box sizes")
    zeta = np.asarray(pair.zeta, float)
    zeta = zeta / np.linalg.norm(zeta)
    centers, levels, refs, details = [], [], [], []
    flat_all = True
    for L in L_list:
        M = int(math.ceil(2 * L / h_target)) + 1
        M += (M + 1) % 2
        dom = Domain(N, L, max(M, 33))
        pack = solve_ground_state(pair.a_inf, p, dom)
        prob = Problem.from_pair(pair, dom, p, q)
        A = laplacian_matrix(dom) + pair.a_inf * sparse.identity(int(dom.interior.sum()))
        lu = splu(A.tocsc())
        reach = L - 8.0 / math.sqrt(pair.a0)
        if reach <= 0:
            raise ConfigError(f"box L={L} too small for the margin start")
        radii = [0.0] + [reach * j / (n_graded + 1) for j in range(1, n_graded + 1)] + [reach]
        runs = []
        for j, rad in enumerate(radii):
            c = np.round(rad * zeta / dom.h) * dom.h
            w0 = pack.translate(c, dom)
            if j == len(radii) - 1:
                ref = action_I(w0 * nehari_project(w0, prob), prob).total
            u, E = _nehari_descent(w0, prob, lu, budget, 1e-9)
            runs.append((E, _mass_center(u, dom), rad))
        Es = np.array([r[0] for r in runs])
        if (Es.max() - Es.min()) > flat_tol * abs(Es.min()):
            flat_all = False
        best = int(np.argmin(Es))
        centers.append(runs[best][1])
        levels.append(float(Es[best]))
        refs.append(float(ref))
        details.append({"L": L, "M": dom.M, "starts": [
            {"start_radius": float(r[2]), "level": float(r[0]), "center": r[1].tolist()}
            for r in runs]})
    m_candidate = levels[-1]
    reference = refs[-1]
    margin = reference - m_candidate
    norms = [float(np.linalg.norm(c)) for c in centers]
    slope = (norms[-1] - norms[0]) / (L_list[-1] - L_list[0])
    drift = float(np.linalg.norm(centers[-1] - centers[0]))
    escape = slope >= drift_ratio
    out = GroundStateVerdict(m_candidate, reference, margin, bool(escape), drift, "",
                             [c.tolist() for c in centers], levels, L_list, details)
    scale = abs(reference)
    if flat_all:
        out.verdict = "indeterminate"
    elif escape:
        out.verdict = "escape"
    elif margin > tol * scale and drift <= drift_ratio * (L_list[-1] - L_list[0]) * 0.5:
        out.verdict = "exists"
    else:
        out.verdict = "indeterminate"
        raise IndeterminateVerdict(out)
    return out
