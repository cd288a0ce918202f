"""The max-min scheme.

``minimize_on_S`` computes mu(x_1..x_k) = inf of I over the constraint
class S (one Nehari condition and one barycenter condition per bump).
``outer_maximize`` then searches bump layouts for the largest mu.

The inner solver keeps the state as (low, v_1..v_k): the submerged part
and the emerging parts, with low pinned to delta on every support. It
minimises the plain grid functional I(low + sum v_i); the Nehari condition
of each bump is the one of that functional (see decomp._Ray).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import os

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu, spsolve

from .decomp import (
    BumpLayout,
    ConstraintResiduals,
    ThresholdSet,
    _Ray,
    _check_b,
    _solve_ray,
    assemble,
    barycenter,
    constraint_residuals,
    emerging_parts,
    project_to_S,
    recenter_part,
    split,
)
from .energy import Problem, action_I, action_J, grad_I
from .errors import (
    BumpCollapse,
    BumpforgeError,
    ConfigError,
    EmergingOutsideBalls,
    NotConverged,
    SolverError,
)
from .field import laplacian, laplacian_matrix
from .limit import LimitPack

__all__ = [
    "InnerOptions",
    "InnerSolveResult",
    "OuterOptions",
    "MaxMinReport",
    "minimize_on_S",
    "extract_multipliers",
    "outer_maximize",
    "ladder_check",
    "glue_candidate",
    "initial_guess",
    "thread_count",
]


def thread_count() -> int:
    """Worker cap from BUMPFORGE_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("BUMPFORGE_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class InnerOptions:
    energy_tol: float = 1e-10      # relative decrease per sweep that counts as stalled
    residual_tol: float = 1e-6     # tau_S
    max_sweeps: int = 300
    submerged_iter: int = 40
    emerging_steps: int = 3        # accepted steps per part per sweep
    step0: float = 1.0
    step_grow: float = 1.6
    step_min: float = 1e-9
    stall_sweeps: int = 2
    precondition: bool = True
    stray_tol: float = 0.0

    def __post_init__(self):
        if not (self.energy_tol > 0 and self.residual_tol > 0):
            raise ConfigError("tolerances must be positive")
        if self.max_sweeps < 1 or self.submerged_iter < 1:
            raise ConfigError("iteration budgets must be positive")


@dataclass
class InnerSolveResult:
    u: np.ndarray
    mu: float
    lambdas: np.ndarray
    residuals: ConstraintResiduals
    iterations: int
    converged: bool
    layout: BumpLayout
    history: list = field(default_factory=list)
    part_J: list = field(default_factory=list)
    fit_residual: np.ndarray | None = None
    stationarity: float = float("nan")
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return {
            "k": self.layout.k,
            "centers": self.layout.as_list(),
            "mu": self.mu,
            "lambdas": [[float(x) for x in lam] for lam in self.lambdas],
            "multiplier_fit_residual": [float(x) for x in self.fit_residual],
            "residuals": self.residuals.as_dict(),
            "converged": self.converged,
            "iterations": self.iterations,
            "part_J": [float(x) for x in self.part_J],
            "stationarity": self.stationarity,
        }


# ---------------------------------------------------------------- blocks

class _Inner:
    """Private mutable state of one inner solve."""

    def __init__(self, layout: BumpLayout, prob: Problem, thr: ThresholdSet, opts: InnerOptions):
        self.layout, self.prob, self.thr, self.opts = layout, prob, thr, opts
        dom = prob.domain
        self.dom = dom
        self.delta = thr.delta
        self.balls = [layout.ball(i, dom) & dom.interior for i in range(layout.k)]
        self.offsets = [[x - c for x, c in zip(dom.coords, layout.centers[i])]
                        for i in range(layout.k)]
        self.lu = []
        if opts.precondition:
            for ball in self.balls:
                A = laplacian_matrix(dom, ball) + prob.a_inf * sparse.identity(int(ball.sum()))
                self.lu.append(splu(A.tocsc()))

    # -- energies
    def energy(self, low, parts) -> float:
        return action_I(assemble(low, parts, self.delta), self.prob).total

    def support(self, parts):
        S = np.zeros(self.dom.shape, dtype=bool)
        for v in parts:
            S |= v > 0
        return S

    # -- submerged block: convex obstacle problem, projected Newton
    def submerged(self, low, parts):
        """Minimise I over low with 0 <= low <= delta, low = delta on the supports."""
        prob, dom, d = self.prob, self.dom, self.delta
        S = self.support(parts)
        low = low.copy()
        low[S] = d
        low[~dom.interior] = 0.0
        F = dom.interior & ~S
        if not F.any():
            return low
        high = np.sum(parts, axis=0)
        p, q = prob.p, prob.q
        wN = dom.h**dom.N
        E = action_I(low + high, prob).total
        scale = max(float(np.max(prob.a)) * d, 1e-300)
        for _ in range(self.opts.submerged_iter):
            g = grad_I(low + high, prob)
            g[~F] = 0.0
            active = F & (((low <= 0) & (g > 0)) | ((low >= d) & (g < 0)))
            free = F & ~active
            if not free.any() or float(np.max(np.abs(g[free]))) <= 1e-11 * scale:
                break
            lf = low[free]
            curv = prob.a[free] - p * lf ** (p - 1)
            if np.any(prob.b[free] != 0):
                curv = curv + q * prob.b[free] * np.where(lf > 0, lf, 0.0) ** (q - 1)
            H = laplacian_matrix(dom, free) + sparse.diags(curv)
            step = np.zeros(dom.shape)
            step[free] = spsolve(H.tocsc(), -g[free])
            slope = float(np.sum(g * step)) * wN
            if slope >= 0:
                step[free] = -g[free] / np.maximum(curv, 1e-12)
                slope = float(np.sum(g * step)) * wN
            alpha = 1.0
            while alpha > 1e-12:
                trial = low.copy()
                trial[F] = np.clip(low[F] + alpha * step[F], 0.0, d)
                Et = action_I(trial + high, prob).total
                if Et <= E + 1e-4 * alpha * slope:
                    break
                alpha *= 0.5
            else:
                break
            done = E - Et <= 1e-15 * max(abs(E), 1e-300)
            low, E = trial, Et
            if done:
                break
        return low

    # -- emerging block
    def precond(self, i, r):
        ball = self.balls[i]
        out = np.zeros(self.dom.shape)
        if self.lu:
            out[ball] = self.lu[i].solve(r[ball])
        else:
            out[ball] = r[ball]
        return out

    def direction(self, i, u, v):
        """Preconditioned descent direction for u on ball i, tangent to the barycenter constraint.

        Stepping u rather than the part alone keeps the energy continuous
        when nodes cross the level delta.
        """
        ball = self.balls[i]
        g = grad_I(u, self.prob)
        g[~ball] = 0.0
        blocked = (u <= 0) & (g >= 0)   # bound u >= 0 is active
        g[blocked] = 0.0
        Pg = self.precond(i, g)
        cs = [v * off for off in self.offsets[i]]
        Pcs = [self.precond(i, c) for c in cs]
        G = np.array([[float(np.sum(c * Pc)) for Pc in Pcs] for c in cs])
        rhs = np.array([float(np.sum(c * Pg)) for c in cs])
        try:
            lam = np.linalg.solve(G, rhs)
        except np.linalg.LinAlgError:
            lam = np.zeros(len(cs))
        dvec = -Pg
        r = g.copy()
        for m, Pc in enumerate(Pcs):
            dvec += lam[m] * Pc
            r -= lam[m] * cs[m]
        dvec[~ball | blocked] = 0.0
        dvec[(u <= 0) & (dvec < 0)] = 0.0
        stat = math.sqrt(max(float(np.sum(r * self.precond(i, r))), 0.0))
        return dvec, stat

    def place(self, i, v, low):
        """Recenter v on x_i, confine it to the ball and scale by theta.

        ``low`` is updated in place to equal delta on the new support.
        """
        thr, lay = self.thr, self.layout
        if not np.any(v > 0):
            return None
        v = self.beta_correct(i, v)
        if v is None or np.any(v[~self.balls[i]] > 0):
            return None
        low[v > 0] = thr.delta
        t = _solve_ray(_Ray(v, self.prob, thr.delta, low))[0]
        return t * v

    def beta_correct(self, i, v):
        """Restore beta_{x_i}(v) = 0 by v -> v (1 + kappa . (x - x_i)).

        This is the minimal-norm correction along the gradient of beta; it
        keeps the support and, for small kappa, the sign of v.
        """
        offs = self.offsets[i]
        tol = 1e-3 * self.opts.residual_tol * self.layout.R
        for _ in range(8):
            sq = v * v
            D = float(np.sum(sq))
            beta = np.array([float(np.sum(sq * o)) / D for o in offs])
            if np.max(np.abs(beta)) <= tol:
                return v
            jac = np.array([[2.0 * float(np.sum(sq * om * on)) / D for on in offs] for om in offs])
            kappa = -np.linalg.solve(jac, beta)
            factor = 1.0 + sum(k * o for k, o in zip(kappa, offs))
            if np.any(factor[v > 0] <= 0):
                return None
            v = v * factor
        return v if np.max(np.abs(barycenter(v, self.layout.centers[i], self.dom))) <= 10 * tol else None

    def emerging_step(self, i, low, parts, E, tau):
        """One accepted step on ball i, or None when no step size decreases E."""
        d = self.delta
        u = assemble(low, parts, d)
        dvec, stat = self.direction(i, u, parts[i])
        if not np.any(dvec):
            return None, tau, stat
        while tau >= self.opts.step_min:
            un = np.maximum(u + tau * dvec, 0.0)
            ball = self.balls[i]
            v_new = np.where(ball, np.maximum(un - d, 0.0), 0.0)
            new_low = np.where(ball, np.minimum(un, d), low)
            cand = self.place(i, v_new, new_low)
            if cand is not None:
                new_parts = list(parts)
                new_parts[i] = cand
                En = self.energy(new_low, new_parts)
                if En < E:
                    return (new_low, new_parts, En), tau, stat
            tau *= 0.5
        return None, tau, stat


def minimize_on_S(layout: BumpLayout, init: np.ndarray, prob: Problem, thr: ThresholdSet,
                  opts: InnerOptions | None = None) -> InnerSolveResult:
    """Block-coordinate descent for inf I over S_{x_1..x_k}.

    Raises NotConverged (carrying the last iterate) when the sweep budget
    runs out, BumpCollapse when a part sinks below delta/10.
    """
    opts = opts or InnerOptions()
    t0 = time.perf_counter()
    _check_b(prob, thr.B1)
    dom, delta = prob.domain, thr.delta
    u0, _ = project_to_S(init, layout, prob, thr, stray_tol=opts.stray_tol)
    s = split(u0, delta)
    parts = emerging_parts(s.high, layout, dom, tol=opts.stray_tol).parts
    st = _Inner(layout, prob, thr, opts)
    low = st.submerged(s.low, parts)
    E = st.energy(low, parts)
    history = [E]
    taus = [opts.step0] * layout.k
    stall = 0
    converged = False
    stat = [math.inf] * layout.k
    sweeps = 0
    for sweeps in range(1, opts.max_sweeps + 1):
        E_start = E
        for i in range(layout.k):
            for _ in range(opts.emerging_steps):
                out, tau, stat[i] = st.emerging_step(i, low, parts, E, max(taus[i], opts.step_min))
                if out is None:
                    taus[i] = max(tau, opts.step_min) * 4.0
                    break
                low, parts, E = out
                taus[i] = min(tau * opts.step_grow, 1e3)
            if float(np.max(parts[i])) < delta / 10:
                raise BumpCollapse(f"part {i} collapsed below delta/10")
        # emerging steps only move low inside the balls, so the obstacle
        # problem is re-solved every sweep
        low_new = st.submerged(low, parts)
        E_new = st.energy(low_new, parts)
        if E_new <= E:
            low, E = low_new, E_new
        if E > E_start + 1e-12 * abs(E_start):
            raise SolverError("inner descent increased the energy")
        history.append(E)
        if E_start - E <= opts.energy_tol * abs(E):
            stall += 1
            if stall >= opts.stall_sweeps:
                converged = True
                break
        else:
            stall = 0
    u = assemble(low, parts, delta)
    res = constraint_residuals(u, layout, prob, thr, parts=parts)
    lambdas, fit = extract_multipliers(u, layout, prob, delta)
    result = InnerSolveResult(
        u=u, mu=E, lambdas=lambdas, residuals=res, iterations=sweeps,
        converged=converged and res.within(opts.residual_tol), layout=layout,
        history=history, part_J=[action_J(v, prob, delta) for v in parts],
        fit_residual=fit, stationarity=float(max(stat)),
        seconds=time.perf_counter() - t0,
    )
    if not result.converged:
        raise NotConverged(f"inner solve stopped after {sweeps} sweeps", result)
    return result


def extract_multipliers(u: np.ndarray, layout: BumpLayout, prob: Problem, delta: float,
                        residual: np.ndarray | None = None):
    """Least-squares fit of grad I on each ball against v_i (x - x_i)_m.

    Returns (lambdas of shape (k, N), fit residual per ball relative to the
    size of the linear part -laplacian(u) + a u there).
    """
    dom = prob.domain
    g = grad_I(u, prob) if residual is None else residual
    lin = -laplacian(u, dom) + prob.a * u
    parts = emerging_parts(split(u, delta).high, layout, dom, tol=np.inf).parts
    lams, fits = [], []
    for i, v in enumerate(parts):
        ball = layout.ball(i, dom)
        B = np.column_stack([(v * (x - c))[ball] for x, c in zip(dom.coords, layout.centers[i])])
        gram = B.T @ B
        if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > 1e12:
            raise SolverError(f"degenerate multiplier basis on ball {i}")
        rhs = g[ball]
        lam = np.linalg.solve(gram, B.T @ rhs)
        lams.append(lam)
        nrm = max(float(np.linalg.norm(lin[ball])), float(np.linalg.norm(rhs)))
        fits.append(float(np.linalg.norm(rhs - B @ lam)) / nrm if nrm > 0 else 0.0)
    return np.array(lams).reshape(layout.k, dom.N), np.array(fits)


# ---------------------------------------------------------------- gluing

def glue_candidate(u: np.ndarray, layout: BumpLayout, new_center, pack: LimitPack,
                   prob: Problem, thr: ThresholdSet) -> np.ndarray:
    """max(u, theta-projected w translate at new_center), projected on the extended layout."""
    dom = prob.domain
    c = np.asarray(new_center, float).reshape(dom.N)
    if layout.k:
        dist = np.linalg.norm(layout.centers - c[None, :], axis=1)
        if np.any(dist < 2 * layout.R - 1e-9):
            raise ConfigError(f"new center within 2R of an existing center ({dist.min():.4g})")
    single = BumpLayout(c[None, :], layout.R)
    wy, _ = project_to_S(pack.translate(c, dom), single, prob, thr)
    glued = np.maximum(u, wy)
    out, _ = project_to_S(glued, layout.extended(c), prob, thr)
    return out


def initial_guess(layout: BumpLayout, pack: LimitPack, prob: Problem, thr: ThresholdSet):
    """Glue w translates one center at a time."""
    u = np.zeros(prob.domain.shape)
    lay = BumpLayout(np.zeros((0, prob.domain.N)), layout.R)
    for c in layout.centers:
        u = glue_candidate(u, lay, c, pack, prob, thr)
        lay = lay.extended(c)
    return u


# ---------------------------------------------------------------- outer search

@dataclass(frozen=True)
class OuterOptions:
    seed: int = 0
    n_random: int = 2
    radii: tuple = (0.0, 0.3, 0.6)     # graded starts, fractions of the admissible reach
    step0: float | None = None          # initial pattern step (default R/2)
    step_min: float | None = None       # final pattern step (default 2h)
    max_evals: int = 80
    flat_tol: float = 2e-3              # relative spread that counts as flat
    workers: int | None = None


@dataclass
class MaxMinReport:
    k: int
    layout: BumpLayout
    mu: float
    result: InnerSolveResult
    provenance: str
    flat: bool
    spread: float
    evaluations: int
    reach: float
    ladder: dict = field(default_factory=dict)
    starts: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "centers": self.layout.as_list(),
            "mu": self.mu,
            "provenance": self.provenance,
            "flat": self.flat,
            "spread": self.spread,
            "evaluations": self.evaluations,
            "search_reach": self.reach,
            "starts": self.starts,
            "ladder": self.ladder,
            "inner": self.result.as_dict(),
        }


class _Evaluator:
    def __init__(self, prob, thr, pack, inner_opts, reach):
        self.prob, self.thr, self.pack, self.opts = prob, thr, pack, inner_opts
        self.reach = reach
        self.cache = {}
        self.count = 0

    def key(self, centers):
        return tuple(np.round(np.asarray(centers, float).ravel(), 9))

    def admissible(self, centers) -> bool:
        lay = BumpLayout(centers, self.thr.R)
        if np.any(np.abs(lay.centers) > self.reach + 1e-12):
            return False
        return lay.min_separation() >= 2 * self.thr.R - 1e-9

    def __call__(self, centers):
        key = self.key(centers)
        if key in self.cache:
            return self.cache[key]
        lay = BumpLayout(np.asarray(centers, float), self.thr.R)
        out = None
        try:
            init = initial_guess(lay, self.pack, self.prob, self.thr)
            out = minimize_on_S(lay, init, self.prob, self.thr, self.opts)
        except NotConverged as exc:
            out = exc.result
        except BumpforgeError:
            out = None
        self.count += 1
        self.cache[key] = out
        return out


def _score(res):
    return -math.inf if res is None else res.mu


def outer_maximize(k: int, prob: Problem, thr: ThresholdSet, pack: LimitPack,
                   a0: float, zeta=None, inner: InnerOptions | None = None,
                   opts: OuterOptions | None = None, seeds: list | None = None) -> MaxMinReport:
    """Multi-start compass search for sup mu over k-bump layouts in the truncated box.

    ``seeds`` adds extra start layouts (e.g. the best (k-1)-layout glued
    with a far center). Ties are broken lexicographically on the layout.
    """
    if k < 1:
        raise ConfigError("k must be at least 1")
    opts = opts or OuterOptions()
    inner = inner or InnerOptions()
    dom = prob.domain
    N = dom.N
    R = thr.R
    reach = dom.L - R - 4.0 / math.sqrt(a0)
    if reach < 0:
        raise ConfigError("box too small for a single bump with the decay margin")
    zeta = np.ones(N) / math.sqrt(N) if zeta is None else np.asarray(zeta, float)
    zeta = zeta / np.linalg.norm(zeta)
    ev = _Evaluator(prob, thr, pack, inner, reach)
    step_min = opts.step_min if opts.step_min is not None else 2 * dom.h
    step0 = opts.step0 if opts.step0 is not None else max(R / 2, step_min)
    workers = opts.workers or thread_count()

    def snap(x):
        return np.round(np.asarray(x, float) / dom.h) * dom.h

    # starts: graded along zeta, then seeded random
    starts = []
    spacing = 2.0 * R * 1.1
    limit = reach / np.max(np.abs(zeta))
    for frac in opts.radii:
        r0 = frac * max(limit - (k - 1) * spacing, 0.0)
        cen = np.array([snap((r0 + j * spacing) * zeta) for j in range(k)])
        if ev.admissible(cen):
            starts.append((f"graded r={r0:.3g}", cen))
    for j, sd in enumerate(seeds or []):
        cen = np.asarray(sd, float).reshape(k, N)
        if ev.admissible(cen):
            starts.append((f"seed {j}", cen))
    rng = np.random.default_rng(opts.seed)
    tries = 0
    made = 0
    while made < opts.n_random and tries < 1000:
        tries += 1
        cen = np.array([snap(rng.uniform(-reach, reach, N)) for _ in range(k)])
        if ev.admissible(cen):
            starts.append((f"random {made}", cen))
            made += 1
    seen, unique = set(), []
    for label, cen in starts:
        key = ev.key(cen)
        if key not in seen:
            seen.add(key)
            unique.append((label, cen))
    starts = unique
    if not starts:
        raise SolverError("no admissible start layout")

    def evaluate_many(layouts):
        if workers > 1 and len(layouts) > 1:
            with ThreadPoolExecutor(workers) as pool:
                return list(pool.map(ev, layouts))
        return [ev(c) for c in layouts]

    finals = []
    for label, cen in starts:
        best_c, best = cen, ev(cen)
        step = step0
        while step >= step_min - 1e-12 and ev.count < opts.max_evals:
            polls = []
            for idx in range(k * N):
                for sgn in (1.0, -1.0):
                    trial = best_c.copy().ravel()
                    trial[idx] += sgn * step
                    trial = snap(trial).reshape(k, N)
                    if ev.admissible(trial):
                        polls.append(trial)
            vals = evaluate_many(polls)
            improved = False
            for trial, res in zip(polls, vals):
                if _score(res) > _score(best) + 1e-12 * abs(_score(best) if best else 1.0):
                    best_c, best, improved = trial, res, True
            if not improved:
                step *= 0.5
        finals.append((label, best_c, best))

    ok = [(lab, c, r) for lab, c, r in finals if r is not None]
    if not ok:
        raise SolverError("every start failed")
    ok.sort(key=lambda t: (-t[2].mu, tuple(t[1].ravel())))
    label, best_c, best = ok[0]
    conv = [r.mu for _, _, r in ok if r.converged]
    sampled = [r.mu for r in ev.cache.values() if r is not None and r.converged]
    spread = (max(sampled) - min(sampled)) / abs(best.mu) if sampled else math.inf
    return MaxMinReport(
        k=k, layout=best.layout, mu=best.mu, result=best, provenance=label,
        flat=bool(len(conv) > 1 and spread <= opts.flat_tol), spread=float(spread),
        evaluations=ev.count, reach=reach,
        starts=[{"label": lab, "centers": np.asarray(c).tolist(),
                 "mu": (r.mu if r is not None else None)} for lab, c, r in finals],
    )


def ladder_check(reports: list, m_inf: float, tol: float) -> list:
    """Rung flags: mu_1 > m_inf + tol and mu_{k+1} > mu_k + m_inf - tol."""
    if not reports:
        raise ConfigError("ladder check needs at least one report")
    mus = {}
    for rep in reports:
        k, mu = (rep.k, rep.mu) if isinstance(rep, MaxMinReport) else rep
        mus[int(k)] = float(mu)
    ks = sorted(mus)
    if ks != list(range(1, ks[-1] + 1)):
        raise ConfigError(f"ladder rungs must be 1..K without gaps, got {ks}")
    flags = [{"rung": 1, "lhs": mus[1], "rhs": m_inf + tol,
              "margin": mus[1] - m_inf, "pass": mus[1] > m_inf + tol}]
    for k in ks[1:]:
        rhs = mus[k - 1] + m_inf - tol
        flags.append({"rung": k, "lhs": mus[k], "rhs": rhs,
                      "margin": mus[k] - mus[k - 1] - m_inf, "pass": mus[k] > rhs})
    for rep in reports:
        if isinstance(rep, MaxMinReport):
            rep.ladder = {f["rung"]: f for f in flags}.get(rep.k, {})
    return flags
