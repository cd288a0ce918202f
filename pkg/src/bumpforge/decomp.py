"""Level-delta machinery: thresholds, submerged/emerging split, bump parts,
local barycenters and the line-search projections theta."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .energy import Problem, kinetic
from .errors import ConfigError, DomainError, EmergingOutsideBalls, EmptyBump, SolverError, ThresholdViolated
from .field import Domain, gradient_pairing
from .limit import LimitPack

__all__ = [
    "ThresholdSet",
    "DeltaSplit",
    "BumpLayout",
    "EmergingSet",
    "ConstraintResiduals",
    "choose_delta",
    "choose_R",
    "b1_threshold",
    "make_thresholds",
    "delta_conditions",
    "split",
    "emerging_parts",
    "barycenter",
    "ray_derivatives",
    "theta_for_part",
    "theta_certificate",
    "theta_project",
    "recenter_part",
    "constraint_residuals",
    "project_to_S",
    "ALL",
]

ALL = "all"


@dataclass(frozen=True)
class ThresholdSet:
    delta: float
    R: float
    B1: float
    eta_s: float

    def as_dict(self) -> dict:
        return {"delta": self.delta, "R": self.R, "B1": self.B1, "eta_s": self.eta_s}


def delta_conditions(delta, a0, p, eta, slack=1.0):
    """The four smallness conditions on delta; ``slack`` scales the delta-dependent side."""
    return (
        a0 >= slack * p * delta ** (p - 1),
        a0 / 2 >= slack * delta ** (p - 1) / (p + 1),
        a0 - eta**2 >= slack * delta ** (p - 1) and a0 - delta ** (p - 1) > eta**2,
        a0 * delta >= slack * 2 ** (p - 1) * delta**p,
    )


def choose_delta(a0: float, p: float, q: float, eta: float) -> float:
    """Largest dyadic 2^-m (m >= 2) meeting all four conditions with 10% slack."""
    if not a0 > 0:
        raise ConfigError("a0 must be positive")
    if not 0 <= eta < math.sqrt(a0):
        raise ConfigError("eta must lie in [0, sqrt(a0))")
    if not 1 < q < p:
        raise ConfigError("exponents must satisfy 1 < q < p")
    for m in range(2, 200):
        delta = 2.0**-m
        if all(delta_conditions(delta, a0, p, eta, slack=1.1)):
            return delta
    raise ConfigError("no admissible delta found")


def choose_R(pack: LimitPack, delta: float) -> float:
    """Twice the radius where w first drops below delta, rounded up to a grid multiple."""
    if delta >= pack.peak:
        raise ConfigError("delta must be below the peak of w")
    prof = pack.profile
    idx = int(np.argmax(prof.w < delta))
    r1, r0 = prof.r[idx], prof.r[idx - 1]
    w1, w0 = prof.w[idx], prof.w[idx - 1]
    r_cross = r0 + (w0 - delta) / (w0 - w1) * (r1 - r0)
    h = pack.domain.h
    return math.ceil(2.0 * r_cross / h - 1e-9) * h


def b1_threshold(delta: float, p: float, q: float) -> float:
    """B1 = p(p-1) delta^{p-q} / (q(q-1)), which makes g''' < 0 along every ray."""
    if not q > 1:
        raise ConfigError("q must exceed 1")
    if not q < p:
        raise ConfigError("q must be below p")
    return p * (p - 1) * delta ** (p - q) / (q * (q - 1))


def make_thresholds(pack: LimitPack, a0: float, eta: float, q: float,
                    delta: float | None = None) -> ThresholdSet:
    p = pack.p
    if delta is None:
        delta = choose_delta(a0, p, q, eta)
    elif not all(delta_conditions(delta, a0, p, eta)):
        raise ConfigError(f"delta={delta} violates the smallness conditions")
    R = choose_R(pack, delta)
    hi = math.sqrt(a0 - delta ** (p - 1))
    return ThresholdSet(delta, R, b1_threshold(delta, p, q), 0.5 * (eta + hi))


# ---------------------------------------------------------------- split

@dataclass(frozen=True)
class DeltaSplit:
    low: np.ndarray
    high: np.ndarray


def split(u: np.ndarray, delta: float) -> DeltaSplit:
    """u = min(u, delta) + max(0, u - delta), node by node.

    Reconstruction is bit-exact when delta is a power of two.
    """
    if np.any(u < 0):
        raise DomainError("split needs a nonnegative field")
    return DeltaSplit(np.minimum(u, delta), np.maximum(u - delta, 0.0))


# ---------------------------------------------------------------- layouts

@dataclass(frozen=True)
class BumpLayout:
    centers: np.ndarray   # shape (k, N)
    R: float

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "centers", c)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    def min_separation(self) -> float:
        if self.k < 2:
            return math.inf
        d = np.linalg.norm(self.centers[:, None, :] - self.centers[None, :, :], axis=-1)
        return float(d[np.triu_indices(self.k, 1)].min())

    def validate(self, dom: Domain, decay_length: float = 0.0) -> None:
        if self.centers.shape[1] != dom.N:
            raise ConfigError("center dimension does not match the domain")
        if self.k > 1 and self.min_separation() < 2 * self.R - 1e-9:
            raise ConfigError(
                f"centers closer than 2R: separation {self.min_separation():.4g} < {2 * self.R:.4g}")
        reach = np.abs(self.centers).max(axis=1) + self.R + 4.0 * decay_length
        if np.any(reach > dom.L + 1e-9):
            raise ConfigError("a ball B_R(x_i) is not 4 decay lengths inside the box")

    def ball(self, i: int, dom: Domain) -> np.ndarray:
        return dom.radius(self.centers[i]) < self.R

    def extended(self, center) -> "BumpLayout":
        return BumpLayout(np.vstack([self.centers, np.asarray(center, float)[None, :]]), self.R)

    def as_list(self) -> list:
        return [[float(x) for x in c] for c in self.centers]


@dataclass(frozen=True)
class EmergingSet:
    parts: list


def emerging_parts(high: np.ndarray, layout: BumpLayout, dom: Domain,
                   tol: float = 0.0) -> EmergingSet:
    """Split the emerging component into one part per ball.

    Connected components of {high > 0} go to the nearest center (weighted
    by high); ties go to the lowest index. Mass outside the balls above
    ``tol`` raises EmergingOutsideBalls.
    """
    labels, count = ndimage.label(high > 0)
    k = layout.k
    parts = [np.zeros_like(high) for _ in range(k)]
    balls = [layout.ball(i, dom) for i in range(k)]
    outside = np.ones_like(high, dtype=bool)
    for ball in balls:
        outside &= ~ball
    stray = float(np.sum(high[outside]) * dom.h**dom.N)
    if stray > tol:
        raise EmergingOutsideBalls(f"emerging mass {stray:.3g} outside the balls")
    if count:
        coords = dom.coords
        idx = np.arange(1, count + 1)
        mass = ndimage.sum(high, labels, idx)
        cen = np.stack([ndimage.sum(high * x, labels, idx) / mass for x in coords], axis=1)
        dist = np.linalg.norm(cen[:, None, :] - layout.centers[None, :, :], axis=-1)
        owner = np.argmin(dist, axis=1)
        for lab, i in zip(idx, owner):
            sel = (labels == lab) & balls[i]
            parts[i][sel] = high[sel]
    for i, part in enumerate(parts):
        if not np.any(part > 0):
            raise EmptyBump(f"emerging part {i} vanishes")
    return EmergingSet(parts)


def barycenter(part: np.ndarray, center, dom: Domain) -> np.ndarray:
    """Local barycenter ∫part^2 (x - center) / ∫part^2."""
    sq = part * part
    tot = float(np.sum(sq))
    if tot == 0.0:
        raise EmptyBump("barycenter of an empty part")
    center = np.asarray(center, float)
    return np.array([float(np.sum(sq * (x - c))) / tot for x, c in zip(dom.coords, center)])


# ---------------------------------------------------------------- line search

class _Ray:
    """Precomputed data for g'(t) = d/dt J(t v) restricted to supp v.

    Given a submerged part ``low`` the ray is t -> I(low + t v) for the plain
    grid functional. It differs from the J form by the constant crossing-edge
    pairing X = <grad low, grad v>, which leaves the higher derivatives alone.
    """

    def __init__(self, v: np.ndarray, prob: Problem, delta: float, low: np.ndarray | None = None):
        dom = prob.domain
        S = v > 0
        if not np.any(S):
            raise EmptyBump("no emerging part to project")
        wS = dom.weights[S]
        self.v = v[S]
        self.a = prob.a[S]
        self.b = prob.b[S]
        self.w = wS
        self.p, self.q, self.delta = prob.p, prob.q, delta
        self.A = kinetic(v, dom) + float(np.sum(wS * self.a * self.v**2))
        self.Bd = delta * float(np.sum(wS * self.a * self.v))
        self.has_b = bool(np.any(self.b != 0))
        self.X = 0.0 if low is None else gradient_pairing(low, v, dom)

    def d1(self, t):
        s = self.delta + t * self.v
        val = self.A * t + self.Bd + self.X - float(np.sum(self.w * s**self.p * self.v))
        if self.has_b:
            val += float(np.sum(self.w * self.b * s**self.q * self.v))
        return val

    def d2(self, t):
        s = self.delta + t * self.v
        v2 = self.v**2
        val = self.A - self.p * float(np.sum(self.w * s ** (self.p - 1) * v2))
        if self.has_b:
            val += self.q * float(np.sum(self.w * self.b * s ** (self.q - 1) * v2))
        return val

    def d3(self, t):
        s = self.delta + t * self.v
        v3 = self.v**3
        p, q = self.p, self.q
        val = -p * (p - 1) * float(np.sum(self.w * s ** (p - 2) * v3))
        if self.has_b:
            val += q * (q - 1) * float(np.sum(self.w * self.b * s ** (q - 2) * v3))
        return val


def ray_derivatives(v: np.ndarray, prob: Problem, delta: float, low=None):
    """Callables (g', g'', g''') of t -> J(t v), or of t -> I(low + t v) given ``low``."""
    ray = _Ray(v, prob, delta, low)
    return ray.d1, ray.d2, ray.d3


def _check_b(prob: Problem, B1: float) -> None:
    if prob.b_sup >= B1:
        raise ThresholdViolated(f"|b|_inf = {prob.b_sup:.4g} >= B1 = {B1:.4g}")


def _solve_ray(ray: _Ray, rtol: float = 1e-15):
    if ray.d1(0.0) <= 0:
        raise SolverError("g'(0) is not positive; delta too large for these coefficients")
    hi = 1.0
    for _ in range(200):
        if ray.d1(hi) < 0:
            break
        hi *= 2.0
    else:
        raise SolverError("no sign change of g' found while doubling")
    lo = 0.0 if hi == 1.0 else hi / 2.0
    # shrink from below too so the bracket is tight
    while lo == 0.0:
        mid = 0.5 * hi
        if ray.d1(mid) > 0:
            lo = mid
            break
        hi = mid
    t = hi
    for _ in range(200):
        f = ray.d1(t)
        if f == 0.0:
            break
        if f > 0:
            lo = t
        else:
            hi = t
        fp = ray.d2(t)
        t_new = t - f / fp if fp < 0 else 0.5 * (lo + hi)
        if not lo < t_new < hi:
            t_new = 0.5 * (lo + hi)
        if abs(t_new - t) <= rtol * t or hi - lo <= rtol * hi:
            t = t_new
            break
        t = t_new
    return t, (lo, hi)


def theta_for_part(v: np.ndarray, prob: Problem, delta: float, B1: float, low=None) -> float:
    """Unique maximiser t* > 0 of t -> J(t v) (or of t -> I(low + t v))."""
    _check_b(prob, B1)
    return _solve_ray(_Ray(v, prob, delta, low))[0]


def theta_certificate(v: np.ndarray, prob: Problem, delta: float, t_star: float,
                      samples: int = 64, low=None) -> dict:
    """g''(t*) < 0 and exactly one sign change of g' on [0, 2 t*]."""
    ray = _Ray(v, prob, delta, low)
    ts = np.linspace(0.0, 2.0 * t_star, samples)
    vals = np.array([ray.d1(t) for t in ts])
    sign_changes = int(np.sum(np.diff(np.sign(vals)) != 0))
    return {"g2": ray.d2(t_star), "sign_changes": sign_changes,
            "ok": ray.d2(t_star) < 0 and sign_changes == 1}


def theta_project(u: np.ndarray, layout: BumpLayout, i, prob: Problem,
                  thr: ThresholdSet, coupled: bool = True) -> float:
    """theta (i == ALL) or theta_i of u.

    ``coupled`` follows t -> I(u_delta + ... + t u_i^delta) for the plain grid
    functional. ``coupled=False`` uses the pure J form, which is the exact
    ray of the level-split functional.
    """
    dom = prob.domain
    _check_b(prob, thr.B1)
    s = split(u, thr.delta)
    if i == ALL:
        v = s.high
    else:
        v = emerging_parts(s.high, layout, dom, tol=np.inf).parts[i]
    return _solve_ray(_Ray(v, prob, thr.delta, s.low if coupled else None))[0]


# ---------------------------------------------------------------- projections

def recenter_part(part: np.ndarray, center, dom: Domain, tol: float = 1e-12,
                  max_iter: int = 60) -> np.ndarray:
    """Translate ``part`` (linear interpolation) until its barycenter is ``center``.

    The shift is accumulated and always applied to the original part so
    that interpolation blur does not compound.
    """
    shift = np.zeros(dom.N)
    out = part
    for _ in range(max_iter):
        beta = barycenter(out, center, dom)
        if np.max(np.abs(beta)) <= tol * max(1.0, dom.L):
            break
        shift = shift - beta
        out = np.clip(ndimage.shift(part, shift / dom.h, order=1, mode="constant", cval=0.0),
                      0.0, None)
    return out


@dataclass(frozen=True)
class ConstraintResiduals:
    nehari: np.ndarray   # I'(u)[u_i^delta], energy units
    beta: np.ndarray     # shape (k, N)
    nehari_scale: np.ndarray
    R: float

    def max_relative(self) -> float:
        neh = np.max(np.abs(self.nehari) / self.nehari_scale) if self.nehari.size else 0.0
        bet = np.max(np.abs(self.beta)) / self.R if self.beta.size else 0.0
        return float(max(neh, bet))

    def within(self, tau: float = 1e-6) -> bool:
        return self.max_relative() <= tau

    def as_dict(self) -> dict:
        return {
            "nehari": [float(x) for x in self.nehari],
            "beta": [[float(x) for x in b] for b in self.beta],
            "max_relative": self.max_relative(),
        }


def constraint_residuals(u: np.ndarray, layout: BumpLayout, prob: Problem,
                         thr: ThresholdSet, parts=None, coupled: bool = True) -> ConstraintResiduals:
    """Per-bump Nehari residual I'(u)[u_i^delta] and barycenter beta_{x_i}(u)."""
    dom = prob.domain
    s = split(u, thr.delta)
    if parts is None:
        parts = emerging_parts(s.high, layout, dom, tol=np.inf).parts
    low = s.low if coupled else None
    neh, scale, beta = [], [], []
    for i, v in enumerate(parts):
        ray = _Ray(v, prob, thr.delta, low)
        neh.append(ray.d1(1.0))
        scale.append(ray.A)
        beta.append(barycenter(v, layout.centers[i], dom))
    return ConstraintResiduals(np.array(neh), np.array(beta), np.array(scale), layout.R)


def assemble(low: np.ndarray, parts, delta: float) -> np.ndarray:
    """u = low + sum(parts) with low raised to delta on every part's support."""
    low = low.copy()
    u = low
    for v in parts:
        low[v > 0] = delta
    for v in parts:
        u = u + v
    return u if parts else low


def project_to_S(u: np.ndarray, layout: BumpLayout, prob: Problem, thr: ThresholdSet,
                 tau: float = 1e-6, stray_tol: float = 0.0, coupled: bool = True):
    """Recenter every part on its center, then scale it by theta_i.

    Returns the projected field and its ConstraintResiduals.
    """
    dom = prob.domain
    _check_b(prob, thr.B1)
    s = split(u, thr.delta)
    parts = emerging_parts(s.high, layout, dom, tol=stray_tol).parts
    new_parts = []
    for i, v in enumerate(parts):
        beta = barycenter(v, layout.centers[i], dom)
        if np.max(np.abs(beta)) > 1e-3 * tau * layout.R:
            v = recenter_part(v, layout.centers[i], dom)
            if np.any(v[~layout.ball(i, dom)] > 0):
                raise EmergingOutsideBalls(f"recentred part {i} leaves B_R(x_{i})")
        new_parts.append(v)
    low = s.low.copy()
    for v in new_parts:
        low[v > 0] = thr.delta
    for i, v in enumerate(new_parts):
        t = _solve_ray(_Ray(v, prob, thr.delta, low if coupled else None))[0]
        new_parts[i] = v if t == 1.0 else t * v
    out = assemble(low, new_parts, thr.delta)
    res = constraint_residuals(out, layout, prob, thr, parts=new_parts, coupled=coupled)
    return out, res
