"""Ground state w of -Δu + a_inf u = u^p by radial shooting.

The radial ODE w'' + (N-1)/r w' - a_inf w + w^p = 0, w'(0) = 0 is
integrated with classical RK4. Bisection on the initial height separates
shots that cross zero (too high) from shots that turn back up (too low).
Past the radius where the two bracketing shots separate, the profile is
continued by the decaying solution of the linearised equation,
r^{-(N-2)/2} K_{(N-2)/2}(sqrt(a_inf) r), matched in value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline
from scipy.special import kve

from .errors import ConfigError, FitError, SolverError
from .field import Domain, laplacian

__all__ = [
    "RadialProfile",
    "LimitPack",
    "solve_ground_state",
    "m_infinity",
    "decay_fit",
    "kernel_residual",
    "sphere_area",
]


def sphere_area(N: int) -> float:
    """Measure of the unit sphere S^{N-1} (2 points for N = 1)."""
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


@dataclass(frozen=True)
class RadialProfile:
    r: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    sigma: float
    kappa: float
    r_matched: float  # beyond this radius the linearised tail is used


@dataclass
class LimitPack:
    """Ground state data; treated as immutable once built."""

    a_inf: float
    p: float
    domain: Domain
    profile: RadialProfile
    spline: CubicSpline = field(repr=False)
    tail_scale: float = field(repr=False)
    grid: np.ndarray = field(default=None, repr=False)
    m_inf: float = float("nan")
    peak: float = float("nan")

    def radial(self, r) -> np.ndarray:
        """Evaluate w at radii ``r`` (cubic spline, analytic tail beyond the table)."""
        return _radial_eval(self, np.asarray(r, float))

    def translate(self, center, dom: Domain | None = None) -> np.ndarray:
        """Grid samples of w(x - center), zero on the boundary nodes."""
        dom = dom or self.domain
        vals = self.radial(dom.radius(center))
        vals[~dom.interior] = 0.0
        return vals


def _tail_log(N: int, a_inf: float, r: np.ndarray) -> np.ndarray:
    """log of r^{-nu} K_nu(sqrt(a) r) with nu = (N-2)/2, up to a constant."""
    nu = (N - 2) / 2.0
    z = math.sqrt(a_inf) * r
    return -nu * np.log(r) + np.log(kve(nu, z)) - z


def _shoot(w0, a, p, N, hr, r_end, record=False):
    """Integrate one shot. Returns (+1 undershoot | -1 overshoot | 0, r, w, v)."""
    nm1 = N - 1

    def rhs(r, w, v):
        f = a * w - (abs(w) ** p) * (1.0 if w >= 0 else -1.0)
        if r == 0.0:
            return v, f / N
        return v, f - nm1 * v / r

    r, w, v = 0.0, w0, 0.0
    rs = [0.0] if record else None
    ws = [w0] if record else None
    vs = [0.0] if record else None
    nsteps = int(round(r_end / hr))
    half = 0.5 * hr
    for _ in range(nsteps):
        k1w, k1v = rhs(r, w, v)
        k2w, k2v = rhs(r + half, w + half * k1w, v + half * k1v)
        k3w, k3v = rhs(r + half, w + half * k2w, v + half * k2v)
        k4w, k4v = rhs(r + hr, w + hr * k3w, v + hr * k3v)
        w += hr / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
        v += hr / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        r += hr
        if record:
            rs.append(r)
            ws.append(w)
            vs.append(v)
        if w < 0.0:
            return -1, rs, ws, vs
        if v > 0.0:
            return 1, rs, ws, vs
    return 0, rs, ws, vs


def solve_ground_state(a_inf: float, p: float, dom: Domain,
                       tol: float = 1e-12) -> LimitPack:
    if not a_inf > 0:
        raise ConfigError("a_inf must be positive")
    if not p > 1:
        raise ConfigError("p must exceed 1")
    N = dom.N
    hr = dom.h / 4.0
    r_end = 2.0 * dom.L

    base = a_inf ** (1.0 / (p - 1.0))
    lo = 0.5 * base
    if _shoot(lo, a_inf, p, N, hr, r_end)[0] == -1:
        raise SolverError("lower bracket overshoots")
    hi = 2.0 * base
    for _ in range(60):
        if _shoot(hi, a_inf, p, N, hr, r_end)[0] == -1:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise SolverError("no overshooting height found for the shooting bracket")

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _shoot(mid, a_inf, p, N, hr, r_end)[0] == -1:
            hi = mid
        else:
            lo = mid

    _, r_lo, w_lo, v_lo = _shoot(lo, a_inf, p, N, hr, r_end, record=True)
    _, r_hi, w_hi, _ = _shoot(hi, a_inf, p, N, hr, r_end, record=True)
    n = min(len(w_lo), len(w_hi))
    w_lo = np.asarray(w_lo[:n])
    w_hi = np.asarray(w_hi[:n])
    v_lo = np.asarray(v_lo[:n])
    ok = (w_lo > 0) & (w_hi > 0) & (v_lo < 0) & (np.abs(w_hi - w_lo) <= 1e-6 * np.abs(w_lo))
    ok[0] = True
    bad = np.flatnonzero(~ok)
    # keep a short safety distance before the separation point
    n_good = (bad[0] if bad.size else n) - 8
    if n_good < 16:
        raise SolverError("shooting profile is unreliable everywhere")

    r_full = np.arange(int(round(r_end / hr)) + 1) * hr
    w_full = np.empty_like(r_full)
    dw_full = np.empty_like(r_full)
    w_full[:n_good] = w_lo[:n_good]
    dw_full[:n_good] = v_lo[:n_good]
    r_m = r_full[n_good - 1]
    log_scale = math.log(w_full[n_good - 1]) - _tail_log(N, a_inf, np.array([r_m]))[0]
    rt = r_full[n_good:]
    w_full[n_good:] = np.exp(log_scale + _tail_log(N, a_inf, rt))
    eps = 1e-6 * np.maximum(rt, 1.0)
    dlog = (_tail_log(N, a_inf, rt + eps) - _tail_log(N, a_inf, rt - eps)) / (2 * eps)
    dw_full[n_good:] = w_full[n_good:] * dlog

    if not np.all(w_full > 0) or not np.all(np.diff(w_full) < 0):
        raise SolverError("ground state profile is not positive and decreasing")

    prof = RadialProfile(r_full, w_full, dw_full, float("nan"), float("nan"), float(r_m))
    pack = LimitPack(a_inf, p, dom, prof, CubicSpline(r_full, w_full), log_scale,
                     peak=float(w_full[0]))
    pack.grid = pack.translate(np.zeros(N))
    pack.m_inf = m_infinity(pack)
    try:
        sigma, kappa = decay_fit(pack)
    except FitError:
        sigma = kappa = float("nan")
    pack.profile = replace(prof, sigma=sigma, kappa=kappa)
    return pack


def _radial_eval(pack: LimitPack, r: np.ndarray) -> np.ndarray:
    prof = pack.profile
    out = np.empty_like(r)
    inside = r <= prof.r[-1]
    out[inside] = pack.spline(r[inside])
    far = ~inside
    if np.any(far):
        out[far] = np.exp(pack.tail_scale + _tail_log(pack.domain.N, pack.a_inf, r[far]))
    out[out < 1e-300] = 0.0
    return out


def m_infinity(pack: LimitPack) -> float:
    """I_inf(w) by Simpson quadrature on the radial table."""
    prof = pack.profile
    N = pack.domain.N
    r, w, dw = prof.r, prof.w, prof.dw
    dens = 0.5 * (dw**2 + pack.a_inf * w**2) - w ** (pack.p + 1) / (pack.p + 1)
    return float(sphere_area(N) * simpson(dens * r ** (N - 1), x=r))


def decay_fit(pack: LimitPack, window=None):
    """Fit log w(r) = log d0 - kappa log r - sigma r on ``window``; returns (sigma, kappa)."""
    L = pack.domain.L
    r_lo, r_hi = window if window is not None else (0.5 * L, 0.8 * L)
    prof = pack.profile
    sel = (prof.r >= r_lo) & (prof.r <= r_hi) & (prof.w > 0)
    if sel.sum() < 10 or r_lo <= 0:
        raise FitError("decay-fit window holds fewer than 10 nodes")
    r = prof.r[sel]
    A = np.column_stack([np.ones_like(r), -np.log(r), -r])
    coef, *_ = np.linalg.lstsq(A, np.log(prof.w[sel]), rcond=None)
    return float(coef[2]), float(coef[1])


def kernel_residual(pack: LimitPack, j: int, phi: np.ndarray | None = None) -> float:
    """Relative size of (-Δ + a_inf - p w^{p-1}) applied to the central difference d_j w.

    The norm is taken relative to (-Δ + a_inf) phi on nodes at least two
    cells from the boundary. Passing ``phi`` evaluates another direction.
    """
    dom = pack.domain
    if not 0 <= j < dom.N:
        raise ConfigError(f"axis index {j} out of range for N={dom.N}")
    w = pack.grid
    if phi is None:
        phi = np.zeros_like(w)
        inner = (slice(1, -1),) * dom.N
        lo = list(inner)
        hi = list(inner)
        lo[j] = slice(0, -2)
        hi[j] = slice(2, None)
        phi[inner] = (w[tuple(hi)] - w[tuple(lo)]) / (2 * dom.h)
    base = -laplacian(phi, dom) + pack.a_inf * phi
    res = base - pack.p * w ** (pack.p - 1) * phi
    core = (slice(2, -2),) * dom.N
    return float(np.linalg.norm(res[core]) / np.linalg.norm(base[core]))
