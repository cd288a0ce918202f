"""The action functionals I, I_inf, J, J_inf and the discrete gradient of I.

When a level ``delta`` is given, the kinetic term is evaluated edge by edge
as (d(u ∧ delta))^2 + (d(u ∨ delta))^2. Off the level set this is the usual
squared difference; on edges crossing ``delta`` it drops the cross term, so
that I(u) = I(u_delta) + J(u^delta) holds exactly on the grid as it does in
the continuum. Without ``delta`` the plain quadratic form is used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import CoefficientPair, Domain, gradient_pairing, integrate, laplacian, sample

__all__ = [
    "Problem",
    "EnergyBreakdown",
    "kinetic",
    "action_I",
    "action_I_inf",
    "action_J",
    "action_J_inf",
    "grad_I",
]


@dataclass(frozen=True)
class Problem:
    """Sampled coefficients and exponents: everything I depends on."""

    domain: Domain
    a: np.ndarray
    b: np.ndarray
    p: float
    q: float
    a_inf: float

    @classmethod
    def from_pair(cls, pair: CoefficientPair, dom: Domain, p: float = 3.0, q: float = 2.0):
        a, b = sample(pair, dom)
        return cls(dom, a, b, float(p), float(q), pair.a_inf)

    @classmethod
    def flat(cls, dom: Domain, a_inf: float = 1.0, p: float = 3.0, q: float = 2.0):
        return cls(dom, np.full(dom.shape, float(a_inf)), np.zeros(dom.shape),
                   float(p), float(q), float(a_inf))

    def limit(self) -> "Problem":
        """The constant-coefficient problem at infinity (a = a_inf, b = 0)."""
        return Problem.flat(self.domain, self.a_inf, self.p, self.q)

    @property
    def b_sup(self) -> float:
        return float(np.max(np.abs(self.b)))


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float      # ∫|∇u|^2
    potential: float    # ∫a u^2
    competing: float    # ∫b |u|^{q+1} / (q+1)
    focusing: float     # ∫|u|^{p+1} / (p+1)

    @property
    def total(self) -> float:
        return 0.5 * self.kinetic + 0.5 * self.potential + self.competing - self.focusing

    def as_dict(self) -> dict:
        return {
            "kinetic": self.kinetic,
            "potential": self.potential,
            "competing": self.competing,
            "focusing": self.focusing,
            "total": self.total,
        }


def kinetic(u: np.ndarray, dom: Domain, delta: float | None = None) -> float:
    if delta is None:
        return gradient_pairing(u, u, dom)
    lo = np.minimum(u, delta)
    hi = np.maximum(u, delta)
    return gradient_pairing(lo, lo, dom) + gradient_pairing(hi, hi, dom)


def action_I(u: np.ndarray, prob: Problem, delta: float | None = None) -> EnergyBreakdown:
    dom = prob.domain
    au = np.abs(u)
    return EnergyBreakdown(
        kinetic(u, dom, delta),
        integrate(prob.a * u * u, dom),
        integrate(prob.b * au ** (prob.q + 1), dom) / (prob.q + 1),
        integrate(au ** (prob.p + 1), dom) / (prob.p + 1),
    )


def action_I_inf(u: np.ndarray, prob: Problem, delta: float | None = None) -> EnergyBreakdown:
    return action_I(u, prob.limit(), delta)


def action_J(v: np.ndarray, prob: Problem, delta: float) -> float:
    """J(v) on the support of v; the measure of the support is its node count times h^N."""
    dom = prob.domain
    S = v > 0
    a, b, p, q = prob.a, prob.b, prob.p, prob.q
    dv = delta + v
    dens = np.zeros_like(v, dtype=float)
    dens[S] = (
        0.5 * a[S] * v[S] ** 2
        + delta * a[S] * v[S]
        + b[S] * dv[S] ** (q + 1) / (q + 1)
        - dv[S] ** (p + 1) / (p + 1)
        - delta ** (q + 1) / (q + 1) * b[S]
        + delta ** (p + 1) / (p + 1)
    )
    return 0.5 * kinetic(v, dom) + integrate(dens, dom)


def action_J_inf(v: np.ndarray, prob: Problem, delta: float) -> float:
    return action_J(v, prob.limit(), delta)


def grad_I(u: np.ndarray, prob: Problem, delta: float | None = None) -> np.ndarray:
    """Node-wise residual -Δu + a u + b u^q - u^p of the discrete action.

    The pairing sum(grad_I(u) * v) h^N is the directional derivative of
    ``action_I(., delta)`` along any v vanishing on the boundary. With a
    level ``delta``, nodes with u == delta take the one-sided derivative
    of the submerged side.
    """
    dom = prob.domain
    if delta is None:
        lap = laplacian(u, dom)
    else:
        above = u > delta
        lap = np.where(above, laplacian(np.maximum(u, delta), dom),
                       laplacian(np.minimum(u, delta), dom))
    au = np.abs(u)
    g = -lap + prob.a * u + prob.b * au**prob.q * np.sign(u) - au**prob.p * np.sign(u)
    g[~dom.interior] = 0.0
    return g
