"""Uniform box grids, coefficient sampling, quadrature and stencils.

Every function on R^N is represented by its values on the nodes of the
box [-L, L]^N with M nodes per axis (M odd, so the origin is a node).
Admissible candidates vanish on the boundary nodes, which is the
homogeneous Dirichlet truncation of H^1(R^N).
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ConfigError

__all__ = [
    "Domain",
    "GridField",
    "Profile",
    "Cone",
    "CoefficientPair",
    "HypothesisReport",
    "sample",
    "integrate",
    "weak_gradient_energy",
    "gradient_pairing",
    "laplacian",
    "laplacian_matrix",
    "check_hypotheses",
    "read_config",
    "pair_from_config",
    "domain_from_config",
    "e1_pair",
    "e2_pair",
    "flat_pair",
]


@dataclass(frozen=True)
class Domain:
    N: int
    L: float
    M: int

    def __post_init__(self):
        if self.N not in (1, 2):
            raise ConfigError(f"dimension must be 1 or 2, got {self.N}")
        if self.M < 33 or self.M % 2 == 0:
            raise ConfigError(f"M must be odd and >= 33, got {self.M}")
        if not self.L > 0:
            raise ConfigError("half-width L must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.M - 1)

    @property
    def shape(self) -> tuple:
        return (self.M,) * self.N

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.M)

    @property
    def coords(self) -> tuple:
        """Node coordinates, one array per axis (ij indexing)."""
        return tuple(np.meshgrid(*([self.axis] * self.N), indexing="ij"))

    def radius(self, center=None) -> np.ndarray:
        c = np.zeros(self.N) if center is None else np.asarray(center, float)
        r2 = np.zeros(self.shape)
        for x, cm in zip(self.coords, c):
            r2 += (x - cm) ** 2
        return np.sqrt(r2)

    @property
    def weights(self) -> np.ndarray:
        """Composite trapezoidal weights including the h^N factor."""
        w1 = np.ones(self.M)
        w1[0] = w1[-1] = 0.5
        w = w1
        for _ in range(self.N - 1):
            w = np.multiply.outer(w, w1)
        return w * self.h**self.N

    @property
    def interior(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[(slice(1, -1),) * self.N] = True
        return mask

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)


@dataclass(frozen=True)
class GridField:
    """A sampled function bundled with its domain, used for CSV exchange.

    The numerical routines work on bare ``numpy`` arrays of shape
    ``domain.shape``; this wrapper exists for persistence.
    """

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.domain.shape:
            raise ConfigError(f"values shape {vals.shape} != {self.domain.shape}")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("field values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def to_csv(self, path) -> None:
        """First row ``N,L,M``; then the values row-major, M per row."""
        d = self.domain
        rows = self.values.reshape(-1, d.M)
        with open(path, "w") as fh:
            fh.write(f"{d.N},{d.L!r},{d.M}\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "GridField":
        with open(path) as fh:
            head = fh.readline().strip().split(",")
            dom = Domain(int(head[0]), float(head[1]), int(head[2]))
            vals = np.loadtxt(fh, delimiter=",", ndmin=2)
        return cls(dom, vals.reshape(dom.shape))


# ---------------------------------------------------------------- coefficients

_ALPHA_FAMILIES = {"zero": (), "exponential": ("c", "kappa"), "well": ("depth", "radius")}
_B_FAMILIES = {
    "zero": (),
    "rational": ("C", "s"),
    "exponential": ("C", "kappa"),
    "compact": ("C", "radius"),
}


@dataclass(frozen=True)
class Profile:
    """A radial profile f(|x|) given by a named family and its parameters."""

    family: str
    params: dict = dc_field(default_factory=dict)

    def evaluate(self, r, h: float = 0.0):
        """Evaluate at radii ``r``; indicator-type families are mollified over ``h``."""
        r = np.asarray(r, dtype=float)
        f, p = self.family, self.params
        if f == "zero":
            return np.zeros_like(r)
        if f == "exponential":
            amp = p["c"] if "c" in p else p["C"]
            return amp * np.exp(-p["kappa"] * r)
        if f == "rational":
            return p["C"] / (1.0 + r) ** p.get("s", 1.0)
        if f in ("well", "compact"):
            amp = p["depth"] if f == "well" else p["C"]
            rho = p["radius"]
            if h > 0:
                return amp * np.clip((rho + 0.5 * h - r) / h, 0.0, 1.0)
            return np.where(r < rho, amp, 0.0)
        raise ConfigError(f"unknown profile family {f!r}")

    def sup(self) -> float:
        f, p = self.family, self.params
        if f == "zero":
            return 0.0
        if f == "exponential":
            return float(p["c"] if "c" in p else p["C"])
        if f == "rational":
            return float(p["C"])
        return float(p["depth"] if f == "well" else p["C"])


@dataclass(frozen=True)
class Cone:
    """Open cone {r*theta : r > 0, theta in Theta}.

    For N = 2, Theta is the angular interval (lo, hi) in radians; for N = 1 it
    is a set of signs. ``full`` means the whole space.
    """

    full: bool = True
    lo: float = 0.0
    hi: float = 0.0
    signs: tuple = (1, -1)

    def directions(self, N: int, count: int = 16) -> np.ndarray:
        """Unit vectors sampling Theta (rays used for the cone checks)."""
        if N == 1:
            signs = (1, -1) if self.full else self.signs
            return np.array([[float(s)] for s in signs])
        if self.full:
            ang = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        else:
            ang = np.linspace(self.lo, self.hi, count + 2)[1:-1]
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)

    def contains_ball(self, zeta, d: float) -> bool:
        """Whether B_d(zeta) lies in the closure of the cone (|zeta| = 1)."""
        zeta = np.asarray(zeta, float)
        if self.full:
            return True
        if zeta.size == 1:
            return float(zeta[0]) in self.signs and d <= 1.0
        if d >= 1.0:
            return False
        phi = math.atan2(zeta[1], zeta[0])
        # bring phi into [lo, lo + 2pi)
        phi = self.lo + (phi - self.lo) % (2 * np.pi)
        half = math.asin(d)
        return self.lo + half <= phi + 1e-12 and phi + half <= self.hi + 1e-12


@dataclass(frozen=True)
class CoefficientPair:
    """a(x) = a_inf - alpha(x) and b(x), plus the data of (h2)-(h4)."""

    a_inf: float
    alpha: Profile
    b: Profile
    a0: float
    eta: float
    cone: Cone = Cone()
    c: float = 1.0
    zeta: tuple = (1.0, 0.0)
    d: float = 0.5

    def __post_init__(self):
        if self.alpha.family not in _ALPHA_FAMILIES:
            raise ConfigError(f"unknown alpha family {self.alpha.family!r}")
        if self.b.family not in _B_FAMILIES:
            raise ConfigError(f"unknown b family {self.b.family!r}")
        for prof, table in ((self.alpha, _ALPHA_FAMILIES), (self.b, _B_FAMILIES)):
            for key in table[prof.family]:
                if key == "s":
                    continue
                alt = {"c": "C", "C": "c"}.get(key)
                if key not in prof.params and alt not in prof.params:
                    raise ConfigError(f"{prof.family} profile needs parameter {key!r}")
        if not self.a_inf > 0:
            raise ConfigError("a_inf must be positive")
        if not self.a0 > 0:
            raise ConfigError("a0 must be positive")
        if not 0 <= self.eta < math.sqrt(self.a0):
            raise ConfigError("eta must lie in [0, sqrt(a0))")

    @property
    def b_sup(self) -> float:
        return self.b.sup()

    def a_of_r(self, r, h: float = 0.0):
        return self.a_inf - self.alpha.evaluate(r, h)

    def with_b_amplitude(self, C: float) -> "CoefficientPair":
        params = dict(self.b.params)
        params["C"] = C
        return CoefficientPair(
            self.a_inf, self.alpha, Profile(self.b.family, params), self.a0,
            self.eta, self.cone, self.c, self.zeta, self.d,
        )


def e1_pair(C: float = 0.1, eta: float = 0.5) -> CoefficientPair:
    """a(x) = 2 - e^{-|x|}, b(x) = C / (1 + |x|): a ground state exists."""
    return CoefficientPair(
        a_inf=2.0,
        alpha=Profile("exponential", {"c": 1.0, "kappa": 1.0}),
        b=Profile("rational", {"C": C, "s": 1.0}),
        a0=1.0,
        eta=eta,
    )


def e2_pair(n: int = 16, C: float = 0.05, eta: float = 0.5) -> CoefficientPair:
    """a_n(x) = 1 - chi_{B_{1/n}}/2, b(x) = C / (1 + |x|): no ground state for large n."""
    return CoefficientPair(
        a_inf=1.0,
        alpha=Profile("well", {"depth": 0.5, "radius": 1.0 / n}),
        b=Profile("rational", {"C": C, "s": 1.0}),
        a0=0.5,
        eta=eta,
    )


def flat_pair(a_inf: float = 1.0, eta: float = 0.5) -> CoefficientPair:
    """Constant coefficients a = a_inf, b = 0 (the limit problem itself)."""
    return CoefficientPair(a_inf, Profile("zero"), Profile("zero"), a_inf, eta)


def sample(pair: CoefficientPair, dom: Domain):
    """Return the node arrays (a, b) of the pair on ``dom``."""
    r = dom.radius()
    a = pair.a_of_r(r, dom.h)
    b = pair.b.evaluate(r, dom.h)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ConfigError("coefficient descriptor produced non-finite values")
    return a, b


# ---------------------------------------------------------------- quadrature

def integrate(f: np.ndarray, dom: Domain) -> float:
    """Composite trapezoidal rule over the box.

    ``np.sum`` uses a fixed pairwise tree for a given array shape, so the
    result is reproducible bit for bit.
    """
    return float(np.sum(np.ascontiguousarray(f * dom.weights)))


def gradient_pairing(f: np.ndarray, g: np.ndarray, dom: Domain) -> float:
    """Bilinear form sum over grid edges of (df)(dg) h^{N-2}."""
    total = 0.0
    for ax in range(dom.N):
        total += float(np.sum(np.diff(f, axis=ax) * np.diff(g, axis=ax)))
    return total * dom.h ** (dom.N - 2)


def weak_gradient_energy(f: np.ndarray, dom: Domain) -> float:
    """Discrete integral of |grad f|^2 (one difference per grid edge)."""
    return gradient_pairing(f, f, dom)


def laplacian(g: np.ndarray, dom: Domain) -> np.ndarray:
    """(2N+1)-point Laplacian on interior nodes; boundary rows are zero.

    For f vanishing on the boundary, sum(f * -laplacian(g)) h^N equals
    ``gradient_pairing(f, g)`` exactly (summation by parts).
    """
    out = np.zeros_like(g, dtype=float)
    inner = (slice(1, -1),) * dom.N
    h2 = dom.h**2
    for ax in range(dom.N):
        lo = list(inner)
        hi = list(inner)
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        out[inner] += (g[tuple(lo)] + g[tuple(hi)] - 2.0 * g[inner]) / h2
    return out


def laplacian_matrix(dom: Domain, mask: np.ndarray | None = None) -> sparse.csr_matrix:
    """Sparse -laplacian restricted to the nodes in ``mask`` (default: interior).

    Nodes outside the mask are treated as fixed at zero, so the matrix acts
    on vectors ``f[mask]`` and agrees with ``-laplacian`` there.
    """
    if mask is None:
        mask = dom.interior
    idx = -np.ones(dom.shape, dtype=np.int64)
    n = int(mask.sum())
    idx[mask] = np.arange(n)
    h2 = dom.h**2
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.full(n, 2.0 * dom.N / h2)]
    for ax in range(dom.N):
        for step in (1, -1):
            nb = np.roll(idx, -step, axis=ax)
            edge = [slice(None)] * dom.N
            edge[ax] = slice(-1, None) if step == 1 else slice(0, 1)
            nb[tuple(edge)] = -1
            sel = mask & (nb >= 0)
            rows.append(idx[sel])
            cols.append(nb[sel])
            vals.append(np.full(int(sel.sum()), -1.0 / h2))
    A = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
    return A.tocsr()


# ---------------------------------------------------------------- hypotheses

@dataclass
class HypothesisReport:
    entries: dict
    surrogate_notes: list

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.entries.values())

    def failures(self) -> list:
        return [k for k, (ok, _) in self.entries.items() if not ok]

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": {k: {"pass": bool(ok), "detail": msg} for k, (ok, msg) in self.entries.items()},
            "surrogates": list(self.surrogate_notes),
        }


def check_hypotheses(pair: CoefficientPair, dom: Domain, tol: float = 1e-8,
                     shells: int = 8) -> HypothesisReport:
    """Sample (h1)-(h4) for ``pair``; failures are report entries."""
    entries = {}
    a, b = sample(pair, dom)

    far = np.geomspace(max(dom.L, 1.0), 1e4 * max(dom.L, 1.0), 12)
    alpha_far = np.abs(pair.alpha.evaluate(far))
    b_far = np.abs(pair.b.evaluate(far))
    entries["h1_a_limit"] = (
        bool(alpha_far[-1] <= tol and np.all(np.diff(alpha_far) <= tol)),
        f"|a - a_inf| at r={far[-1]:.3g}: {alpha_far[-1]:.3g}",
    )
    entries["h1_b_limit"] = (
        bool(b_far[-1] <= max(tol, 1e-3 * pair.b_sup) and np.all(np.diff(b_far) <= tol)),
        f"b at r={far[-1]:.3g}: {b_far[-1]:.3g}",
    )

    alpha = pair.a_inf - a
    entries["h2_a0_positive"] = (pair.a0 > 0, f"a0={pair.a0}")
    entries["h2_alpha_nonneg"] = (bool(alpha.min() >= -tol), f"min alpha={alpha.min():.3g}")
    entries["h2_a0_is_lower_bound"] = (
        bool(pair.a0 <= a.min() + max(tol, 1e-12)),
        f"a0={pair.a0}, sampled min a={a.min():.6g}",
    )
    entries["h3_b_nonneg"] = (bool(b.min() >= -tol), f"min b={b.min():.3g}")
    entries["h3_b_bounded"] = (bool(np.isfinite(b).all() and np.isfinite(pair.b_sup)),
                               f"sup b={pair.b_sup:.3g}")

    dirs = pair.cone.directions(dom.N)
    radii = np.linspace(0.0, max(4.0 * dom.L, 50.0), 800)
    worst = -np.inf
    for _ in dirs:
        # profiles are radial, so the ray only fixes which radii are visited
        ratio = pair.alpha.evaluate(radii) - pair.c * np.exp(-pair.eta * radii)
        worst = max(worst, float(ratio.max()))
    entries["h4_alpha_bound"] = (
        worst <= tol,
        f"max over cone rays of alpha - c e^(-eta r) = {worst:.3g}",
    )
    # finite surrogate of lim b e^{eta|x|} = +inf: growth over the outer shells
    shell_r = np.linspace(0.5 * dom.L, dom.L, shells)
    growth = pair.b.evaluate(shell_r) * np.exp(pair.eta * shell_r)
    entries["h4_b_divergence"] = (
        bool(np.all(np.diff(growth) > 0) and growth[-1] > 0),
        f"b e^(eta r) over last {shells} shells: {growth[0]:.3g} -> {growth[-1]:.3g}",
    )
    zeta = np.asarray(pair.zeta[: dom.N], float)
    entries["h4_cone_ball"] = (
        bool(abs(np.linalg.norm(zeta) - 1.0) < 1e-12 and pair.d >= 0.5
             and pair.cone.contains_ball(zeta, pair.d)),
        f"B_{pair.d}(zeta) within closure of cone",
    )
    notes = ["h4_b_divergence: monotone growth over outer shells stands in for the limit"]
    return HypothesisReport(entries, notes)


# ---------------------------------------------------------------- config I/O

def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    text = Path(path).read_text()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return cp


def _profile(sec, prefix: str) -> Profile:
    family = sec.get(prefix, "zero").strip()
    params = {}
    for key, val in sec.items():
        if key.startswith(prefix + "_"):
            try:
                params[key[len(prefix) + 1:]] = float(val)
            except ValueError as exc:
                raise ConfigError(f"{key} must be numeric") from exc
    return Profile(family, params)


def pair_from_config(cp: configparser.ConfigParser, N: int = 2) -> CoefficientPair:
    if not cp.has_section("coefficients"):
        raise ConfigError("config lacks a [coefficients] section")
    sec = cp["coefficients"]
    try:
        a_inf = float(sec.get("a_inf", "1"))
        alpha = _profile(sec, "alpha")
        b = _profile(sec, "b")
        a0 = float(sec["a0"]) if "a0" in sec else a_inf - alpha.sup()
        eta = float(sec.get("eta", "0.5"))
        cone_sec = cp["cone"] if cp.has_section("cone") else {}
        theta = str(cone_sec.get("theta", "full")).strip()
        if theta == "full":
            cone = Cone()
        elif N == 1:
            cone = Cone(full=False, signs=tuple(int(s) for s in theta.split(",")))
        else:
            lo, hi = (math.radians(float(t)) for t in theta.split(","))
            cone = Cone(full=False, lo=lo, hi=hi)
        zraw = str(cone_sec.get("zeta", "0" if N == 2 else "1"))
        if N == 1:
            zeta = (float(zraw),)
        else:
            ang = math.radians(float(zraw))
            zeta = (math.cos(ang), math.sin(ang))
        c = float(cone_sec.get("c", "1"))
        d = float(cone_sec.get("d", "0.5"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad coefficient config: {exc}") from exc
    return CoefficientPair(a_inf, alpha, b, a0, eta, cone, c, zeta, d)


def domain_from_config(cp: configparser.ConfigParser) -> Domain:
    if not cp.has_section("domain"):
        raise ConfigError("config lacks a [domain] section")
    sec = cp["domain"]
    try:
        return Domain(int(sec.get("N", "2")), float(sec["L"]), int(sec["M"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad domain config: {exc}") from exc
