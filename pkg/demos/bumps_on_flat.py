"""One and two bumps on the flat problem a = a_inf, b = 0.

With no landscape the constrained level of one bump is the limit action
m_inf, and two well separated bumps cost twice that. The gap to the
continuum values is the grid error that the ladder check later uses as
its tolerance.
"""

import numpy as np

from bumpforge.decomp import BumpLayout, make_thresholds
from bumpforge.energy import Problem
from bumpforge.field import Domain
from bumpforge.limit import solve_ground_state
from bumpforge.maxmin import initial_guess, minimize_on_S


def solve(L, centers):
    dom = Domain(2, L, 129)
    pack = solve_ground_state(1.0, 3.0, dom)
    thr = make_thresholds(pack, 1.0, 0.5, 2.0)
    flat = Problem.flat(dom, 1.0)
    lay = BumpLayout(np.asarray(centers, float), thr.R)
    res = minimize_on_S(lay, initial_guess(lay, pack, flat, thr), flat, thr)
    return res, pack, thr


res, pack, thr = solve(10.0, [[0.0, 0.0]])
print(f"delta {thr.delta:.4f}  B1 {thr.B1:.4f}  R {thr.R:.4f}")
print(f"k=1: mu {res.mu:.5f}  m_inf {pack.m_inf:.5f}  rel {res.mu / pack.m_inf - 1:+.3%}"
      f"  sweeps {len(res.history)}  lambdas {np.abs(res.lambdas).max():.1e}")

h = 2 * 18.5 / 128
c = 34 * h
res2, pack2, thr2 = solve(18.5, [[c, c], [-c, -c]])
print(f"k=2: separation {res2.layout.min_separation():.2f} (6R = {6 * thr2.R:.2f})"
      f"  mu {res2.mu:.5f}  2 m_inf {2 * pack2.m_inf:.5f}"
      f"  rel {res2.mu / (2 * pack2.m_inf) - 1:+.3%}")
