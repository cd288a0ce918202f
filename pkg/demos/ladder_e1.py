"""Energy ladder on the E1 family a(x) = 2 - exp(-|x|), C = 0.1.

The outer pattern search maximises the constrained level over bump
centres. The first rung sits above m_inf and the second above
mu_1 + m_inf, both measured against the limit level on the same grid.
Takes about two minutes on one core.
"""

import numpy as np

from bumpforge.decomp import BumpLayout, make_thresholds
from bumpforge.energy import Problem
from bumpforge.field import Domain, e1_pair
from bumpforge.limit import solve_ground_state
from bumpforge.maxmin import initial_guess, ladder_check, minimize_on_S, outer_maximize

pair = e1_pair(0.1)
dom = Domain(2, 16.0, 129)
pack = solve_ground_state(pair.a_inf, 3.0, dom)
thr = make_thresholds(pack, pair.a0, pair.eta, 2.0)
prob = Problem.from_pair(pair, dom)

flat = Problem.flat(dom, pair.a_inf)
lay = BumpLayout(np.zeros((1, 2)), thr.R)
m_grid = minimize_on_S(lay, initial_guess(lay, pack, flat, thr), flat, thr).mu

rep1 = outer_maximize(1, prob, thr, pack, pair.a0, zeta=pair.zeta)
c = rep1.layout.centers
rep2 = outer_maximize(2, prob, thr, pack, pair.a0, zeta=pair.zeta, seeds=[np.vstack([c, -c])])
print(f"m_inf on this grid {m_grid:.4f} (continuum {pack.m_inf:.4f})")
print(f"mu_1 {rep1.mu:.4f} at {np.round(rep1.layout.centers, 3).tolist()}")
print(f"mu_2 {rep2.mu:.4f} at {np.round(rep2.layout.centers, 3).tolist()}")
for row in ladder_check([(1, rep1.mu), (2, rep2.mu)], m_grid, 0.0):
    print(row)
