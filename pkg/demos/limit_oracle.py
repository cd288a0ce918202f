"""Ground state of the limit problem against the closed-form 1-D profile.

For N = 1, a = 1, p = 3 the positive solution of -w'' + w = w^3 is
sqrt(2) sech(x) with action 4/3. The radial shooting solve reproduces
both, and the scaling law in a_inf follows from rescaling.
"""

import math

import numpy as np

from bumpforge.field import Domain
from bumpforge.limit import decay_fit, solve_ground_state

dom = Domain(1, 12.0, 481)
pack = solve_ground_state(1.0, 3.0, dom)
r = pack.profile.r
err = np.max(np.abs(pack.profile.w - math.sqrt(2) / np.cosh(r)))
print(f"peak {pack.peak:.10f}  (sqrt 2 = {math.sqrt(2):.10f})")
print(f"m_inf {pack.m_inf:.10f}  (4/3 = {4 / 3:.10f})")
print(f"sup error against sqrt(2) sech: {err:.2e}")

print("\nscaling law m(a)/m(1) against a^((p+1)/(p-1) - N/2)")
for N, d in ((1, dom), (2, Domain(2, 12.0, 129))):
    m1 = solve_ground_state(1.0, 3.0, d).m_inf
    for a in (0.5, 2.0, 4.0):
        pk = solve_ground_state(a, 3.0, d)
        sigma, kappa = decay_fit(pk)
        print(f"  N={N} a={a:<4g} ratio {pk.m_inf / m1:.6f}  law {a ** (2 - N / 2):.6f}"
              f"  decay rate {sigma:.4f}  power {kappa:.3f}")
