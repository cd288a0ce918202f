"""Existence against escape for the two model coefficient pairs.

E1 has a minimiser on the Nehari set that stays put as the box grows.
E2, a shallow narrow well in a, does not: the best candidate drifts
towards the wall as L grows. Each probe takes well under a minute.
"""

from bumpforge.diagnostics import ground_state_probe
from bumpforge.errors import IndeterminateVerdict
from bumpforge.field import e1_pair, e2_pair

for name, pair in (("E1, C=0.05", e1_pair(0.05)), ("E2, n=16", e2_pair(16, 0.05))):
    try:
        v = ground_state_probe(pair, [20.0, 30.0])
    except IndeterminateVerdict as exc:
        print(f"{name}: indeterminate ({exc})")
        continue
    print(f"{name}: {v.verdict}  candidate {v.m_candidate:.4f}  reference {v.reference:.4f}"
          f"  margin {v.margin:+.4f}")
