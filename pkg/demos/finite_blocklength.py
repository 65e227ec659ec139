"""Finite-blocklength sandwich for a two-state BSC with i.i.d. states.

Feinstein achievability against the information spectrum converse at
small n, with a random-coding simulation in between.
"""
from statecap import bsc, build_state_channel
from statecap.oneshot import (bound_report, feinstein_eps, random_coding_error_mc,
                              spectrum_converse_eps)
from statecap.states import Iid

chan = build_state_channel([bsc(0.05), bsc(0.2)])
proc = Iid([0.5, 0.5])

print("  n   Feinstein logM   converse logM   (eps = 0.1)")
for n in (2, 4, 8, 12):
    rep = bound_report(chan, proc, n, 0.1)
    print(f"{n:3d}   {rep.feinstein_logM:14.3f}   {rep.converse_logM:13.3f}")

# error probability view at n = 10; the converse only bites once logM
# clears its -log2(delta) = 1.7 bit allowance by a margin
n = 10
print("\nlogM   achievability  random coding (ML)   converse")
for logm in (2.0, 4.0, 6.0, 8.0):
    ach = feinstein_eps(chan, proc, n, logm)
    mc = random_coding_error_mc(chan, proc, n, logm / n, codebooks=3000, seed=int(logm))
    conv = spectrum_converse_eps(chan, proc, n, logm)
    print(f"{logm:4.1f}   {ach:12.4f}  {mc.value:8.4f} [{mc.lower:.4f}, {mc.upper:.4f}]   {conv:8.4f}")

# the explicit direct bound needs a very large n with the universal constants
print("direct bound at n = 12:", rep.direct_rhs)
