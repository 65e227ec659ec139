"""Gilbert-Elliott channel: a good and a bad BSC switched by a two-state Markov chain.

Walks through capacity, the dispersion split into channel noise and state
memory, and how fast the finite-n second-order rate settles.
"""
import numpy as np

from statecap import bsc, build_state_channel
from statecap.second_order import lambda_solve, normal_approximation_logM
from statecap.states import Markov, v_double_star, v_star

chan = build_state_channel([bsc(0.01), bsc(0.2)], state_labels=["good", "bad"])
print("per-state capacity (bits):", np.round(chan.capacities, 4))
print("per-state dispersion (bits^2):", np.round(chan.dispersions, 4))

# stay in each state for 1/0.02 = 50 and 1/0.1 = 10 uses on average
ge = Markov([[0.98, 0.02], [0.1, 0.9]])
pi = ge.stationary
print("stationary law:", np.round(pi, 4))
print("average capacity:", round(pi @ chan.capacities, 4))

# memory inflates the state term well beyond the i.i.d. value
print("V(pi)  =", round(pi @ chan.dispersions, 4))
print("V*(pi) =", round(v_star(pi, chan.capacities), 4), "(i.i.d. states)")
print("V**(M) =", round(v_double_star(ge.m, chan.capacities), 4), "(Markov states)")

res = lambda_solve(0.01, 0.5, ge, chan, n_grid=(64, 128, 256, 512, 1024, 2048), seed=1)
print("\n   n   lambda(n)")
for n, lam in res.per_n.items():
    print(f"{n:5d}   {lam:8.4f}")
print("closed form:", round(res.closed_form, 4))

# what the expansion says about code size at eps = 1e-2
for n in (500, 1000, 5000):
    logm = normal_approximation_logM(0.01, n, ge, chan)
    print(f"n = {n:5d}: log2 M ~ {logm:8.1f} bits, rate {logm / n:.4f}")
