"""A deterministic state schedule whose occupation never settles.

Blocks of doubling length alternate between two states, so the fraction
of time in the first state swings between 1/3 and 2/3 forever.
"""
import numpy as np

from statecap import bsc, build_state_channel
from statecap.first_order import eps_capacity
from statecap.second_order import closed_form_lambda
from statecap.states import Alternating, sample_states

chan = build_state_channel([bsc(0.3), bsc(0.11)])
alt = Alternating(sa=0, sb=1)
print("first 16 states:", sample_states(alt, 16, seed=0))

for k in range(2, 9):
    lo, hi = 2 * 4 ** (k - 1) - 1, 4 ** k - 1
    print(f"n = {lo:6d}: share of state 0 = {alt.count_in_j(lo) / lo:.4f}   "
          f"n = {hi:6d}: share = {alt.count_in_j(hi) / hi:.4f}")

grid = [4 ** k - 1 for k in range(3, 8)] + [2 * 4 ** k - 1 for k in range(3, 8)]
rep = eps_capacity(alt, chan, 0.5, n_grid=grid)
print("\nC_eps      :", round(rep.eps_capacity, 4), "closed form", round(rep.eps_capacity_closed, 4))
print("optimistic :", round(rep.optimistic, 4), "closed form", round(rep.optimistic_closed, 4))
print("strong converse:", rep.strong_converse)
print("lambda(0.1):", round(closed_form_lambda(alt, chan, 0.1).lambda_, 4))
print("mean term along the grid:", np.round(rep.limt_term, 4))
