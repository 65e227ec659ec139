"""Mixed state: one state drawn at random and frozen for the whole block.

The eps-capacity jumps at the atoms of the state law and the strong
converse fails.  The second-order term changes character at each jump.
"""
import math

from statecap import bsc, build_state_channel
from statecap.first_order import eps_capacity, j_cdf
from statecap.second_order import closed_form_lambda
from statecap.states import Mixed

chan = build_state_channel([bsc(0.3), bsc(0.11)], state_labels=["bad", "good"])
alpha = 0.25                     # chance of the bad state
proc = Mixed([alpha, 1 - alpha])

cdf = j_cdf(proc, chan, 100)
print("cdf of the state-averaged capacity:", cdf.points)

print("\n  eps    C_eps   C_eps optimistic   lambda")
for eps in (0.05, 0.2, 0.25, 0.3, 0.6, 0.9):
    rep = eps_capacity(proc, chan, eps, n_grid=(64, 128))
    lam = closed_form_lambda(proc, chan, eps)
    print(f"{eps:5.2f}  {rep.eps_capacity:7.4f}  {rep.optimistic:17.4f}   {lam.lambda_:8.4f}  {lam.case}")
print("strong converse:", rep.strong_converse)

# at eps = alpha the rate sits exactly on the jump: backoff of order sqrt(n) is not enough
print("lambda at eps = alpha:", closed_form_lambda(proc, chan, alpha).lambda_ == -math.inf)
