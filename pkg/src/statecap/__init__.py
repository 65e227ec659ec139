"""
statecap: capacity, dispersion and finite-blocklength bounds for channels
whose state is known at encoder and decoder.

Modules
-------
channel        per-state DMCs, capacity, information variances
states         state processes and the law of their empirical type
first_order    eps-capacity, optimistic eps-capacity, strong converse
second_order   second-order coding rates and normal approximations
oneshot        Feinstein, hypothesis testing, spectrum converse, direct bound
numerics       Gaussian functions, generalized inverse, constants
io, cli        configuration files and the ``statecap`` command
"""
from . import channel, first_order, numerics, oneshot, second_order, states
from .channel import (Dmc, StateChannel, bec, bsc, build_state_channel,
                      capacity, identity_channel, z_channel)
from .errors import StatecapError
from .first_order import eps_capacity, j_cdf, strong_converse_check
from .oneshot import (dh_divergence, feinstein_logM, feinstein_rhs,
                      direct_bound_rhs, spectrum_converse_logM)
from .second_order import (approximation_gap_audit, closed_form_lambda,
                           k_functional, lambda_solve, normal_approximation_logM)
from .states import (Alternating, BlockIid, Iid, Markov, Mixed,
                     type_distribution, v_double_star, v_star)

__version__ = "0.1.0"
