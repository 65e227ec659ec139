"""
First-order analysis: the cdf of the state-averaged capacity C(T_{S^n}),
the eps-capacity and optimistic eps-capacity, and strong converse checks.

The limsup/liminf over blocklengths is replaced by a max/min over a finite
grid of blocklengths, which every report carries along.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import states as st
from .errors import InvalidEpsilon
from .numerics import StepFunction, generalized_inverse, strict_inverse

DEFAULT_N_GRID = tuple(2 ** k for k in range(4, 13))


@dataclass(frozen=True)
class CdfCurve:
    """Cdf of C(T_{S^n}) at blocklength ``n`` (right-continuous step)."""

    n: int
    step: StepFunction
    exact: bool

    @property
    def points(self):
        return list(zip(self.step.breakpoints.tolist(), self.step.values.tolist()))

    def __call__(self, rate):
        return self.step(rate)

    def to_csv(self, metadata=None):
        lines = []
        if metadata is not None:
            lines.append("# " + " ".join(f"{k}={v}" for k, v in sorted(metadata.items())))
        lines.append("rate_bits,cdf")
        lines += [f"{r:.17g},{p:.17g}" for r, p in self.points]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class StrongConverseReport:
    verdict: str
    reason: str
    n_grid: tuple
    limt_term: tuple
    cov_term: tuple
    decay_rate: Optional[float]


@dataclass(frozen=True)
class FirstOrderReport:
    eps: float
    eps_capacity: float
    eps_capacity_closed: Optional[float]
    optimistic: float
    optimistic_closed: Optional[float]
    strong_converse: str
    limt_term: tuple
    cov_term: tuple
    n_grid: tuple
    per_n: dict = field(default_factory=dict)
    decay_rate: Optional[float] = None

    def to_dict(self):
        return {
            "eps": self.eps,
            "eps_capacity": self.eps_capacity,
            "eps_capacity_closed": self.eps_capacity_closed,
            "optimistic": self.optimistic,
            "optimistic_closed": self.optimistic_closed,
            "strong_converse": self.strong_converse,
            "cov_decay_rate": self.decay_rate,
            "n_grid": list(self.n_grid),
            "limt_term": list(self.limt_term),
            "cov_term": list(self.cov_term),
            "eps_capacity_by_n": {str(k): v for k, v in self.per_n.items()},
            "units": {"eps_capacity": "bits", "optimistic": "bits",
                      "limt_term": "bits", "cov_term": "bits^2"},
        }


def _check_eps(eps, closed=True):
    if not (0.0 <= eps <= 1.0) or math.isnan(eps):
        raise InvalidEpsilon(f"eps must lie in [0, 1], got {eps}")


def j_cdf(proc, chan, n, mode="auto", budget=100_000, seed=0, types=None):
    """Cdf of the state-averaged capacity sum_s T(s) C_s at blocklength n."""
    types = types or st.type_distribution(proc, n, mode=mode, budget=budget, seed=seed)
    rates = types.average(chan.capacities)
    return CdfCurve(n, StepFunction.from_atoms(rates, types.probs), types.exact)


def _mixture_cdf(weights, caps):
    return StepFunction.from_atoms(caps, weights)


def closed_form_capacity(proc, chan, eps):
    """Model closed form of the eps-capacity, or None when there is none."""
    _check_eps(eps)
    caps = chan.capacities
    if isinstance(proc, st.Mixed):
        return float(generalized_inverse(_mixture_cdf(proc.q, caps), eps))
    if isinstance(proc, st.Markov) and not proc.ergodic:
        return None
    law = st.limiting_state_law(proc)
    if law is not None:
        return math.inf if eps >= 1 else float(law @ caps)
    if isinstance(proc, st.Alternating):
        lo, hi = sorted((caps[proc.sa], caps[proc.sb]))
        return math.inf if eps >= 1 else 2 * lo / 3 + hi / 3
    return None


def closed_form_optimistic(proc, chan, eps):
    """Model closed form of the optimistic eps-capacity, or None."""
    _check_eps(eps)
    caps = chan.capacities
    if isinstance(proc, st.Mixed):
        return float(strict_inverse(_mixture_cdf(proc.q, caps), eps))
    if isinstance(proc, st.Markov) and not proc.ergodic:
        return None
    law = st.limiting_state_law(proc)
    if law is not None:
        return -math.inf if eps <= 0 else float(law @ caps)
    if isinstance(proc, st.Alternating):
        lo, hi = sorted((caps[proc.sa], caps[proc.sb]))
        return -math.inf if eps <= 0 else lo / 3 + 2 * hi / 3
    return None


def _fit_slope(ns, values):
    ns, values = np.asarray(ns, float), np.asarray(values, float)
    ok = values > 0
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(ns[ok]), np.log(values[ok]), 1)[0])


def strong_converse_check(proc, chan, n_grid=DEFAULT_N_GRID):
    """Verdict on the strong converse with the mean and covariance evidence.

    The verdict comes from the model class; the sequences of
    (1/n) sum E[C_{S_k}] and (1/n^2) sum sum Cov[C_{S_k}, C_{S_l}] and the
    fitted log-log decay rate of the latter are attached as evidence.
    """
    caps = chan.capacities
    n_grid = tuple(int(n) for n in n_grid)
    limt = tuple(st.marginal_mean(proc, n, caps) for n in n_grid)
    cov = tuple(st.covariance_sum(proc, n, caps) for n in n_grid)
    rate = _fit_slope(n_grid, cov)
    if isinstance(proc, st.Mixed):
        var = st.v_star(proc.q, caps)
        verdict, reason = (("fails", "mixed state with non-constant capacity")
                           if var > 0 else ("holds", "capacity constant across states"))
    elif isinstance(proc, (st.Iid, st.BlockIid)):
        verdict, reason = "holds", "independent (block) states: covariance sum vanishes"
    elif isinstance(proc, st.Markov):
        verdict, reason = (("holds", "ergodic chain") if proc.ergodic
                           else ("inconclusive", "chain is not ergodic"))
    elif isinstance(proc, st.Alternating):
        if caps[proc.sa] != caps[proc.sb]:
            verdict, reason = "fails", "mean term oscillates although covariances vanish"
        else:
            verdict, reason = "holds", "both scheduled states have equal capacity"
    else:
        verdict, reason = "inconclusive", "unknown model"
    return StrongConverseReport(verdict, reason, n_grid, limt, cov, rate)


def eps_capacity(proc, chan, eps, n_grid=DEFAULT_N_GRID, mode="auto",
                 budget=100_000, seed=0):
    """Finite-grid estimates of the eps-capacity and the optimistic one.

    The eps-capacity uses the pointwise max of the cdfs over ``n_grid`` and
    the generalized inverse sup{R : J(R) <= eps}; the optimistic version
    uses the pointwise min and sup{R : J(R) < eps}.
    """
    _check_eps(eps)
    n_grid = tuple(sorted(int(n) for n in n_grid))
    curves = [j_cdf(proc, chan, n, mode=mode, budget=budget, seed=seed + i)
              for i, n in enumerate(n_grid)]
    upper, lower = curves[0].step, curves[0].step
    for c in curves[1:]:
        upper = upper.maximum(c.step)
        lower = lower.minimum(c.step)
    sc = strong_converse_check(proc, chan, n_grid)
    return FirstOrderReport(
        eps=eps,
        eps_capacity=float(generalized_inverse(upper, eps)),
        eps_capacity_closed=closed_form_capacity(proc, chan, eps),
        optimistic=float(strict_inverse(lower, eps)),
        optimistic_closed=closed_form_optimistic(proc, chan, eps),
        strong_converse=sc.verdict,
        limt_term=sc.limt_term,
        cov_term=sc.cov_term,
        n_grid=n_grid,
        per_n={c.n: float(generalized_inverse(c.step, eps)) for c in curves},
        decay_rate=sc.decay_rate,
    )


def common_caid(chan, tol=1e-6):
    """True when one input law achieves capacity in every state.

    This is the condition under which state knowledge at the encoder is
    not needed; it is checked on the computed (unique) optimizers.
    """
    caids = chan.caids
    return bool(np.max(caids.max(axis=0) - caids.min(axis=0)) <= tol)
