"""
Second-order analysis: the K functional at finite blocklength, the
second-order rate Lambda(eps, beta) by bisection, the per-model closed
forms, the normal approximation of log M*, and the audit of the two
Gaussian approximation steps behind the i.i.d., block i.i.d. and Markov
results.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from . import first_order
from . import states as st
from .errors import (BetaMismatch, DegenerateDispersion, InvalidEpsilon,
                     InvalidInput, NotErgodic, UnsupportedModel)
from .numerics import Phi, Phi_inv, dispersion_bound

logger = logging.getLogger(__name__)

CAP_TIE = 1e-9


@dataclass(frozen=True)
class KQuery:
    r: float
    R: float
    beta: float
    n: int

    def __post_init__(self):
        if not 0.5 <= self.beta < 1:
            raise InvalidInput("beta must lie in [1/2, 1)")
        if self.n < 1:
            raise InvalidInput("n must be positive")


@dataclass(frozen=True)
class ClosedForm:
    lambda_: float
    decomposition: dict
    case: str = ""


@dataclass
class SecondOrderResult:
    eps: float
    beta: float
    lambda_: float
    dispersion: Optional[float]
    decomposition: dict
    method: str
    n_grid: tuple
    c_eps: float
    c_eps_source: str
    per_n: dict = field(default_factory=dict)
    closed_form: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "eps": self.eps,
            "beta": self.beta,
            "lambda": self.lambda_,
            "dispersion": self.dispersion,
            "decomposition": dict(self.decomposition),
            "method": self.method,
            "n_grid": list(self.n_grid),
            "c_eps": self.c_eps,
            "c_eps_source": self.c_eps_source,
            "lambda_by_n": {str(k): v for k, v in self.per_n.items()},
            "lambda_closed_form": self.closed_form,
            "diagnostics": dict(self.diagnostics),
            "units": {"lambda": "bits", "dispersion": "bits^2",
                      "c_eps": "bits", "decomposition": "bits^2"},
        }


def _require_dispersion(chan):
    if not chan.v_min > 0:
        raise DegenerateDispersion("second-order analysis needs V_min > 0")


def k_functional(r, R, beta, n, proc, chan, types=None, mode="auto",
                 budget=100_000, seed=0):
    """E Phi((nR + n^beta r - n C(T)) / sqrt(n V(T))) over the state type T.

    ``r`` may be an array.  Pass ``types`` to reuse a TypeDistribution.
    """
    _require_dispersion(chan)
    if types is None:
        types = st.type_distribution(proc, n, mode=mode, budget=budget, seed=seed)
    ct = types.average(chan.capacities)
    vt = types.average(chan.dispersions)
    r = np.asarray(r, dtype=float)
    shift = n * (R - ct)
    scale = np.sqrt(n * vt)
    args = (shift[None, :] + n ** beta * r.reshape(-1, 1)) / scale[None, :]
    out = Phi(args) @ types.probs
    return out.reshape(r.shape) if r.ndim else float(out[0])


def k_exceeds(r, R, beta, n, types, chan, eps):
    """True when K(r) > eps, evaluated without cancellation.

    Terms with positive argument enter through Phi(-a) = 1 - Phi(a), so
    that K(r) <= eps reads sum_{a<=0} p Phi(a) <= (eps - sum_{a>0} p) +
    sum_{a>0} p Phi(-a).  This keeps the comparison exact when K sits on
    top of an atom of the state law and the remainder is far below the
    floating point spacing of eps.
    """
    ct = types.average(chan.capacities)
    vt = types.average(chan.dispersions)
    a = (n * (R - ct) + n ** beta * r) / np.sqrt(n * vt)
    pos = a > 0
    p = types.probs
    lhs = float(p[~pos] @ Phi(a[~pos]))
    rhs = (eps - float(p[pos].sum())) + float(p[pos] @ Phi(-a[pos]))
    return lhs > rhs


def _bisect_sup(exceeds, eps, r_max, tol):
    """sup{r in [-r_max, r_max] : not exceeds(r)} for a monotone predicate.

    Returns -inf when exceeds(-r_max) and +inf when not exceeds(r_max).
    """
    lo, hi = -r_max, r_max
    if exceeds(lo):
        return -math.inf
    if not exceeds(hi):
        return math.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if not exceeds(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def _check_beta(beta, expected):
    if abs(beta - expected) > 1e-12:
        raise BetaMismatch(f"this model needs beta = {expected:g}, got {beta:g}")


def _mixture_lambda(weights, caps, disps, eps, c_eps):
    """sup{r : sum_{C_s < C} w_s + sum_{C_s = C} w_s Phi(r / sqrt(V_s)) <= eps}."""
    below = float(weights[caps < c_eps - CAP_TIE].sum())
    tied = np.abs(caps - c_eps) <= CAP_TIE
    w, v = weights[tied], disps[tied]
    target = eps - below
    if target <= 0 or w.sum() == 0:
        return -math.inf
    if target >= w.sum():
        return math.inf
    if w.size == 1:
        return float(math.sqrt(v[0]) * Phi_inv(target / w[0]))

    def g(r):
        return float(w @ Phi(r / np.sqrt(v))) - target

    span = 10.0 * math.sqrt(v.max())
    while g(-span) > 0 or g(span) < 0:
        span *= 2
    return float(optimize.brentq(g, -span, span, xtol=1e-14, rtol=1e-15))


def closed_form_lambda(proc, chan, eps, beta=0.5):
    """Closed-form second-order rate for the five state models."""
    if not 0 < eps < 1:
        raise InvalidEpsilon("eps must lie in (0, 1)")
    _require_dispersion(chan)
    caps, disps = chan.capacities, chan.dispersions
    if isinstance(proc, st.Mixed):
        _check_beta(beta, 0.5)
        c_eps = first_order.closed_form_capacity(proc, chan, eps)
        lam = _mixture_lambda(proc.q, caps, disps, eps, c_eps)
        tied = np.abs(caps - c_eps) <= CAP_TIE
        below = caps < c_eps - CAP_TIE
        if tied.sum() > 1:
            case = "equal capacities"
        elif below.any():
            case = "above the lower atom"
        else:
            case = "lowest atom"
        decomp = {f"V_{i}": float(disps[i]) for i in np.flatnonzero(tied)}
        return ClosedForm(lam, decomp, case)
    if isinstance(proc, st.Iid) or (isinstance(proc, st.BlockIid) and proc.nu == 1):
        _check_beta(beta, 0.5)
        vp, vs = float(proc.pi @ disps), st.v_star(proc.pi, caps)
        return ClosedForm(float(math.sqrt(vp + vs) * Phi_inv(eps)),
                          {"V(pi)": vp, "V*(pi)": vs})
    if isinstance(proc, st.BlockIid):
        _check_beta(beta, 1 - proc.nu / 2)
        vs = st.v_star(proc.pi, caps)
        return ClosedForm(float(math.sqrt(vs) * Phi_inv(eps)), {"V*(pi)": vs})
    if isinstance(proc, st.Markov):
        _check_beta(beta, 0.5)
        if not proc.ergodic:
            raise NotErgodic("closed form needs an ergodic chain")
        pi = proc.stationary
        vp, vss = float(pi @ disps), st.v_double_star(proc.m, caps)
        return ClosedForm(float(math.sqrt(vp + vss) * Phi_inv(eps)),
                          {"V(pi)": vp, "V**(M)": vss})
    if isinstance(proc, st.Alternating):
        _check_beta(beta, 0.5)
        ca, cb = caps[proc.sa], caps[proc.sb]
        va, vb = disps[proc.sa], disps[proc.sb]
        # the occupation of sa oscillates between 1/3 and 2/3
        if abs(ca - cb) > CAP_TIE:
            frac_a = 2 / 3 if ca < cb else 1 / 3
            v = frac_a * va + (1 - frac_a) * vb
            return ClosedForm(float(math.sqrt(v) * Phi_inv(eps)),
                              {"V(t*)": v, "occupation_a": frac_a})
        lo, hi = sorted((va / 3 + 2 * vb / 3, 2 * va / 3 + vb / 3))
        v = hi if eps < 0.5 else lo
        return ClosedForm(float(math.sqrt(v) * Phi_inv(eps)), {"V(t*)": v},
                          "equal capacities")
    raise UnsupportedModel(f"no closed form for {proc!r}")


# ---------------------------------------------------------------------------
# bisection solver
# ---------------------------------------------------------------------------

def _divergence_diagnostic(per_n, tail=3, min_slope=0.25):
    """Detect a finite-n solution drifting off to infinity.

    Looks at the last ``tail`` grid points: if they move monotonically in
    one direction and |Lambda_n| grows at least like n^min_slope, the
    limit is reported as the signed infinity.
    """
    items = sorted(per_n.items())[-tail:]
    if len(items) < tail:
        return None, None
    ns = np.array([k for k, _ in items], float)
    vals = np.array([v for _, v in items], float)
    if not np.all(np.isfinite(vals)) or np.any(vals == 0):
        return None, None
    steps = np.diff(vals)
    if not (np.all(steps < 0) or np.all(steps > 0)):
        return None, None
    if np.any(np.sign(vals) != np.sign(steps[0])):
        return None, None
    slope = float(np.polyfit(np.log(ns), np.log(np.abs(vals)), 1)[0])
    if slope >= min_slope:
        return math.copysign(math.inf, steps[0]), slope
    return None, slope


def lambda_solve(eps, beta, proc, chan, n_grid=first_order.DEFAULT_N_GRID,
                 tol=1e-6, r_max=None, mode="auto", budget=100_000, seed=0,
                 c_eps=None, detect_divergence=True, calibrate=True):
    """Second-order rate sup{r : K(r | C_eps, beta) <= eps} at finite n.

    K is evaluated at every blocklength of ``n_grid``; the value at the
    largest one is reported, with the whole sequence kept in ``per_n``.
    The bisection bracket is [-r_max, r_max] with r_max = 20 sqrt(V+) by
    default, V+ = 2.3 |Y| bits^2; a solution outside the bracket is
    reported as the signed infinity.  When ``detect_divergence`` is set,
    a tail of the sequence that keeps growing like a power of n is also
    reported as the signed infinity (see ``diagnostics``).  Monte Carlo
    type laws are moment calibrated unless ``calibrate`` is False.
    """
    if not 0 < eps < 1:
        raise InvalidEpsilon("eps must lie in (0, 1)")
    if not 0.5 <= beta < 1:
        raise InvalidInput("beta must lie in [1/2, 1)")
    _require_dispersion(chan)
    n_grid = tuple(sorted(int(n) for n in n_grid))
    if r_max is None:
        r_max = 20.0 * math.sqrt(dispersion_bound(chan.output_size))
    if c_eps is not None:
        source = "given"
    else:
        c_eps = first_order.closed_form_capacity(proc, chan, eps)
        source = "closed_form"
        if c_eps is None:
            c_eps = first_order.eps_capacity(proc, chan, eps, n_grid, mode=mode,
                                              budget=budget, seed=seed).eps_capacity
            source = "finite_n_estimate"

    per_n, exact_flags = {}, []
    for i, n in enumerate(n_grid):
        types = st.type_distribution(proc, n, mode=mode, budget=budget,
                                     seed=seed + i, calibrate=calibrate)
        exact_flags.append(types.exact)
        per_n[n] = _bisect_sup(
            lambda r: k_exceeds(r, c_eps, beta, n, types, chan, eps),
            eps, r_max, tol)
    lam = per_n[n_grid[-1]]
    diagnostics = {"r_max": r_max, "tol": tol,
                   "exact_by_n": dict(zip(n_grid, exact_flags))}
    if not math.isfinite(lam):
        diagnostics["no_bracket"] = True
    elif detect_divergence:
        limit, slope = _divergence_diagnostic(per_n)
        diagnostics["tail_growth_exponent"] = slope
        if limit is not None:
            diagnostics["diverging"] = True
            diagnostics["lambda_at_n_max"] = lam
            lam = limit
    steps = np.diff([v for _, v in sorted(per_n.items())])
    diagnostics["monotone_tail"] = bool(steps.size and (np.all(steps >= 0) or np.all(steps <= 0)))

    closed, decomp = None, {}
    try:
        cf = closed_form_lambda(proc, chan, eps, beta)
        closed, decomp = cf.lambda_, cf.decomposition
    except (BetaMismatch, UnsupportedModel, NotErgodic) as exc:
        diagnostics["closed_form"] = str(exc)
    dispersion = None
    if beta == 0.5 and eps != 0.5 and math.isfinite(lam):
        dispersion = (lam / Phi_inv(eps)) ** 2
    return SecondOrderResult(eps, beta, lam, dispersion, decomp,
                             "functional_bisection", n_grid, float(c_eps),
                             source, per_n, closed, diagnostics)


# ---------------------------------------------------------------------------
# normal approximation and approximation audit
# ---------------------------------------------------------------------------

def normal_approximation_logM(eps, n, proc, chan):
    """Normal approximation of log2 M* (bits), without the O(log n) term."""
    caps, disps = chan.capacities, chan.dispersions
    q = Phi_inv(eps)
    if isinstance(proc, st.Iid):
        c, v = proc.pi @ caps, proc.pi @ disps + st.v_star(proc.pi, caps)
        return float(n * c + math.sqrt(n * v) * q)
    if isinstance(proc, st.BlockIid):
        c = proc.pi @ caps
        spread = n * (proc.pi @ disps) + n ** (2 - proc.nu) * st.v_star(proc.pi, caps)
        return float(n * c + math.sqrt(spread) * q)
    if isinstance(proc, st.Markov):
        if not proc.ergodic:
            raise NotErgodic("normal approximation needs an ergodic chain")
        pi = proc.stationary
        v = pi @ disps + st.v_double_star(proc.m, caps)
        return float(n * (pi @ caps) + math.sqrt(n * v) * q)
    raise UnsupportedModel("normal approximation covers iid, block iid and Markov states")


def effective_variance(proc, n, caps):
    """Variance added by the state process to the Gaussian at blocklength n."""
    if isinstance(proc, st.Iid):
        return st.v_star(proc.pi, caps)
    if isinstance(proc, st.BlockIid):
        d, m, _ = proc.layout(n)
        return m * m * (d + 1) / n * st.v_star(proc.pi, caps)
    if isinstance(proc, st.Markov):
        return st.sum_variance(proc, n, caps) / n
    raise UnsupportedModel("audit covers iid, block iid and Markov states")


@dataclass(frozen=True)
class AuditTable:
    n: tuple
    gap1: tuple
    gap2: tuple
    slope1: Optional[float]
    slope2: Optional[float]

    def fitted(self, which, n):
        """Fitted gap at blocklength n from the log-log regression."""
        gaps = np.asarray(self.gap1 if which == 1 else self.gap2)
        ns = np.asarray(self.n, float)
        ok = gaps > 0
        if ok.sum() < 2:
            return 0.0
        slope, icpt = np.polyfit(np.log(ns[ok]), np.log(gaps[ok]), 1)
        return float(math.exp(icpt + slope * math.log(n)))

    def to_csv(self, metadata=None):
        lines = []
        if metadata is not None:
            lines.append("# " + " ".join(f"{k}={v}" for k, v in sorted(metadata.items())))
        lines.append("n,gap1,gap2")
        lines += [f"{n},{a:.17g},{b:.17g}" for n, a, b in zip(self.n, self.gap1, self.gap2)]
        return "\n".join(lines) + "\n"


def approximation_gap_audit(proc, chan, n_grid=(64, 128, 256, 512, 1024, 2048, 4096),
                            mode="auto", budget=100_000, seed=0, n_x=201):
    """Sup-norm sizes of the two Gaussian approximation steps.

    gap1 replaces V(T) by V(pi) inside the expectation; gap2 replaces the
    expectation over C(T) by a single Gaussian with the effective variance.
    Both are maximized over x in C(pi) +- 5 sqrt((V(pi) + V_eff) / n).
    """
    _require_dispersion(chan)
    caps, disps = chan.capacities, chan.dispersions
    pi = st.limiting_state_law(proc)
    if pi is None or isinstance(proc, st.Mixed):
        raise UnsupportedModel("audit covers iid, block iid and Markov states")
    c_pi, v_pi = float(pi @ caps), float(pi @ disps)
    rows1, rows2 = [], []
    ns = tuple(sorted(int(n) for n in n_grid))
    for i, n in enumerate(ns):
        types = st.type_distribution(proc, n, mode=mode, budget=budget, seed=seed + i)
        ct, vt = types.average(caps), types.average(disps)
        v_eff = effective_variance(proc, n, caps)
        half = 5 * math.sqrt((v_pi + v_eff) / n)
        x = np.linspace(c_pi - half, c_pi + half, n_x)
        diff = math.sqrt(n) * (x[:, None] - ct[None, :])
        a = Phi(diff / np.sqrt(vt)[None, :]) @ types.probs
        b = Phi(diff / math.sqrt(v_pi)) @ types.probs
        c = Phi(math.sqrt(n) * (x - c_pi) / math.sqrt(v_pi + v_eff))
        rows1.append(float(np.max(np.abs(a - b))))
        rows2.append(float(np.max(np.abs(b - c))))
    slope1 = first_order._fit_slope(ns, rows1)
    slope2 = first_order._fit_slope(ns, rows2)
    return AuditTable(ns, tuple(rows1), tuple(rows2), slope1, slope2)
