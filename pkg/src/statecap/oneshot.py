"""
One-shot and small-blocklength bounds for state-dependent channels.

Feinstein-type achievability with state information at both ends, the
eps-hypothesis-testing divergence by Neyman-Pearson, the information
spectrum converse evaluated exactly over conditional types, the explicit
Berry-Esseen direct bound, and a random coding simulator.

Everything is in bits: information densities use log2 and the Feinstein
slack term is 2^-eta.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import states as st
from .errors import (BudgetExceeded, DegenerateDispersion, EnumerationTooLarge,
                     InconsistentType, InvalidEpsilon, InvalidInput,
                     Unsupported)
from .numerics import (Phi, StepFunction, berry_esseen_constant,
                       generalized_inverse, lipschitz_constant)

logger = logging.getLogger(__name__)

ENUM_CAP = 10_000_000
ROUND = 12          # decimals used to merge atoms of summed log-likelihoods
MAX_CODEBOOK = 1 << 16


# ---------------------------------------------------------------------------
# small containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JointLaw:
    """Law of (x, y, s) for one channel use, as a |S| x |X| x |Y| array."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 3 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise InvalidInput("joint law must be a nonnegative 3-d array summing to 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_policy(cls, chan, policy, state_law):
        """P_S(s) P(x|s) W(y|x, s)."""
        policy = _policy(chan, policy)
        q = np.asarray(state_law, dtype=float)
        return cls(q[:, None, None] * policy[:, :, None] * chan.matrices)

    @property
    def support(self):
        idx = np.argwhere(self.probs > 0)
        return [(int(x), int(y), int(s), float(self.probs[s, x, y])) for s, x, y in idx]


@dataclass(frozen=True)
class HypothesisTest:
    """Neyman-Pearson test: accept P above ``threshold``, randomize at it."""

    threshold: float
    randomization: float

    def __post_init__(self):
        if not 0.0 <= self.randomization <= 1.0:
            raise InvalidInput("randomization must lie in [0, 1]")


@dataclass
class ProbabilityEstimate:
    value: float
    lower: float
    upper: float
    exact: bool
    samples: Optional[int] = None
    seed: Optional[int] = None

    def __float__(self):
        return float(self.value)


@dataclass
class BoundReport:
    n: int
    eps_target: float
    logM: float
    achievability_eps: float
    feinstein_logM: float
    converse_logM: float
    converse_by_q: dict
    direct_rhs: float
    slack: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "n": self.n,
            "eps_target": self.eps_target,
            "logM": self.logM,
            "achievability_eps": self.achievability_eps,
            "feinstein_logM": self.feinstein_logM,
            "converse_logM": self.converse_logM,
            "converse_by_q": dict(self.converse_by_q),
            "direct_rhs": self.direct_rhs,
            "slack": dict(self.slack),
            "units": {"logM": "bits", "feinstein_logM": "bits",
                      "converse_logM": "bits"},
        }


# ---------------------------------------------------------------------------
# discrete laws of sums
# ---------------------------------------------------------------------------

def _merge(points, weights):
    points = np.round(np.asarray(points, dtype=float), ROUND)
    weights = np.asarray(weights, dtype=float)
    keep = weights > 0
    points, weights = points[keep], weights[keep]
    uniq, inv = np.unique(points, return_inverse=True)
    return uniq, np.bincount(inv.ravel(), weights=weights, minlength=uniq.size)


def _convolve(a, b, cap=ENUM_CAP):
    pa, wa = a
    pb, wb = b
    if pa.size * pb.size > cap:
        raise EnumerationTooLarge(f"convolution needs {pa.size * pb.size} atoms")
    return _merge((pa[:, None] + pb[None, :]).ravel(), (wa[:, None] * wb[None, :]).ravel())


def _power(law, k, cap=ENUM_CAP):
    """Law of the sum of k i.i.d. copies, by repeated squaring."""
    out = (np.zeros(1), np.ones(1))
    base = law
    while k:
        if k & 1:
            out = _convolve(out, base, cap)
        k >>= 1
        if k:
            base = _convolve(base, base, cap)
    return out


def _policy(chan, policy):
    if policy is None:
        return np.asarray(chan.caids, dtype=float)
    p = np.asarray(policy, dtype=float)
    if p.ndim == 1:
        p = np.tile(p, (chan.n_states, 1))
    if p.shape != (chan.n_states, chan.input_size):
        raise InvalidInput("policy must be |S| x |X|")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-12):
        raise InvalidInput("each row of the policy must be a distribution")
    return p


def _density_law(w, p):
    """Per-letter law of log2 W(y|x)/PW(y) under P(x)W(y|x)."""
    q = p @ w
    mass = p[:, None] * w
    ok = mass > 0
    with np.errstate(divide="ignore"):
        dens = np.log2(w) - np.log2(q)[None, :]
    return _merge(dens[ok], mass[ok])


def _letter_law(w, q_out, x):
    """Law of log2 W(y|x)/Q(y) under W(.|x); +inf where Q(y) = 0."""
    row = w[x]
    ok = row > 0
    with np.errstate(divide="ignore"):
        dens = np.log2(row[ok]) - np.log2(q_out[ok])
    return _merge(dens, row[ok])


def _cdf(law):
    return StepFunction.from_atoms(*law)


def _weighted_sum(steps, weights):
    """Pointwise weighted sum of step functions."""
    bps = np.unique(np.concatenate([s.breakpoints for s in steps]))
    vals = sum(w * s(bps) for s, w in zip(steps, weights))
    left = sum(w * s.left for s, w in zip(steps, weights))
    vals = np.minimum(np.maximum.accumulate(np.maximum(vals, left)), 1.0)
    return StepFunction(bps, vals, left=min(left, 1.0))


def _pointwise_min(steps):
    out = steps[0]
    for s in steps[1:]:
        out = out.minimum(s)
    return out


def _exact_types(proc, n, budget, seed):
    try:
        return st.type_distribution(proc, n, mode="exact")
    except Unsupported:
        return st.type_distribution(proc, n, mode="mc", budget=budget, seed=seed)


# ---------------------------------------------------------------------------
# Feinstein achievability
# ---------------------------------------------------------------------------

def information_density_cdf(chan, proc, n, policy=None, enum_cap=ENUM_CAP,
                            budget=100_000, seed=0):
    """Exact cdf of i(X^n; Y^n | S^n) in bits, averaged over the state type.

    Given the state type the density is a sum of independent per-letter
    terms, so the law is a convolution over states of n_s-fold powers of
    the per-letter law; no sequence is enumerated.  ``enum_cap`` bounds
    the number of atoms of every intermediate law.
    """
    pol = _policy(chan, policy)
    letters = [_density_law(chan.matrices[s], pol[s]) for s in range(chan.n_states)]
    types = _exact_types(proc, n, budget, seed)
    steps = []
    for row in types.counts:
        law = (np.zeros(1), np.ones(1))
        for s, k in enumerate(row):
            if k:
                law = _convolve(law, _power(letters[s], int(k), enum_cap), enum_cap)
        steps.append(_cdf(law))
    return _weighted_sum(steps, types.probs)


def _wilson(k, m, conf=0.99):
    z = stats.norm.ppf(0.5 + conf / 2)
    p = k / m
    den = 1 + z * z / m
    mid = (p + z * z / (2 * m)) / den
    half = z * math.sqrt(p * (1 - p) / m + z * z / (4 * m * m)) / den
    return float(max(0.0, mid - half)), float(min(1.0, mid + half))


def _sample_density(chan, proc, n, pol, budget, seed):
    rng = st.make_rng(seed)
    w = chan.matrices
    q = np.einsum("sx,sxy->sy", pol, w)
    with np.errstate(divide="ignore"):
        dens = np.log2(w) - np.log2(q)[:, None, :]
    total = np.zeros(budget)
    s = st._sample_paths(proc, n, budget, rng)
    for k in range(n):
        sk = s[:, k]
        u = rng.random(budget)
        x = (u[:, None] > np.cumsum(pol[sk], axis=1)).sum(axis=1)
        x = np.minimum(x, chan.input_size - 1)
        u = rng.random(budget)
        y = (u[:, None] > np.cumsum(w[sk, x], axis=1)).sum(axis=1)
        y = np.minimum(y, chan.output_size - 1)
        total += dens[sk, x, y]
    return total


def feinstein_terms(chan, proc, n, logM, eta, policy=None, mode="auto",
                    enum_cap=ENUM_CAP, budget=100_000, seed=0):
    """Feinstein bound Pr[i <= logM + eta] + 2^-eta with its evaluation details.

    ``mode="exact"`` uses the convolution law and raises
    EnumerationTooLarge when it would exceed ``enum_cap`` atoms;
    ``mode="mc"`` samples ``budget`` triples and reports a 99% Wilson
    interval; ``mode="auto"`` tries exact first.
    """
    if not eta > 0:
        raise InvalidInput("eta must be positive")
    pol = _policy(chan, policy)
    if mode in ("exact", "auto"):
        try:
            f = information_density_cdf(chan, proc, n, pol, enum_cap, budget, seed)
            val = min(1.0, float(f(logM + eta)) + 2.0 ** -eta)
            return ProbabilityEstimate(val, val, val, True)
        except EnumerationTooLarge:
            if mode == "exact":
                raise
    elif mode != "mc":
        raise InvalidInput(f"unknown mode {mode!r}")
    if budget > 10_000_000:
        raise BudgetExceeded("Monte Carlo budget above 1e7 samples")
    dens = _sample_density(chan, proc, n, pol, budget, seed)
    k = int(np.sum(dens <= logM + eta + 10 ** -ROUND))
    lo, hi = _wilson(k, budget)
    tail = 2.0 ** -eta
    return ProbabilityEstimate(min(1.0, k / budget + tail), min(1.0, lo + tail),
                               min(1.0, hi + tail), False, budget, seed)


def feinstein_rhs(chan, proc, n, logM, eta, policy=None, mode="auto",
                  enum_cap=ENUM_CAP, budget=100_000, seed=0):
    """Feinstein upper bound on the maximal error probability (a number)."""
    return feinstein_terms(chan, proc, n, logM, eta, policy, mode, enum_cap,
                           budget, seed).value


def feinstein_logM(chan, proc, n, eps, policy=None, enum_cap=ENUM_CAP):
    """sup over (logM, eta) with Pr[i <= logM + eta] + 2^-eta <= eps (bits).

    With a = logM + eta held on a flat piece [b_i, b_{i+1}) of the cdf F,
    the best choice is eta = -log2(eps - F(b_i)), so the supremum is
    max_i b_{i+1} + log2(eps - v_i) over pieces with v_i < eps (the first
    piece starts at -inf with value 0).  Returns -inf if no piece qualifies.
    """
    if not 0 < eps <= 1:
        raise InvalidEpsilon("eps must lie in (0, 1]")
    f = information_density_cdf(chan, proc, n, policy, enum_cap)
    levels = np.concatenate(([f.left], f.values[:-1]))
    ok = levels < eps
    if not ok.any():
        return -math.inf
    return float(np.max(f.breakpoints[ok] + np.log2(eps - levels[ok])))


def feinstein_eps(chan, proc, n, logM, policy=None, enum_cap=ENUM_CAP):
    """Smallest Feinstein bound over eta > 0 at a given logM."""
    f = information_density_cdf(chan, proc, n, policy, enum_cap)
    # on each piece the infimum is reached at its right end
    levels = np.concatenate(([f.left], f.values[:-1]))
    eta = f.breakpoints - logM
    ok = eta > 0
    cand = levels[ok] + 2.0 ** -eta[ok]
    return float(min(1.0, cand.min())) if cand.size else 1.0


# ---------------------------------------------------------------------------
# hypothesis testing divergence
# ---------------------------------------------------------------------------

def _check_pair(p, q):
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise InvalidInput("P and Q must live on the same alphabet")
    for v in (p, q):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise InvalidInput("P and Q must be distributions")
    return p, q


def np_test(P, Q, alpha):
    """Neyman-Pearson test with power alpha under P.

    Returns (beta, HypothesisTest): beta = min Q[xi] subject to
    P[xi] >= alpha.  Atoms with Q = 0 < P come first (ratio +inf), atoms
    with equal ratio form one group, and the boundary group is randomized.
    """
    p, q = _check_pair(P, Q)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(q > 0, np.log2(p) - np.log2(q), np.inf)
    ratio = np.where(p > 0, ratio, -np.inf)
    if alpha <= 0:
        return 0.0, HypothesisTest(math.inf, 0.0)
    groups = sorted(set(np.round(ratio[p > 0], ROUND).tolist()), reverse=True)
    key = np.round(ratio, ROUND)
    pcum = qcum = 0.0
    for g in groups:
        sel = key == g
        pg, qg = float(p[sel].sum()), float(q[sel].sum())
        if pcum + pg >= alpha - 1e-15:
            theta = min(1.0, max(0.0, (alpha - pcum) / pg))
            return qcum + theta * qg, HypothesisTest(g, theta)
        pcum += pg
        qcum += qg
    return qcum, HypothesisTest(-math.inf, 1.0)


def dh_divergence(P, Q, eps):
    """eps-hypothesis-testing divergence -log2(beta_{1-eps} / (1 - eps)), bits."""
    if not 0 < eps < 1:
        raise InvalidEpsilon("eps must lie in (0, 1)")
    beta, _ = np_test(P, Q, 1.0 - eps)
    if beta <= 0:
        return math.inf
    return max(0.0, -math.log2(beta / (1.0 - eps)))


def dpi_check(P, Q, kernel, eps, tol=1e-9):
    """True when D_h(P||Q) >= D_h(PW||QW) - tol for the stochastic ``kernel``."""
    k = np.asarray(kernel, dtype=float)
    if np.any(k < 0) or np.any(np.abs(k.sum(axis=1) - 1.0) > 1e-9):
        raise InvalidInput("kernel must be row stochastic")
    p, q = _check_pair(P, Q)
    before = dh_divergence(p, q, eps)
    after = dh_divergence(p @ k, q @ k, eps)
    return bool(before >= after - tol or before == math.inf)


# ---------------------------------------------------------------------------
# information spectrum converse
# ---------------------------------------------------------------------------

def conditional_types(counts, x_size, cap=ENUM_CAP):
    """All joint count matrices n[x, s] with column sums ``counts``."""
    per_state = [st.compositions(int(c), x_size) for c in counts]
    total = math.prod(len(p) for p in per_state)
    if total > cap:
        raise EnumerationTooLarge(f"{total} conditional types")
    for combo in itertools.product(*per_state):
        yield np.stack(combo, axis=1)


def _output_law(chan, joint, reference):
    """Per-state output law: the conditional type pushed through W, or Q*."""
    if reference == "caid":
        return np.einsum("sx,sxy->sy", chan.caids, chan.matrices)
    if reference != "type":
        raise InvalidInput(f"unknown reference {reference!r}")
    k = chan.input_size
    col = joint.sum(axis=0)
    cond = np.where(col > 0, joint / np.maximum(col, 1), 1.0 / k).T
    return np.einsum("sx,sxy->sy", cond, chan.matrices)


def xi_law(chan, joint, reference="type", cap=ENUM_CAP):
    """Law of sum_k log2 W(Y_k|x_k,s_k)/Q(Y_k|s_k) for fixed (x^n, s^n).

    ``joint[x, s]`` counts the positions with input x in state s; the
    output law Q is T_{x^n|s^n} W (``reference="type"``) or the
    capacity-achieving output law of each state (``reference="caid"``).
    """
    joint = np.asarray(joint, dtype=np.int64)
    if joint.shape != (chan.input_size, chan.n_states) or np.any(joint < 0):
        raise InconsistentType("joint counts must be a nonnegative |X| x |S| array")
    q_out = _output_law(chan, joint, reference)
    law = (np.zeros(1), np.ones(1))
    for s in range(chan.n_states):
        for x in range(chan.input_size):
            k = int(joint[x, s])
            if k:
                letter = _letter_law(chan.matrices[s], q_out[s], x)
                law = _convolve(law, _power(letter, k, cap), cap)
    return law


def xi_cdf(chan, t, x_assignment, R, n, reference="type"):
    """Pr[(1/n) sum_k j(X_k; Y_k | S_k) <= R] for the given state type and inputs.

    ``t`` is a StateType (or a count vector) and ``x_assignment[x, s]``
    the number of positions carrying input x in state s.
    """
    counts = np.asarray(getattr(t, "counts", t), dtype=np.int64)
    joint = np.asarray(x_assignment, dtype=np.int64)
    if counts.sum() != n or joint.sum() != n:
        raise InconsistentType("type and assignment must both sum to n")
    if not np.array_equal(joint.sum(axis=0), counts):
        raise InconsistentType("assignment does not match the state type")
    return float(_cdf(xi_law(chan, joint, reference))(n * R))


def _converse_cdf(chan, types, reference, cap):
    """sum_t P[T = t] min over conditional types of the Xi cdf (unnormalized)."""
    steps = []
    for row in types.counts:
        cands = [_cdf(xi_law(chan, j, reference, cap))
                 for j in conditional_types(row, chan.input_size, cap)]
        steps.append(_pointwise_min(cands))
    return _weighted_sum(steps, types.probs)


def spectrum_converse_logM(chan, proc, n, eps, delta=None, reference="both",
                           enum_cap=ENUM_CAP):
    """Information spectrum upper bound on log2 M*(eps) at blocklength n.

    For each state type the supremum over encoders is exact over
    conditional types, because the Xi cdf depends on (x^n, s^n) only
    through their joint type; the combination over types is the
    pointwise minimum inside the type average.

    reference="type": Q is the uniform mixture over conditional types of
    T W, which costs |X||S| log2(n+1) bits; reference="caid": Q is the
    product of the capacity-achieving output laws, at no cost.  Both pay
    -log2(delta), delta = 1/sqrt(n) by default.  "both" returns the
    smaller bound together with the two values.
    """
    if not 0 <= eps < 1:
        raise InvalidEpsilon("eps must lie in [0, 1)")
    delta = 1.0 / math.sqrt(n) if delta is None else float(delta)
    if not delta > 0:
        raise InvalidInput("delta must be positive")
    if reference == "both":
        vals = {r: spectrum_converse_logM(chan, proc, n, eps, delta, r, enum_cap)
                for r in ("type", "caid")}
        return min(vals.values()), vals
    level = eps + delta
    if level >= 1:
        return math.inf
    types = st.type_distribution(proc, n, mode="exact")
    cdf = _converse_cdf(chan, types, reference, enum_cap)
    r_star = float(generalized_inverse(cdf, level))
    penalty = -math.log2(delta)
    if reference == "type":
        penalty += chan.input_size * chan.n_states * math.log2(n + 1)
    return r_star + penalty


def spectrum_converse_eps(chan, proc, n, logM, delta=None, enum_cap=ENUM_CAP):
    """Error level below which the converse rules out 2^logM codewords.

    The inverse view of ``spectrum_converse_logM``: the smallest eps whose
    converse bound still reaches ``logM``, taken over both reference
    output laws.  Every code of that size has error at least this value.
    """
    delta = 1.0 / math.sqrt(n) if delta is None else float(delta)
    types = st.type_distribution(proc, n, mode="exact")
    best = 0.0
    for reference in ("type", "caid"):
        penalty = -math.log2(delta)
        if reference == "type":
            penalty += chan.input_size * chan.n_states * math.log2(n + 1)
        cdf = _converse_cdf(chan, types, reference, enum_cap)
        # the sup in the converse reaches x once the left limit at x is <= eps + delta
        x = logM - penalty
        left = float(cdf(np.nextafter(x, -np.inf)))
        best = max(best, left - delta)
    return float(min(1.0, max(0.0, best)))


# ---------------------------------------------------------------------------
# explicit direct bound and random coding
# ---------------------------------------------------------------------------

def direct_bound_rhs(chan, proc, n, R, mode="auto", budget=100_000, seed=0):
    """E[Phi(sqrt(n)(R - C(T))/sqrt(V(T)))] + D1 log2 n/sqrt(n) + (B+1)/sqrt(n).

    R is the rate in bits per channel use.  The value is clipped to [0, 1].
    With the universal third-moment constant the last term alone exceeds
    one unless n is in the tens of millions.
    """
    if not chan.v_min > 0:
        raise DegenerateDispersion("direct bound needs V_min > 0")
    types = st.type_distribution(proc, n, mode=mode, budget=budget, seed=seed)
    ct = types.average(chan.capacities)
    vt = types.average(chan.dispersions)
    main = float(Phi(math.sqrt(n) * (R - ct) / np.sqrt(vt)) @ types.probs)
    d1 = lipschitz_constant(chan.v_min)
    b = berry_esseen_constant(chan)
    rhs = main + d1 * math.log2(n) / math.sqrt(n) + (b + 1) / math.sqrt(n)
    return float(min(1.0, max(0.0, rhs)))


def random_coding_error_mc(chan, proc, n, R, codebooks=10_000, policy=None,
                           seed=0):
    """Average error of random codes with ML decoding, by simulation.

    Each trial draws a state sequence, a codebook of floor(2^(nR))
    codewords i.i.d. from the policy given the states, sends the first
    message and decodes by maximum likelihood with the states known;
    ties count as errors in proportion.  Returns a ProbabilityEstimate
    with a 99% Wilson interval.
    """
    m = int(math.floor(2.0 ** (n * R) + 1e-9))
    if m < 1:
        raise InvalidInput("rate gives an empty codebook")
    if m > MAX_CODEBOOK:
        raise BudgetExceeded(f"codebook of {m} words exceeds {MAX_CODEBOOK}")
    pol = _policy(chan, policy)
    rng = st.make_rng(seed)
    w = chan.matrices
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    errors = 0.0
    chunk = max(1, 2_000_000 // max(1, m * n))
    done = 0
    while done < codebooks:
        size = min(chunk, codebooks - done)
        s = st._sample_paths(proc, n, size, rng)
        cum = np.cumsum(pol[s], axis=2)                        # size x n x |X|
        u = rng.random((size, m, n))
        x = (u[..., None] > cum[:, None, :, :]).sum(axis=3)
        x = np.minimum(x, chan.input_size - 1)                 # size x m x n
        sent = x[:, 0, :]
        cum_y = np.cumsum(w[s, sent], axis=2)                  # size x n x |Y|
        u = rng.random((size, n))
        y = np.minimum((u[..., None] > cum_y).sum(axis=2), chan.output_size - 1)
        ll = logw[s[:, None, :], x, y[:, None, :]].sum(axis=2)  # size x m
        best = ll.max(axis=1, keepdims=True)
        ties = (ll == best).sum(axis=1)
        correct = (ll[:, 0] == best[:, 0]) / ties
        errors += float(np.sum(1.0 - correct))
        done += size
    p = errors / codebooks
    lo, hi = _wilson(p * codebooks, codebooks)
    return ProbabilityEstimate(p, lo, hi, False, codebooks, seed)


def bound_report(chan, proc, n, eps, policy=None, delta=None):
    """Achievability and converse at one (n, eps), plus the direct bound."""
    f_logm = feinstein_logM(chan, proc, n, eps, policy)
    conv, by_q = spectrum_converse_logM(chan, proc, n, eps, delta)
    logm = max(f_logm, 0.0)
    ach = feinstein_eps(chan, proc, n, logm, policy)
    try:
        direct = direct_bound_rhs(chan, proc, n, logm / n)
    except DegenerateDispersion:
        direct = math.nan
    return BoundReport(n, eps, logm, ach, f_logm, conv, by_q, direct,
                       {"converse_minus_feinstein": conv - f_logm})
