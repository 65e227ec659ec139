"""
State processes, the law of their empirical type, and the variance and
covariance functionals of the per-state capacities they induce.

Five models are supported: a mixed (fixed random) state, i.i.d. states,
block i.i.d. states, a stationary or started Markov chain, and the
deterministic alternating schedule.
"""
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from .errors import (InconsistentType, InvalidInput, InvalidModel,
                     NonDiagonalizable, NotErgodic, Unsupported)

logger = logging.getLogger(__name__)

EXACT_MARKOV_CAP = {2: 512, 3: 128}
EXACT_ATOM_CAP = 2_000_000


def _distribution(p, name):
    p = np.asarray(p, dtype=float).ravel()
    if p.size == 0 or not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidModel(f"{name} must be a nonnegative finite vector")
    if abs(p.sum() - 1.0) > 1e-12:
        raise InvalidModel(f"{name} must sum to 1")
    p = p.copy()
    p.setflags(write=False)
    return p


def make_rng(seed):
    """Counter-based generator used for every sampled artifact."""
    return np.random.Generator(np.random.Philox(int(seed)))


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Mixed:
    """One state drawn from ``q`` and held for the whole block."""

    q: np.ndarray
    kind = "mixed"

    def __post_init__(self):
        object.__setattr__(self, "q", _distribution(self.q, "q"))

    @property
    def n_states(self):
        return self.q.size


@dataclass(frozen=True, eq=False)
class Iid:
    pi: np.ndarray
    kind = "iid"

    def __post_init__(self):
        object.__setattr__(self, "pi", _distribution(self.pi, "pi"))

    @property
    def n_states(self):
        return self.pi.size


@dataclass(frozen=True, eq=False)
class BlockIid:
    """floor(n^nu) blocks of equal length m plus a remainder block.

    Each block gets an independent state drawn from ``pi``.
    """

    pi: np.ndarray
    nu: float
    kind = "block_iid"

    def __post_init__(self):
        object.__setattr__(self, "pi", _distribution(self.pi, "pi"))
        if not 0 < self.nu <= 1:
            raise InvalidModel("nu must lie in (0, 1]")

    @property
    def n_states(self):
        return self.pi.size

    def layout(self, n):
        """Return ``(d, m, r)``: number of blocks, block length, remainder."""
        return block_layout(n, self.nu)


@dataclass(frozen=True, eq=False)
class Markov:
    """Homogeneous Markov chain with kernel ``m``.

    ``init`` defaults to the stationary law.  ``ergodic`` records whether
    the kernel is irreducible and aperiodic.
    """

    m: np.ndarray
    init: Optional[np.ndarray] = None
    ergodic: bool = field(init=False)
    kind = "markov"

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.size == 0:
            raise InvalidModel("kernel must be a square matrix")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise InvalidModel("kernel entries must be finite and nonnegative")
        if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-12):
            raise InvalidModel("kernel rows must sum to 1")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "ergodic", is_ergodic(m))
        if self.init is None:
            init = stationary_distribution(m)
        else:
            init = _distribution(self.init, "init")
            if init.size != m.shape[0]:
                raise InvalidModel("init has the wrong length")
        object.__setattr__(self, "init", init)

    @property
    def n_states(self):
        return self.m.shape[0]

    @property
    def stationary(self):
        return stationary_distribution(self.m)


@dataclass(frozen=True)
class Alternating:
    """Deterministic schedule: state ``sa`` at positions in J, ``sb`` elsewhere.

    J collects the positions i with 2^(2k-1) <= i < 2^(2k) for some
    k >= ``k_start``; position indices start at 1.
    """

    sa: int
    sb: int
    n_states: int = 2
    k_start: int = 1
    kind = "alternating"

    def __post_init__(self):
        if self.sa == self.sb:
            raise InvalidModel("alternating states must be distinct")
        for s in (self.sa, self.sb):
            if not 0 <= s < self.n_states:
                raise InvalidModel("state index out of range")
        if self.k_start < 0:
            raise InvalidModel("k_start must be nonnegative")

    def in_j(self, positions):
        """Membership of 1-based positions in J."""
        pos = np.asarray(positions, dtype=np.int64)
        bl = np.zeros_like(pos)
        x = pos.copy()
        while np.any(x > 0):
            bl += x > 0
            x >>= 1
        return (pos >= 1) & (bl % 2 == 0) & (bl // 2 >= self.k_start)

    def count_in_j(self, n):
        """|J intersected with {1, ..., n}|, in closed form."""
        total, k = 0, max(self.k_start, 1)
        while 2 ** (2 * k - 1) <= n:
            lo, hi = 2 ** (2 * k - 1), 2 ** (2 * k) - 1
            total += min(hi, n) - lo + 1
            k += 1
        return total


def block_layout(n, nu):
    d = int(math.floor(n ** nu * (1 + 1e-12)))
    d = max(1, min(d, n))
    m = n // d
    return d, m, n - m * d


# ---------------------------------------------------------------------------
# Markov chain helpers
# ---------------------------------------------------------------------------

def stationary_distribution(m):
    """Left Perron vector of a row-stochastic matrix (least squares solve)."""
    m = np.asarray(m, dtype=float)
    k = m.shape[0]
    a = np.vstack([m.T - np.eye(k), np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(a, b, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _reachable(adj, start):
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(adj[u]):
            if v not in seen:
                seen.add(int(v))
                stack.append(int(v))
    return seen


def is_ergodic(m):
    """Irreducible (reachability) and aperiodic (gcd of cycle lengths)."""
    adj = np.asarray(m) > 0
    k = adj.shape[0]
    if len(_reachable(adj, 0)) != k or len(_reachable(adj.T, 0)) != k:
        return False
    # BFS levels; the period is the gcd of level[u] + 1 - level[v] over edges
    level = {0: 0}
    queue = [0]
    while queue:
        u = queue.pop(0)
        for v in np.flatnonzero(adj[u]):
            if int(v) not in level:
                level[int(v)] = level[u] + 1
                queue.append(int(v))
    g = 0
    for u in range(k):
        for v in np.flatnonzero(adj[u]):
            g = math.gcd(g, abs(level[u] + 1 - level[int(v)]))
    return g == 1


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_states(proc, n, seed):
    """Draw one state sequence of length ``n`` (0-based state indices)."""
    if n < 1:
        raise InvalidInput("n must be positive")
    rng = make_rng(seed)
    return _sample_paths(proc, n, 1, rng)[0]


def _sample_paths(proc, n, count, rng):
    if isinstance(proc, Mixed):
        s = rng.choice(proc.n_states, size=count, p=proc.q)
        return np.repeat(s[:, None], n, axis=1)
    if isinstance(proc, Iid):
        return rng.choice(proc.n_states, size=(count, n), p=proc.pi)
    if isinstance(proc, BlockIid):
        d, m, r = proc.layout(n)
        blocks = rng.choice(proc.n_states, size=(count, d + 1), p=proc.pi)
        lengths = np.array([m] * d + [r])
        return np.repeat(blocks, lengths, axis=1)
    if isinstance(proc, Markov):
        cum = np.cumsum(proc.m, axis=1)
        cum[:, -1] = 1.0
        out = np.empty((count, n), dtype=np.int64)
        out[:, 0] = rng.choice(proc.n_states, size=count, p=proc.init)
        for k in range(1, n):
            u = rng.random(count)
            out[:, k] = (u[:, None] >= cum[out[:, k - 1]]).sum(axis=1)
        return out
    if isinstance(proc, Alternating):
        seq = np.where(proc.in_j(np.arange(1, n + 1)), proc.sa, proc.sb)
        return np.repeat(seq[None, :], count, axis=0)
    raise InvalidModel(f"unknown state process {proc!r}")


# ---------------------------------------------------------------------------
# type distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateType:
    counts: tuple
    n: int

    def __post_init__(self):
        if sum(self.counts) != self.n or min(self.counts) < 0:
            raise InconsistentType("counts must be nonnegative and sum to n")

    @property
    def freqs(self):
        return np.asarray(self.counts, dtype=float) / self.n


@dataclass(frozen=True, eq=False)
class TypeDistribution:
    """Law of the empirical state type at blocklength ``n``.

    ``counts`` has one row per atom; ``probs`` holds the atom weights.  For
    Monte Carlo laws ``sample_count`` and ``seed`` identify the run.
    """

    n: int
    counts: np.ndarray
    probs: np.ndarray
    exact: bool
    sample_count: Optional[int] = None
    seed: Optional[int] = None
    calibrated: bool = False

    @property
    def n_atoms(self):
        return self.probs.size

    @property
    def freqs(self):
        return self.counts / float(self.n)

    @property
    def atoms(self):
        return [(StateType(tuple(int(c) for c in row), self.n), float(p))
                for row, p in zip(self.counts, self.probs)]

    def mean_type(self):
        return self.probs @ self.freqs

    def average(self, per_state):
        """Per-atom value of sum_s T(s) * per_state[s]."""
        return self.freqs @ np.asarray(per_state, dtype=float)

    def to_csv(self, labels=None, metadata=None):
        k = self.counts.shape[1]
        labels = labels or [f"count_{i}" for i in range(k)]
        buf = io.StringIO()
        meta = {"n": self.n, "exact": self.exact, "calibrated": self.calibrated,
                "sample_count": self.sample_count, "seed": self.seed}
        meta.update(metadata or {})
        buf.write("# " + " ".join(f"{a}={b}" for a, b in sorted(meta.items())) + "\n")
        buf.write(",".join(list(labels) + ["probability"]) + "\n")
        for row, p in zip(self.counts, self.probs):
            buf.write(",".join(str(int(c)) for c in row) + f",{p:.17g}\n")
        return buf.getvalue()


def _from_arrays(n, counts, probs, exact, sample_count=None, seed=None):
    counts = np.asarray(counts, dtype=np.int64)
    probs = np.asarray(probs, dtype=float)
    keep = probs > 0
    counts, probs = counts[keep], probs[keep]
    uniq, inv = np.unique(counts, axis=0, return_inverse=True)
    merged = np.bincount(inv.ravel(), weights=probs, minlength=len(uniq))
    return TypeDistribution(n, uniq, merged, exact, sample_count, seed)


def compositions(total, parts):
    """All vectors of ``parts`` nonnegative integers summing to ``total``."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    rows = []
    for first in range(total, -1, -1):
        rest = compositions(total - first, parts - 1)
        rows.append(np.column_stack([np.full(len(rest), first), rest]))
    return np.vstack(rows)


def _n_compositions(total, parts):
    return math.comb(total + parts - 1, parts - 1)


def multinomial_law(total, p):
    """Atoms and weights of a multinomial(total, p) count vector."""
    p = np.asarray(p, dtype=float)
    if _n_compositions(total, p.size) > EXACT_ATOM_CAP:
        raise Unsupported("multinomial enumeration exceeds the atom cap")
    c = compositions(total, p.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(c > 0, c * np.log(p), 0.0)
    logw = gammaln(total + 1) - gammaln(c + 1).sum(axis=1) + terms.sum(axis=1)
    return c, np.exp(logw)


def _markov_dp(proc, n):
    """Exact type law of a Markov chain by dynamic programming.

    The table is indexed by (last state, counts of states 0..|S|-2); the
    count of the last state is implied.
    """
    k = proc.n_states
    shape = (k,) + (n + 1,) * (k - 1)
    table = np.zeros(shape)
    for s in range(k):
        idx = [s] + [0] * (k - 1)
        if s < k - 1:
            idx[1 + s] = 1
        table[tuple(idx)] += proc.init[s]
    m = proc.m
    for _ in range(n - 1):
        new = np.zeros(shape)
        for s2 in range(k):
            acc = np.tensordot(m[:, s2], table, axes=(0, 0))
            if s2 < k - 1:
                sl_dst = [slice(None)] * (k - 1)
                sl_src = [slice(None)] * (k - 1)
                sl_dst[s2] = slice(1, None)
                sl_src[s2] = slice(None, -1)
                new[(s2,) + tuple(sl_dst)] += acc[tuple(sl_src)]
            else:
                new[s2] += acc
        table = new
    law = table.sum(axis=0)
    idx = np.argwhere(law > 0)
    partial = idx.astype(np.int64)
    last = n - partial.sum(axis=1, keepdims=True)
    ok = last[:, 0] >= 0
    counts = np.hstack([partial, last])[ok]
    return counts, law[tuple(idx.T)][ok]


def type_distribution(proc, n, mode="exact", budget=100_000, seed=0,
                      exact_markov_cap=None, calibrate=False):
    """Law of the empirical type of S^n.

    ``mode="exact"`` enumerates the law where possible and raises
    Unsupported otherwise; ``mode="mc"`` uses ``budget`` sampled paths and
    ``mode="auto"`` falls back to Monte Carlo when exact enumeration is not
    supported.  With ``calibrate`` a Monte Carlo law is reweighted to match
    the exact first and second moments of the counts (see
    ``calibrate_to_moments``).
    """
    if n < 1:
        raise InvalidInput("n must be positive")
    if mode == "auto":
        try:
            return type_distribution(proc, n, "exact", exact_markov_cap=exact_markov_cap)
        except Unsupported:
            return type_distribution(proc, n, "mc", budget, seed, calibrate=calibrate)
    if mode == "mc":
        law = _type_distribution_mc(proc, n, budget, seed)
        return calibrate_to_moments(law, proc) if calibrate else law
    if mode != "exact":
        raise InvalidInput(f"unknown mode {mode!r}")

    k = proc.n_states
    if isinstance(proc, Mixed):
        return _from_arrays(n, n * np.eye(k, dtype=np.int64), proc.q, True)
    if isinstance(proc, Iid):
        c, w = multinomial_law(n, proc.pi)
        return _from_arrays(n, c, w, True)
    if isinstance(proc, BlockIid):
        d, m, r = proc.layout(n)
        c, w = multinomial_law(d, proc.pi)
        base = m * c
        if r == 0:
            return _from_arrays(n, base, w, True)
        counts = np.vstack([base + r * np.eye(k, dtype=np.int64)[s] for s in range(k)])
        probs = np.concatenate([w * proc.pi[s] for s in range(k)])
        return _from_arrays(n, counts, probs, True)
    if isinstance(proc, Markov):
        cap = (exact_markov_cap if exact_markov_cap is not None
               else EXACT_MARKOV_CAP.get(k, 0))
        if n > cap:
            raise Unsupported(f"exact Markov type law for |S|={k} is capped at n={cap}")
        counts, probs = _markov_dp(proc, n)
        return _from_arrays(n, counts, probs, True)
    if isinstance(proc, Alternating):
        a = proc.count_in_j(n)
        row = np.zeros(k, dtype=np.int64)
        row[proc.sa] += a
        row[proc.sb] += n - a
        return _from_arrays(n, row[None, :], [1.0], True)
    raise InvalidModel(f"unknown state process {proc!r}")


def _type_distribution_mc(proc, n, budget, seed, chunk=100_000):
    rng = make_rng(seed)
    k = proc.n_states
    if isinstance(proc, Iid):
        counts = rng.multinomial(n, proc.pi, size=budget)
    elif isinstance(proc, BlockIid):
        d, m, r = proc.layout(n)
        counts = m * rng.multinomial(d, proc.pi, size=budget)
        if r:
            counts[np.arange(budget), rng.choice(k, size=budget, p=proc.pi)] += r
    elif isinstance(proc, Markov):
        counts = np.zeros((budget, k), dtype=np.int64)
        cum = np.cumsum(proc.m, axis=1)
        for lo in range(0, budget, chunk):
            size = min(chunk, budget - lo)
            state = rng.choice(k, size=size, p=proc.init)
            c = np.zeros((size, k), dtype=np.int64)
            for s in range(k):
                c[:, s] += state == s
            for _ in range(n - 1):
                u = rng.random(size)
                nxt = np.zeros(size, dtype=np.int64)
                for j in range(k - 1):
                    nxt += u >= cum[state, j]
                state = nxt
                for s in range(k):
                    c[:, s] += state == s
            counts[lo:lo + size] = c
    else:
        paths = _sample_paths(proc, n, budget, rng)
        counts = np.stack([(paths == s).sum(axis=1) for s in range(k)], axis=1)
    return _from_arrays(n, counts, np.full(budget, 1.0 / budget), False,
                        sample_count=budget, seed=seed)


def count_moments(proc, n):
    """Exact mean vector and covariance matrix of the state counts."""
    k = proc.n_states
    eye = np.eye(k)
    mean = np.array([n * marginal_mean(proc, n, eye[s]) for s in range(k)])
    var = np.array([sum_variance(proc, n, eye[s]) for s in range(k)])
    cov = np.diag(var)
    for a in range(k):
        for b in range(a + 1, k):
            both = sum_variance(proc, n, eye[a] + eye[b])
            cov[a, b] = cov[b, a] = 0.5 * (both - var[a] - var[b])
    return mean, cov


def calibrate_to_moments(law, proc):
    """Exponentially tilt Monte Carlo weights to the exact count moments.

    The weights w_i ~ exp(lam . f_i) / N, with f the counts of all but the
    last state and their pairwise products, are chosen so that the first
    and second moments of the counts match their closed forms.  This is a
    control-variate style correction: the weights stay positive and sum to
    one, and the estimator remains consistent.
    """
    mean, cov = count_moments(proc, law.n)
    k = law.counts.shape[1]
    z = law.counts[:, :k - 1].astype(float)
    if z.shape[1] == 0 or law.n_atoms < 3:
        return law
    scale = np.sqrt(np.maximum(np.diag(cov)[:k - 1], 1e-300))
    zs = (z - mean[:k - 1]) / scale
    cs = cov[:k - 1, :k - 1] / np.outer(scale, scale)
    iu = np.triu_indices(k - 1)
    feats = np.hstack([zs, (zs[:, :, None] * zs[:, None, :])[:, iu[0], iu[1]]])
    target = np.concatenate([np.zeros(k - 1), cs[iu]])
    f = feats - target
    logp0 = np.log(law.probs)

    def dual(lam):
        a = logp0 + f @ lam
        top = a.max()
        w = np.exp(a - top)
        tot = w.sum()
        return top + math.log(tot), (w / tot) @ f

    res = optimize.minimize(dual, np.zeros(f.shape[1]), jac=True, method="BFGS",
                            options={"gtol": 1e-12, "maxiter": 500})
    _, grad = dual(res.x)
    if not np.all(np.abs(grad) < 1e-8):
        logger.warning("moment calibration did not converge; keeping raw weights")
        return law
    a = logp0 + f @ res.x
    w = np.exp(a - a.max())
    return TypeDistribution(law.n, law.counts, w / w.sum(), False,
                            law.sample_count, law.seed, calibrated=True)


# ---------------------------------------------------------------------------
# variance functionals
# ---------------------------------------------------------------------------

def v_star(pi, caps):
    """Variance of C_S for S drawn from ``pi`` (bits^2)."""
    pi = np.asarray(pi, dtype=float)
    caps = np.asarray(caps, dtype=float)
    mean = pi @ caps
    return float(pi @ (caps - mean) ** 2)


def _check_ergodic(m):
    if not is_ergodic(m):
        raise NotErgodic("kernel must be irreducible and aperiodic")


def covariance_kernel(m, cond_limit=1e8):
    """The matrix U diag(1, (1+l)/(1-l), ...) U^-1 built from the spectrum of m.

    The unit eigenvalue keeps weight 1 and every other eigenvalue l gets
    (1 + l)/(1 - l).  Rows sum to 1 but entries may be negative.
    """
    m = np.asarray(m, dtype=float)
    _check_ergodic(m)
    lam, u = np.linalg.eig(m)
    if np.linalg.cond(u) > cond_limit:
        raise NonDiagonalizable("eigenvector matrix is ill conditioned")
    top = int(np.argmin(np.abs(lam - 1.0)))
    weights = np.empty_like(lam)
    others = np.arange(lam.size) != top
    weights[others] = (1 + lam[others]) / (1 - lam[others])
    weights[top] = 1.0
    kern = u @ np.diag(weights) @ np.linalg.inv(u)
    return np.real_if_close(kern, tol=1e6).real


@dataclass(frozen=True)
class SeriesResult:
    value: float
    tail_bound: float
    terms: int


def v_double_star_series(m, caps, rel_tol=1e-14, max_terms=1_000_000):
    """Var[C_S] + 2 sum_k Cov[C_S1, C_S(1+k)] by direct summation.

    Terms are added until two consecutive lag covariances fall below
    ``rel_tol * max(1, |sum|)``.  The reported tail bound uses the second
    largest eigenvalue modulus rho and a = sum_j |w_j|, the weights of the
    non-unit spectral components: 2 a rho^(K+1) / (1 - rho).
    """
    m = np.asarray(m, dtype=float)
    _check_ergodic(m)
    caps = np.asarray(caps, dtype=float)
    pi = stationary_distribution(m)
    mean = pi @ caps
    total = float(pi @ caps ** 2 - mean ** 2)
    g = caps.copy()
    small = 0
    k = 0
    while k < max_terms:
        k += 1
        g = m @ g
        cov = float((pi * caps) @ g - mean ** 2)
        total += 2 * cov
        small = small + 1 if abs(cov) < rel_tol * max(1.0, abs(total)) else 0
        if small >= 2:
            break
    lam, u = np.linalg.eig(m)
    uinv = np.linalg.pinv(u)
    top = int(np.argmin(np.abs(lam - 1.0)))
    weights = np.abs(((pi * caps) @ u) * (uinv @ caps))
    weights[top] = 0.0
    rho = float(np.max(np.abs(np.delete(lam, top)))) if lam.size > 1 else 0.0
    a = float(weights.sum())
    tail = 2 * a * rho ** (k + 1) / (1 - rho) if rho < 1 else math.inf
    return SeriesResult(total, tail, k)


def v_double_star(m, caps):
    """Long-run variance of C_{S_k} for a stationary ergodic chain (bits^2).

    Uses the spectral form Cov[C_S, C_S'] with S ~ pi and S' | S drawn from
    the covariance kernel; falls back to the truncated series when the
    kernel is not diagonalizable to working precision.
    """
    m = np.asarray(m, dtype=float)
    caps = np.asarray(caps, dtype=float)
    try:
        kern = covariance_kernel(m)
    except NonDiagonalizable:
        res = v_double_star_series(m, caps)
        logger.warning("kernel not diagonalizable; series value with tail "
                       "bound %.3g after %d terms", res.tail_bound, res.terms)
        return res.value
    pi = stationary_distribution(m)
    mean = pi @ caps
    return float(pi @ (caps * (kern @ caps)) - mean ** 2)


def sum_variance(proc, n, caps):
    """Var[sum_k C_{S_k}] for the given model, in closed form (bits^2)."""
    caps = np.asarray(caps, dtype=float)
    if isinstance(proc, Mixed):
        return n * n * v_star(proc.q, caps)
    if isinstance(proc, Iid):
        return n * v_star(proc.pi, caps)
    if isinstance(proc, BlockIid):
        d, m, r = proc.layout(n)
        return (m * m * d + r * r) * v_star(proc.pi, caps)
    if isinstance(proc, Markov):
        return _markov_sum_variance(proc.m, proc.init, caps, n)
    if isinstance(proc, Alternating):
        return 0.0
    raise InvalidModel(f"unknown state process {proc!r}")


def _markov_sum_variance(m, init, caps, n):
    # marginal laws mu_k and prefix sums G_j = sum_{i=1}^j M^i C
    mus = np.empty((n, caps.size))
    mus[0] = init
    for k in range(1, n):
        mus[k] = mus[k - 1] @ m
    g = np.empty((n, caps.size))
    g[0] = 0.0
    power = caps.copy()
    for j in range(1, n):
        power = m @ power
        g[j] = g[j - 1] + power
    means = mus @ caps
    second = mus @ caps ** 2
    var = float(np.sum(second - means ** 2))
    # cross terms: sum_k mu_k (C * G_{n-k}) - m_k * sum_{l>k} m_l
    tail = np.cumsum(means[::-1])[::-1]
    cross = 0.0
    for k in range(n - 1):
        cross += mus[k] @ (caps * g[n - 1 - k]) - means[k] * tail[k + 1]
    return var + 2.0 * cross


def v_double_star_finite(m, caps, n):
    """(1/n) Var[sum_k C_{S_k}] for the chain started in stationarity."""
    m = np.asarray(m, dtype=float)
    _check_ergodic(m)
    pi = stationary_distribution(m)
    return _markov_sum_variance(m, pi, np.asarray(caps, dtype=float), n) / n


def covariance_sum(proc, n, caps):
    """(1/n^2) sum_k sum_l Cov[C_{S_k}, C_{S_l}]."""
    return sum_variance(proc, n, caps) / (n * n)


def marginal_mean(proc, n, caps):
    """(1/n) sum_k E[C_{S_k}]."""
    caps = np.asarray(caps, dtype=float)
    if isinstance(proc, Mixed):
        return float(proc.q @ caps)
    if isinstance(proc, (Iid, BlockIid)):
        return float(proc.pi @ caps)
    if isinstance(proc, Markov):
        mu, total = proc.init.copy(), 0.0
        for _ in range(n):
            total += mu @ caps
            mu = mu @ proc.m
        return float(total / n)
    if isinstance(proc, Alternating):
        a = proc.count_in_j(n)
        return float((a * caps[proc.sa] + (n - a) * caps[proc.sb]) / n)
    raise InvalidModel(f"unknown state process {proc!r}")


def limiting_state_law(proc):
    """Law pi used by the closed forms (None for the alternating schedule)."""
    if isinstance(proc, Mixed):
        return proc.q
    if isinstance(proc, (Iid, BlockIid)):
        return proc.pi
    if isinstance(proc, Markov):
        return proc.stationary
    return None
