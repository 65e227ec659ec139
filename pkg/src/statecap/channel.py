"""
Discrete memoryless channels and their single-letter information quantities.

All public quantities are in bits (variances in bits^2, third moments in
bits^3).  Conventions 0 log 0 = 0 and 0 log(0/0) = 0 hold throughout.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics
from .errors import DegenerateDispersion, InvalidInput, NonConvergence

logger = logging.getLogger(__name__)

ROW_TOL = 1e-12


@dataclass(frozen=True)
class Alphabet:
    labels: tuple

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        if not labels:
            raise InvalidInput("alphabet must be nonempty")
        if len(set(labels)) != len(labels):
            raise InvalidInput("alphabet labels must be distinct")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def of_size(cls, k):
        return cls(tuple(str(i) for i in range(k)))

    @property
    def size(self):
        return len(self.labels)

    def index(self, label):
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise InvalidInput(f"unknown symbol {label!r}") from None

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class Dmc:
    """Transition matrix ``rows[x, y] = W(y|x)`` with labelled alphabets."""

    rows: np.ndarray
    input: Alphabet = None
    output: Alphabet = None

    def __post_init__(self):
        w = np.array(self.rows, dtype=float)
        if w.ndim != 2 or w.size == 0:
            raise InvalidInput("channel matrix must be a nonempty 2-d array")
        if not np.all(np.isfinite(w)):
            raise InvalidInput("channel matrix has NaN or infinite entries")
        if np.any(w < 0):
            raise InvalidInput("channel matrix has negative entries")
        if np.any(np.abs(w.sum(axis=1) - 1.0) > ROW_TOL):
            raise InvalidInput("channel rows must sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "rows", w)
        inp = self.input if self.input is not None else Alphabet.of_size(w.shape[0])
        out = self.output if self.output is not None else Alphabet.of_size(w.shape[1])
        if inp.size != w.shape[0] or out.size != w.shape[1]:
            raise InvalidInput("alphabet sizes do not match the matrix")
        object.__setattr__(self, "input", inp)
        object.__setattr__(self, "output", out)

    @property
    def shape(self):
        return self.rows.shape

    def __eq__(self, other):
        return (isinstance(other, Dmc) and self.input == other.input
                and self.output == other.output
                and np.array_equal(self.rows, other.rows))

    __hash__ = None


def bsc(p):
    """Binary symmetric channel with crossover probability ``p``."""
    return Dmc([[1 - p, p], [p, 1 - p]])


def bec(e):
    """Binary erasure channel; output symbols are 0, 1 and 'e'."""
    return Dmc([[1 - e, 0.0, e], [0.0, 1 - e, e]],
               output=Alphabet(("0", "1", "e")))


def identity_channel(k):
    return Dmc(np.eye(k))


def z_channel(p):
    """Input 1 flips to 0 with probability ``p``; input 0 is noiseless."""
    return Dmc([[1.0, 0.0], [p, 1 - p]])


def as_distribution(p, size=None):
    """Validate an input distribution and return it as a float array."""
    p = np.asarray(p, dtype=float).ravel()
    if size is not None and p.size != size:
        raise InvalidInput(f"distribution has {p.size} entries, expected {size}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidInput("distribution must be finite and nonnegative")
    if abs(p.sum() - 1.0) > ROW_TOL:
        raise InvalidInput("distribution must sum to 1")
    return p


def _as_matrix(W):
    return W.rows if isinstance(W, Dmc) else Dmc(W).rows


# ---------------------------------------------------------------------------
# information density and its moments
# ---------------------------------------------------------------------------

def information_density(P, W):
    """Matrix of log2 W(y|x)/PW(y), zero where W(y|x) = 0.

    Returns ``(density, output_law)``.
    """
    w = _as_matrix(W)
    P = as_distribution(P, w.shape[0])
    q = P @ w
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where((w > 0) & (q > 0), np.log2(w / q), 0.0)
    return dens, q


def _divergences(P, W):
    w = _as_matrix(W)
    dens, _ = information_density(P, w)
    return w, dens, np.sum(w * dens, axis=1)


def mutual_information(P, W):
    """I(P, W) in bits."""
    P = as_distribution(P)
    w, _, d = _divergences(P, W)
    return float(max(P @ d, 0.0))


def conditional_variance(P, W):
    """Conditional information variance V(P, W) in bits^2."""
    P = as_distribution(P)
    w, dens, d = _divergences(P, W)
    dev = (dens - d[:, None]) ** 2
    return float(P @ np.sum(w * dev, axis=1))


def unconditional_variance(P, W, C):
    """Second moment of the information density about ``C`` (bits^2)."""
    P = as_distribution(P)
    w, dens, _ = _divergences(P, W)
    dev = np.where(w > 0, (dens - C) ** 2, 0.0)
    return float(P @ np.sum(w * dev, axis=1))


def third_absolute_moment(P, W):
    """Conditional third absolute central moment L(P, W) in bits^3."""
    P = as_distribution(P)
    w, dens, d = _divergences(P, W)
    dev = np.abs(dens - d[:, None]) ** 3
    return float(P @ np.sum(w * dev, axis=1))


# ---------------------------------------------------------------------------
# capacity
# ---------------------------------------------------------------------------

def _bounds(w, logw, p):
    """Lower bound I(p, W), upper bound max_x D(W_x || pW) and the D_x (nats)."""
    q = p @ w
    logq = np.log(np.where(q > 0, q, 1.0))
    d = np.sum(np.where(w > 0, w * (logw - logq), 0.0), axis=1)
    return float(p @ d), float(d.max()), d


def _newton_on_support(w, logw, p, idx, steps=60):
    """Damped Newton iteration for D_x(p) = C, x in ``idx``, p zero elsewhere.

    Returns the full-length solution (entries may be negative) or None when
    no step keeps the output law positive.
    """
    k = idx.size
    ws, lws = w[idx], logw[idx]
    reach = np.any(ws > 0, axis=0)

    def residual(x):
        q = x[:k] @ ws
        if np.any(q[reach] <= 0):
            return None, None
        logq = np.log(np.where(reach, q, 1.0))
        d = np.sum(np.where(ws > 0, ws * (lws - logq), 0.0), axis=1)
        return np.append(d - x[k], x[:k].sum() - 1.0), q

    x = np.append(p[idx] / p[idx].sum(), 0.0)
    resid, q = residual(x)
    if resid is None:
        return None
    for _ in range(steps):
        jac = np.zeros((k + 1, k + 1))
        inv_q = np.where(reach, 1.0 / np.where(reach, q, 1.0), 0.0)
        jac[:k, :k] = -(ws * inv_q) @ ws.T
        jac[:k, k] = -1.0
        jac[k, :k] = 1.0
        step = np.linalg.lstsq(jac, -resid, rcond=None)[0]
        norm = np.linalg.norm(resid)
        t = 1.0
        for _ in range(40):
            r_new, q_new = residual(x + t * step)
            if r_new is not None and np.linalg.norm(r_new) <= (1 - 1e-4 * t) * norm:
                break
            t *= 0.5
        else:
            break
        x = x + t * step
        resid, q = r_new, q_new
        if np.max(np.abs(t * step)) < 1e-15:
            break
    out = np.zeros_like(p)
    out[idx] = x[:k]
    return out


def _try_support(w, logw, p, support):
    idx = np.array(sorted(support))
    start = np.zeros_like(p)
    start[idx] = np.maximum(p[idx], 1e-12)
    sol = _newton_on_support(w, logw, start, idx)
    if sol is None or np.any(sol[idx] < 0):
        return None
    sol = sol / sol.sum()
    lo, up, _ = _bounds(w, logw, sol)
    return sol, up - lo


def _newton_polish(w, logw, p, d, gap, tol, width=3, max_solves=200):
    """Refine an approximate capacity-achieving input by Newton's method.

    Near-optimal inputs (divergence close to the maximum) form the initial
    support.  When the Newton solution on a support is infeasible or not
    certified, supports with one input fewer are tried, keeping the
    ``width`` best at each level.  Returns a certified distribution or None.
    """
    upper = d.max()
    cand = frozenset(np.flatnonzero(d >= upper - max(1e3 * gap, 1e-9)).tolist())
    level, seen, solves = [cand], {cand}, 0
    while level and solves < max_solves:
        scored = []
        for support in level:
            solves += 1
            res = _try_support(w, logw, p, support)
            if res is not None and res[1] <= tol:
                return res[0]
            scored.append((np.inf if res is None else res[1], sorted(support)))
        scored.sort(key=lambda t: t[0])
        level = []
        for _, support in scored[:width]:
            for x in support:
                child = frozenset(support) - {x}
                if child and child not in seen:
                    seen.add(child)
                    level.append(child)
    return None


def _blahut_arimoto(w, p, tol, max_iter):
    """Alternating maximization from ``p`` with Newton polishing.

    Polishing is attempted after 100, 200, 400, ... iterations.  Returns
    ``(lower, upper, p)`` in nats with ``upper - lower <= tol``, where lower
    is I(p, W) and upper is max_x D(W_x || pW).
    """
    logw = np.log(np.where(w > 0, w, 1.0))
    best = (0.0, np.inf, p)
    next_polish = 100
    for it in range(int(max_iter)):
        lower, upper, d = _bounds(w, logw, p)
        if upper - lower < best[1] - best[0]:
            best = (lower, upper, p)
        if upper - lower <= tol:
            return lower, upper, p
        if it == next_polish:
            next_polish *= 2
            cand = _newton_polish(w, logw, p, d, upper - lower, tol)
            if cand is not None:
                lo, up, _ = _bounds(w, logw, cand)
                return lo, up, cand
        e = p * np.exp(d - upper)
        p = e / e.sum()
    raise NonConvergence(
        f"capacity iteration did not reach tolerance in {int(max_iter)} steps",
        bracket=(best[0] * numerics.LOG2E, best[1] * numerics.LOG2E))


def capacity(W, tol=1e-10, max_iter=100_000, p0=None):
    """Capacity of a DMC in bits.

    Returns ``(C, caid, gap)`` where ``C`` is I(caid, W) and ``gap`` is the
    certified distance to the upper bound max_x D(W(.|x) || caid W), also in
    bits; ``gap <= tol`` on return.
    """
    if not tol > 0:
        raise InvalidInput("tol must be positive")
    w = _as_matrix(W)
    p = (np.full(w.shape[0], 1.0 / w.shape[0]) if p0 is None
         else as_distribution(p0, w.shape[0]))
    lower, upper, p = _blahut_arimoto(w, p, tol / numerics.LOG2E, max_iter)
    return lower * numerics.LOG2E, p, (upper - lower) * numerics.LOG2E


def caid_uniqueness_probe(W, C=None, tol=1e-6, n_starts=16, seed=0):
    """Heuristic check that the capacity-achieving input is unique.

    Runs the capacity iteration from ``n_starts`` seeded random starting
    points.  Returns True when all limits lie within sqrt(tol) of each other
    in the sup norm and their dispersions differ by less than ``tol``.  A
    False answer may be a false negative on slowly converging channels.
    """
    w = _as_matrix(W)
    rng = np.random.default_rng(seed)
    inner = max(tol * 1e-2, 1e-15)
    found = []
    for _ in range(n_starts):
        p0 = rng.dirichlet(np.ones(w.shape[0]))
        try:
            _, p, _ = capacity(w, tol=inner, p0=p0)
        except NonConvergence:
            return False
        found.append(p)
    found = np.array(found)
    spread = np.max(found.max(axis=0) - found.min(axis=0))
    vs = [conditional_variance(p, w) for p in found]
    return bool(spread <= np.sqrt(tol) and max(vs) - min(vs) < tol)


# ---------------------------------------------------------------------------
# state-indexed channel families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelSummary:
    capacity_bits: float
    caid: np.ndarray
    v_cond: float
    v_uncond: float
    third_moment: float
    duality_gap: float
    caid_unique: bool

    def to_dict(self):
        return {
            "capacity_bits": self.capacity_bits,
            "caid": [float(x) for x in self.caid],
            "v_cond": self.v_cond,
            "v_uncond": self.v_uncond,
            "third_moment": self.third_moment,
            "duality_gap": self.duality_gap,
            "caid_unique": self.caid_unique,
        }


def summarize(W, tol=1e-10, probe=True):
    C, p, gap = capacity(W, tol=tol)
    return ChannelSummary(
        capacity_bits=C,
        caid=p,
        v_cond=conditional_variance(p, W),
        v_uncond=unconditional_variance(p, W, C),
        third_moment=third_absolute_moment(p, W),
        duality_gap=gap,
        caid_unique=caid_uniqueness_probe(W) if probe else True,
    )


@dataclass(frozen=True, eq=False)
class StateChannel:
    """A family of DMCs on shared alphabets, indexed by a state alphabet."""

    states: Alphabet
    channels: tuple
    summaries: tuple
    v_min: float
    be_constant: float

    @property
    def n_states(self):
        return self.states.size

    @property
    def input_size(self):
        return self.channels[0].shape[0]

    @property
    def output_size(self):
        return self.channels[0].shape[1]

    @property
    def capacities(self):
        return np.array([s.capacity_bits for s in self.summaries])

    @property
    def dispersions(self):
        return np.array([s.v_cond for s in self.summaries])

    @property
    def caids(self):
        return np.array([s.caid for s in self.summaries])

    @property
    def matrices(self):
        """Array of shape (|S|, |X|, |Y|)."""
        return np.array([c.rows for c in self.channels])

    def to_dict(self):
        return {
            "states": list(self.states.labels),
            "input_alphabet": list(self.channels[0].input.labels),
            "output_alphabet": list(self.channels[0].output.labels),
            "summaries": {lab: s.to_dict() for lab, s in
                          zip(self.states.labels, self.summaries)},
            "v_min": self.v_min,
            "be_constant": self.be_constant,
            "units": {"capacity_bits": "bits", "v_cond": "bits^2",
                      "v_uncond": "bits^2", "third_moment": "bits^3",
                      "v_min": "bits^2", "be_constant": "dimensionless"},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def build_state_channel(channels: Sequence[Dmc], tol=1e-10, state_labels=None,
                        dispersion_floor=1e-12, require_dispersion=True,
                        probe=True):
    """Solve every per-state channel and assemble a StateChannel.

    With ``require_dispersion`` (the default) a state whose dispersion is
    below ``dispersion_floor`` raises DegenerateDispersion, because the
    second-order machinery divides by V_min.  First-order and one-shot
    analyses may pass ``require_dispersion=False``; the Berry-Esseen
    constant is then +inf.
    """
    chans = tuple(c if isinstance(c, Dmc) else Dmc(c) for c in channels)
    if not chans:
        raise InvalidInput("need at least one channel")
    first = chans[0]
    for c in chans[1:]:
        if c.input != first.input or c.output != first.output:
            raise InvalidInput("all channels must share input and output alphabets")
    states = (Alphabet(tuple(state_labels)) if state_labels is not None
              else Alphabet.of_size(len(chans)))
    if states.size != len(chans):
        raise InvalidInput("one state label per channel is required")
    summaries = tuple(summarize(c, tol=tol, probe=probe) for c in chans)
    v_min = min(s.v_cond for s in summaries)
    if v_min < dispersion_floor:
        if require_dispersion:
            raise DegenerateDispersion(
                f"state dispersion {v_min:.3g} is below {dispersion_floor:g}")
        be = np.inf
    else:
        be = numerics.berry_esseen_constant(
            v_min=v_min, l_plus=numerics.third_moment_bound(first.shape[1]))
    return StateChannel(states, chans, summaries, float(v_min), float(be))
