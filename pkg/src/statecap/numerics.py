"""
Shared numerical kernel.

Gaussian cdf/pdf/quantile with extended values, monotone step functions and
their generalized inverse, type-concentration bounds, Gaussian derivative
bounds and the Berry-Esseen constant used by the direct bounds.
"""
import math

import numpy as np
from scipy import special

from .errors import DegenerateDispersion, InvalidInput, OutOfValidity

LOG2E = math.log2(math.e)

# Per-output-letter constants in nats (nats^2 and nats^3).  Bits follow by
# multiplying with LOG2E**2 and LOG2E**3.
DISPERSION_BOUND_PER_LETTER_NATS = 2.3 / LOG2E ** 2
THIRD_MOMENT_BOUND_PER_LETTER_NATS = (9.0 / math.e) ** 3


# ---------------------------------------------------------------------------
# Gaussian functions
# ---------------------------------------------------------------------------

def phi(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return out if out.ndim else float(out)


def Phi(x):
    """Standard normal cdf, with Phi(-inf) = 0 and Phi(inf) = 1."""
    out = special.ndtr(np.asarray(x, dtype=float))
    return out if np.ndim(out) else float(out)


def Phi_inv(eps):
    """Quantile sup{a : Phi(a) <= eps} on the extended reals.

    Returns -inf for eps <= 0 and +inf for eps >= 1.
    """
    e = np.asarray(eps, dtype=float)
    with np.errstate(invalid="ignore"):
        out = special.ndtri(np.clip(e, 0.0, 1.0))
    out = np.where(e <= 0.0, -np.inf, np.where(e >= 1.0, np.inf, out))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Step functions and the generalized inverse
# ---------------------------------------------------------------------------

class StepFunction:
    """Nondecreasing right-continuous step function on the real line.

    ``f(x) = left`` for ``x < breakpoints[0]`` and ``f(x) = values[i]`` for
    ``breakpoints[i] <= x < breakpoints[i + 1]``.  For a nondecreasing
    function right continuity is upper semicontinuity, so the value at a
    jump is the upper one.  Redundant breakpoints (no jump) are dropped.

    Values may include +inf and ``left`` may be -inf, which is what the
    inverse of a bounded step function looks like.
    """

    def __init__(self, breakpoints, values, left=0.0):
        b = np.asarray(breakpoints, dtype=float).ravel()
        v = np.asarray(values, dtype=float).ravel()
        if b.shape != v.shape:
            raise InvalidInput("breakpoints and values must have equal length")
        if b.size and np.any(np.diff(b) <= 0):
            raise InvalidInput("breakpoints must be strictly increasing")
        if np.any(np.isnan(v)) or np.any(np.isnan(b)):
            raise InvalidInput("NaN in step function")
        prev = np.concatenate(([left], v[:-1])) if v.size else v
        if v.size and np.any(v < prev):
            raise InvalidInput("values must be nondecreasing")
        keep = v > prev
        self.breakpoints = b[keep]
        self.values = v[keep]
        self.left = float(left)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        table = np.concatenate(([self.left], self.values))
        out = table[idx + 1]
        return out if out.ndim else float(out)

    def __repr__(self):
        return (f"StepFunction(breakpoints={self.breakpoints!r}, "
                f"values={self.values!r}, left={self.left!r})")

    @property
    def right(self):
        return float(self.values[-1]) if self.values.size else self.left

    @classmethod
    def from_atoms(cls, points, weights):
        """Cdf of the discrete law putting ``weights`` on ``points``."""
        points = np.asarray(points, dtype=float).ravel()
        weights = np.asarray(weights, dtype=float).ravel()
        order = np.argsort(points, kind="stable")
        points, weights = points[order], weights[order]
        uniq, start = np.unique(points, return_index=True)
        mass = np.add.reduceat(weights, start) if points.size else weights
        cdf = np.minimum(np.cumsum(mass), 1.0)
        cdf = np.maximum.accumulate(cdf)
        return cls(uniq, cdf, left=0.0)

    def inverse(self):
        """The generalized inverse y -> sup{x : f(x) <= y} as a StepFunction."""
        levels = np.concatenate(([self.left], self.values))
        xs = np.concatenate((self.breakpoints, [np.inf]))
        finite = np.isfinite(levels)
        # Below the smallest attainable level the feasible set is empty,
        # unless that level is -inf, in which case it is (-inf, xs[0]).
        left = xs[0] if levels[0] == -np.inf else -np.inf
        return StepFunction(levels[finite], xs[finite], left=left)

    def _combine(self, other, op):
        b = np.union1d(self.breakpoints, other.breakpoints)
        return StepFunction(b, op(self(b), other(b)),
                            left=op(self.left, other.left))

    def maximum(self, other):
        return self._combine(other, np.maximum)

    def minimum(self, other):
        return self._combine(other, np.minimum)


def generalized_inverse(f, y, bracket=(-1e3, 1e3), tol=1e-12):
    """sup{x : f(x) <= y} for a nondecreasing ``f``.

    StepFunction arguments are inverted exactly.  For a plain callable the
    supremum is located by bisection on ``bracket``; if ``f`` stays at most
    ``y`` on the whole bracket the result is +inf, and if it exceeds ``y``
    everywhere it is -inf.
    """
    if isinstance(f, StepFunction):
        y = np.asarray(y, dtype=float)
        idx = np.searchsorted(f.values, y, side="right")
        table = np.concatenate((f.breakpoints, [np.inf]))
        out = np.where(y < f.left, -np.inf, table[idx])
        return out if out.ndim else float(out)
    lo, hi = bracket
    if f(hi) <= y:
        return math.inf
    if f(lo) > y:
        return -math.inf
    while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if f(mid) <= y:
            lo = mid
        else:
            hi = mid
    return lo


def strict_inverse(f, y):
    """sup{x : f(x) < y} for a StepFunction ``f``."""
    y = np.asarray(y, dtype=float)
    idx = np.searchsorted(f.values, y, side="left")
    table = np.concatenate((f.breakpoints, [np.inf]))
    out = np.where(y <= f.left, -np.inf, table[idx])
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Concentration of empirical types
# ---------------------------------------------------------------------------

def hoeffding_type_bound(n, eta, s_size):
    """Bound on Pr[max_s |T(s) - pi(s)| > eta] for an i.i.d. state type."""
    if eta <= 0:
        raise InvalidInput("eta must be positive")
    return 2.0 * s_size * math.exp(-2.0 * n * eta * eta)


def markov_type_bound(n, eta, s_size, m_doeblin):
    """Same deviation event for a chain satisfying a Doeblin condition.

    ``m_doeblin`` is the number of steps in the minorization.  The bound is
    only valid for ``n >= 12 m / eta + 1``.
    """
    if eta <= 0 or m_doeblin < 1:
        raise InvalidInput("eta must be positive and m at least 1")
    n_min = 12.0 * m_doeblin / eta + 1.0
    if n < n_min:
        raise OutOfValidity(f"bound requires n >= {n_min:g}")
    return 2.0 * s_size * math.exp(-(n - 1) * eta * eta / (32.0 * m_doeblin ** 2))


# ---------------------------------------------------------------------------
# Derivatives of the Gaussian density
# ---------------------------------------------------------------------------

def hermite_he(k, x):
    """Probabilists' Hermite polynomial He_k evaluated at ``x``."""
    x = np.asarray(x, dtype=float)
    h_prev, h = np.ones_like(x), x.copy()
    if k == 0:
        return h_prev
    for j in range(1, k):
        h_prev, h = h, x * h - j * h_prev
    return h


def gaussian_derivative(k, x):
    """k-th derivative of the standard normal density."""
    return (-1) ** k * hermite_he(k, x) * phi(x)


def hermite_derivative_bound(k):
    """Upper bound on sup_x |phi^(k)(x)| for integer k >= 1."""
    if int(k) != k or k < 1:
        raise InvalidInput("k must be a positive integer")
    return (math.exp(0.125) * (2.0 * math.pi) ** -0.25 * k ** 0.25
            * (k / math.e) ** (k / 2.0))


# ---------------------------------------------------------------------------
# Berry-Esseen constants
# ---------------------------------------------------------------------------

def dispersion_bound(y_size, units="bits"):
    """Universal upper bound on the information variance for |Y| outputs."""
    return _convert(DISPERSION_BOUND_PER_LETTER_NATS * y_size, 2, units)


def third_moment_bound(y_size, units="bits"):
    """Universal upper bound on the third absolute central moment."""
    return _convert(THIRD_MOMENT_BOUND_PER_LETTER_NATS * y_size, 3, units)


def _convert(value_nats, power, units):
    if units == "nats":
        return value_nats
    if units == "bits":
        return value_nats * LOG2E ** power
    raise InvalidInput(f"unknown units {units!r}")


def berry_esseen_constant(chan=None, *, v_min=None, l_plus=None):
    """B = 6 L+ / V_min^(3/2).

    Pass a StateChannel, or ``v_min`` (bits^2) and ``l_plus`` (bits^3)
    directly.  The result is dimensionless.
    """
    if chan is not None:
        v_min = chan.v_min
        l_plus = third_moment_bound(chan.output_size)
    if v_min is None or l_plus is None:
        raise InvalidInput("need a channel or both v_min and l_plus")
    if not v_min > 0:
        raise DegenerateDispersion("minimum dispersion must be positive")
    return 6.0 * l_plus / v_min ** 1.5


def lipschitz_constant(v_min):
    """D1 = 1 / (2 sqrt(2 pi V_min)), the slope bound of the normal cdf term."""
    if not v_min > 0:
        raise DegenerateDispersion("minimum dispersion must be positive")
    return 1.0 / (2.0 * math.sqrt(2.0 * math.pi * v_min))
