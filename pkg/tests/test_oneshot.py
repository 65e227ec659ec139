import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as hs
from scipy import optimize
from scipy.stats import norm

from statecap import bsc, build_state_channel
from statecap.channel import identity_channel
from statecap.errors import EnumerationTooLarge, InconsistentType, InvalidInput
from statecap.oneshot import (JointLaw, dh_divergence, dpi_check, feinstein_eps, feinstein_logM,
                              feinstein_rhs, feinstein_terms, information_density_cdf, np_test,
                              direct_bound_rhs, random_coding_error_mc, spectrum_converse_eps,
                              spectrum_converse_logM, xi_cdf, xi_law)
from statecap.states import Iid, Mixed

from conftest import bsc_dispersion, h2


def density_atoms_n1(p_states, ps):
    """Atoms of i(X;Y|S) at n = 1 for BSC states with uniform inputs."""
    atoms = []
    for w, p in zip(p_states, ps):
        atoms += [(math.log2(2 * (1 - p)), w * (1 - p)), (math.log2(2 * p), w * p)]
    return atoms


def beta_lp(p, q, alpha):
    """min q.phi s.t. p.phi >= alpha, 0 <= phi <= 1, by linear programming."""
    res = optimize.linprog(q, A_ub=-p[None, :], b_ub=[-alpha], bounds=[(0, 1)] * len(p),
                           method="highs")
    return res.fun


@pytest.fixture(scope="module")
def ident():
    return build_state_channel([identity_channel(2), identity_channel(2)], require_dispersion=False)


class TestFeinstein:
    def test_four_atom_oracle(self, bsc_pair):
        atoms = density_atoms_n1([0.5, 0.5], [0.11, 0.3])
        for logm, eta in [(0.0, 0.5), (0.2, 0.3), (-1.0, 2.0), (0.5, 1.0)]:
            mass = sum(w for a, w in atoms if a <= logm + eta)
            expect = min(1.0, mass + 2 ** -eta)
            assert feinstein_rhs(bsc_pair, Iid([0.5, 0.5]), 1, logm, eta) == pytest.approx(expect, abs=1e-12)

    def test_logM_is_a_supremum(self, bsc_pair):
        atoms = density_atoms_n1([0.5, 0.5], [0.11, 0.3])
        eps = 0.6
        best = feinstein_logM(bsc_pair, Iid([0.5, 0.5]), 1, eps)
        # brute force over a fine grid of (a = logM + eta, eta)
        grid_best = -math.inf
        for a in np.linspace(-3, 3, 3001):
            mass = sum(w for x, w in atoms if x <= a)
            if mass < eps:
                grid_best = max(grid_best, a + math.log2(eps - mass))
        assert grid_best <= best + 1e-12
        assert best - grid_best < 5e-3

    def test_eps_and_logM_are_consistent(self, bsc_pair):
        proc = Iid([0.4, 0.6])
        for eps in (0.1, 0.3, 0.6):
            logm = feinstein_logM(bsc_pair, proc, 6, eps)
            assert feinstein_eps(bsc_pair, proc, 6, logm - 1e-9) <= eps + 1e-9

    def test_identity_channel(self, ident):
        for n in (1, 4, 9):
            f = information_density_cdf(ident, Iid([0.5, 0.5]), n)
            assert f(n - 1e-9) == 0.0 and f(n) == pytest.approx(1.0, abs=1e-12)
            assert feinstein_logM(ident, Iid([0.5, 0.5]), n, 0.25) == pytest.approx(n - 2.0)

    def test_exact_against_monte_carlo(self, bsc_pair):
        proc = Iid([0.5, 0.5])
        for logm in (1.0, 2.5, 4.0):
            ex = feinstein_terms(bsc_pair, proc, 8, logm, 1.0, mode="exact")
            mc = feinstein_terms(bsc_pair, proc, 8, logm, 1.0, mode="mc", budget=40_000, seed=3)
            pr = ex.value - 0.5
            sigma = math.sqrt(max(pr * (1 - pr), 1e-12) / 40_000)
            assert abs(mc.value - ex.value) <= 3 * sigma
            assert mc.lower <= ex.value <= mc.upper

    def test_enumeration_cap(self, bsc_pair):
        with pytest.raises(EnumerationTooLarge):
            feinstein_terms(bsc_pair, Iid([0.5, 0.5]), 40, 10.0, 1.0, mode="exact", enum_cap=10)

    def test_eta_positive(self, bsc_pair):
        with pytest.raises(InvalidInput):
            feinstein_rhs(bsc_pair, Iid([0.5, 0.5]), 4, 1.0, 0.0)


class TestHypothesisTesting:
    def test_equal_laws(self):
        p = np.array([0.2, 0.3, 0.5])
        assert dh_divergence(p, p, 0.1) == pytest.approx(0.0, abs=1e-12)

    def test_singular(self):
        assert dh_divergence([0.5, 0.5, 0.0], [0.0, 0.0, 1.0], 0.2) == math.inf

    def test_beta_against_lp(self, rng):
        for _ in range(200):
            k = int(rng.integers(2, 7))
            p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
            alpha = float(rng.uniform(0.01, 0.99))
            beta, test = np_test(p, q, alpha)
            assert beta == pytest.approx(beta_lp(p, q, alpha), abs=1e-9)
            assert 0 <= test.randomization <= 1

    def test_boundary_atom_randomized(self):
        # ratios 4, 1, 1/4 in bits 2, 0, -2; alpha = 0.6 takes the first atom and half of the second
        p, q = np.array([0.4, 0.4, 0.2]), np.array([0.1, 0.4, 0.8 * 0.5 + 0.1])
        q = q / q.sum()
        beta, test = np_test(p, q, 0.6)
        assert test.randomization == pytest.approx(0.5)
        assert beta == pytest.approx(q[0] + 0.5 * q[1])

    def test_dpi_fuzz(self, rng):
        for _ in range(1000):
            k, m = int(rng.integers(2, 6)), int(rng.integers(2, 6))
            p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
            kern = rng.dirichlet(np.ones(m), size=k)
            assert dpi_check(p, q, kern, float(rng.uniform(0.01, 0.99)))

    @given(hs.floats(0.01, 0.98), hs.floats(0.0, 0.01))
    def test_monotone_in_eps(self, eps, de):
        p, q = np.array([0.6, 0.3, 0.1]), np.array([0.2, 0.3, 0.5])
        assert dh_divergence(p, q, eps + de) >= dh_divergence(p, q, eps) - 1e-12


class TestConverse:
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_xi_cdf_brute_force(self, bsc_pair, n, rng):
        w = bsc_pair.matrices
        for _ in range(3):
            s = rng.integers(0, 2, size=n)
            x = rng.integers(0, 2, size=n)
            joint = np.zeros((2, 2), dtype=int)
            for xi, si in zip(x, s):
                joint[xi, si] += 1
            counts = joint.sum(axis=0)
            # output reference: conditional input type pushed through each state's channel
            q = np.zeros((2, 2))
            for st_ in range(2):
                if counts[st_]:
                    q[st_] = (joint[:, st_] / counts[st_]) @ w[st_]
            for R in (-0.5, 0.0, 0.3, 0.8):
                mass = 0.0
                for y in itertools.product(range(2), repeat=n):
                    prob = math.prod(w[si, xi, yi] for si, xi, yi in zip(s, x, y))
                    val = sum(math.log2(w[si, xi, yi] / q[si, yi]) for si, xi, yi in zip(s, x, y))
                    if val <= n * R + 1e-12:
                        mass += prob
                assert xi_cdf(bsc_pair, counts, joint, R, n) == pytest.approx(mass, abs=1e-12)

    def test_xi_cdf_validates(self, bsc_pair):
        with pytest.raises(InconsistentType):
            xi_cdf(bsc_pair, [2, 1], [[1, 0], [0, 1]], 0.0, 3)

    def test_identity_channel(self, ident):
        n = 9
        best, by_q = spectrum_converse_logM(ident, Iid([0.5, 0.5]), n, 0.1)
        assert by_q["caid"] == pytest.approx(n + 0.5 * math.log2(n))
        # with the type reference a state seen c times carries at most c h(floor(c/2)/c) bits
        def top(c):
            return c * h2((c // 2) / c) if c else 0.0
        vals = sorted((top(c) + top(n - c), math.comb(n, c) / 2 ** n) for c in range(n + 1))
        level, mass, r_star = 0.1 + 1 / math.sqrt(n), 0.0, None
        for i, (v, w) in enumerate(vals):
            mass += w
            if mass > level:
                r_star = v
                break
        assert by_q["type"] == pytest.approx(r_star + 0.5 * math.log2(n) + 4 * math.log2(n + 1))
        assert best == min(by_q.values())

    def test_monotone_in_eps(self, bsc_pair):
        vals = [spectrum_converse_logM(bsc_pair, Iid([0.5, 0.5]), 6, e)[0] for e in (0.05, 0.2, 0.4, 0.55)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_sandwich(self, bsc_pair):
        for eps in (0.1, 0.3):
            conv, _ = spectrum_converse_logM(bsc_pair, Iid([0.5, 0.5]), 8, eps)
            assert feinstein_logM(bsc_pair, Iid([0.5, 0.5]), 8, eps) <= conv

    def test_level_above_one(self, bsc_pair):
        assert spectrum_converse_logM(bsc_pair, Iid([0.5, 0.5]), 4, 0.6, reference="caid") == math.inf

    def test_converse_eps_inverts_logM(self, bsc_pair):
        proc, n = Iid([0.5, 0.5]), 6
        lo = spectrum_converse_eps(bsc_pair, proc, n, 1.0)
        hi = spectrum_converse_eps(bsc_pair, proc, n, 30.0)
        assert 0.0 <= lo <= hi <= 1.0

    def test_joint_law(self, bsc_pair):
        j = JointLaw.from_policy(bsc_pair, None, [0.5, 0.5])
        assert j.probs.sum() == pytest.approx(1.0)
        assert len(j.support) == 8


class TestDirectBound:
    def test_vacuous_at_moderate_n(self, bsc_pair):
        # the universal third-moment constant makes the bound trivial here
        assert direct_bound_rhs(bsc_pair, Iid([0.5, 0.5]), 64, 0.3) == 1.0

    def test_formula_at_huge_n(self, bsc_pair):
        n = 10 ** 10
        c = bsc_pair.capacities[0]
        R = c - 1e-3
        v_min = min(bsc_dispersion(0.11), bsc_dispersion(0.3))
        l_plus = 2 * (9 / math.e * math.log2(math.e)) ** 3
        b = 6 * l_plus / v_min ** 1.5
        d1 = 1 / (2 * math.sqrt(2 * math.pi * v_min))
        main = norm.cdf(math.sqrt(n) * (R - c) / math.sqrt(bsc_dispersion(0.11)))
        expect = main + d1 * math.log2(n) / math.sqrt(n) + (b + 1) / math.sqrt(n)
        got = direct_bound_rhs(bsc_pair, Mixed([1.0, 0.0]), n, R)
        assert expect < 1 and got == pytest.approx(expect, rel=1e-9)

    @given(hs.floats(0.0, 1.0), hs.floats(0.0, 0.5))
    def test_monotone_in_rate(self, R, dR):
        chan = build_state_channel([bsc(0.11), bsc(0.3)])
        n = 10 ** 9
        assert (direct_bound_rhs(chan, Mixed([0.5, 0.5]), n, R + dR)
                >= direct_bound_rhs(chan, Mixed([0.5, 0.5]), n, R) - 1e-15)


class TestRandomCoding:
    def test_below_feinstein(self, bsc_pair):
        proc, n = Iid([0.5, 0.5]), 8
        for R in (0.25, 0.5):
            mc = random_coding_error_mc(bsc_pair, proc, n, R, codebooks=4000, seed=1)
            assert mc.lower <= feinstein_eps(bsc_pair, proc, n, n * R)

    def test_identity_single_word(self, ident):
        mc = random_coding_error_mc(ident, Iid([0.5, 0.5]), 6, 0.0, codebooks=100, seed=0)
        assert mc.value == 0.0

    def test_seeded(self, bsc_pair):
        a = random_coding_error_mc(bsc_pair, Iid([0.5, 0.5]), 6, 0.5, codebooks=500, seed=7)
        b = random_coding_error_mc(bsc_pair, Iid([0.5, 0.5]), 6, 0.5, codebooks=500, seed=7)
        assert a.value == b.value
