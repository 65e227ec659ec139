import math

import numpy as np
import pytest
from hypothesis import given, strategies as hs
from scipy import optimize
from scipy.stats import norm

from statecap import bsc, build_state_channel
from statecap.channel import Alphabet, Dmc, bec
from statecap.errors import BetaMismatch, DegenerateDispersion, InvalidInput
from statecap.second_order import (KQuery, approximation_gap_audit, closed_form_lambda,
                                   k_exceeds, k_functional, lambda_solve,
                                   normal_approximation_logM)
from statecap.states import Alternating, BlockIid, Iid, Markov, Mixed, type_distribution

from conftest import bsc_dispersion, h2

V_GOOD, V_BAD = bsc_dispersion(0.11), bsc_dispersion(0.3)
C_GOOD, C_BAD = 1 - h2(0.11), 1 - h2(0.3)


def equal_capacity_pair():
    """BSC(0.11) padded to three outputs and a BEC with the same capacity."""
    e = h2(0.11)
    out = Alphabet(("0", "1", "e"))
    return build_state_channel([Dmc([[0.89, 0.11, 0.0], [0.11, 0.89, 0.0]], output=out), bec(e)])


class TestKFunctional:
    def test_query_validation(self):
        with pytest.raises(InvalidInput):
            KQuery(0.0, 0.5, 0.4, 10)
        with pytest.raises(InvalidInput):
            KQuery(0.0, 0.5, 0.5, 0)

    def test_single_state_is_gaussian(self, bsc_pair):
        # all mass on state 0 and R = C: K(r) = Phi(r / sqrt(V))
        for r in (-1.0, 0.0, 0.4, 2.0):
            k = k_functional(r, C_GOOD, 0.5, 100, Mixed([1.0, 0.0]), bsc_pair)
            assert k == pytest.approx(norm.cdf(r / math.sqrt(V_GOOD)), abs=1e-9)

    def test_iid_n1_two_atoms(self, bsc_pair):
        # n = 1: two atoms with weights pi
        r, R = 0.3, 0.4
        expect = (0.3 * norm.cdf((R + r - C_GOOD) / math.sqrt(V_GOOD))
                  + 0.7 * norm.cdf((R + r - C_BAD) / math.sqrt(V_BAD)))
        assert k_functional(r, R, 0.5, 1, Iid([0.3, 0.7]), bsc_pair) == pytest.approx(expect, abs=1e-9)

    def test_vectorized(self, bsc_pair):
        rs = np.linspace(-3, 3, 7)
        vec = k_functional(rs, 0.4, 0.5, 20, Iid([0.5, 0.5]), bsc_pair)
        assert np.allclose(vec, [k_functional(r, 0.4, 0.5, 20, Iid([0.5, 0.5]), bsc_pair) for r in rs])

    @given(hs.floats(-5, 5), hs.floats(0.0, 3.0), hs.floats(0.5, 0.95))
    def test_monotone_in_r(self, r, dr, beta):
        chan = build_state_channel([bsc(0.11), bsc(0.3)])
        a = k_functional(r, 0.3, beta, 30, Iid([0.4, 0.6]), chan)
        b = k_functional(r + dr, 0.3, beta, 30, Iid([0.4, 0.6]), chan)
        assert b >= a - 1e-15

    @given(hs.floats(-3, 3), hs.floats(0.05, 0.95))
    def test_exceeds_agrees_with_direct(self, r, eps):
        chan = build_state_channel([bsc(0.11), bsc(0.3)])
        types = type_distribution(Iid([0.4, 0.6]), 25)
        k = k_functional(r, 0.3, 0.5, 25, None, chan, types=types)
        if abs(k - eps) > 1e-9:
            assert k_exceeds(r, 0.3, 0.5, 25, types, chan, eps) == (k > eps)

    def test_degenerate_dispersion(self):
        chan = build_state_channel([bsc(0.1), bsc(0.5)], require_dispersion=False)
        with pytest.raises(DegenerateDispersion):
            k_functional(0.0, 0.2, 0.5, 10, Iid([0.5, 0.5]), chan)


class TestClosedForms:
    def test_mixed_lowest_atom(self, bsc_pair):
        cf = closed_form_lambda(Mixed([0.3, 0.7]), bsc_pair, 0.5)
        assert cf.lambda_ == pytest.approx(math.sqrt(V_BAD) * norm.ppf(0.5 / 0.7), abs=1e-9)
        assert cf.case == "lowest atom"

    def test_mixed_above_lower_atom(self, bsc_pair):
        cf = closed_form_lambda(Mixed([0.3, 0.7]), bsc_pair, 0.8)
        assert cf.lambda_ == pytest.approx(math.sqrt(V_GOOD) * norm.ppf(0.1 / 0.3), abs=1e-9)
        assert cf.case == "above the lower atom"

    def test_mixed_on_the_atom_is_minus_infinity(self, bsc_pair):
        assert closed_form_lambda(Mixed([0.3, 0.7]), bsc_pair, 0.7).lambda_ == -math.inf

    def test_mixed_equal_capacities_split(self):
        chan = equal_capacity_pair()
        v0, v1 = chan.dispersions
        assert v0 != pytest.approx(v1)
        for eps in (0.1, 0.5, 0.8):
            cf = closed_form_lambda(Mixed([0.4, 0.6]), chan, eps)
            oracle = optimize.brentq(lambda r: 0.4 * norm.cdf(r / math.sqrt(v0))
                                     + 0.6 * norm.cdf(r / math.sqrt(v1)) - eps, -20, 20, xtol=1e-14)
            assert cf.lambda_ == pytest.approx(oracle, abs=1e-10)
            assert cf.case == "equal capacities"

    def test_iid(self, bsc_pair):
        vs = 0.25 * 0.75 * (C_GOOD - C_BAD) ** 2
        cf = closed_form_lambda(Iid([0.25, 0.75]), bsc_pair, 0.1)
        assert cf.lambda_ == pytest.approx(math.sqrt(0.25 * V_GOOD + 0.75 * V_BAD + vs) * norm.ppf(0.1))

    def test_block_iid_beta(self, bsc_pair):
        proc = BlockIid([0.5, 0.5], 0.5)
        with pytest.raises(BetaMismatch):
            closed_form_lambda(proc, bsc_pair, 0.1, beta=0.5)
        cf = closed_form_lambda(proc, bsc_pair, 0.1, beta=0.75)
        assert cf.lambda_ == pytest.approx(0.5 * abs(C_GOOD - C_BAD) * norm.ppf(0.1))

    def test_markov(self, bsc_pair):
        p, q = 0.1, 0.3
        pi0, pi1 = q / (p + q), p / (p + q)
        lam = 1 - p - q
        v2 = pi0 * pi1 * (C_GOOD - C_BAD) ** 2 * (1 + lam) / (1 - lam)
        cf = closed_form_lambda(Markov([[1 - p, p], [q, 1 - q]]), bsc_pair, 0.25)
        assert cf.lambda_ == pytest.approx(math.sqrt(pi0 * V_GOOD + pi1 * V_BAD + v2) * norm.ppf(0.25))

    def test_alternating(self, bsc_pair_low_first):
        cf = closed_form_lambda(Alternating(0, 1), bsc_pair_low_first, 0.1)
        assert cf.lambda_ == pytest.approx(math.sqrt(2 * V_BAD / 3 + V_GOOD / 3) * norm.ppf(0.1))

    def test_five_models_agree_on_identical_states(self):
        chan = build_state_channel([bsc(0.11), bsc(0.11)])
        expect = math.sqrt(V_GOOD) * norm.ppf(0.2)
        for proc in (Mixed([0.4, 0.6]), Iid([0.4, 0.6]), BlockIid([0.4, 0.6], 1.0),
                     Markov([[0.9, 0.1], [0.2, 0.8]]), Alternating(0, 1)):
            assert closed_form_lambda(proc, chan, 0.2).lambda_ == pytest.approx(expect, abs=1e-9)
            res = lambda_solve(0.2, 0.5, proc, chan, n_grid=(64, 256), tol=1e-9)
            assert res.lambda_ == pytest.approx(expect, abs=1e-6)


class TestSolver:
    @pytest.mark.parametrize("eps", [0.2, 0.5, 0.8, 0.9])
    def test_mixed_matches_closed_form(self, bsc_pair, eps):
        res = lambda_solve(eps, 0.5, Mixed([0.3, 0.7]), bsc_pair, n_grid=(256, 1024, 4096))
        assert res.lambda_ == pytest.approx(res.closed_form, abs=1e-5)

    def test_mixed_on_atom_diverges(self, bsc_pair):
        res = lambda_solve(0.7, 0.5, Mixed([0.3, 0.7]), bsc_pair)
        assert res.lambda_ == -math.inf and res.closed_form == -math.inf

    def test_iid_converges(self, bsc_pair):
        res = lambda_solve(0.1, 0.5, Iid([0.5, 0.5]), bsc_pair, n_grid=(256, 1024, 4096))
        assert abs(res.lambda_ - res.closed_form) < 0.01
        assert res.dispersion == pytest.approx((res.lambda_ / norm.ppf(0.1)) ** 2)
        assert res.diagnostics["monotone_tail"]

    def test_eps_must_be_open(self, bsc_pair):
        with pytest.raises(Exception):
            lambda_solve(0.0, 0.5, Iid([0.5, 0.5]), bsc_pair)

    def test_result_units(self, bsc_pair):
        d = lambda_solve(0.3, 0.5, Iid([0.5, 0.5]), bsc_pair, n_grid=(16,)).to_dict()
        assert d["units"]["lambda"] == "bits" and d["units"]["dispersion"] == "bits^2"


class TestNormalApproximation:
    def test_iid(self, bsc_pair):
        vs = 0.25 * (C_GOOD - C_BAD) ** 2
        v = 0.5 * (V_GOOD + V_BAD) + vs
        expect = 1000 * 0.5 * (C_GOOD + C_BAD) + math.sqrt(1000 * v) * norm.ppf(0.01)
        assert normal_approximation_logM(0.01, 1000, Iid([0.5, 0.5]), bsc_pair) == pytest.approx(expect)

    def test_block_iid(self, bsc_pair):
        n, nu = 1024, 0.5
        spread = n * 0.5 * (V_GOOD + V_BAD) + n ** 1.5 * 0.25 * (C_GOOD - C_BAD) ** 2
        expect = n * 0.5 * (C_GOOD + C_BAD) + math.sqrt(spread) * norm.ppf(0.1)
        got = normal_approximation_logM(0.1, n, BlockIid([0.5, 0.5], nu), bsc_pair)
        assert got == pytest.approx(expect)

    def test_below_capacity(self, bsc_pair):
        for proc in (Iid([0.5, 0.5]), Markov([[0.9, 0.1], [0.1, 0.9]])):
            assert normal_approximation_logM(0.05, 500, proc, bsc_pair) < 500 * 0.5 * (C_GOOD + C_BAD)


class TestAudit:
    def test_single_state_is_exact(self, bsc_pair):
        table = approximation_gap_audit(Iid([1.0, 0.0]), bsc_pair, n_grid=(64, 256))
        assert max(table.gap1) < 1e-15 and max(table.gap2) < 1e-15
        assert table.slope1 is None

    def test_gap2_decays(self, bsc_pair):
        table = approximation_gap_audit(Iid([0.5, 0.5]), bsc_pair, n_grid=(64, 256, 1024, 4096))
        assert table.slope2 <= -0.4
        assert all(b < a for a, b in zip(table.gap2, table.gap2[1:]))
        assert table.to_csv().splitlines()[0] == "n,gap1,gap2"


class TestVarianceGapRate:
    """The first approximation gap decays like 1/n only when the capacities agree."""

    GRID = (64, 128, 256, 512, 1024, 2048, 4096)

    def test_equal_dispersions_give_zero_gap(self):
        p = optimize.brentq(lambda q: bsc_dispersion(q) - V_GOOD, 0.03, 0.08)
        chan = build_state_channel([bsc(0.11), bsc(p)])
        table = approximation_gap_audit(Iid([0.4, 0.6]), chan, (64, 256))
        assert max(table.gap1) < 1e-14 and min(table.gap2) > 0

    def test_equal_capacities_give_order_one_over_n(self):
        table = approximation_gap_audit(Iid([0.4, 0.6]), equal_capacity_pair(), self.GRID)
        assert table.slope1 == pytest.approx(-1.0, abs=0.05)

    def test_distinct_states_give_order_one_over_root_n(self, bsc_pair):
        table = approximation_gap_audit(Iid([0.4, 0.6]), bsc_pair, self.GRID)
        assert table.slope1 == pytest.approx(-0.5, abs=0.05)
