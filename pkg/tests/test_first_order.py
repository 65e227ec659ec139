import math

import numpy as np
import pytest
from hypothesis import given, strategies as hs

from statecap import bsc, build_state_channel
from statecap.errors import InvalidEpsilon
from statecap.first_order import (closed_form_capacity, closed_form_optimistic, common_caid,
                                  eps_capacity, j_cdf, strong_converse_check)
from statecap.states import Alternating, BlockIid, Iid, Markov, Mixed, type_distribution

from conftest import h2

C_GOOD, C_BAD = 1 - h2(0.11), 1 - h2(0.3)


class TestCdf:
    def test_mixed_cdf(self, bsc_pair):
        f = j_cdf(Mixed([0.3, 0.7]), bsc_pair, 100)
        assert f(C_BAD - 1e-9) == 0.0
        assert f(C_BAD) == pytest.approx(0.7)
        assert f(C_GOOD - 1e-6) == pytest.approx(0.7)
        assert f(C_GOOD + 1e-9) == pytest.approx(1.0)

    def test_iid_cdf_dkw(self, bsc_pair):
        # exact cdf against an empirical cdf from sampled types, DKW band at 1e-3
        n, budget = 50, 20_000
        exact = j_cdf(Iid([0.4, 0.6]), bsc_pair, n, mode="exact")
        mc = j_cdf(Iid([0.4, 0.6]), bsc_pair, n, mode="mc", budget=budget, seed=2)
        band = math.sqrt(math.log(2 / 1e-3) / (2 * budget))
        xs = np.linspace(C_BAD - 0.01, C_GOOD + 0.01, 400)
        assert np.max(np.abs(exact.step(xs) - mc.step(xs))) <= band

    def test_csv(self, bsc_pair):
        text = j_cdf(Mixed([0.5, 0.5]), bsc_pair, 10).to_csv({"n": 10})
        assert text.splitlines()[1] == "rate_bits,cdf"


class TestClosedForms:
    @pytest.mark.parametrize("eps,expect", [(0.0, C_BAD), (0.2, C_BAD), (0.69, C_BAD),
                                            (0.7, C_GOOD), (0.9, C_GOOD), (1.0, math.inf)])
    def test_mixed_capacity(self, bsc_pair, eps, expect):
        assert closed_form_capacity(Mixed([0.3, 0.7]), bsc_pair, eps) == pytest.approx(expect)

    def test_mixed_optimistic_at_atom(self, bsc_pair):
        # the bad state carries mass 0.7; the strict inverse stays at its capacity at 0.7
        assert closed_form_optimistic(Mixed([0.3, 0.7]), bsc_pair, 0.7) == pytest.approx(C_BAD)
        assert closed_form_optimistic(Mixed([0.3, 0.7]), bsc_pair, 0.71) == pytest.approx(C_GOOD)
        assert closed_form_optimistic(Mixed([0.3, 0.7]), bsc_pair, 0.0) == -math.inf

    def test_ergodic_models(self, bsc_pair):
        mean = 0.25 * C_GOOD + 0.75 * C_BAD
        for proc in (Iid([0.25, 0.75]), BlockIid([0.25, 0.75], 0.5),
                     Markov([[0.7, 0.3], [0.1, 0.9]])):
            assert closed_form_capacity(proc, bsc_pair, 0.4) == pytest.approx(mean)
            assert closed_form_optimistic(proc, bsc_pair, 0.4) == pytest.approx(mean)

    def test_alternating(self, bsc_pair):
        assert closed_form_capacity(Alternating(1, 0), bsc_pair, 0.5) == pytest.approx(
            (2 * C_BAD + C_GOOD) / 3)
        assert closed_form_optimistic(Alternating(1, 0), bsc_pair, 0.5) == pytest.approx(
            (C_BAD + 2 * C_GOOD) / 3)

    def test_rejects_bad_eps(self, bsc_pair):
        with pytest.raises(InvalidEpsilon):
            closed_form_capacity(Mixed([0.5, 0.5]), bsc_pair, 1.5)


class TestGridEstimates:
    def test_mixed_matches_closed(self, bsc_pair):
        for eps in (0.1, 0.5, 0.9):
            rep = eps_capacity(Mixed([0.3, 0.7]), bsc_pair, eps)
            assert rep.eps_capacity == pytest.approx(rep.eps_capacity_closed)
            assert rep.strong_converse == "fails"

    def test_iid_approaches_mean(self, bsc_pair):
        rep = eps_capacity(Iid([0.5, 0.5]), bsc_pair, 0.3, n_grid=(1024, 2048, 4096))
        assert abs(rep.per_n[4096] - rep.eps_capacity_closed) < 0.01
        assert rep.strong_converse == "holds"
        assert rep.decay_rate == pytest.approx(-1.0, abs=1e-9)

    def test_alternating_grid(self, bsc_pair):
        grid = [4 ** k - 1 for k in range(3, 8)] + [2 * 4 ** k - 1 for k in range(3, 8)]
        rep = eps_capacity(Alternating(1, 0), bsc_pair, 0.5, n_grid=grid)
        assert rep.eps_capacity == pytest.approx(rep.eps_capacity_closed, abs=2e-3)
        assert rep.optimistic == pytest.approx(rep.optimistic_closed, abs=2e-3)
        assert rep.strong_converse == "fails"

    @given(hs.floats(0.0, 1.0), hs.floats(0.0, 1.0), hs.floats(0.05, 0.95))
    def test_capacity_below_optimistic(self, e1, e2, q):
        # C(e1) <= C_dagger(e2) whenever e1 < e2, on the grid estimates
        chan = build_state_channel([bsc(0.11), bsc(0.3)])
        proc = Mixed([q, 1 - q])
        lo, hi = sorted((e1, e2))
        if lo == hi:
            return
        a = eps_capacity(proc, chan, lo, n_grid=(16, 32))
        b = eps_capacity(proc, chan, hi, n_grid=(16, 32))
        assert a.eps_capacity <= b.optimistic

    @given(hs.lists(hs.floats(0.0, 1.0), min_size=2, max_size=5))
    def test_monotone_in_eps(self, eps):
        chan = build_state_channel([bsc(0.11), bsc(0.3)])
        vals = [eps_capacity(Iid([0.3, 0.7]), chan, e, n_grid=(8, 16)).eps_capacity
                for e in sorted(eps)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestStrongConverse:
    def test_verdicts(self, bsc_pair):
        grid = (16, 64, 256)
        assert strong_converse_check(Mixed([0.5, 0.5]), bsc_pair, grid).verdict == "fails"
        assert strong_converse_check(Iid([0.5, 0.5]), bsc_pair, grid).verdict == "holds"
        assert strong_converse_check(Markov([[0.9, 0.1], [0.2, 0.8]]), bsc_pair, grid).verdict == "holds"
        assert strong_converse_check(Markov([[0, 1], [1, 0]], [1, 0]), bsc_pair, grid).verdict == "inconclusive"
        assert strong_converse_check(Alternating(0, 1), bsc_pair, grid).verdict == "fails"

    def test_evidence(self, bsc_pair):
        rep = strong_converse_check(BlockIid([0.5, 0.5], 0.5), bsc_pair, (64, 256, 1024, 4096))
        # covariance term decays like n^(-nu)
        assert rep.decay_rate == pytest.approx(-0.5, abs=1e-6)
        assert np.allclose(rep.limt_term, 0.5 * (C_GOOD + C_BAD))

    def test_common_caid(self, bsc_pair):
        assert common_caid(bsc_pair)
