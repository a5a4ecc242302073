import itertools
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from clicklab.errors import EnumerationCapError, InfeasiblePlanError, InvalidInputError
from clicklab.interleaving import (PIConfig, TDIResult, oi_outcome, oi_plan, pi_distribution,
                                   pi_expected_outcome, pi_interleave, tdi_from_flips,
                                   tdi_interleave, tdi_outcome, tdi_rounds)
from clicklab.oracles import tdi_expected_outcome

A, B, C = 0, 1, 2
R1, R2 = (A, B, C), (B, C, A)


class TestTeamDraft:
    def test_identical_inputs(self, rng):
        res = tdi_interleave((2, 0, 1, 3), (2, 0, 1, 3), rng)
        assert res.ranking == (2, 0, 1, 3)
        assert sorted(res.assignments[:2]) == [1, 2] and sorted(res.assignments[2:]) == [1, 2]

    def test_four_outcomes_uniform(self, rng):
        seen = Counter(tdi_interleave(R1, R2, rng) for _ in range(40_000))
        want = {TDIResult((A, B, C), (1, 2, 1)), TDIResult((A, B, C), (1, 2, 2)),
                TDIResult((B, A, C), (2, 1, 1)), TDIResult((B, A, C), (2, 1, 2))}
        assert set(seen) == want
        assert all(abs(c / 40_000 - 0.25) < 0.01 for c in seen.values())

    def test_same_seed(self):
        a = tdi_interleave(R1, R2, np.random.default_rng(4))
        b = tdi_interleave(R1, R2, np.random.default_rng(4))
        assert a == b

    def test_mismatched_sets(self, rng):
        with pytest.raises(InvalidInputError):
            tdi_interleave((0, 1), (0, 2), rng)

    @pytest.mark.parametrize("assign, clicks, want", [((1, 2, 1), (1, 0, 1), 1), ((1, 2, 1), (1, 1, 0), 0),
                                                      ((1, 2, 2), (0, 0, 1), -1)])
    def test_outcome(self, assign, clicks, want):
        assert tdi_outcome(TDIResult(R1, assign), clicks) == want

    def test_identical_rankings_zero_expectation(self, rng):
        for n in (2, 3, 4):
            r = tuple(rng.permutation(n))
            theta, zeta = rng.uniform(0.1, 1, n), rng.uniform(0, 1, n)
            assert abs(tdi_expected_outcome(r, r, theta, zeta)) < 1e-12

    def test_rounds(self):
        assert tdi_rounds(5) == 3
        with pytest.raises(InvalidInputError):
            tdi_from_flips(R1, R2, (0,))


class TestProbabilistic:
    def test_single_doc(self, rng):
        assert pi_interleave((0,), (0,), PIConfig(), rng) == (0,)

    def test_probabilities(self):
        table = {r: p for r, p, _ in pi_distribution(R1, R2, PIConfig())}
        assert table[(A, B, C)] == pytest.approx(0.4182, abs=5e-5)
        assert table[(C, B, A)] == pytest.approx(0.0182, abs=5e-5)
        assert sum(table.values()) == pytest.approx(1.0, abs=1e-12)

    def test_sampling_matches_recursion(self, rng):
        dist = pi_distribution(R1, R2, PIConfig())
        draws = 20_000
        seen = Counter(pi_interleave(R1, R2, PIConfig(), rng) for _ in range(draws))
        observed = [seen[r] for r, _, _ in dist]
        assert chisquare(observed, [p * draws for _, p, _ in dist]).pvalue > 1e-3

    def test_no_clicks(self):
        assert pi_expected_outcome((A, B, C), (0, 0, 0), R1, R2, PIConfig()) == 0.0

    def test_posteriors(self):
        post = {r: q for r, _, q in pi_distribution(R1, R2, PIConfig())}
        assert post[(A, B, C)][0] == pytest.approx(0.9878, abs=5e-5)
        assert post[(B, A, C)][0] == pytest.approx(0.0588, abs=5e-5)

    def test_unreachable(self):
        with pytest.raises(InvalidInputError):
            pi_expected_outcome((A, A, C), (1, 0, 0), R1, R2, PIConfig())

    def test_tau_positive(self):
        with pytest.raises(InvalidInputError):
            PIConfig(0.0)

    def test_single_click_outcome_is_posterior_difference(self):
        _, _, post = next(d for d in pi_distribution(R1, R2, PIConfig()) if d[0] == (A, C, B))
        assert pi_expected_outcome((A, C, B), (0, 1, 0), R1, R2, PIConfig()) == pytest.approx(2 * post[1] - 1)


class TestOptimized:
    def test_allowed_and_credits(self):
        plan = oi_plan(R1, R2)
        assert set(plan.allowed) == {(A, B, C), (B, A, C), (B, C, A)}
        assert plan.credits == {A: 2.0, B: -1.0, C: -1.0}
        np.testing.assert_allclose(plan.probs, [1 / 3] * 3, atol=1e-12)

    @pytest.mark.parametrize("theta", [(1.0, 0.5, 0.33), (1.0, 0.9, 0.9), (0.3, 0.2, 0.1)])
    def test_uniform_for_any_theta(self, theta):
        np.testing.assert_allclose(oi_plan(R1, R2, theta).probs, [1 / 3] * 3, atol=1e-12)

    def test_zero_credit_constraint(self, rng):
        for n in (3, 4, 5):
            r1, r2 = tuple(rng.permutation(n)), tuple(rng.permutation(n))
            theta = np.sort(rng.uniform(0.1, 1, n))[::-1]
            try:
                plan = oi_plan(r1, r2, theta)
            except InfeasiblePlanError:
                continue
            assert plan.probs.min() >= 0
            assert plan.probs.sum() == pytest.approx(1.0, abs=1e-12)
            assert abs(plan.probs @ plan.exposure_credit) < 1e-9

    @pytest.mark.parametrize("clicks, want", [((0, 0, 0), 0.0), ((1, 0, 1), 1.0), ((0, 1, 0), -1.0)])
    def test_outcome(self, clicks, want):
        assert oi_outcome(oi_plan(R1, R2), (A, B, C), clicks) == want

    def test_disallowed(self):
        with pytest.raises(InvalidInputError):
            oi_outcome(oi_plan(R1, R2), (C, A, B), (1, 0, 0))

    def test_cap(self):
        with pytest.raises(EnumerationCapError):
            oi_plan(tuple(range(7)), tuple(range(7))[::-1])
