from __future__ import annotations

import math
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masscover.covering import (
    EXACT_LIMIT,
    STEIN_HEADER,
    TRACE_HEADER,
    Codebook,
    ConditioningRule,
    Mode,
    RejectionBudgetError,
    RuleKind,
    achievability_trace,
    blowup_inequality_check,
    coverage_exact,
    coverage_mc,
    distance_table,
    mass_exponent,
    nearest_word,
    random_converse_trials,
    sample_codebook,
    size_for,
    stein_experiment,
    verify_converse,
)
from masscover.probcore import DistortionMatrix, MassVector, ProbabilityVector
from masscover.ratesolver import solve_rate

import oracles

HAM = DistortionMatrix.hamming(2)
P = ProbabilityVector([0.6, 0.4])
M_P = MassVector.from_probability(P)
HALF = ProbabilityVector([0.5, 0.5])


def random_words(draw_size: int, n: int, alphabet: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, alphabet, size=(draw_size, n))


class TestSampling:
    def test_size_is_floor_of_exponential(self):
        assert size_for(10, 0.5) == math.floor(math.exp(5))
        assert size_for(3, -1.0) == 1

    def test_same_seed_same_words(self):
        a = sample_codebook(HALF, 20, ConditioningRule.type_ball(0.1), 0.2, seed=11)
        b = sample_codebook(HALF, 20, ConditioningRule.type_ball(0.1), 0.2, seed=11)
        c = sample_codebook(HALF, 20, ConditioningRule.type_ball(0.1), 0.2, seed=12)
        assert np.array_equal(a.words, b.words)
        assert not np.array_equal(a.words, c.words)

    def test_type_ball_acceptance_matches_binomial(self):
        cb = sample_codebook(HALF, 100, ConditioningRule.type_ball(0.05), 0.0, seed=5, size=20_000)
        # accepted iff 45 <= #ones <= 55
        expected = oracles.binomial_window(100, 45, 55)
        assert expected == pytest.approx(0.7287469759, abs=1e-10)
        assert cb.meta.acceptance_rate == pytest.approx(expected, abs=0.015)
        ones = cb.words.sum(axis=1)
        assert ones.min() >= 45 and ones.max() <= 55

    def test_empty_type_ball_raises(self):
        q = ProbabilityVector([0.5, 0.5])
        # with delta = 0.1 and n = 3 each symbol may appear at most once: no word fits
        with pytest.raises(RejectionBudgetError):
            sample_codebook(q, 3, ConditioningRule.type_ball(0.1), 0.0, seed=1, size=1)

    def test_mass_cap_rule(self):
        lm = np.log(np.array([0.6, 0.4]))
        cap = float(np.mean(lm))
        cb = sample_codebook(HALF, 12, ConditioningRule.mass_cap(cap), 0.1, seed=2, M=MassVector(lm))
        assert np.all(lm[cb.words].mean(axis=1) <= cap + 1e-12)

    @settings(max_examples=25)
    @given(
        st.lists(st.floats(0.1, 1.0), min_size=3, max_size=3),
        st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3),
        st.floats(0.02, 0.2),
        st.integers(5, 40),
    )
    def test_type_ball_pins_mass(self, q, lm, delta, n):
        q = ProbabilityVector(np.array(q) / sum(q))
        lm = np.array(lm)
        cb = sample_codebook(q, n, ConditioningRule.type_ball(delta), 0.0, seed=3, size=50,
                             M=MassVector(lm), allow_constant_fallback=True)
        spread = float((lm - lm.min()).sum())
        per_word = lm[cb.words].mean(axis=1)
        if cb.meta.acceptance_rate > 0:
            assert np.all(per_word <= float(q.probs @ lm) + delta * spread + 1e-9)


class TestCoverage:
    def test_single_word_ball(self):
        cb = Codebook(3, np.zeros((1, 3), dtype=np.int16))
        rep = coverage_exact(cb, P, HAM, 1 / 3)
        assert rep.coverage == pytest.approx(0.648, abs=1e-12)
        assert rep.coverage == pytest.approx(oracles.coverage_by_enumeration([(0, 0, 0)], [0.6, 0.4], [[0, 1], [1, 0]], 1 / 3))
        assert rep.mode is Mode.EXACT

    @settings(max_examples=25)
    @given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 10_000), st.floats(0.0, 1.0))
    def test_exact_matches_enumeration(self, n, size, seed, d):
        p = [0.5, 0.3, 0.2]
        rho = [[0.0, 1.0, 2.0], [1.0, 0.0, 0.5], [0.3, 0.7, 0.0]]
        words = random_words(size, n, 3, seed)
        cb = Codebook(n, words)
        rep = coverage_exact(cb, p, DistortionMatrix(rho), d)
        assert rep.coverage == pytest.approx(oracles.coverage_by_enumeration(words, p, rho, d), abs=1e-12)
        assert rep.expected_distortion == pytest.approx(
            oracles.expected_distortion_by_enumeration(words, p, rho), abs=1e-12
        )

    def test_mc_agrees_with_exact(self):
        words = random_words(40, 12, 2, 9)
        cb = Codebook(12, words)
        exact = coverage_exact(cb, P, HAM, 0.25)
        mc = coverage_mc(cb, P, HAM, 0.25, samples=20_000, seed=4)
        assert abs(mc.coverage - exact.coverage) <= 3 * mc.coverage_ci
        assert mc.mode is Mode.MONTE_CARLO

    def test_mc_general_distortion_path(self):
        rho = DistortionMatrix([[0.0, 1.0, 2.0], [1.0, 0.0, 0.5], [0.3, 0.7, 0.0]])
        p = ProbabilityVector([0.5, 0.3, 0.2])
        cb = Codebook(6, random_words(30, 6, 3, 2))
        exact = coverage_exact(cb, p, rho, 0.3)
        mc = coverage_mc(cb, p, rho, 0.3, samples=20_000, seed=8)
        assert abs(mc.coverage - exact.coverage) <= 3 * mc.coverage_ci

    def test_mc_is_seeded_and_thread_independent(self):
        cb = Codebook(30, random_words(200, 30, 2, 1))
        a = coverage_mc(cb, P, HAM, 0.3, samples=10_000, seed=6, threads=1)
        b = coverage_mc(cb, P, HAM, 0.3, samples=10_000, seed=6, threads=3)
        assert a == b

    @settings(max_examples=20)
    @given(st.integers(0, 10_000), st.integers(1, 8))
    def test_blowup_monotone_and_distortion_link(self, seed, size):
        cb = Codebook(8, random_words(size, 8, 2, seed))
        covs = [coverage_exact(cb, P, HAM, d).coverage for d in np.linspace(0, 1, 9)]
        assert all(b >= a - 1e-15 for a, b in zip(covs, covs[1:]))
        assert covs[-1] == pytest.approx(1.0)
        d = 0.25
        rep = coverage_exact(cb, P, HAM, d)
        # Markov's inequality on the distance to the codebook, and its converse bound
        assert 1 - rep.coverage <= rep.expected_distortion / d + 1e-12
        assert rep.expected_distortion <= d * rep.coverage + 1.0 * (1 - rep.coverage) + 1e-12

    def test_distance_table_and_nearest_word(self):
        words = np.array([[0, 0, 1], [1, 1, 1]], dtype=np.int16)
        cb = Codebook(3, words)
        table = distance_table(cb, HAM)
        assert table[0b000] == 1 and table[0b111] == 0 and table[0b100] == 2 and table[0b101] == 1
        idx, dist = nearest_word([1, 1, 0], cb, HAM)
        assert (idx, dist) == (1, pytest.approx(1 / 3))

    def test_exact_limit_respected(self):
        assert EXACT_LIMIT == 2**22


class TestConverse:
    def test_small_codebooks(self):
        for words in ([[0, 0, 0]], [[0, 0, 0], [1, 1, 1]], [[0, 1, 0], [1, 0, 1], [1, 1, 1]]):
            res = verify_converse(Codebook(3, np.array(words)), P, M_P, HAM)
            assert res.holds, res

    def test_duplicates_do_not_matter(self):
        a = verify_converse(Codebook(4, np.array([[0, 1, 0, 1]])), P, M_P, HAM)
        b = verify_converse(Codebook(4, np.array([[0, 1, 0, 1]] * 3)), P, M_P, HAM)
        assert (a.lhs, a.rhs) == (b.lhs, b.rhs)
        assert b.distinct == 1

    def test_ternary_model(self):
        p = ProbabilityVector([0.5, 0.3, 0.2])
        model = (p, MassVector.from_mass([0.4, 1.3, 0.7]), DistortionMatrix.hamming(3))
        results = random_converse_trials(40, [3, 4, 5], seed=21, model=model)
        assert all(r.holds for r in results)

    def test_whole_space_has_zero_distortion(self):
        words = ((np.arange(16)[:, None] >> np.arange(3, -1, -1)) & 1)
        res = verify_converse(Codebook(4, words), P, M_P, HAM)
        assert res.D == 0.0
        assert res.lhs == pytest.approx(0.0, abs=1e-12)


class TestAchievability:
    def test_small_trace(self):
        reports = achievability_trace(P, M_P, HAM, 0.2, 0.15, [8, 12], seed=7)
        target = solve_rate(P, M_P, HAM, 0.2).R
        for r in reports:
            assert r.mass_exponent <= target + 0.15
            assert r.mode is Mode.EXACT
            assert 0 < r.coverage <= 1
        assert TRACE_HEADER == ["n", "coverage", "ci", "exp_distortion", "mass_exponent", "target_rate", "rejection_rate"]

    def test_degenerate_plateau_uses_constant_words(self):
        reports = achievability_trace(P, M_P, HAM, 0.7, 0.1, [6, 8], seed=7)
        for r in reports:
            n = r.n
            # one word 1...1, covered iff at most floor(0.7 n) zeros
            zeros_allowed = math.floor(0.7 * n + 1e-9)
            expected = sum(comb(n, k) * 0.6**k * 0.4 ** (n - k) for k in range(zeros_allowed + 1))
            assert r.codebook_size == 1
            assert r.coverage == pytest.approx(expected, abs=1e-12)
            assert r.mass_exponent == pytest.approx(math.log(0.4))

    def test_mass_cap_rule(self):
        reports = achievability_trace(P, M_P, HAM, 0.2, 0.15, [10], seed=3, rule=RuleKind.MASS_CAP)
        assert reports[0].mass_exponent <= solve_rate(P, M_P, HAM, 0.2).R + 0.15

    def test_rejects_bad_epsilon(self):
        with pytest.raises(ValueError):
            achievability_trace(P, M_P, HAM, 0.2, 0.0, [10], seed=3)

    def test_mass_exponent_of_codebook(self):
        cb = Codebook(2, np.array([[0, 0], [1, 1]]))
        assert mass_exponent(cb, M_P) == pytest.approx(0.5 * math.log(0.36 + 0.16))


class TestStein:
    def test_header(self):
        assert STEIN_HEADER == ["n", "alpha_n", "log_beta_n_over_n", "slack"]

    def test_alpha_nonincreasing_after_n0(self):
        # n0 = 32 for this construction and pair
        ns = [32, 64, 128, 256, 512, 1024, 2048, 4096]
        alphas = [r.alpha_n for r in stein_experiment([0.5, 0.5], [0.9, 0.1], ns)]
        assert all(b <= a for a, b in zip(alphas, alphas[1:]))

    def test_exponent_moves_toward_relative_entropy(self):
        recs = stein_experiment([0.5, 0.5], [0.9, 0.1], [256, 1024, 4096])
        gaps = [abs(r.log_beta_n_over_n + 0.510826) for r in recs]
        assert gaps[0] > gaps[1] > gaps[2]

    def test_strong_typical_region(self):
        recs = stein_experiment([0.5, 0.5], [0.9, 0.1], [256, 4096], region="strong")
        assert recs[-1].alpha_n < 1e-50
        assert recs[-1].slack == pytest.approx(4096 ** -0.25)
        # the strongly typical set is too wide for beta_n to reach the limit at this n
        assert recs[-1].log_beta_n_over_n > -0.3

    def test_beta_by_direct_sum_small_n(self):
        # n = 16: enumerate counts directly
        rec = stein_experiment([0.5, 0.5], [0.9, 0.1], [16])[0]
        llr = [math.log(0.5 / 0.9), math.log(0.5 / 0.1)]
        inside = [abs(((16 - k) * llr[0] + k * llr[1]) / 16 - 0.5108256237659907) <= rec.slack + 1e-12 for k in range(17)]
        beta = sum(comb(16, k) * 0.1**k * 0.9 ** (16 - k) for k in range(17) if inside[k])
        alpha = sum(comb(16, k) / 2**16 for k in range(17) if not inside[k])
        assert rec.beta_n == pytest.approx(beta, rel=1e-10)
        assert rec.alpha_n == pytest.approx(alpha, abs=1e-12)


class TestBlowup:
    def test_holds_small_cube(self):
        rep = blowup_inequality_check(P, 8, 0.25, trials=50, seed=1, with_converse=True)
        assert rep.holds
        assert len(rep.records) == 50

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            blowup_inequality_check([0.2, 0.3, 0.5], 4, 0.2, trials=1, seed=1)
