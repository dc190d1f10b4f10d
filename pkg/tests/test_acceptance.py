"""Acceptance suite: one test per criterion, each printed as PASS/FAIL in the
terminal summary. Run on its own with ``pytest tests/test_acceptance.py``."""

from __future__ import annotations

import csv
import math
import time

import numpy as np
import pytest

from masscover import cli
from masscover.blockrate import MarkovSource, block_rate, subadditivity_check
from masscover.covering import (
    achievability_trace,
    blowup_inequality_check,
    random_converse_trials,
    stein_experiment,
)
from masscover.probcore import DistortionMatrix, MassVector, ProbabilityVector, relative_entropy
from masscover.ratesolver import brute_force_rate, shannon_rdf, solve_rate, stein_exponent

import oracles

HAM = DistortionMatrix.hamming(2)
LN_04 = math.log(0.4)


def read_curve(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["D"]) for r in rows]), np.array([float(r["R_nats"]) for r in rows])


@pytest.mark.acceptance(1, "Shannon specialization matches h(p) - h(D)")
def test_shannon_specialization():
    start = time.perf_counter()
    P = ProbabilityVector([0.6, 0.4])
    grid = [i / 100 for i in range(41)]
    errors = [abs(shannon_rdf(P, HAM, d).R - oracles.binary_rdf(0.4, d)) for d in grid]
    beyond = [shannon_rdf(P, HAM, d).R for d in (0.4, 0.5, 0.75, 1.0)]
    elapsed = time.perf_counter() - start
    assert max(errors) <= 1e-5
    assert beyond == [0.0] * 4
    assert elapsed < 5.0


@pytest.mark.acceptance(2, "figure1 curve: R(0)=0, decreasing, plateau ln 0.4, convex")
def test_figure1(tmp_path):
    out, svg = tmp_path / "figure1.csv", tmp_path / "figure1.svg"
    assert cli.main(["figure1", "--out", str(out), "--svg", str(svg)]) == 0
    D, R = read_curve(out)
    assert len(D) == 101 and D[0] == 0.0 and D[-1] == 1.0
    assert abs(R[0]) <= 1e-6
    head = R[D <= 0.6]
    assert np.all(np.diff(head) < 0)
    assert np.all(np.abs(R[D >= 0.6] - LN_04) <= 1e-6)
    assert abs(LN_04 - -0.916291) <= 1e-6
    for i in range(1, len(D) - 1):
        assert R[i] <= 0.5 * (R[i - 1] + R[i + 1]) + 1e-8, f"convexity fails at D={D[i]}"
    assert svg.read_text().count("<polyline") == 1


@pytest.mark.acceptance(3, "converse holds on 1000 random codebooks, n in {4,6,8}")
def test_converse_exhaustive():
    start = time.perf_counter()
    results = random_converse_trials(1000, [4, 6, 8], seed=7)
    elapsed = time.perf_counter() - start
    failed = [r for r in results if not r.holds]
    assert len(results) == 1000
    assert not failed, failed[:3]
    assert elapsed < 60.0


def _oracle_corpus():
    p64 = ProbabilityVector([0.6, 0.4])
    p73 = ProbabilityVector([0.7, 0.3])
    models = [
        (p64, MassVector.ones(2)),
        (p64, MassVector.from_probability(p64)),
        (p73, MassVector.from_probability(p73)),
        (p73, MassVector.from_mass([2.0, 0.5])),
    ]
    return [(P, M, d) for P, M in models for d in (0.05, 0.15, 0.3)]


@pytest.mark.acceptance(4, "solver agrees with the brute-force oracle on 12 binary instances")
def test_oracle_agreement():
    corpus = _oracle_corpus()
    assert len(corpus) == 12
    for P, M, d in corpus:
        bf = brute_force_rate(P, M, HAM, d, grid_steps=2000)
        r = solve_rate(P, M, HAM, d).R
        assert abs(r - float(bf.value)) <= 1e-3 + bf.error_bound, (P, M.log_mass, d)


@pytest.mark.acceptance(5, "Stein exponent equals relative entropy; exact n=4096 experiment")
def test_stein():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    for _ in range(20):
        p1 = np.clip(rng.dirichlet([1, 1]), 0.02, None)
        p2 = np.clip(rng.dirichlet([1, 1]), 0.02, None)
        p1, p2 = p1 / p1.sum(), p2 / p2.sum()
        assert abs(stein_exponent(p1, p2, 0.0) - float(relative_entropy(p1, p2))) <= 1e-6
    (rec,) = stein_experiment([0.5, 0.5], [0.9, 0.1], [4096])
    elapsed = time.perf_counter() - start
    assert rec.alpha_n <= 0.05
    assert abs(rec.log_beta_n_over_n + 0.510826) <= 0.05
    assert elapsed < 30.0


@pytest.mark.acceptance(6, "achievability: coverage nondecreasing in n, mass exponent within R(D)+eps")
def test_achievability_trend():
    P = ProbabilityVector([0.6, 0.4])
    M = MassVector.from_probability(P)
    eps = 0.15
    reports = achievability_trace(P, M, HAM, 0.2, eps, [10, 20, 30, 40], seed=7, samples=200_000)
    target = solve_rate(P, M, HAM, 0.2).R
    for r in reports:
        assert r.mass_exponent <= target + eps
    for a, b in zip(reports, reports[1:]):
        assert b.coverage >= a.coverage - 3 * max(a.coverage_ci, b.coverage_ci)


@pytest.mark.acceptance(7, "blowup inequality on 200 random subsets, n=10, D in {0.2, 0.3}")
def test_blowup_inequality():
    P = ProbabilityVector([0.6, 0.4])
    for d in (0.2, 0.3):
        rep = blowup_inequality_check(P, 10, d, trials=200, seed=7)
        assert len(rep.records) == 200
        assert rep.holds, rep.min_margin


@pytest.mark.acceptance(8, "block rates: Markov subadditivity, IID per-letter agreement")
def test_block_structure():
    chain = MarkovSource(np.array([[0.9, 0.1], [0.2, 0.8]]))
    rep = subadditivity_check(chain, MassVector.ones(2), HAM, 0.1, [(1, 1), (1, 2), (2, 2)], tol=1e-5)
    assert rep.holds, rep.checks
    p = ProbabilityVector([0.6, 0.4])
    iid = MarkovSource.iid(p)
    M = MassVector.from_probability(p)
    rates = [block_rate(iid, M, HAM, 0.2, k).per_letter_rate for k in (1, 2, 3)]
    assert max(rates) - min(rates) <= 1e-5


def _run(tmp_path, name, argv):
    out = tmp_path / name
    assert cli.main(argv + ["--out", str(out)]) == 0
    return out.read_bytes()


@pytest.mark.acceptance(9, "reruns give byte-identical CSV, independent of --threads")
def test_determinism(tmp_path):
    model = tmp_path / "model.txt"
    model.write_text("p = 0.6 0.4\nm = 0.6 0.4\n")
    chain = tmp_path / "markov.txt"
    chain.write_text("trans = 0.9 0.1 / 0.2 0.8\n")
    commands = {
        "curve": ["curve", "--input", str(model), "--grid", "0:0.05:1"],
        "cover": ["cover", "--input", str(model), "--D", "0.2", "--eps", "0.15", "--n", "10,30",
                  "--samples", "20000", "--seed", "7"],
        "converse": ["converse", "--n", "4,6", "--trials", "30", "--seed", "7"],
        "stein": ["stein", "--p1", "0.5,0.5", "--p2", "0.9,0.1", "--n", "256,1024"],
        "block": ["block", "--input", str(chain), "--D", "0.1", "--k", "1,2,3"],
        "figure1": ["figure1", "--svg", str(tmp_path / "f.svg")],
    }
    for name, argv in commands.items():
        first = _run(tmp_path, f"{name}-a.csv", argv)
        second = _run(tmp_path, f"{name}-b.csv", argv)
        threaded = _run(tmp_path, f"{name}-c.csv", argv + ["--threads", "3"])
        assert first == second == threaded, name


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
