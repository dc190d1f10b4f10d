"""Extremal codebooks, blowup coverage, and the finite-n converse.

Strings are numpy integer arrays; a codebook is an ``(N, n)`` array of words
kept in sampling order (a multiset). Exact quantities enumerate the whole
source space through a min-plus distance transform, one coordinate at a time,
which gives rho_n(x, C) for every x at once.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from . import streams
from .probcore import (
    DistortionMatrix,
    MassVector,
    ProbabilityVector,
    as_probability,
)
from .ratesolver import rmin_dmax, solve_rate

log = logging.getLogger(__name__)

EXACT_LIMIT = 2**22
MAX_CODEBOOK = 10**7
REJECTION_BUDGET = 10**6
CANDIDATE_BATCH = 8192
MC_CHUNK = 4096
CONVERSE_SLACK = 1e-6
D_BACKOFF = 1e-3
# comparisons of summed single-letter costs against n*D
DIST_TOL = 1e-9


class RejectionBudgetError(RuntimeError):
    def __init__(self, acceptance_rate: float, n: int):
        super().__init__(
            f"rejection budget of {REJECTION_BUDGET} exhausted at n={n} "
            f"(empirical acceptance rate {acceptance_rate:.3e}); the conditioning set "
            "is infeasible or too thin at this block length"
        )
        self.acceptance_rate = acceptance_rate


class ConstructionError(AssertionError):
    """A bound the construction guarantees did not hold."""


class RuleKind(enum.Enum):
    TYPE_BALL = "typeball"
    MASS_CAP = "masscap"
    NONE = "none"


@dataclass(frozen=True)
class ConditioningRule:
    kind: RuleKind
    delta: float = 0.0
    cap: float = math.inf

    def __post_init__(self):
        if self.kind is RuleKind.TYPE_BALL and not self.delta > 0:
            raise ValueError("TypeBall conditioning needs delta > 0")
        if self.kind is RuleKind.MASS_CAP and not math.isfinite(self.cap):
            raise ValueError("MassCap conditioning needs a finite cap")

    @classmethod
    def type_ball(cls, delta: float) -> "ConditioningRule":
        return cls(RuleKind.TYPE_BALL, delta=delta)

    @classmethod
    def mass_cap(cls, cap: float) -> "ConditioningRule":
        return cls(RuleKind.MASS_CAP, cap=cap)

    @classmethod
    def none(cls) -> "ConditioningRule":
        return cls(RuleKind.NONE)


@dataclass(frozen=True)
class CodebookMeta:
    q_star: ProbabilityVector
    rule: ConditioningRule
    seed: int
    target_size_exponent: float
    acceptance_rate: float = 1.0
    fallback: bool = False


@dataclass(frozen=True, eq=False)
class Codebook:
    n: int
    words: np.ndarray
    meta: CodebookMeta | None = None

    def __post_init__(self):
        w = np.array(self.words, dtype=np.int16)
        if w.ndim == 1:
            w = w.reshape(1, -1)
        if w.ndim != 2 or w.shape[1] != self.n:
            raise ValueError(f"every word must have length n={self.n}")
        w.setflags(write=False)
        object.__setattr__(self, "words", w)

    @classmethod
    def from_words(cls, words: Sequence[Sequence[int]] | np.ndarray) -> "Codebook":
        w = np.atleast_2d(np.asarray(words))
        return cls(w.shape[1], w)

    def __len__(self) -> int:
        return self.words.shape[0]

    def distinct(self) -> "Codebook":
        """The underlying set, first occurrences in order."""
        _, first = np.unique(self.words, axis=0, return_index=True)
        return Codebook(self.n, self.words[np.sort(first)], self.meta)


class Mode(enum.Enum):
    EXACT = "exact"
    MONTE_CARLO = "mc"


@dataclass(frozen=True)
class CoverageReport:
    n: int
    coverage: float
    coverage_ci: float
    expected_distortion: float
    mass_exponent: float
    mode: Mode
    samples: int
    seed: int | None
    codebook_size: int = 0
    target_rate: float = math.nan
    rejection_rate: float = 0.0
    delta: float = math.nan

    def csv_row(self) -> list:
        return [
            self.n, self.coverage, self.coverage_ci, self.expected_distortion,
            self.mass_exponent, self.target_rate, self.rejection_rate,
        ]


TRACE_HEADER = ["n", "coverage", "ci", "exp_distortion", "mass_exponent", "target_rate", "rejection_rate"]


def size_for(n: int, size_exponent: float) -> int:
    """Number of words: floor(exp(n * exponent)), at least one."""
    size = max(1, math.floor(math.exp(n * size_exponent)))
    if size > MAX_CODEBOOK:
        raise ValueError(f"codebook of {size} words at n={n} exceeds the cap {MAX_CODEBOOK}")
    return size


def _accept(cands: np.ndarray, rule: ConditioningRule, q: np.ndarray, lm: np.ndarray | None) -> np.ndarray:
    n = cands.shape[1]
    if rule.kind is RuleKind.NONE:
        return np.ones(cands.shape[0], dtype=bool)
    if rule.kind is RuleKind.TYPE_BALL:
        counts = np.stack([(cands == b).sum(axis=1) for b in range(q.size)], axis=1)
        return np.all(counts <= n * (q + rule.delta) + DIST_TOL, axis=1)
    per_letter = lm[cands].sum(axis=1) / n
    return per_letter <= rule.cap + 1e-12


def _type_ball_nonempty(q: np.ndarray, delta: float, n: int) -> bool:
    room = np.minimum(np.floor(n * (q + delta) + DIST_TOL), n)
    return room.sum() >= n


def sample_codebook(
    q_star: ProbabilityVector,
    n: int,
    rule: ConditioningRule,
    size_exponent: float,
    seed: int,
    *,
    M: MassVector | None = None,
    size: int | None = None,
    allow_constant_fallback: bool = False,
) -> Codebook:
    """Draw words IID from (Q*)^n conditioned on the rule's set.

    Conditioning is realized by rejection, keeping accepted candidates in
    draw order, so word i is the i-th accepted draw of one fixed stream.
    """
    if n < 1:
        raise ValueError("block length must be >= 1")
    q = q_star.probs
    if rule.kind is RuleKind.MASS_CAP and M is None:
        raise ValueError("MassCap conditioning needs the mass vector M")
    lm = None if M is None else M.log_mass
    target = size_for(n, size_exponent) if size is None else int(size)
    meta = dict(q_star=q_star, rule=rule, seed=seed, target_size_exponent=size_exponent)

    empty = (
        (rule.kind is RuleKind.TYPE_BALL and not _type_ball_nonempty(q, rule.delta, n))
        or (rule.kind is RuleKind.MASS_CAP and lm.min() > rule.cap + 1e-12)
    )
    if empty:
        if not allow_constant_fallback:
            raise RejectionBudgetError(0.0, n)
        return _constant_codebook(n, q, lm, meta)

    rng = streams.stream(seed, streams.CODEBOOK, n)
    accepted = []
    have = drawn = 0
    run = 0  # consecutive rejections since the last accepted word
    while have < target:
        cands = streams.draw_strings(rng, q, CANDIDATE_BATCH, n)
        hits = np.flatnonzero(_accept(cands, rule, q, lm))
        if hits.size and run + hits[0] < REJECTION_BUDGET:
            take = hits[: target - have]
            accepted.append(cands[take])
            have += take.size
            drawn += int(take[-1]) + 1 if have == target else CANDIDATE_BATCH
            run = CANDIDATE_BATCH - 1 - int(hits[-1])
            continue
        run += CANDIDATE_BATCH if not hits.size else int(hits[0])
        drawn += CANDIDATE_BATCH
        if run >= REJECTION_BUDGET:
            if allow_constant_fallback:
                return _constant_codebook(n, q, lm, meta)
            raise RejectionBudgetError(have / drawn, n)
    words = np.concatenate(accepted)[:target]
    return Codebook(n, words, CodebookMeta(**meta, acceptance_rate=have / max(drawn, 1)))


def _constant_codebook(n: int, q: np.ndarray, lm: np.ndarray | None, meta: dict) -> Codebook:
    if lm is None:
        raise ValueError("the constant-string fallback needs M to pick a minimal-mass symbol")
    a = int(np.argmin(lm))
    log.warning("conditioning set empty at n=%d; falling back to the constant string of symbol %d", n, a)
    return Codebook(n, np.full((1, n), a), CodebookMeta(**meta, acceptance_rate=0.0, fallback=True))


def nearest_word(x: Sequence[int] | np.ndarray, cb: Codebook, rho: DistortionMatrix) -> tuple[int, float]:
    """The encoder: closest word under rho_n, lowest index on ties."""
    x = np.asarray(x)
    if len(cb) == 0:
        raise ValueError("empty codebook")
    if x.size != cb.n:
        raise ValueError(f"string length {x.size} does not match n={cb.n}")
    totals = rho.rho[x[None, :], cb.words].sum(axis=1)
    i = int(np.argmin(totals))
    return i, float(totals[i]) / cb.n


def mass_exponent(cb: Codebook, M: MassVector) -> float:
    """(1/n) log M^n(C), summing over the word list (duplicates count)."""
    if len(cb) == 0:
        raise ValueError("empty codebook")
    return float(logsumexp(M.log_mass[cb.words].sum(axis=1))) / cb.n


def distance_table(cb: Codebook, rho: DistortionMatrix) -> np.ndarray:
    """n * rho_n(x, C) for every x in A^n, flattened in row-major order."""
    k, l = rho.shape
    n = cb.n
    if max(k, l) ** n > EXACT_LIMIT:
        raise ValueError(f"exact enumeration of {max(k, l)}^{n} strings exceeds {EXACT_LIMIT}")
    table = np.full((l,) * n, np.inf)
    table[tuple(cb.words.T.astype(np.intp))] = 0.0
    r = rho.rho
    for axis in range(n):
        t = np.moveaxis(table, axis, 0)
        out = np.full((k,) + t.shape[1:], np.inf)
        for b in range(l):
            np.minimum(out, r[:, b].reshape((k,) + (1,) * (n - 1)) + t[b][None], out=out)
        table = np.moveaxis(out, 0, axis)
    return table.reshape(-1)


def product_table(P: ProbabilityVector, n: int) -> np.ndarray:
    """P^n(x) for every x in A^n, row-major."""
    out = np.ones(1)
    for _ in range(n):
        out = np.multiply.outer(out, P.probs).reshape(-1)
    return out


def coverage_exact(
    cb: Codebook,
    P,
    rho: DistortionMatrix,
    D: float,
    M: MassVector | None = None,
) -> CoverageReport:
    """P^n of the D-blowup and E[rho_n(X, C)] by full enumeration.

    Without M the mass exponent is that of counting measure, (1/n) log |C|.
    """
    P = as_probability(P)
    dist = distance_table(cb, rho)
    pn = product_table(P, cb.n)
    covered = dist <= cb.n * D + DIST_TOL
    M = M if M is not None else MassVector.ones(rho.shape[1])
    return CoverageReport(
        n=cb.n,
        coverage=min(float(pn[covered].sum()), 1.0),
        coverage_ci=0.0,
        expected_distortion=float(pn @ dist) / cb.n,
        mass_exponent=mass_exponent(cb, M),
        mode=Mode.EXACT,
        samples=0,
        seed=None,
        codebook_size=len(cb),
    )


def _pack_bits(strings: np.ndarray) -> np.ndarray:
    weights = np.left_shift(np.uint64(1), np.arange(strings.shape[1], dtype=np.uint64))
    return (strings.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)


def _min_distances(xs: np.ndarray, cb: Codebook, rho: DistortionMatrix, packed_words=None) -> np.ndarray:
    """n * rho_n(x, C) for a batch of sampled strings."""
    if packed_words is not None:
        px = _pack_bits(xs)
        best = np.full(xs.shape[0], np.iinfo(np.int64).max, dtype=np.int64)
        block = max(1, 4_000_000 // max(xs.shape[0], 1))
        for start in range(0, packed_words.size, block):
            d = np.bitwise_count(px[:, None] ^ packed_words[None, start:start + block])
            np.minimum(best, d.min(axis=1).astype(np.int64), out=best)
        return best.astype(float)
    best = np.full(xs.shape[0], np.inf)
    block = max(1, 2_000_000 // max(xs.shape[0], 1))
    for start in range(0, len(cb), block):
        words = cb.words[start:start + block]
        acc = np.zeros((xs.shape[0], words.shape[0]))
        for i in range(cb.n):
            acc += rho.rho[xs[:, i][:, None], words[:, i][None, :]]
        np.minimum(best, acc.min(axis=1), out=best)
    return best


def coverage_mc(
    cb: Codebook,
    P,
    rho: DistortionMatrix,
    D: float,
    samples: int,
    seed: int,
    *,
    M: MassVector | None = None,
    threads: int = 1,
) -> CoverageReport:
    """Monte Carlo estimate of P^n([C]_D) with a 95% normal half-width.

    The sample range is cut into fixed chunks, each drawn from its own
    substream and tallied separately, so the result is independent of the
    number of worker threads.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if len(cb) == 0:
        raise ValueError("empty codebook")
    P = as_probability(P)
    packed = _pack_bits(cb.words) if rho.is_hamming and rho.shape[0] == 2 and cb.n <= 64 else None
    chunks = [(i, min(MC_CHUNK, samples - start)) for i, start in enumerate(range(0, samples, MC_CHUNK))]

    def tally(chunk):
        i, count = chunk
        rng = streams.stream(seed, streams.MONTE_CARLO, cb.n, i)
        xs = streams.draw_strings(rng, P.probs, count, cb.n)
        d = _min_distances(xs, cb, rho, packed)
        return int(np.count_nonzero(d <= cb.n * D + DIST_TOL)), math.fsum(d)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(tally, chunks))
    else:
        results = [tally(c) for c in chunks]
    hits = sum(h for h, _ in results)
    dist_sum = math.fsum(s for _, s in results)
    p_hat = hits / samples
    M = M if M is not None else MassVector.ones(rho.shape[1])
    return CoverageReport(
        n=cb.n,
        coverage=p_hat,
        coverage_ci=1.96 * math.sqrt(p_hat * (1 - p_hat) / samples),
        expected_distortion=dist_sum / (samples * cb.n),
        mass_exponent=mass_exponent(cb, M),
        mode=Mode.MONTE_CARLO,
        samples=samples,
        seed=seed,
        codebook_size=len(cb),
    )


@dataclass(frozen=True)
class ConverseResult:
    D: float
    lhs: float
    rhs: float
    holds: bool
    size: int
    distinct: int


def verify_converse(cb: Codebook, P, M: MassVector, rho: DistortionMatrix) -> ConverseResult:
    """Check (1/n) log M^n(C) >= R(E[rho_n(X, C)]) with exact D."""
    P = as_probability(P)
    cset = cb.distinct()
    dist = distance_table(cset, rho)
    D = float(product_table(P, cb.n) @ dist) / cb.n
    D = max(D, 0.0)
    rhs = solve_rate(P, M, rho, D).R
    lhs = mass_exponent(cset, M)
    return ConverseResult(D, lhs, rhs, lhs >= rhs - CONVERSE_SLACK, len(cb), len(cset))


def random_converse_trials(
    trials: int,
    n_values: Sequence[int],
    seed: int,
    *,
    model: tuple[ProbabilityVector, MassVector, DistortionMatrix] | None = None,
) -> list[ConverseResult]:
    """Converse checks on seeded random codebooks.

    Without a model each trial also draws a random binary (P, M) pair under
    Hamming distortion. Codebook sizes are log-uniform on [1, |Â|^n] and the
    words come from a randomly biased product law.
    """
    out = []
    for t in range(trials):
        rng = streams.stream(seed, streams.CORPUS, t)
        n = int(n_values[t % len(n_values)])
        if model is None:
            P = ProbabilityVector(rng.dirichlet([1.0, 1.0]))
            P = ProbabilityVector(np.clip(P.probs, 1e-3, None) / np.clip(P.probs, 1e-3, None).sum())
            M = MassVector(rng.uniform(-2.0, 2.0, size=2))
            rho = DistortionMatrix.hamming(2)
        else:
            P, M, rho = model
        l = rho.shape[1]
        size = int(math.ceil(l ** (n * rng.random())))
        bias = rng.dirichlet(np.ones(l))
        words = streams.draw_strings(rng, bias, size, n)
        out.append(verify_converse(Codebook(n, words), P, M, rho))
    return out


def _delta_for(epsilon: float, lm: np.ndarray) -> float:
    # (1/n) log M^n(y) - L* = sum_b (Phat(b) - Q*(b)) (log M(b) - R_min) <= delta * spread
    spread = max(float(np.abs(lm).sum()), float((lm - lm.min()).sum()))
    if spread == 0:
        return 0.05
    return min(epsilon / (4 * spread), 0.05)


def achievability_trace(
    P,
    M: MassVector,
    rho: DistortionMatrix,
    D: float,
    epsilon: float,
    n_list: Sequence[int],
    seed: int,
    *,
    rule: RuleKind = RuleKind.TYPE_BALL,
    samples: int = 20_000,
    mode: str = "auto",
    threads: int = 1,
) -> list[CoverageReport]:
    """Build the extremal codebooks for each n and measure them.

    Q*, I*, L* come from the rate problem at a distortion slightly inside D.
    Each codebook has floor(exp(n (I* + eps/2))) words drawn from Q*^n
    conditioned on a type ball (or a per-letter mass cap), which pins every
    word's mass near exp(n L*). The per-n mass exponent is checked against
    R(D) + eps and a violation raises ConstructionError.
    """
    if not D > 0:
        raise ValueError("D must be > 0")
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    P = as_probability(P)
    target = solve_rate(P, M, rho, D).R
    backoff = D_BACKOFF
    inner = solve_rate(P, M, rho, D * (1 - backoff))
    while inner.R > target + epsilon / 8 and backoff > 1e-9:
        backoff /= 2
        inner = solve_rate(P, M, rho, D * (1 - backoff))
    q_star, i_star, l_star = inner.Q_opt, inner.I_star, inner.L_star
    lm = M.log_mass
    if rule is RuleKind.TYPE_BALL:
        delta = _delta_for(epsilon, lm)
        cond = ConditioningRule.type_ball(delta)
    elif rule is RuleKind.MASS_CAP:
        delta = math.nan
        cond = ConditioningRule.mass_cap(l_star + epsilon / 4)
    else:
        delta = math.nan
        cond = ConditioningRule.none()
    size_exponent = i_star + epsilon / 2

    reports = []
    for n in n_list:
        cb = sample_codebook(q_star, n, cond, size_exponent, seed, M=M)
        exact = mode == "exact" or (mode == "auto" and max(rho.shape) ** n <= EXACT_LIMIT)
        if exact:
            rep = coverage_exact(cb, P, rho, D, M)
        else:
            rep = coverage_mc(cb, P, rho, D, samples, seed, M=M, threads=threads)
        rep = CoverageReport(
            **{**rep.__dict__, "target_rate": target, "delta": delta, "seed": seed,
               "rejection_rate": 1.0 - cb.meta.acceptance_rate}
        )
        if cond.kind is not RuleKind.NONE and rep.mass_exponent > target + epsilon + 1e-12:
            raise ConstructionError(
                f"n={n}: mass exponent {rep.mass_exponent:.6f} exceeds R(D)+eps={target + epsilon:.6f}"
            )
        reports.append(rep)
    return reports


@dataclass(frozen=True)
class SteinRecord:
    n: int
    alpha_n: float
    log_beta_n_over_n: float
    slack: float

    @property
    def beta_n(self) -> float:
        return math.exp(self.n * self.log_beta_n_over_n)


STEIN_HEADER = ["n", "alpha_n", "log_beta_n_over_n", "slack"]


def _lil_slack(n: int, sigma: float, eta: float = 0.1) -> float:
    return (1 + eta) * sigma * math.sqrt(2 * max(math.log(math.log(n)), 1.0) / n) if n > 1 else math.inf


def stein_experiment(
    P1,
    P2,
    n_list: Sequence[int],
    seed: int | None = None,
    *,
    region: str = "relative-entropy",
) -> list[SteinRecord]:
    """Error probabilities of typical-set tests, computed exactly by type class.

    ``region="relative-entropy"`` accepts x when its per-letter log-likelihood
    ratio is within (1.1) sigma sqrt(2 log log n / n) of H(P1 || P2), sigma
    being the standard deviation of the single-letter ratio under P1; by the
    law of the iterated logarithm a P1 sample lands in it eventually.
    ``region="strong"`` is the strongly typical set |Phat - P1| <= n^(-1/4).
    The seed is unused (everything is exact) and kept for a uniform CLI.
    """
    P1, P2 = as_probability(P1), as_probability(P2)
    if P1.size != 2 or P2.size != 2:
        raise ValueError("stein_experiment handles binary alphabets")
    if np.any(P1.probs <= 0) or np.any(P2.probs <= 0):
        raise ValueError("P1 and P2 must be strictly positive")
    llr = np.log(P1.probs) - np.log(P2.probs)
    kl = float(P1.probs @ llr)
    sigma = math.sqrt(max(float(P1.probs @ (llr - kl) ** 2), 0.0))
    out = []
    for n in n_list:
        k = np.arange(n + 1)  # count of symbol 1
        log_binom = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
        l1 = log_binom + k * np.log(P1.probs[1]) + (n - k) * np.log(P1.probs[0])
        l2 = log_binom + k * np.log(P2.probs[1]) + (n - k) * np.log(P2.probs[0])
        if region == "relative-entropy":
            slack = _lil_slack(n, sigma)
            per_letter = (k * llr[1] + (n - k) * llr[0]) / n
            inside = np.abs(per_letter - kl) <= slack + 1e-12
        elif region == "strong":
            slack = n ** -0.25
            inside = np.abs(k / n - P1.probs[1]) <= slack + 1e-12
        else:
            raise ValueError(f"unknown region {region!r}")
        alpha = float(np.exp(logsumexp(l1[~inside]))) if (~inside).any() else 0.0
        log_beta = float(logsumexp(l2[inside])) if inside.any() else -math.inf
        out.append(SteinRecord(n, min(alpha, 1.0), log_beta / n, slack))
    return out


@dataclass(frozen=True)
class BlowupRecord:
    size: int
    prob: float
    coverage: float
    bound: float
    converse_holds: bool | None = None


@dataclass(frozen=True)
class BlowupReport:
    n: int
    D: float
    records: list[BlowupRecord] = field(repr=False)

    @property
    def holds(self) -> bool:
        return all(r.coverage >= r.bound - 1e-12 for r in self.records) and all(
            r.converse_holds is not False for r in self.records
        )

    @property
    def min_margin(self) -> float:
        return min(r.coverage - r.bound for r in self.records)


def blowup_inequality_check(
    P,
    n: int,
    D: float,
    trials: int,
    seed: int,
    *,
    with_converse: bool = False,
) -> BlowupReport:
    """P^n([C]_D) >= 1 - exp(-n D^2 / 2) / P^n(C) for random nonempty C on the binary cube.

    Each subset keeps every point independently with a log-uniform density in
    [1e-3, 1]. With ``with_converse`` the same sets are also checked against
    the converse bound P^n(C) >= exp(n R_C(E[rho_n(X, C)])).
    """
    P = as_probability(P)
    if P.size != 2:
        raise ValueError("the blowup inequality is checked on the binary cube")
    if 2**n > EXACT_LIMIT:
        raise ValueError("cube too large to enumerate")
    rho = DistortionMatrix.hamming(2)
    pn = product_table(P, n)
    cube = ((np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.int16)
    records = []
    for t in range(trials):
        rng = streams.stream(seed, streams.BLOWUP, n, t)
        density = 10.0 ** rng.uniform(-3, 0)
        keep = rng.random(2**n) < density
        if not keep.any():
            keep[rng.integers(2**n)] = True
        cb = Codebook(n, cube[keep])
        dist = distance_table(cb, rho)
        prob = float(pn[keep].sum())
        coverage = float(pn[dist <= n * D + DIST_TOL].sum())
        bound = 1.0 - math.exp(-n * D * D / 2) / prob
        conv = None
        if with_converse:
            conv = verify_converse(cb, P, MassVector.from_probability(P), rho).holds
        records.append(BlowupRecord(int(keep.sum()), prob, coverage, bound, conv))
    return BlowupReport(n, D, records)
