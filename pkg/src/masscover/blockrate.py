"""Per-letter block rates R_k(D)/k for finite-state Markov sources.

A k-block is indexed row-major over symbol tuples: block (x_1, ..., x_k)
has index sum_i x_i |A|^(k-i). The same convention holds for the
reproduction alphabet, so block marginals, lifted masses and lifted
distortions line up entry for entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .probcore import SIMPLEX_TOL, DistortionMatrix, MassVector, ProbabilityVector
from .ratesolver import solve_rate

MAX_BLOCK_SYMBOLS = 2**16


@dataclass(frozen=True, eq=False)
class MarkovSource:
    transition: np.ndarray
    initial: ProbabilityVector | None = None
    stationary: bool = True

    def __post_init__(self):
        t = np.array(self.transition, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1) > SIMPLEX_TOL):
            raise ValueError("transition rows must be probability vectors")
        t.setflags(write=False)
        object.__setattr__(self, "transition", t)
        if self.initial is None:
            object.__setattr__(self, "initial", stationary_law(t))
        elif self.stationary:
            pi = self.initial.probs
            if np.max(np.abs(pi @ t - pi)) > 1e-10:
                raise ValueError("initial law is not stationary for the transition matrix")

    @property
    def size(self) -> int:
        return self.transition.shape[0]

    @classmethod
    def iid(cls, p: ProbabilityVector) -> "MarkovSource":
        return cls(np.tile(p.probs, (p.size, 1)), p)


def stationary_law(transition: np.ndarray) -> ProbabilityVector:
    """Left Perron vector: solve pi T = pi with sum(pi) = 1."""
    k = transition.shape[0]
    a = np.vstack([transition.T - np.eye(k), np.ones(k)])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return ProbabilityVector(pi / pi.sum())


def block_marginal(src: MarkovSource, k: int) -> ProbabilityVector:
    """Law of (X_1, ..., X_k) by the chain rule, row-major over A^k."""
    if k < 1:
        raise ValueError("block length must be >= 1")
    if src.size**k > MAX_BLOCK_SYMBOLS:
        raise ValueError(f"{src.size}^{k} block symbols exceed the cap {MAX_BLOCK_SYMBOLS}")
    # joint[..., a] for the last symbol a; multiply in the next transition each step
    joint = src.initial.probs.copy()
    for _ in range(k - 1):
        joint = (joint.reshape(-1, src.size)[:, :, None] * src.transition[None, :, :]).reshape(-1)
    return ProbabilityVector(joint)


def lift_distortion(rho, k: int) -> np.ndarray:
    """rho_k(x, y) = (1/k) sum_i rho(x_i, y_i) on A^k x Â^k.

    Works on any numpy dtype, including object arrays of Fractions.
    """
    r = np.asarray(rho.rho if isinstance(rho, DistortionMatrix) else rho)
    a, b = r.shape
    total = r
    for _ in range(k - 1):
        total = (total[:, None, :, None] + r[None, :, None, :]).reshape(total.shape[0] * a, total.shape[1] * b)
    return total / k


def lift_mass(M: MassVector, k: int) -> MassVector:
    """log M^k(y) = sum_i log M(y_i)."""
    lm = M.log_mass
    total = lm
    for _ in range(k - 1):
        total = (total[:, None] + lm[None, :]).reshape(-1)
    return MassVector(total)


@dataclass(frozen=True)
class BlockRatePoint:
    k: int
    per_letter_rate: float
    D: float

    @property
    def block_rate(self) -> float:
        return self.k * self.per_letter_rate

    def csv_row(self) -> list:
        return [self.k, self.per_letter_rate, self.D]


BLOCK_HEADER = ["k", "per_letter_rate", "D"]


def block_rate(src: MarkovSource, M: MassVector, rho: DistortionMatrix, D: float, k: int) -> BlockRatePoint:
    """R_k(D)/k from the rate problem on the k-block super-alphabet.

    These are upper bounds on the per-letter limit for stationary sources,
    which is approached from above as k grows.
    """
    if rho.shape[1] ** k > MAX_BLOCK_SYMBOLS:
        raise ValueError("reproduction block alphabet too large")
    pk = block_marginal(src, k)
    pt = solve_rate(pk, lift_mass(M, k), DistortionMatrix(lift_distortion(rho, k)), D)
    return BlockRatePoint(k, pt.R / k, D)


@dataclass(frozen=True)
class SubadditivityReport:
    D: float
    block_rates: dict[int, float]  # k -> R_k(D), not divided by k
    checks: list[tuple[int, int, float]]  # (m, n, R_m + R_n - R_{m+n})
    tol: float

    @property
    def holds(self) -> bool:
        return all(margin >= -self.tol for _, _, margin in self.checks)

    def per_letter(self) -> dict[int, float]:
        return {k: r / k for k, r in sorted(self.block_rates.items())}


def subadditivity_check(
    src: MarkovSource,
    M: MassVector,
    rho: DistortionMatrix,
    D: float,
    pairs: Sequence[tuple[int, int]],
    tol: float = 1e-5,
) -> SubadditivityReport:
    """Check R_{m+n}(D) <= R_m(D) + R_n(D) for each requested pair."""
    needed = sorted({k for m, n in pairs for k in (m, n, m + n)})
    rates = {k: block_rate(src, M, rho, D, k).block_rate for k in needed}
    checks = [(m, n, rates[m] + rates[n] - rates[m + n]) for m, n in pairs]
    return SubadditivityReport(D, rates, checks, tol)
