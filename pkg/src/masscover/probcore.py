"""Finite-alphabet probability types and information measures.

Everything is in nats. Arrays are stored as read-only float64 numpy arrays so
the objects can be shared freely between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import total_ordering
from typing import Sequence

import numpy as np

SIMPLEX_TOL = 1e-12
# below this the sum is left alone, which keeps construction idempotent
RENORM_TOL = 1e-14
MARGINAL_TOL = 1e-9
# probabilities below this are exact zeros for support checks
ZERO_PROB = 1e-300


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@total_ordering
class ExtendedReal:
    """A value in the extended half-line: a finite real or +inf.

    ``float(x)`` raises for +inf so that an infinite divergence can never leak
    into arithmetic as a large sentinel; callers branch on ``is_infinite``.
    """

    __slots__ = ("_value",)

    def __init__(self, value: float):
        value = float(value)
        if math.isnan(value) or value == -math.inf:
            raise ValueError(f"not an extended real in (-inf, +inf]: {value}")
        self._value = value

    @classmethod
    def infinity(cls) -> "ExtendedReal":
        return cls(math.inf)

    @property
    def is_infinite(self) -> bool:
        return self._value == math.inf

    @property
    def is_finite(self) -> bool:
        return not self.is_infinite

    def __float__(self) -> float:
        if self.is_infinite:
            raise ArithmeticError("+inf has no finite float value")
        return self._value

    def _other(self, other) -> float:
        if isinstance(other, ExtendedReal):
            return other._value
        if isinstance(other, (int, float, np.floating, np.integer, Fraction)):
            return float(other)
        return NotImplemented

    def __eq__(self, other) -> bool:
        o = self._other(other)
        if o is NotImplemented:
            return NotImplemented
        return self._value == o

    def __lt__(self, other) -> bool:
        o = self._other(other)
        if o is NotImplemented:
            return NotImplemented
        return self._value < o

    def __hash__(self) -> int:
        return hash(self._value)

    def __add__(self, other) -> "ExtendedReal":
        o = self._other(other)
        if o is NotImplemented:
            return NotImplemented
        return ExtendedReal(self._value + o)

    __radd__ = __add__

    def __repr__(self) -> str:
        return "ExtendedReal(+inf)" if self.is_infinite else f"ExtendedReal({self._value!r})"


@dataclass(frozen=True)
class Alphabet:
    size: int
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("alphabet size must be >= 1")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(self.size)))
        labels = tuple(str(s) for s in self.labels)
        if len(labels) != self.size:
            raise ValueError(f"expected {self.size} labels, got {len(labels)}")
        if len(set(labels)) != self.size:
            raise ValueError("alphabet labels must be distinct")
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True, eq=False)
class ProbabilityVector:
    """A probability mass function on ``0..size-1``.

    Inputs whose sum is within ``SIMPLEX_TOL`` of one are renormalized;
    anything further off is rejected.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size == 0:
            raise ValueError("empty probability vector")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError(f"probabilities must be finite and nonnegative: {p}")
        total = math.fsum(p)
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1 (tol {SIMPLEX_TOL})")
        if abs(total - 1.0) > RENORM_TOL:
            p = p / total
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def size(self) -> int:
        return self.probs.size

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.size)

    @property
    def log_probs(self) -> np.ndarray:
        # lazily cached; log 0 = -inf
        cached = self.__dict__.get("_log")
        if cached is None:
            with np.errstate(divide="ignore"):
                cached = _frozen(np.log(self.probs))
            object.__setattr__(self, "_log", cached)
        return cached

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > ZERO_PROB)

    @classmethod
    def uniform(cls, size: int) -> "ProbabilityVector":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def point_mass(cls, size: int, index: int) -> "ProbabilityVector":
        p = np.zeros(size)
        p[index] = 1.0
        return cls(p)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProbabilityVector):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"ProbabilityVector({self.probs.tolist()})"


@dataclass(frozen=True)
class SourceLaw:
    """A strictly positive source law together with the index remap that
    produced it from the raw input (``kept[i]`` is the original symbol)."""

    law: ProbabilityVector
    kept: np.ndarray
    original_size: int

    @property
    def dropped(self) -> list[int]:
        return sorted(set(range(self.original_size)) - set(self.kept.tolist()))


def validate_source(p: ProbabilityVector | Sequence[float]) -> SourceLaw:
    """Strip zero-probability symbols so every remaining entry is > 0."""
    p = as_probability(p)
    kept = p.support
    law = ProbabilityVector(p.probs[kept] / p.probs[kept].sum())
    return SourceLaw(law=law, kept=_frozen(kept, dtype=np.intp), original_size=p.size)


def as_probability(p) -> ProbabilityVector:
    return p if isinstance(p, ProbabilityVector) else ProbabilityVector(p)


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    counts: np.ndarray
    n: int

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64).reshape(-1)
        if np.any(c < 0) or int(c.sum()) != self.n:
            raise ValueError("counts must be nonnegative and sum to n")
        object.__setattr__(self, "counts", _frozen(c, dtype=np.int64))

    def fractions(self) -> list[Fraction]:
        return [Fraction(int(c), self.n) for c in self.counts]

    def to_probability(self) -> ProbabilityVector:
        return ProbabilityVector(self.counts / self.n)


def empirical_measure(y: Sequence[int] | np.ndarray, size: int) -> EmpiricalMeasure:
    """Exact symbol counts of a string over ``0..size-1``."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("empirical measure of an empty string")
    if np.any(y < 0) or np.any(y >= size):
        raise ValueError(f"symbol out of range 0..{size - 1}")
    return EmpiricalMeasure(np.bincount(y.astype(np.intp), minlength=size), int(y.size))


@dataclass(frozen=True, eq=False)
class MassVector:
    """Per-symbol mass M(y) > 0, kept as natural logs."""

    log_mass: np.ndarray

    def __post_init__(self):
        lm = np.array(self.log_mass, dtype=float).reshape(-1)
        if lm.size == 0 or not np.all(np.isfinite(lm)):
            raise ValueError("log-mass entries must be finite (M strictly positive and bounded)")
        object.__setattr__(self, "log_mass", _frozen(lm))

    @classmethod
    def from_mass(cls, m: Sequence[float]) -> "MassVector":
        m = np.asarray(m, dtype=float)
        if np.any(m <= 0):
            raise ValueError("mass must be strictly positive")
        return cls(np.log(m))

    @classmethod
    def ones(cls, size: int) -> "MassVector":
        return cls(np.zeros(size))

    @classmethod
    def from_probability(cls, p: ProbabilityVector) -> "MassVector":
        return cls.from_mass(p.probs)

    @property
    def size(self) -> int:
        return self.log_mass.size

    @property
    def mass(self) -> np.ndarray:
        return np.exp(self.log_mass)

    @property
    def r_min(self) -> float:
        return float(self.log_mass.min())

    def __eq__(self, other) -> bool:
        if not isinstance(other, MassVector):
            return NotImplemented
        return np.array_equal(self.log_mass, other.log_mass)


@dataclass(frozen=True, eq=False)
class DistortionMatrix:
    """Single-letter cost rho(x, y) on source x reproduction alphabets."""

    rho: np.ndarray

    def __post_init__(self):
        r = np.array(self.rho, dtype=float)
        if r.ndim != 2 or r.size == 0:
            raise ValueError("distortion must be a nonempty 2-d matrix")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("distortion entries must be finite and >= 0")
        object.__setattr__(self, "rho", _frozen(r))

    @classmethod
    def hamming(cls, size: int) -> "DistortionMatrix":
        return cls(1.0 - np.eye(size))

    @property
    def shape(self) -> tuple[int, int]:
        return self.rho.shape

    @property
    def rho_max(self) -> float:
        return float(self.rho.max())

    @property
    def is_normalized(self) -> bool:
        return bool(np.all(self.rho.min(axis=1) == 0.0))

    @property
    def is_hamming(self) -> bool:
        k, l = self.shape
        return k == l and np.array_equal(self.rho, 1.0 - np.eye(k))

    def row_offsets(self) -> np.ndarray:
        return self.rho.min(axis=1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DistortionMatrix):
            return NotImplemented
        return np.array_equal(self.rho, other.rho)


def normalize_distortion(rho: DistortionMatrix) -> DistortionMatrix:
    """Subtract each row's minimum so every row contains a zero."""
    return DistortionMatrix(rho.rho - rho.row_offsets()[:, None])


@dataclass(frozen=True, eq=False)
class Coupling:
    """Joint law W on A x Â whose row marginal must match the declared P."""

    w: np.ndarray
    p: ProbabilityVector | None = None
    row_marginal: np.ndarray = field(init=False, repr=False)
    col_marginal: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 2 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("coupling must be a finite nonnegative matrix")
        total = math.fsum(w.ravel())
        if abs(total - 1.0) > SIMPLEX_TOL * max(1, w.size):
            raise ValueError(f"coupling mass is {total!r}, not 1")
        w = w / total
        rows = w.sum(axis=1)
        if self.p is not None:
            p = as_probability(self.p)
            if p.size != rows.size or np.max(np.abs(rows - p.probs)) > MARGINAL_TOL:
                raise ValueError("coupling row marginal does not match P")
            object.__setattr__(self, "p", p)
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "row_marginal", _frozen(rows))
        object.__setattr__(self, "col_marginal", _frozen(w.sum(axis=0)))

    @classmethod
    def from_conditional(cls, p: ProbabilityVector, channel: np.ndarray) -> "Coupling":
        return cls(p.probs[:, None] * np.asarray(channel, dtype=float), p)

    @classmethod
    def product(cls, p: ProbabilityVector, q: ProbabilityVector) -> "Coupling":
        return cls(np.outer(p.probs, q.probs), p)

    @property
    def q(self) -> ProbabilityVector:
        return ProbabilityVector(self.col_marginal)

    def expected(self, cost: DistortionMatrix | np.ndarray) -> float:
        c = cost.rho if isinstance(cost, DistortionMatrix) else np.asarray(cost)
        return float(np.sum(self.w * c))


def relative_entropy(mu, nu) -> ExtendedReal:
    """H(mu || nu) in nats, with 0 log(0/q) = 0 and +inf off the support of nu."""
    m = np.asarray(mu.probs if isinstance(mu, ProbabilityVector) else mu, dtype=float).ravel()
    v = np.asarray(nu.probs if isinstance(nu, ProbabilityVector) else nu, dtype=float).ravel()
    if m.shape != v.shape:
        raise ValueError(f"dimension mismatch: {m.size} vs {v.size}")
    on = m > ZERO_PROB
    if np.any(v[on] <= ZERO_PROB):
        return ExtendedReal.infinity()
    terms = m[on] * (np.log(m[on]) - np.log(v[on]))
    # exact-equality inputs give exactly zero terms; clip roundoff below zero
    return ExtendedReal(max(math.fsum(terms), 0.0))


def mutual_information(w: Coupling) -> float:
    """I(X;Y) = H(W || W_X x W_Y)."""
    product = np.outer(w.row_marginal, w.col_marginal)
    # W << W_X x W_Y always holds, so the divergence is finite
    return float(relative_entropy(w.w, product))


def entropy(p) -> float:
    probs = np.asarray(p.probs if isinstance(p, ProbabilityVector) else p, dtype=float)
    on = probs > ZERO_PROB
    return float(-math.fsum(probs[on] * np.log(probs[on])))
