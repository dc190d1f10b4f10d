"""Mass-weighted rate function R(D; P, M) on finite alphabets.

R(D) = min over channels W(y|x) with E[rho(X, Y)] <= D of I(X; Y) + E[log M(Y)].

The solver is a Blahut-Arimoto style alternating minimization of the
Lagrangian at a fixed slope s, wrapped in a bisection on s that brackets the
requested distortion. The two bracketing couplings are then mixed so that the
returned coupling meets the distortion budget exactly; mutual information is
convex in the channel, so the mixture's objective is an upper bound on R(D)
that is tight to second order in the bracket width.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .probcore import (
    ZERO_PROB,
    Coupling,
    DistortionMatrix,
    ExtendedReal,
    MassVector,
    ProbabilityVector,
    as_probability,
    mutual_information,
    validate_source,
)

log = logging.getLogger(__name__)

MAX_ITER = 10_000
OBJECTIVE_TOL = 1e-12
D_TOL = 1e-6
S_START = 64.0
S_CAP = 2.0**20
Q_FLOOR = 1e-300
GAP_REPORT = 1e-3
# D(s) from iterates stopped at an objective change of 1e-12 is only good to
# ~1e-7 near critical slopes; larger reversals indicate a genuine failure
MONOTONE_TOL = 1e-5


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, s: float, delta: float, iterations: int):
        super().__init__(
            f"alternating minimization at s={s:g} did not converge in {iterations} "
            f"iterations (last objective delta {delta:.3e})"
        )
        self.s = s
        self.delta = delta


class BisectionError(SolverError):
    pass


@dataclass(frozen=True, eq=False)
class RatePoint:
    D: float
    R: float
    slope: float
    Q_opt: ProbabilityVector
    W_opt: Coupling
    I_star: float
    L_star: float
    achieved_D: float = math.nan  # E_W[rho]; below D on the plateau
    gap: float = 0.0
    iterations: int = 0
    # bisection steps that hit the iteration cap; their couplings are still feasible
    unconverged: int = 0

    def csv_row(self) -> list[float]:
        return [self.D, self.R, self.slope, self.I_star, self.L_star]


CSV_HEADER = ["D", "R_nats", "slope", "I_star", "L_star"]


class RminDmax(NamedTuple):
    r_min: float
    d_max: float
    argmin_set: list[int]


@dataclass(frozen=True)
class _Problem:
    """Validated solver input: strictly positive P, log-mass, normalized rho rows."""

    p: np.ndarray
    lm: np.ndarray
    rho: np.ndarray
    kept: np.ndarray
    source: ProbabilityVector


def _prepare(P, M: MassVector, rho: DistortionMatrix) -> _Problem:
    src = validate_source(as_probability(P))
    if rho.shape[0] != src.original_size:
        raise ValueError(f"rho has {rho.shape[0]} rows but P has {src.original_size} symbols")
    if M.size != rho.shape[1]:
        raise ValueError(f"M has {M.size} entries but rho has {rho.shape[1]} columns")
    r = rho.rho[src.kept]
    if not np.all(r.min(axis=1) == 0.0):
        raise ValueError("rho rows must each contain a zero; apply normalize_distortion first")
    return _Problem(src.law.probs, M.log_mass, r, src.kept, src.law)


def _coupling_on_original(prob: _Problem, channel: np.ndarray, original: ProbabilityVector) -> Coupling:
    w = np.zeros((original.size, channel.shape[1]))
    w[prob.kept] = prob.p[:, None] * channel
    return Coupling(w, original)


@dataclass
class _Trace:
    """One converged alternating-minimization run at slope s."""

    s: float
    channel: np.ndarray
    q: np.ndarray
    D: float
    I: float
    L: float
    iterations: int
    converged: bool = True

    @property
    def R(self) -> float:
        return self.I + self.L


def _mutual_information(p: np.ndarray, channel: np.ndarray, q: np.ndarray) -> float:
    joint = p[:, None] * channel
    on = joint > ZERO_PROB
    ratio = channel[on] / np.broadcast_to(q[None, :], channel.shape)[on]
    return max(math.fsum(joint[on] * np.log(ratio)), 0.0)


def _alternate(prob: _Problem, s: float, q0: np.ndarray | None = None, strict: bool = True) -> _Trace:
    p, lm, rho = prob.p, prob.lm, prob.rho
    log_kernel = -lm[None, :] - s * rho
    if q0 is None:
        q = np.full(lm.size, 1.0 / lm.size)
    else:
        q = np.maximum(np.asarray(q0, dtype=float), Q_FLOOR)
        q /= q.sum()
    log_q = np.log(q)
    prev = math.inf
    delta = math.inf
    for it in range(1, MAX_ITER + 1):
        a = log_q[None, :] + log_kernel
        top = a.max(axis=1)
        log_z = top + np.log(np.exp(a - top[:, None]).sum(axis=1))
        objective = -float(p @ log_z)
        channel = np.exp(a - log_z[:, None])
        q = p @ channel
        delta = prev - objective
        assert delta > -1e-9 * max(1.0, abs(objective)), "objective increased"
        if abs(delta) < OBJECTIVE_TOL:
            break
        prev = objective
        q = np.maximum(q, Q_FLOOR)
        q /= q.sum()
        log_q = np.log(q)
    else:
        if strict:
            raise ConvergenceError(s, delta, MAX_ITER)
        log.debug("slope %g: stopped after %d iterations, objective delta %.3e", s, MAX_ITER, delta)
    D = float(np.sum(p[:, None] * channel * rho))
    I = _mutual_information(p, channel, q)
    L = float(q @ lm)
    return _Trace(s, channel, q, D, I, L, it, converged=abs(delta) < OBJECTIVE_TOL)


def solve_lagrangian(
    P: ProbabilityVector | Sequence[float],
    M: MassVector,
    rho: DistortionMatrix,
    s: float,
) -> RatePoint:
    """Trace the point of the rate curve with supporting slope ``-s``.

    Alternates W(y|x) proportional to Q(y) exp(-log M(y) - s rho(x, y)) with
    Q <- column marginal of W, starting from uniform Q, until the Lagrangian
    changes by less than 1e-12.
    """
    if not (s >= 0 and math.isfinite(s)):
        raise ValueError(f"slope must be finite and >= 0, got {s}")
    P = as_probability(P)
    prob = _prepare(P, M, rho)
    tr = _alternate(prob, s)
    return _point_from_channel(prob, P, tr.channel, tr.D, tr.s, iterations=tr.iterations)


def _point_from_channel(
    prob: _Problem,
    original: ProbabilityVector,
    channel: np.ndarray,
    D: float,
    s: float,
    gap: float = 0.0,
    iterations: int = 0,
) -> RatePoint:
    w = _coupling_on_original(prob, channel, original)
    q = w.q
    I = mutual_information(w)
    L = float(q.probs @ prob.lm)
    achieved = float(np.sum(prob.p[:, None] * channel * prob.rho))
    return RatePoint(
        D=D, R=I + L, slope=s, Q_opt=q, W_opt=w, I_star=I, L_star=L,
        achieved_D=achieved, gap=gap, iterations=iterations,
    )


def rmin_dmax(P, M: MassVector, rho: DistortionMatrix) -> RminDmax:
    """R_min = min_y log M(y) and the smallest E_P[rho(X, y)] among its achievers."""
    prob = _prepare(as_probability(P), M, rho)
    r_min = float(prob.lm.min())
    ties = np.flatnonzero(prob.lm - r_min <= 1e-12 * max(1.0, abs(r_min)))
    costs = prob.p @ prob.rho[:, ties]
    return RminDmax(r_min, float(costs.min()), [int(t) for t in ties])


def solve_rate(
    P: ProbabilityVector | Sequence[float],
    M: MassVector,
    rho: DistortionMatrix,
    D: float,
) -> RatePoint:
    """R(D; P, M) with its optimal coupling and decomposition R = I* + L*."""
    if not D >= 0:
        raise ValueError(f"D must be >= 0, got {D}")
    P = as_probability(P)
    prob = _prepare(P, M, rho)
    rho_max = float(prob.rho.max())
    if D > rho_max:
        log.warning("D=%g exceeds rho_max=%g; clamping", D, rho_max)
        D = rho_max
    r_min, d_max, _ = rmin_dmax(P, M, rho)
    if D >= d_max:
        return _plateau(prob, P, D)

    # s = 0 is solved exactly by a point mass on the cheapest minimizer of log M
    lo = _point_mass_trace(prob)
    s_hi = S_START
    hi = _alternate(prob, s_hi, strict=False)
    while hi.D > D:
        if s_hi >= S_CAP:
            raise BisectionError(f"D(s) = {hi.D:.3e} > {D:.3e} at the slope cap {S_CAP:g}")
        lo = hi
        s_hi *= 2
        hi = _alternate(prob, s_hi, strict=False)

    traces = [lo, hi]
    gap = 0.0
    while lo.D - hi.D > D_TOL:
        mid_s = 0.5 * (lo.s + hi.s)
        if hi.s - lo.s <= 1e-13 * hi.s or mid_s in (lo.s, hi.s):
            # D(s) jumps here: R is affine between the two traced points
            gap = lo.D - hi.D
            if gap > GAP_REPORT:
                log.info("D(s) jumps by %.3e at s=%g (corner of R)", gap, hi.s)
            break
        mid = _alternate(prob, mid_s, q0=0.5 * (lo.q + hi.q), strict=False)
        traces.append(mid)
        if mid.D > lo.D + MONOTONE_TOL or mid.D < hi.D - MONOTONE_TOL:
            # a critical slope: the Lagrangian is flat along an affine piece of R
            # and the iterate's D depends on where it stalled, so finish from the
            # best bracketing pair of feasible channels traced so far
            log.debug("D(s) reverses near s=%g; using the best traced bracket", mid_s)
            lo, hi = _best_bracket(prob, traces, D)
            break
        if mid.D > D:
            lo = mid
        else:
            hi = mid
    pt = _finish(prob, P, D, lo, hi, gap=gap if gap > GAP_REPORT else 0.0,
                 iterations=sum(t.iterations for t in traces))
    return replace(pt, unconverged=sum(not t.converged for t in traces))


def _plateau(prob: _Problem, original: ProbabilityVector, D: float) -> RatePoint:
    tr = _point_mass_trace(prob)
    r_min = float(prob.lm.min())
    w = _coupling_on_original(prob, tr.channel, original)
    # exact plateau value: a point-mass reproduction carries zero information
    return RatePoint(
        D=D, R=r_min, slope=0.0, Q_opt=w.q, W_opt=w, I_star=0.0, L_star=r_min, achieved_D=tr.D,
    )


def _point_mass_trace(prob: _Problem) -> _Trace:
    r_min = float(prob.lm.min())
    ties = np.flatnonzero(prob.lm - r_min <= 1e-12 * max(1.0, abs(r_min)))
    costs = prob.p @ prob.rho[:, ties]
    y = int(ties[int(np.argmin(costs))])
    channel = np.zeros((prob.p.size, prob.lm.size))
    channel[:, y] = 1.0
    return _Trace(0.0, channel, channel[0].copy(), float(costs.min()), 0.0, float(prob.lm[y]), 0)


def _mixture_rate(prob: _Problem, lo: _Trace, hi: _Trace, D: float) -> float:
    lam = (D - hi.D) / (lo.D - hi.D) if lo.D > hi.D else 0.0
    channel = lam * lo.channel + (1.0 - lam) * hi.channel
    q = prob.p @ channel
    return _mutual_information(prob.p, channel, q) + float(q @ prob.lm)


def _best_bracket(prob: _Problem, traces: list[_Trace], D: float) -> tuple[_Trace, _Trace]:
    above = [t for t in traces if t.D >= D]
    below = [t for t in traces if t.D <= D]
    return min(((a, b) for a in above for b in below), key=lambda ab: _mixture_rate(prob, ab[0], ab[1], D))


def _finish(
    prob: _Problem,
    original: ProbabilityVector,
    D: float,
    lo: _Trace,
    hi: _Trace,
    gap: float = 0.0,
    iterations: int = 0,
) -> RatePoint:
    # mix the bracketing channels so that E[rho] = D exactly
    if lo.D - hi.D > 0 and hi.D < D:
        lam = min(max((D - hi.D) / (lo.D - hi.D), 0.0), 1.0)
    else:
        lam = 0.0
    channel = lam * lo.channel + (1.0 - lam) * hi.channel
    s = lam * lo.s + (1.0 - lam) * hi.s
    return _point_from_channel(prob, original, channel, D, s, gap=gap, iterations=iterations)


@dataclass(frozen=True)
class RateCurve:
    points: list[RatePoint]
    r_min: float
    d_max: float

    @property
    def D(self) -> np.ndarray:
        return np.array([p.D for p in self.points])

    @property
    def R(self) -> np.ndarray:
        return np.array([p.R for p in self.points])

    def violations(self, tol: float = 1e-8) -> list[str]:
        """Monotonicity, convexity and plateau checks along the grid."""
        D, R = self.D, self.R
        out = []
        for i in range(1, len(D)):
            if R[i] > R[i - 1] + tol:
                out.append(f"R increases between D={D[i - 1]:g} and D={D[i]:g}")
        for i in range(1, len(D) - 1):
            t = (D[i] - D[i - 1]) / (D[i + 1] - D[i - 1])
            chord = (1 - t) * R[i - 1] + t * R[i + 1]
            if R[i] > chord + tol:
                out.append(f"convexity fails at D={D[i]:g} by {R[i] - chord:.3e}")
        for d, r in zip(D, R):
            if d >= self.d_max and r != self.r_min:
                out.append(f"plateau value at D={d:g} is {r!r}, expected {self.r_min!r}")
            if r < self.r_min - tol:
                out.append(f"R below R_min at D={d:g}")
        return out

    def csv_rows(self) -> list[list[float]]:
        return [p.csv_row() for p in self.points]


def rate_curve(
    P,
    M: MassVector,
    rho: DistortionMatrix,
    grid: Sequence[float],
    threads: int = 1,
) -> RateCurve:
    """Solve R(D) at each grid point; results are placed by index."""
    grid = [float(d) for d in grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be sorted ascending")
    if grid and (grid[0] < 0 or grid[-1] > rho.rho_max + 1e-12):
        raise ValueError(f"grid must lie within [0, rho_max={rho.rho_max:g}]")
    r_min, d_max, _ = rmin_dmax(P, M, rho)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(lambda d: solve_rate(P, M, rho, d), grid))
    else:
        points = [solve_rate(P, M, rho, d) for d in grid]
    curve = RateCurve(points, r_min, d_max)
    bad = curve.violations()
    if bad:
        raise SolverError("rate curve invariants violated: " + "; ".join(bad))
    return curve


def shannon_rdf(P, rho: DistortionMatrix, D: float) -> RatePoint:
    """Shannon's rate-distortion function: the M = 1 special case."""
    return solve_rate(P, MassVector.ones(rho.shape[1]), rho, D)


def concentration_exponent(P, rho: DistortionMatrix, D: float) -> RatePoint:
    """R_C(D) = R(D; P, P), the converse exponent for blowup concentration."""
    P = as_probability(P)
    if rho.shape[1] != P.size:
        raise ValueError("concentration exponent needs M = P on the reproduction alphabet")
    if np.any(P.probs <= 0):
        raise ValueError("M = P requires P strictly positive")
    return solve_rate(P, MassVector.from_probability(P), rho, D)


def stein_exponent(P1, P2, alpha: float) -> float:
    """Error exponent eps(alpha) = -R(alpha; P1, P2) under Hamming distortion."""
    P1, P2 = as_probability(P1), as_probability(P2)
    if P1.size != P2.size:
        raise ValueError("P1 and P2 must share an alphabet")
    if np.any(P1.probs <= 0) or np.any(P2.probs <= 0):
        raise ValueError("P1 and P2 must be strictly positive")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    pt = solve_rate(P1, MassVector.from_probability(P2), DistortionMatrix.hamming(P1.size), alpha)
    return -pt.R


class BruteForceResult(NamedTuple):
    value: ExtendedReal
    error_bound: float
    slack: float
    grid_points: int


BRUTE_FORCE_MAX_PARAMS = 4
BRUTE_FORCE_MAX_POINTS = 60_000_000


def _simplex_grid(k: int, steps: int) -> np.ndarray:
    """All points of the k-simplex with coordinates in multiples of 1/steps."""
    if k == 1:
        return np.ones((1, 1))
    cuts = np.array(
        [c for c in _compositions(steps, k)], dtype=float
    )
    return cuts / steps


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _binary_entropy(t: float) -> float:
    if t <= 0:
        return 0.0
    if t >= 1:
        return 0.0
    return -t * math.log(t) - (1 - t) * math.log(1 - t)


def brute_force_rate(P, M: MassVector, rho: DistortionMatrix, D: float, grid_steps: int) -> BruteForceResult:
    """Exhaustive grid search over channels; an oracle for tiny instances.

    Every conditional row W(.|x) ranges over the simplex grid with step
    1/grid_steps. Channels whose distortion exceeds D by more than the
    rounding slack are discarded, so the rounded optimum is always admitted.
    The reported error bound adds a continuity modulus of I + E log M over one
    grid cell to the change of the grid minimum across one slack width.
    """
    P = as_probability(P)
    prob = _prepare(P, M, rho)
    k, l = prob.rho.shape
    if k * (l - 1) > BRUTE_FORCE_MAX_PARAMS:
        raise ValueError(f"instance too large for brute force: {k * (l - 1)} free parameters")
    rows = _simplex_grid(l, grid_steps)
    total = rows.shape[0] ** k
    if total > BRUTE_FORCE_MAX_POINTS:
        raise ValueError(f"instance too large for brute force: {total} grid points")

    h = 1.0 / grid_steps
    tv = (l - 1) * h / 2
    slack = float(prob.rho.max()) * tv
    p, lm, r = prob.p, prob.lm, prob.rho

    # per-row quantities for every grid row: distortion, -entropy, mixture weights
    row_cost = rows @ r.T  # (G, k): E[rho | x] for each candidate row
    with np.errstate(divide="ignore", invalid="ignore"):
        row_negent = np.where(rows > 0, rows * np.log(rows), 0.0).sum(axis=1)

    best = np.full(3, np.inf)  # minima at D + slack, D - slack, D exactly
    thresholds = np.array([D + slack, max(D - slack, 0.0), D])
    idx = np.indices((rows.shape[0],) * k).reshape(k, -1).T if total <= 4_000_000 else None
    chunks = [idx] if idx is not None else _index_chunks(rows.shape[0], k)
    for block in chunks:
        q = np.zeros((block.shape[0], l))
        dist = np.zeros(block.shape[0])
        cond = np.zeros(block.shape[0])
        for x in range(k):
            sel = block[:, x]
            q += p[x] * rows[sel]
            dist += p[x] * row_cost[sel, x]
            cond += p[x] * row_negent[sel]
        with np.errstate(divide="ignore", invalid="ignore"):
            q_negent = np.where(q > 0, q * np.log(q), 0.0).sum(axis=1)
        obj = cond - q_negent + q @ lm
        for j, thr in enumerate(thresholds):
            ok = dist <= thr + 1e-12
            if ok.any():
                best[j] = min(best[j], float(obj[ok].min()))
    if not math.isfinite(best[0]):
        return BruteForceResult(ExtendedReal.infinity(), math.inf, slack, total)
    modulus = 2 * (tv * math.log(max(l - 1, 1)) + _binary_entropy(min(tv, 0.5))) + tv * float(np.ptp(lm))
    drift = best[1] - best[0] if math.isfinite(best[1]) else 0.0
    return BruteForceResult(ExtendedReal(best[0]), modulus + max(drift, 0.0), slack, total)


def _index_chunks(g: int, k: int, chunk_rows: int = 2_000_000):
    # iterate the product grid in blocks over the first coordinate
    per_first = g ** (k - 1)
    step = max(1, chunk_rows // per_first)
    rest = np.indices((g,) * (k - 1)).reshape(k - 1, -1).T
    for start in range(0, g, step):
        firsts = np.arange(start, min(start + step, g))
        yield np.column_stack([np.repeat(firsts, rest.shape[0]), np.tile(rest, (firsts.size, 1))])
