"""``masscover`` command-line front end.

Exit codes: 0 when the run finished and every asserted inequality held, 1 when
an assertion failed, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import sys
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, output, streams
from .blockrate import BLOCK_HEADER, MarkovSource, block_rate, subadditivity_check
from .covering import (
    STEIN_HEADER,
    TRACE_HEADER,
    ConstructionError,
    RejectionBudgetError,
    RuleKind,
    achievability_trace,
    random_converse_trials,
    stein_experiment,
)
from .modelfile import Model, ModelError, load_model
from .probcore import DistortionMatrix, MassVector, ProbabilityVector, relative_entropy
from .ratesolver import CSV_HEADER, SolverError, rate_curve, solve_rate, stein_exponent

log = logging.getLogger("masscover")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
FIGURE1_P = (0.6, 0.4)
FIGURE1_GRID = "0:0.01:1"
CONVERSE_HEADER = ["trial", "n", "size", "distinct", "D", "lhs", "rhs", "holds"]
LN2 = math.log(2.0)


class UsageError(ValueError):
    pass


def parse_grid(text: str) -> list[float]:
    """``start:step:stop`` on exact decimals, endpoints included."""
    try:
        a, c, b = (Decimal(t) for t in text.split(":"))
    except (ValueError, InvalidOperation):
        raise UsageError(f"grid must be start:step:stop, got {text!r}") from None
    if c <= 0 or b < a:
        raise UsageError("grid needs step > 0 and stop >= start")
    count = int((b - a) / c) + 1
    if count > 100_000:
        raise UsageError("grid has more than 100000 points")
    return [float(a + i * c) for i in range(count)]


def parse_ints(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise UsageError("list entries must be positive integers")
    return vals


def parse_probs(text: str) -> ProbabilityVector:
    try:
        return ProbabilityVector([float(t) for t in text.replace(",", " ").split()])
    except ValueError as exc:
        raise UsageError(f"bad probability vector {text!r}: {exc}") from None


def _seed(text: str) -> int:
    return int(text, 0)


def _add_common(p: argparse.ArgumentParser, *, model: bool = True, required_model: bool = True):
    if model:
        p.add_argument("--input", required=required_model, help="model file")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--seed", type=_seed, default=streams.DEFAULT_SEED, help="RNG seed (default 0x5EED)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--bits", action="store_true", help="print rates in bits (files stay in nats)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="masscover", description="Mass-weighted covering rates.")
    parser.add_argument("--version", action="version", version=f"masscover {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rate", help="R(D) at one distortion level")
    _add_common(p)
    p.add_argument("--D", type=float, required=True)

    p = sub.add_parser("curve", help="R(D) on a grid")
    _add_common(p)
    p.add_argument("--grid", required=True, help="start:step:stop")
    p.add_argument("--svg", help="SVG plot path")

    p = sub.add_parser("stein", help="Stein exponent and typical-set test errors")
    _add_common(p, model=False)
    p.add_argument("--p1", required=True)
    p.add_argument("--p2", required=True)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--n", help="comma-separated block lengths for the exact experiment")
    p.add_argument("--region", choices=["relative-entropy", "strong"], default="relative-entropy")

    p = sub.add_parser("cover", help="achievability trace of extremal codebooks")
    _add_common(p)
    p.add_argument("--D", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--n", required=True)
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--rule", choices=[r.value for r in RuleKind], default=RuleKind.TYPE_BALL.value)
    p.add_argument("--mode", choices=["auto", "exact", "mc"], default="auto")

    p = sub.add_parser("converse", help="finite-n converse on random codebooks")
    _add_common(p, required_model=False)
    p.add_argument("--n", required=True)
    p.add_argument("--trials", type=int, default=1000)

    p = sub.add_parser("block", help="per-letter block rates of a Markov source")
    _add_common(p)
    p.add_argument("--D", type=float, required=True)
    p.add_argument("--k", required=True)

    p = sub.add_parser("figure1", help="concentration curve for P(1)=0.4")
    _add_common(p, model=False)
    p.add_argument("--grid", default=FIGURE1_GRID)
    p.add_argument("--svg", default="figure1.svg")
    p.set_defaults(out="figure1.csv")
    return parser


def _config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    if getattr(args, "input", None):
        try:
            cfg["input_sha256"] = hashlib.sha256(Path(args.input).read_bytes()).hexdigest()
        except OSError:
            pass
    cfg["rng"] = streams.RNG_ALGORITHM
    cfg["version"] = __version__
    return cfg


def _validate(args: argparse.Namespace) -> None:
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    if not 0 <= args.seed < 2**64:
        raise UsageError("--seed must fit in 64 unsigned bits")
    d = getattr(args, "D", None)
    if d is not None and not (math.isfinite(d) and d >= 0):
        raise UsageError("--D must be a finite number >= 0")
    if args.command == "cover":
        if not args.D > 0:
            raise UsageError("cover needs --D > 0")
        if not (math.isfinite(args.eps) and args.eps > 0):
            raise UsageError("--eps must be > 0")
        if args.samples < 1:
            raise UsageError("--samples must be >= 1")
    if args.command == "converse" and args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.command == "stein" and not 0 <= args.alpha <= 1:
        raise UsageError("--alpha must lie in [0, 1]")


def _show(rate: float, bits: bool) -> str:
    return f"{rate / LN2:.6f} bits" if bits else f"{rate:.6f} nats"


class _Run:
    def __init__(self, args):
        self.args = args
        self.csv_path: str | None = None
        self.summary: dict = {}

    def csv(self, header, rows):
        if self.args.out:
            output.write_csv(self.args.out, header, rows)
            self.csv_path = str(self.args.out)


def _load(args) -> Model:
    model = load_model(args.input)
    log.info("model: |A|=%d, |B|=%d", model.P.size, model.M.size)
    return model


def cmd_rate(run: _Run) -> int:
    a = run.args
    m = _load(a)
    pt = solve_rate(m.P, m.M, m.rho, a.D)
    print(f"R({a.D:g}) = {_show(pt.R, a.bits)}  (I* = {_show(pt.I_star, a.bits)}, "
          f"L* = {_show(pt.L_star, a.bits)}, slope = {pt.slope:.6g})")
    run.csv(CSV_HEADER, [pt.csv_row()])
    run.summary = {"R_nats": pt.R, "I_star": pt.I_star, "L_star": pt.L_star}
    return EXIT_OK


def _curve(run: _Run, P, M, rho, grid, title: str) -> int:
    a = run.args
    try:
        curve = rate_curve(P, M, rho, grid, threads=a.threads)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    run.csv(CSV_HEADER, curve.csv_rows())
    if a.svg:
        ys = curve.R / LN2 if a.bits else curve.R
        unit = "bits" if a.bits else "nats"
        output.write_atomic(a.svg, output.svg_plot(curve.D.tolist(), ys.tolist(), ylabel=f"R ({unit})", title=title))
    print(f"{len(grid)} points; R_min = {_show(curve.r_min, a.bits)}, D_max = {curve.d_max:.6g}")
    run.summary = {"points": len(grid), "r_min": curve.r_min, "d_max": curve.d_max,
                   "R_first": float(curve.R[0]), "R_last": float(curve.R[-1])}
    return EXIT_OK


def cmd_curve(run: _Run) -> int:
    m = _load(run.args)
    return _curve(run, m.P, m.M, m.rho, parse_grid(run.args.grid), "R(D)")


def cmd_figure1(run: _Run) -> int:
    P = ProbabilityVector(FIGURE1_P)
    grid = parse_grid(run.args.grid)
    code = _curve(run, P, MassVector.from_probability(P), DistortionMatrix.hamming(2), grid,
                  "concentration exponent, P(1) = 0.4")
    if code == EXIT_OK:
        print(f"wrote {run.args.out}" + (f" and {run.args.svg}" if run.args.svg else ""))
    return code


def cmd_stein(run: _Run) -> int:
    a = run.args
    P1, P2 = parse_probs(a.p1), parse_probs(a.p2)
    if P1.size != P2.size:
        raise UsageError("--p1 and --p2 must have the same length")
    if np.any(P1.probs <= 0) or np.any(P2.probs <= 0):
        raise UsageError("--p1 and --p2 must be strictly positive")
    exponent = stein_exponent(P1, P2, a.alpha)
    kl = float(relative_entropy(P1, P2))
    print(f"exponent(alpha={a.alpha:g}) = {_show(exponent, a.bits)}; H(P1||P2) = {_show(kl, a.bits)}")
    run.summary = {"exponent": exponent, "relative_entropy": kl}
    if a.n:
        if P1.size != 2:
            raise UsageError("the --n experiment handles binary alphabets")
        records = stein_experiment(P1, P2, parse_ints(a.n), region=a.region)
        for r in records:
            print(f"n={r.n}: alpha_n={r.alpha_n:.6g}  (1/n) log beta_n={r.log_beta_n_over_n:.6f}")
        run.csv(STEIN_HEADER, [[r.n, r.alpha_n, r.log_beta_n_over_n, r.slack] for r in records])
        run.summary["last"] = {"n": records[-1].n, "alpha_n": records[-1].alpha_n,
                               "log_beta_n_over_n": records[-1].log_beta_n_over_n}
    return EXIT_OK


def cmd_cover(run: _Run) -> int:
    a = run.args
    m = _load(a)
    try:
        reports = achievability_trace(
            m.P, m.M, m.rho, a.D, a.eps, parse_ints(a.n), a.seed,
            rule=RuleKind(a.rule), samples=a.samples, mode=a.mode, threads=a.threads,
        )
    except ConstructionError as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except RejectionBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for r in reports:
        print(f"n={r.n}: coverage={r.coverage:.4f} +- {r.coverage_ci:.4f} ({r.mode.value}, {r.codebook_size} words), "
              f"mass exponent={_show(r.mass_exponent, a.bits)} <= {_show(r.target_rate + a.eps, a.bits)}")
    run.csv(TRACE_HEADER, [r.csv_row() for r in reports])
    run.summary = {"coverage": [r.coverage for r in reports], "target_rate": reports[0].target_rate}
    return EXIT_OK


def cmd_converse(run: _Run) -> int:
    a = run.args
    model = None
    if a.input:
        m = _load(a)
        model = (m.P, m.M, m.rho)
    results = random_converse_trials(a.trials, parse_ints(a.n), a.seed, model=model)
    failed = [i for i, r in enumerate(results) if not r.holds]
    run.csv(CONVERSE_HEADER, [[i, _n_of(a, i), r.size, r.distinct, r.D, r.lhs, r.rhs, r.holds]
                              for i, r in enumerate(results)])
    margin = min(r.lhs - r.rhs for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} codebooks satisfy the converse; min margin {margin:.3e}")
    run.summary = {"trials": len(results), "failed": len(failed), "min_margin": margin}
    return EXIT_FAIL if failed else EXIT_OK


def _n_of(args, i: int) -> int:
    ns = parse_ints(args.n)
    return ns[i % len(ns)]


def cmd_block(run: _Run) -> int:
    a = run.args
    m = _load(a)
    src = m.source if m.transition is not None else MarkovSource.iid(m.P)
    ks = parse_ints(a.k)
    points = [block_rate(src, m.M, m.rho, a.D, k) for k in ks]
    for p in points:
        print(f"k={p.k}: R_k/k = {_show(p.per_letter_rate, a.bits)}  (upper bound)")
    run.csv(BLOCK_HEADER, [p.csv_row() for p in points])
    kmax = max(ks)
    pairs = [(i, j) for i in range(1, kmax) for j in range(i, kmax) if i + j <= kmax]
    run.summary = {"per_letter": {p.k: p.per_letter_rate for p in points}}
    if pairs:
        rep = subadditivity_check(src, m.M, m.rho, a.D, pairs)
        run.summary["subadditive"] = rep.holds
        if not rep.holds:
            bad = [(i, j, g) for i, j, g in rep.checks if g < -rep.tol]
            print(f"assertion failed: subadditivity violated at {bad}", file=sys.stderr)
            return EXIT_FAIL
    return EXIT_OK


COMMANDS = {
    "rate": cmd_rate,
    "curve": cmd_curve,
    "stein": cmd_stein,
    "cover": cmd_cover,
    "converse": cmd_converse,
    "block": cmd_block,
    "figure1": cmd_figure1,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = _Run(args)
    try:
        _validate(args)
        code = COMMANDS[args.command](run)
    except (UsageError, ModelError) as exc:
        print(f"masscover {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, SolverError) as exc:
        print(f"masscover {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ValueError) else EXIT_FAIL
    record = output.ResultRecord(
        command=args.command,
        config_hash=output.config_hash(_config(args)),
        timestamp=output.now(),
        csv=run.csv_path,
        summary=run.summary,
        exit_code=code,
    )
    try:
        output.append_record(record)
    except OSError as exc:
        log.warning("could not append to the results index: %s", exc)
    return code


def entry() -> None:
    sys.exit(main())
