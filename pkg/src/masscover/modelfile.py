"""Plain-text model files.

One section per line, ``name = values``. Rows of a matrix are separated by
``/``; ``#`` starts a comment. Recognized sections:

    p     = 0.6 0.4          source law on A
    m     = 0.6 0.4          mass on Â (default: all ones)
    logm  = -0.51 -0.92      natural-log mass, an exact alternative to m
    rho   = 0 1 / 1 0        distortion A x Â (default: Hamming)
    trans = 0.9 0.1 / 0.2 0.8    Markov transition matrix on A

With ``trans`` present ``p`` is optional and defaults to the stationary law.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blockrate import MarkovSource
from .probcore import DistortionMatrix, MassVector, ProbabilityVector, normalize_distortion

log = logging.getLogger(__name__)

SECTIONS = ("p", "m", "logm", "rho", "trans")


class ModelError(ValueError):
    def __init__(self, message: str, line: int | None = None, section: str | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.section = section


@dataclass(frozen=True, eq=False)
class Model:
    P: ProbabilityVector
    M: MassVector
    rho: DistortionMatrix
    transition: np.ndarray | None = None
    kept: tuple[int, ...] = ()  # original indices of the source symbols kept
    offsets: tuple[float, ...] = ()  # row minima removed from rho

    @property
    def source(self) -> MarkovSource:
        if self.transition is None:
            return MarkovSource.iid(self.P)
        return MarkovSource(self.transition, self.P)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Model):
            return NotImplemented
        same_t = (self.transition is None and other.transition is None) or (
            self.transition is not None
            and other.transition is not None
            and np.array_equal(self.transition, other.transition)
        )
        return self.P == other.P and self.M == other.M and self.rho == other.rho and same_t


def _parse_rows(text: str, line: int, name: str) -> list[list[float]]:
    rows = []
    for chunk in text.split("/"):
        try:
            row = [float(tok) for tok in chunk.split()]
        except ValueError as exc:
            raise ModelError(f"section '{name}': {exc}", line, name) from None
        if not row:
            raise ModelError(f"section '{name}': empty row", line, name)
        rows.append(row)
    if len({len(r) for r in rows}) != 1:
        raise ModelError(f"section '{name}': rows have different lengths", line, name)
    return rows


def parse_model(text: str) -> Model:
    raw: dict[str, tuple[list[list[float]], int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ModelError(f"expected 'name = values', got {line!r}", lineno)
        name, _, values = line.partition("=")
        name = name.strip().lower()
        if name not in SECTIONS:
            raise ModelError(f"unknown section {name!r} (expected one of {', '.join(SECTIONS)})", lineno, name)
        if name in raw:
            raise ModelError(f"duplicate section {name!r}", lineno, name)
        raw[name] = (_parse_rows(values, lineno, name), lineno)
    return _build(raw)


def _vector(raw, name):
    rows, line = raw[name]
    if len(rows) != 1:
        raise ModelError(f"section '{name}' must be a single row", line, name)
    return np.array(rows[0]), line


def _build(raw) -> Model:
    if "m" in raw and "logm" in raw:
        raise ModelError("give either 'm' or 'logm', not both", raw["logm"][1], "logm")

    transition = None
    if "trans" in raw:
        rows, line = raw["trans"]
        try:
            transition = MarkovSource(np.array(rows)).transition
        except ValueError as exc:
            raise ModelError(f"section 'trans': {exc}", line, "trans") from None

    if "p" in raw:
        p, line = _vector(raw, "p")
        try:
            P = ProbabilityVector(p)
        except ValueError as exc:
            raise ModelError(f"section 'p': {exc}", line, "p") from None
        if transition is not None:
            if transition.shape[0] != P.size:
                raise ModelError(f"section 'p' has {P.size} entries but 'trans' is {transition.shape[0]}x{transition.shape[0]}", line, "p")
            try:
                MarkovSource(transition, P)
            except ValueError as exc:
                raise ModelError(f"section 'p': {exc}", line, "p") from None
    elif transition is not None:
        P = MarkovSource(transition).initial
    else:
        raise ModelError("missing section 'p'")

    a = P.size
    if "rho" in raw:
        rows, line = raw["rho"]
        if len(rows) != a:
            raise ModelError(f"section 'rho' has {len(rows)} rows, expected {a} (size of 'p')", line, "rho")
        try:
            rho = DistortionMatrix(np.array(rows))
        except ValueError as exc:
            raise ModelError(f"section 'rho': {exc}", line, "rho") from None
    else:
        rho = DistortionMatrix.hamming(a)
    b = rho.shape[1]

    if "m" in raw or "logm" in raw:
        name = "m" if "m" in raw else "logm"
        vals, line = _vector(raw, name)
        if vals.size != b:
            raise ModelError(f"section '{name}' has {vals.size} entries, expected {b} (columns of 'rho')", line, name)
        try:
            M = MassVector.from_mass(vals) if name == "m" else MassVector(vals)
        except ValueError as exc:
            raise ModelError(f"section '{name}': {exc}", line, name) from None
    else:
        M = MassVector.ones(b)

    offsets = rho.row_offsets()
    if np.any(offsets != 0):
        log.info("distortion rows shifted by offsets %s so each row has a zero", offsets.tolist())
        rho = normalize_distortion(rho)

    kept = np.arange(a)
    if transition is None and np.any(P.probs == 0):
        kept = np.flatnonzero(P.probs > 0)
        log.info("dropping zero-probability source symbols; new index i was symbol %s", kept.tolist())
        P = ProbabilityVector(P.probs[kept] / P.probs[kept].sum())
        rho = DistortionMatrix(rho.rho[kept])
    return Model(P, M, rho, transition, tuple(int(k) for k in kept), tuple(float(o) for o in offsets))


def load_model(path: str | Path) -> Model:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc.strerror}") from None
    return parse_model(text)


def _fmt_row(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def emit_model(model: Model) -> str:
    """Serialize so that ``parse_model(emit_model(m)) == m`` bit for bit."""
    lines = [f"p = {_fmt_row(model.P.probs)}", f"logm = {_fmt_row(model.M.log_mass)}"]
    lines.append("rho = " + " / ".join(_fmt_row(r) for r in model.rho.rho))
    if model.transition is not None:
        lines.append("trans = " + " / ".join(_fmt_row(r) for r in model.transition))
    return "\n".join(lines) + "\n"
