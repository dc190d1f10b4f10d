"""CSV, SVG and results-index writers.

Files are written to a temporary sibling and renamed into place, so a
crashed or interrupted run never leaves a partial file at the target path.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

RESULTS_ENV = "MASSCOVER_RESULTS_DIR"
DEFAULT_RESULTS_DIR = ".masscover"
INDEX_NAME = "results.jsonl"


def fmt(value) -> str:
    """Shortest round-trip text for floats; plain text otherwise."""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def write_atomic(path: str | Path, data: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return write_atomic(path, csv_text(header, rows))


def svg_plot(
    xs: Sequence[float],
    ys: Sequence[float],
    *,
    xlabel: str = "D",
    ylabel: str = "R (nats)",
    title: str = "",
    width: int = 640,
    height: int = 440,
) -> str:
    """A single polyline with axes, tick labels and axis titles."""
    left, right, top, bottom = 70, 20, 30 if title else 15, 50
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (y1 - y) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for i in range(6):
        xv = x0 + i * (x1 - x0) / 5
        yv = y0 + i * (y1 - y0) / 5
        parts.append(f'<line x1="{px(xv):.2f}" y1="{top + ph}" x2="{px(xv):.2f}" y2="{top + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{px(xv):.2f}" y="{top + ph + 18}" text-anchor="middle">{xv:.3g}</text>')
        parts.append(f'<line x1="{left - 5}" y1="{py(yv):.2f}" x2="{left}" y2="{py(yv):.2f}" stroke="black"/>')
        parts.append(f'<text x="{left - 8}" y="{py(yv) + 4:.2f}" text-anchor="end">{yv:.3g}</text>')
    pts = " ".join(f"{px(x):.3f},{py(y):.3f}" for x, y in zip(xs, ys))
    parts.append(f'<polyline fill="none" stroke="#1f5fa8" stroke-width="2" points="{pts}"/>')
    parts.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{xlabel}</text>')
    parts.append(
        f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2})">{ylabel}</text>'
    )
    if title:
        parts.append(f'<text x="{left + pw / 2}" y="18" text-anchor="middle">{title}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


@dataclass(frozen=True)
class ResultRecord:
    command: str
    config_hash: str
    timestamp: str
    csv: str | None
    summary: dict = field(default_factory=dict)
    exit_code: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=str)


def results_dir() -> Path:
    return Path(os.environ.get(RESULTS_ENV, DEFAULT_RESULTS_DIR))


def append_record(record: ResultRecord) -> Path:
    d = results_dir()
    d.mkdir(parents=True, exist_ok=True)
    path = d / INDEX_NAME
    # one write per record on a line-buffered append handle keeps lines whole
    with open(path, "a", buffering=1) as fh:
        fh.write(record.to_json() + "\n")
    return path


def now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
