"""CSV, JSON and SVG writers with all-or-nothing semantics per run."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np


def _plain(value):
    """Convert numpy scalars and arrays to JSON-friendly Python values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    return value


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(_cell(v) for v in value)
    return str(value)


def csv_text(rows, columns=None) -> str:
    """Comma-separated text with a fixed header; floats use shortest round-trip form."""
    rows = list(rows)
    if columns is None:
        columns = []
        for row in rows:
            columns += [k for k in row if k not in columns]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c, "")) for c in columns])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


class OutputDir:
    """Collects a run's files and publishes them only when the run succeeds.

    Files are staged in a hidden temporary directory and moved into place by
    :meth:`commit`; :meth:`discard` removes the staging area so that a failed
    run leaves no partial output.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.root))
        self.files: list[str] = []

    def write_text(self, name: str, text: str) -> Path:
        path = self._stage / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        if name not in self.files:
            self.files.append(name)
        return path

    def staged(self, name: str) -> Path:
        """Path inside the staging area for writers that take a filename."""
        path = self._stage / name
        path.parent.mkdir(parents=True, exist_ok=True)
        if name not in self.files:
            self.files.append(name)
        return path

    def write_csv(self, name, rows, columns=None):
        return self.write_text(name, csv_text(rows, columns))

    def write_json(self, name, obj):
        return self.write_text(name, json_text(obj))

    def hashes(self) -> dict:
        return {name: sha256_file(self._stage / name) for name in sorted(self.files)}

    def commit(self):
        for name in self.files:
            dest = self.root / name
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(self._stage / name, dest)
        self.discard()

    def discard(self):
        for path in sorted(self._stage.rglob("*"), reverse=True):
            path.unlink() if path.is_file() else path.rmdir()
        if self._stage.exists():
            self._stage.rmdir()


# -- SVG ---------------------------------------------------------------------------------


def loglog_svg(series, markers=(), title="", xlabel="a", ylabel="", width=640, height=420) -> str:
    """Log-log line plot as standalone SVG.

    ``series`` is a list of ``(label, x, y)``; nonpositive points are dropped.
    ``markers`` is a list of ``(label, x)`` drawn as dashed vertical lines.
    """
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    left, right, top, bottom = 70, 20, 40, 50
    pts = []
    for _, x, y in series:
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
        pts.append((np.log10(x[keep]), np.log10(y[keep])))
    allx = np.concatenate([p[0] for p in pts] + [np.log10([m[1] for m in markers if m[1] > 0] or [1.0])])
    ally = np.concatenate([p[1] for p in pts])
    x0, x1 = math.floor(allx.min()), math.ceil(allx.max())
    y0, y1 = math.floor(ally.min()), math.ceil(ally.max())
    x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)
    pw, ph = width - left - right, height - top - bottom

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for k in range(x0, x1 + 1):
        out.append(f'<line x1="{sx(k):.2f}" y1="{top + ph}" x2="{sx(k):.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(k):.2f}" y="{top + ph + 18}" text-anchor="middle">1e{k}</text>')
    for k in range(y0, y1 + 1):
        out.append(f'<line x1="{left - 5}" y1="{sy(k):.2f}" x2="{left}" y2="{sy(k):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{sy(k) + 4:.2f}" text-anchor="end">1e{k}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {top + ph / 2:.1f})">{ylabel}</text>')
    for label, x in markers:
        if x > 0:
            X = sx(math.log10(x))
            out.append(f'<line class="marker" x1="{X:.2f}" y1="{top}" x2="{X:.2f}" y2="{top + ph}" '
                       f'stroke="gray" stroke-dasharray="4 3"/>')
            out.append(f'<text x="{X + 3:.2f}" y="{top + 12}" fill="gray">{label}</text>')
    for k, ((label, _, _), (lx, ly)) in enumerate(zip(series, pts)):
        color = colors[k % len(colors)]
        path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(lx, ly))
        out.append(f'<polyline class="series" points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{left + 10}" y="{top + 18 + 16 * k}" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
