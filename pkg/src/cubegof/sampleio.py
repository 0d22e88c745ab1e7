"""File formats: delimited sample matrices, result records, study configs.

Samples are plain delimited text (comma or whitespace), one point per row,
with an optional non-numeric header line.  The same format serves raw
data, whitened data and unit-cube data.  Results serialize as JSON objects
or flat CSV rows; study configs are INI-style files with one section per
study.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import TransformError


def read_points(path) -> np.ndarray:
    """Read a delimited sample file into an (m, n) float matrix.

    An empty file (or a header-only file) yields a (0, 0) matrix.
    """
    text = Path(path).read_text()
    rows = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            if line_no == 1 or (not rows and line_no <= 2):
                continue  # header line
            raise TransformError(f"{path}:{line_no}: non-numeric row {line!r}")
    if not rows:
        return np.empty((0, 0))
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise TransformError(f"{path}: ragged rows (expected {width} columns)")
    return np.asarray(rows, dtype=float)


def write_points(path, points: np.ndarray, header: list[str] | None = None) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow(header)
        for row in pts:
            writer.writerow([repr(float(v)) for v in row])


def read_cdf_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column (x, F) file for a tabulated-CDF marginal."""
    mat = read_points(path)
    if mat.ndim != 2 or mat.shape[1] != 2 or mat.shape[0] < 2:
        raise TransformError(f"{path}: tabulated CDF needs two columns, >= 2 rows")
    return mat[:, 0], mat[:, 1]


# ---------------------------------------------------------------------------
# Result records
# ---------------------------------------------------------------------------


def record_to_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, default=_jsonify) + "\n"


def records_to_csv(records: list[dict]) -> str:
    if not records:
        return ""
    keys = sorted({k for r in records for k in r})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=keys)
    writer.writeheader()
    for rec in records:
        writer.writerow({k: _flatten(rec.get(k)) for k in keys})
    return buf.getvalue()


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)!r}")


def _flatten(value):
    if isinstance(value, (list, tuple, np.ndarray)):
        return ";".join(repr(float(v)) for v in np.asarray(value).ravel())
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


# ---------------------------------------------------------------------------
# Study configs
# ---------------------------------------------------------------------------


def read_config(path) -> dict[str, dict[str, str]]:
    """INI sections to plain dicts (keys lower-case, values as strings)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise TransformError(f"config file {path} not found or unreadable")
    return {name: dict(parser[name]) for name in parser.sections()}


def parse_model_spec(path) -> "ProductModel":
    """Model file: one marginal per line, e.g. ``normal 0 1`` or
    ``table marginal.csv`` (path relative to the model file)."""
    from .transforms import (
        ProductModel,
        exponential_marginal,
        normal_marginal,
        tabulated_marginal,
        truncated_normal_marginal,
        uniform_marginal,
    )

    base = Path(path).parent
    margs = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *args = line.split()
        try:
            if kind == "uniform":
                margs.append(uniform_marginal(*map(float, args)))
            elif kind == "normal":
                margs.append(normal_marginal(*map(float, args)))
            elif kind == "exponential":
                margs.append(exponential_marginal(*map(float, args)))
            elif kind in ("truncated-normal", "truncnorm"):
                margs.append(truncated_normal_marginal(*map(float, args)))
            elif kind == "table":
                x, f = read_cdf_table(base / args[0])
                margs.append(tabulated_marginal(x, f, descriptor=f"table({args[0]})"))
            else:
                raise TransformError(f"unknown marginal kind {kind!r}")
        except TypeError as exc:
            raise TransformError(f"{path}:{line_no}: bad arguments for {kind}: {exc}")
    if not margs:
        raise TransformError(f"{path}: model file defines no marginals")
    return ProductModel(tuple(margs))
