"""File formats: metadata-headed CSV tables, map grids, 16-bit PGM, JSON.

Every CSV starts with one ``#`` line of ``key=value`` metadata (toolkit
version, scenario, seed and any extras), then a header row. Floats are
written with 9 significant digits so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import ResofluoError, __version__
from .spectral import Grid1D, Map2D


class FormatError(ResofluoError, ValueError):
    """A file does not follow the expected layout."""


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.9g" % v
    return str(v)


def metadata_line(scenario, seed, **extra) -> str:
    items = {"resofluo": __version__, "scenario": scenario, "seed": seed, **extra}
    for k, v in items.items():
        if any(c in str(k) + _fmt(v) for c in " =\n"):
            raise ValueError(f"metadata {k}={v!r} may not contain spaces, '=' or newlines")
    return "# " + " ".join(f"{k}={_fmt(v)}" for k, v in items.items())


def parse_metadata(line: str) -> dict:
    if not line.startswith("#"):
        raise FormatError("missing '#' metadata line")
    out = {}
    for tok in line[1:].split():
        k, sep, v = tok.partition("=")
        if not sep:
            raise FormatError(f"bad metadata token {tok!r}")
        out[k] = v
    return out


def write_table(path, columns: dict, meta: dict):
    """Columns of equal length, written in dict order."""
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    n = {c.shape[0] for c in cols}
    if len(n) != 1:
        raise ValueError("columns must have equal length")
    with open(path, "w", newline="") as fh:
        fh.write(metadata_line(**meta) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def read_table(path):
    """Returns (metadata dict, {column: float array})."""
    with open(path, newline="") as fh:
        meta = parse_metadata(fh.readline())
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: no header row")
    names = rows[0]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric cell ({exc})") from None
    if data.size == 0:
        data = data.reshape(0, len(names))
    if data.shape[1] != len(names):
        raise FormatError(f"{path}: rows do not match the header")
    return meta, {n: data[:, k] for k, n in enumerate(names)}


def write_map_csv(path, m: Map2D, meta: dict):
    """First row: photon axis (GHz); first column: laser axis (GHz)."""
    with open(path, "w", newline="") as fh:
        fh.write(metadata_line(**meta) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["laser\\photon"] + [_fmt(v) for v in m.photon_axis.points])
        for wl, row in zip(m.laser_axis.points, m.values):
            w.writerow([_fmt(wl)] + [_fmt(v) for v in row])


def _axis_from_points(pts, name) -> Grid1D:
    if pts.size < 2:
        raise FormatError(f"{name} axis needs at least 2 points")
    step = (pts[-1] - pts[0]) / (pts.size - 1)
    if not np.allclose(np.diff(pts), step, rtol=1e-6, atol=1e-9 * abs(step)):
        raise FormatError(f"{name} axis is not uniform")
    return Grid1D(float(pts[0]), float(step), int(pts.size))


def read_map_csv(path):
    """Returns (metadata dict, Map2D). Axes are rebuilt from the printed values."""
    with open(path, newline="") as fh:
        meta = parse_metadata(fh.readline())
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise FormatError(f"{path}: too few rows for a map")
    photon = np.array([float(v) for v in rows[0][1:]])
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    laser = body[:, 0]
    values = body[:, 1:]
    if values.shape != (laser.size, photon.size):
        raise FormatError(f"{path}: ragged map grid")
    return meta, Map2D(_axis_from_points(laser, "laser"), _axis_from_points(photon, "photon"),
                       values)


def write_pgm(path, m: Map2D):
    """16-bit binary PGM (P5), max-normalised.

    Image rows are laser frequencies (top row = first laser point), columns
    photon frequencies. An all-zero map gives an all-zero image.
    """
    v = np.asarray(m.values, dtype=float)
    peak = float(v.max()) if v.size else 0.0
    scaled = np.zeros(v.shape) if peak <= 0 else v / peak
    img = np.rint(scaled * 65535.0).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm`: (rows, cols) uint16 array."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    pos += 1
    if tokens[0] != "P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval < 256:
        raise FormatError(f"{path}: expected a 16-bit PGM")
    data = np.frombuffer(raw[pos:pos + 2 * w * h], dtype=">u2")
    if data.size != w * h:
        raise FormatError(f"{path}: truncated image data")
    return data.reshape(h, w).astype(np.uint16)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        # JSON has no NaN/inf; keep the value visible as a string
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def read_series(path):
    """Data for the fit scenarios: a table with columns x, y and optional sigma.

    Files without a metadata line are accepted too, so hand-made CSVs work.
    """
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(0)
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    names = [n.strip() for n in rows[0]]
    if "x" not in names or "y" not in names:
        raise FormatError(f"{path}: need columns 'x' and 'y', found {names}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric cell ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(names):
        raise FormatError(f"{path}: rows do not match the header")
    col = {n: data[:, k] for k, n in enumerate(names)}
    return col["x"], col["y"], col.get("sigma")
