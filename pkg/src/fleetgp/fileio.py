"""File formats and binary message serialization.

Formats emitted/consumed by the CLI:

* demand/supply CSV -- header ``row,col,demand`` (or ``row,col,supply``),
  one line per included region; absent regions are excluded from the
  region set.
* metrics CSV -- header
  ``step,rmse,kld,avg_cruise,avg_wait,total_pickups,wall_time_ms``,
  one appended row per simulation step.
* run manifest -- JSON with the full config, seed, version string and a
  results summary.
* summary messages -- little-endian binary: a 4-byte magic, ``u32`` length
  prefixes, then IEEE-754 ``f64`` payloads (vector, then row-major matrix;
  the global form also carries the sorted ``u32`` contributor ids).
"""

from __future__ import annotations

import json
import struct
import subprocess
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ParseError, ValidationError
from .fusion import GlobalSummary, LocalSummary
from .gp import chol_spd

LOCAL_MAGIC = b"FGLS"
GLOBAL_MAGIC = b"FGGS"

METRICS_HEADER = "step,rmse,kld,avg_cruise,avg_wait,total_pickups,wall_time_ms"


def demand_to_log(demand):
    """Log count transform: measurement = log(1 + demand)."""
    return np.log1p(np.asarray(demand, dtype=float))


def log_moments_to_demand(mean, var):
    """Invert the count transform of a log-scale prediction, clipped at zero."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    with np.errstate(over="ignore"):
        raw = np.exp(mean + 0.5 * var)
    raw = np.where(np.isinf(raw), np.finfo(float).max, raw)
    return np.maximum(raw - 1.0, 0.0)


def _fmt(x) -> str:
    return repr(float(x))


def write_grid_csv(path, ids, values, cols: int, column: str):
    lines = [f"row,col,{column}"]
    for rid, val in zip(ids, values):
        r, c = divmod(int(rid), cols)
        v = float(val)
        lines.append(f"{r},{c},{int(v) if v.is_integer() else _fmt(v)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid_csv(path, column: str):
    """Parse a grid CSV into (ids, values, rows, cols); dims are inferred."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise ParseError(f"{path}: empty file", line=1)
    header = text[0].strip()
    if header != f"row,col,{column}":
        raise ParseError(f"{path}: expected header 'row,col,{column}', got '{header}'", line=1)
    entries = {}
    max_r = max_c = -1
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"{path}: expected 3 fields", line=lineno)
        try:
            r, c, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", line=lineno) from exc
        if r < 0 or c < 0:
            raise ParseError(f"{path}: negative grid index", line=lineno)
        if not np.isfinite(v):
            raise ValidationError(f"{path}:{lineno}: non-finite {column}")
        if v < 0:
            raise ValidationError(f"{path}:{lineno}: negative {column}")
        if (r, c) in entries:
            raise ParseError(f"{path}: duplicate region ({r},{c})", line=lineno)
        entries[(r, c)] = v
        max_r, max_c = max(max_r, r), max(max_c, c)
    if not entries:
        raise ParseError(f"{path}: no data rows", line=2)
    rows, cols = max_r + 1, max_c + 1
    keys = sorted(entries)
    ids = np.array([r * cols + c for r, c in keys], dtype=np.int64)
    values = np.array([entries[k] for k in keys])
    return ids, values, rows, cols


def load_field(demand_path, supply_path=None):
    """Build a :class:`~fleetgp.sim.DemandField` from CSV files.

    Grid dimensions are inferred from the largest row/col present; regions
    absent from the demand file are excluded from the region set (and from
    the graph).  Without a supply file the supply distribution is uniform
    over included regions.
    """
    from .sim import make_field  # fileio is imported by sim; defer the cycle

    ids, truth, rows, cols = read_grid_csv(demand_path, "demand")
    supply = None
    if supply_path is not None:
        s_ids, s_vals, s_rows, s_cols = read_grid_csv(supply_path, "supply")
        if (s_rows, s_cols) != (rows, cols) or not np.array_equal(s_ids, ids):
            raise ValidationError("supply file does not cover the demand regions")
        supply = s_vals
    return make_field(rows, cols, ids, truth, supply)


def write_field(field, demand_path, supply_path=None) -> None:
    """Write a field back to CSV; exact round-trip with :func:`load_field`."""
    write_grid_csv(demand_path, field.regions.ids, field.truth, field.cols, "demand")
    if supply_path is not None:
        write_grid_csv(
            supply_path, field.regions.ids, field.supply_dist, field.cols, "supply"
        )


def serialize_local_summary(summary: LocalSummary) -> bytes:
    m = len(summary)
    return b"".join(
        [
            LOCAL_MAGIC,
            struct.pack("<I", m),
            summary.vec.astype("<f8").tobytes(),
            np.ascontiguousarray(summary.mat, dtype="<f8").tobytes(),
        ]
    )


def deserialize_local_summary(blob: bytes) -> LocalSummary:
    if blob[:4] != LOCAL_MAGIC:
        raise ParseError("bad local-summary magic")
    (m,) = struct.unpack_from("<I", blob, 4)
    need = 8 + 8 * m + 8 * m * m
    if len(blob) != need:
        raise ParseError(f"local summary size {len(blob)} != expected {need}")
    vec = np.frombuffer(blob, dtype="<f8", count=m, offset=8).copy()
    mat = (
        np.frombuffer(blob, dtype="<f8", count=m * m, offset=8 + 8 * m)
        .reshape(m, m)
        .copy()
    )
    return LocalSummary(vec, mat)


def serialize_global_summary(summary: GlobalSummary) -> bytes:
    m = summary.vec.size
    contributors = sorted(int(v) for v in summary.contributors)
    return b"".join(
        [
            GLOBAL_MAGIC,
            struct.pack("<II", m, len(contributors)),
            struct.pack(f"<{len(contributors)}I", *contributors),
            summary.vec.astype("<f8").tobytes(),
            np.ascontiguousarray(summary.mat, dtype="<f8").tobytes(),
        ]
    )


def deserialize_global_summary(blob: bytes) -> GlobalSummary:
    if blob[:4] != GLOBAL_MAGIC:
        raise ParseError("bad global-summary magic")
    m, k = struct.unpack_from("<II", blob, 4)
    off = 12
    contributors = struct.unpack_from(f"<{k}I", blob, off)
    off += 4 * k
    need = off + 8 * m + 8 * m * m
    if len(blob) != need:
        raise ParseError(f"global summary size {len(blob)} != expected {need}")
    vec = np.frombuffer(blob, dtype="<f8", count=m, offset=off).copy()
    mat = (
        np.frombuffer(blob, dtype="<f8", count=m * m, offset=off + 8 * m)
        .reshape(m, m)
        .copy()
    )
    scale = float(np.max(np.abs(mat))) if m else 1.0
    chol, _ = chol_spd(mat, max(scale, 1e-30))
    return GlobalSummary(vec, mat, chol, frozenset(contributors))


class MetricsWriter:
    """Append-only, schema-stable metrics CSV."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.write_text(METRICS_HEADER + "\n")

    def append(self, row) -> None:
        with self.path.open("a") as fh:
            fh.write(
                ",".join(
                    [
                        str(row.step),
                        _fmt(row.rmse),
                        _fmt(row.kld),
                        _fmt(row.avg_cruise),
                        _fmt(row.avg_wait),
                        str(row.total_pickups),
                        _fmt(row.wall_time_ms),
                    ]
                )
                + "\n"
            )


def read_metrics_csv(path):
    """Load a metrics CSV into a dict of column arrays."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ParseError(f"{path}: not a metrics CSV", line=1)
    cols = METRICS_HEADER.split(",")
    data = {c: [] for c in cols}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(cols):
            raise ParseError(f"{path}: expected {len(cols)} fields", line=lineno)
        for c, p in zip(cols, parts):
            data[c].append(float(p))
    return {c: np.array(v) for c, v in data.items()}


def version_string() -> str:
    """git-describe of the working tree when available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            cwd=Path(__file__).resolve().parent,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def write_manifest(path, config, summary=None) -> None:
    payload = {
        "config": config.to_dict(),
        "seed": config.seed,
        "version": version_string(),
    }
    if summary is not None:
        payload["summary"] = summary
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
