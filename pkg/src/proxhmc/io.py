"""Binary sample files with JSON sidecars, and CSV export.

A sample file starts with two little-endian ``uint32`` (rows, columns)
followed by the float64 matrix in row-major little-endian order. The
sidecar ``<name>.json`` holds the metadata.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["write_matrix", "read_matrix", "write_sidecar", "read_sidecar",
           "save_trace", "load_trace", "write_matrix_csv", "to_jsonable"]

_HEADER = struct.Struct("<II")


def write_matrix(path, matrix):
    a = np.asarray(matrix, dtype="<f8")
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {a.shape}")
    rows, cols = a.shape
    if rows >= 2 ** 32 or cols >= 2 ** 32:
        raise ValueError("matrix too large for a 32-bit dimension header")
    with open(Path(path), "wb") as fh:
        fh.write(_HEADER.pack(rows, cols))
        fh.write(np.ascontiguousarray(a).tobytes())


def read_matrix(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        rows, cols = _HEADER.unpack(head)
        data = fh.read()
    if len(data) != 8 * rows * cols:
        raise ValueError(f"{path}: expected {rows}x{cols} float64 values, "
                         f"found {len(data)} bytes")
    return np.frombuffer(data, dtype="<f8").reshape(rows, cols).astype(float)


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and paths for ``json.dump``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_sidecar(path, meta):
    with open(Path(path), "w") as fh:
        json.dump(to_jsonable(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_sidecar(path):
    with open(Path(path)) as fh:
        return json.load(fh)


def save_trace(stem, trace, meta=None):
    """Write ``<stem>.bin`` (samples) and ``<stem>.json`` (metadata).

    The sidecar records the sampler config, acceptance rate, wall time and
    anything in ``meta``. Returns the two paths.
    """
    stem = Path(stem)
    bin_path = stem.with_suffix(".bin")
    json_path = stem.with_suffix(".json")
    write_matrix(bin_path, trace.samples)
    side = {
        "kernel": trace.kernel,
        "sampler": trace.config,
        "n_iterations": int(trace.n),
        "dimension": int(trace.dimension),
        "acceptance_rate": trace.acceptance_rate,
        "nonfinite_rejections": int(trace.nonfinite),
        "wall_time": trace.wall_time,
    }
    side.update(meta or {})
    write_sidecar(json_path, side)
    return bin_path, json_path


def load_trace(stem):
    """Return ``(samples, metadata)`` for a trace written by :func:`save_trace`."""
    stem = Path(stem)
    return read_matrix(stem.with_suffix(".bin")), read_sidecar(stem.with_suffix(".json"))


def write_matrix_csv(path, matrix, header=None):
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for row in a:
            w.writerow([repr(float(v)) for v in row])
