"""Atomic file writes, CSV snapshots and the per-step diagnostics stream."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .grid import Grid
from .kinetics import Parameters
from .states import FastState, LimitState

SNAPSHOT_MAGIC = "# fastlim-snapshot v1"
FLOAT_FMT = "%.17g"


class SnapshotError(ValueError):
    """Malformed, truncated or inconsistent snapshot file."""


def fmt(x: float) -> str:
    return FLOAT_FMT % float(x)


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def parameter_hash(prm: Parameters) -> str:
    """Short digest of the parameter set; stable across runs and platforms."""
    payload = json.dumps({k: fmt(v) if isinstance(v, float) else v for k, v in prm.as_dict().items()},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- snapshots

def snapshot_text(st, prm: Parameters) -> str:
    kind = "fast" if isinstance(st, FastState) else "limit"
    names = st.FIELDS
    cols = [np.asarray(getattr(st, n)).ravel(order="C") for n in names]
    lines = [
        SNAPSHOT_MAGIC,
        f"# kind,{kind}",
        f"# t,{fmt(st.t)}",
        "# extent," + ",".join(fmt(e) for e in st.grid.extent),
        "# cells," + ",".join(str(c) for c in st.grid.cells),
        f"# param_hash,{parameter_hash(prm)}",
        f"# rows,{cols[0].size}",
        ",".join(names),
    ]
    lines += [",".join(fmt(c[i]) for c in cols) for i in range(cols[0].size)]
    lines.append("# end")
    return "\n".join(lines) + "\n"


def write_snapshot(path, st, prm: Parameters) -> Path:
    return atomic_write_text(path, snapshot_text(st, prm))


def _header_value(line: str, key: str) -> list[str]:
    prefix = f"# {key},"
    if not line.startswith(prefix):
        raise SnapshotError(f"expected header '{key}', got {line[:40]!r}")
    return line[len(prefix):].split(",")


def parse_snapshot(text: str, prm: Parameters | None = None):
    """Inverse of ``snapshot_text``; checks the parameter hash when ``prm`` is given."""
    lines = text.splitlines()
    if len(lines) < 8 or lines[0] != SNAPSHOT_MAGIC:
        raise SnapshotError("missing or truncated snapshot header")
    try:
        kind = _header_value(lines[1], "kind")[0]
        t = float(_header_value(lines[2], "t")[0])
        extent = tuple(float(v) for v in _header_value(lines[3], "extent"))
        cells = tuple(int(v) for v in _header_value(lines[4], "cells"))
        phash = _header_value(lines[5], "param_hash")[0]
        nrows = int(_header_value(lines[6], "rows")[0])
        grid = Grid(extent, cells)
    except SnapshotError:
        raise
    except ValueError as exc:
        raise SnapshotError(f"corrupt header: {exc}") from exc
    cls = {"fast": FastState, "limit": LimitState}.get(kind)
    if cls is None:
        raise SnapshotError(f"unknown snapshot kind {kind!r}")
    names = lines[7].split(",")
    if tuple(names) != cls.FIELDS:
        raise SnapshotError(f"column names {names} do not match {kind} fields {cls.FIELDS}")
    if nrows != int(np.prod(cells)):
        raise SnapshotError(f"declared {nrows} rows but grid has {int(np.prod(cells))} cells")
    if len(lines) != 8 + nrows + 1 or lines[-1] != "# end":
        raise SnapshotError(f"truncated snapshot: expected {nrows} rows and an end marker")
    if prm is not None and phash != parameter_hash(prm):
        raise SnapshotError("parameter hash does not match the supplied parameters")
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[8:8 + nrows]])
    except ValueError as exc:
        raise SnapshotError(f"bad numeric row: {exc}") from exc
    if data.shape != (nrows, len(names)):
        raise SnapshotError("ragged snapshot rows")
    fields = {n: data[:, i].reshape(cells) for i, n in enumerate(names)}
    return cls(t=t, grid=grid, **fields)


def read_snapshot(path, prm: Parameters | None = None):
    return parse_snapshot(Path(path).read_text(), prm)


# ---------------------------------------------------------------- diagnostics stream

class DiagnosticsCSV:
    """Sink collecting ``(t, name, value)`` rows; written atomically on ``close``.

    ``names`` restricts the stream to the listed record keys. Rows keep the
    step order and, within a step, the record's key order.
    """

    def __init__(self, path, names=None):
        self.path = Path(path)
        self.names = None if names is None else list(names)
        self._rows: list[tuple] = []

    def __call__(self, t: float, record: dict) -> None:
        keys = record.keys() if self.names is None else [k for k in self.names if k in record]
        self._rows.extend((t, k, record[k]) for k in keys if k != "t")

    def __len__(self) -> int:
        return len(self._rows)

    def close(self) -> Path:
        return write_csv(self.path, ("t", "name", "value"), self._rows)


class SnapshotWriter:
    """Writes one snapshot file per emitted state into ``directory``."""

    def __init__(self, directory, prm: Parameters, prefix: str = "state"):
        self.directory = Path(directory)
        self.prm = prm
        self.prefix = prefix
        self.paths: list[Path] = []

    def write(self, states) -> list[Path]:
        for i, st in enumerate(states):
            p = self.directory / f"{self.prefix}_{i:05d}.csv"
            write_snapshot(p, st, self.prm)
            self.paths.append(p)
        return self.paths
