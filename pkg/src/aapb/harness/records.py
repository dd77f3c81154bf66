"""Run records, CSV I/O and atomic file writes."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "METRIC_COLUMNS",
    "TRACE_COLUMNS",
    "RunRecord",
    "atomic_write",
    "write_csv",
    "read_csv",
    "csv_text",
    "write_samples",
    "read_samples",
    "write_trace",
    "source_hash",
]

METRIC_COLUMNS = (
    "run_id", "gamma_mode", "gamma", "w", "seed", "n", "w2", "w2_sd", "fisher_j",
    "disp_par", "disp_perp",
)
TRACE_COLUMNS = ("sample_id", "t", "gamma", "dot_rT_d", "norm_d_sq", "fallback_flag")


def atomic_write(path, data) -> Path:
    """Write ``data`` (str or bytes) to a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else str(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def _parse(s: str):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(c) for c in columns]
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows) -> Path:
    return atomic_write(path, csv_text(columns, rows))


def read_csv(path) -> list:
    """Rows as dicts; numeric-looking cells come back as int/float, blanks as None."""
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_samples(path, points) -> Path:
    points = np.asarray(points)
    return write_csv(path, ("sample_id", "x", "y"), ((i, *p) for i, p in enumerate(points)))


def read_samples(path) -> np.ndarray:
    rows = read_csv(path)
    return np.array([[r["x"], r["y"]] for r in rows], dtype=np.float64).reshape(-1, 2)


def trace_rows(traces, max_samples: int | None = None):
    for tr in traces:
        n = tr.gamma.shape[0] if max_samples is None else min(max_samples, tr.gamma.shape[0])
        for i in range(n):
            yield (i, tr.t, tr.gamma[i], tr.dot_rT_d[i], tr.norm_d_sq[i], bool(tr.fallback[i]))


def write_trace(path, traces, max_samples: int | None = None) -> Path:
    return write_csv(path, TRACE_COLUMNS, trace_rows(traces, max_samples))


def source_hash() -> str:
    """Content hash of the installed package sources (stands in for a git revision)."""
    root = Path(__file__).resolve().parents[1]
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    code_hash: str
    train_hash: str
    train_losses: list
    metrics: list
    samples: dict = field(default_factory=dict)
    sample_hashes: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    wall_seconds: float = 0.0
    out_dir: str = ""

    def content_hash(self) -> str:
        """Hash of results only: excludes wall clock and output location."""
        payload = {
            "config_hash": self.config_hash,
            "train_hash": self.train_hash,
            "train_losses": self.train_losses,
            "metrics": self.metrics,
            "sample_hashes": self.sample_hashes,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def to_json(self) -> str:
        d = asdict(self)
        d["content_hash"] = self.content_hash()
        return json.dumps(d, indent=1, sort_keys=True)

    def save(self, out_dir=None) -> Path:
        out = Path(out_dir or self.out_dir)
        return atomic_write(out / "record.json", self.to_json())

    @classmethod
    def load(cls, path) -> "RunRecord":
        path = Path(path)
        if path.is_dir():
            path = path / "record.json"
        d = json.loads(path.read_text())
        stored = d.pop("content_hash", None)
        rec = cls(**d)
        rec.out_dir = str(path.parent)
        if stored is not None and stored != rec.content_hash():
            raise ValueError(f"{path}: content hash mismatch")
        if rec.recomputed_config_hash() != rec.config_hash:
            raise ValueError(f"{path}: stored config does not match its hash")
        return rec

    def recomputed_config_hash(self) -> str:
        from .config import parse_config

        return parse_config(self.config).hash()

    def sample_path(self, key: str) -> Path:
        return Path(self.out_dir) / self.samples[key]
