"""Run traces, seeded streams and the versioned trace CSV schema."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

TRACE_SCHEMA_VERSION = 1
TRACE_COLUMNS = (
    "k", "calls", "grad_calls", "hess_calls", "lmo_calls",
    "alpha", "gamma", "mu", "m", "b",
    "fw_gap", "gp_norm", "f_gap", "grad_l1_sq", "nnz",
    "lambda_min", "model_decrease", "subsolver_iters",
    "x_norm", "is_output",
)
CRITERIA = ("fw_gap", "gp_norm", "f_gap", "grad_l1_sq", "lambda_min")
FULL_TRACE_LIMIT = 1000
LOG_POINTS = 100


class Streams(NamedTuple):
    directions: np.random.Generator
    noise: np.random.Generator
    output: np.random.Generator


def make_streams(seed) -> Streams:
    """Independent generators for sample directions, oracle noise and the output index."""
    children = np.random.SeedSequence(int(seed)).spawn(3)
    return Streams(*(np.random.default_rng(c) for c in children))


def logged_indices(N, extra=()):
    """Every k when N <= 1000, else 100 log-spaced k plus 0, N and ``extra``."""
    if N <= FULL_TRACE_LIMIT:
        ks = set(range(N + 1))
    else:
        ks = set(np.unique(np.round(np.geomspace(1, N, LOG_POINTS)).astype(int)).tolist())
        ks.update((0, N))
    ks.update(int(e) for e in extra)
    return ks


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


@dataclass
class RunRecord:
    algorithm: str
    seed: int
    schedule: dict
    rows: list = field(default_factory=list)
    output_index: int = 0
    oracle_calls: int = 0
    grad_calls: int = 0
    hess_calls: int = 0
    lmo_calls: int = 0
    expected: dict = field(default_factory=dict)  # E_R of each criterion over the output law
    final: dict = field(default_factory=dict)  # criteria at the returned point
    iterates: list | None = None
    notes: dict = field(default_factory=dict)

    def add_row(self, **values):
        unknown = set(values) - set(TRACE_COLUMNS)
        if unknown:
            raise KeyError(f"unknown trace columns {sorted(unknown)}")
        self.rows.append(values)

    def output_row(self):
        for row in self.rows:
            if row.get("is_output"):
                return row
        return None

    def column(self, name):
        return [row.get(name) for row in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row.get(c)) for c in TRACE_COLUMNS])
        return buf.getvalue()


def read_trace(path_or_text):
    """Parse a trace CSV back into a list of dicts with floats (None for empty cells)."""
    text = path_or_text
    if not isinstance(text, str) or "\n" not in text:
        with open(path_or_text, newline="") as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
        raise ValueError("trace columns do not match schema version %d" % TRACE_SCHEMA_VERSION)
    return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in reader]
