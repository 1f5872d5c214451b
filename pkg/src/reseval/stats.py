"""Pearson and Spearman correlation over per-utterance score tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .audio import atomic_write_bytes


def _validated_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"sequences must be equal-length 1-D, got {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError("correlation needs at least 2 points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("correlation inputs must be finite")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("correlation undefined for a constant sequence")
    return x, y


def pcc(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    x, y = _validated_pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    num = float(np.dot(dx, dy))
    den = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    return min(1.0, max(-1.0, num / den))


def average_ranks(values) -> np.ndarray:
    """1-based ranks; ties get the mean of their rank span."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    sv = v[order]
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srcc(x, y) -> float:
    """Spearman rank correlation: Pearson over average ranks."""
    x, y = _validated_pair(x, y)
    return pcc(average_ranks(x), average_ranks(y))


@dataclass(frozen=True)
class CorrelationResult:
    pcc: float
    srcc: float
    n: int


@dataclass(frozen=True)
class ScoreTable:
    """Rectangular per-utterance table: one id column plus numeric columns.

    Numeric cells are floats; missing cells are None.
    """

    columns: tuple[str, ...]
    rows: tuple[dict, ...]
    id_column: str

    def __post_init__(self):
        if self.id_column not in self.columns:
            raise ValueError(f"id column {self.id_column!r} not among columns")
        seen = set()
        for row in self.rows:
            if set(row) != set(self.columns):
                raise ValueError("rows must carry exactly the declared columns")
            rid = row[self.id_column]
            if rid in seen:
                raise ValueError(f"duplicate utterance id {rid!r}")
            seen.add(rid)
            for col, val in row.items():
                if col == self.id_column or val is None:
                    continue
                if not isinstance(val, float) or not math.isfinite(val):
                    raise ValueError(f"cell ({rid!r}, {col!r}) is not finite: {val!r}")

    def column(self, name: str) -> list:
        if name not in self.columns:
            available = ", ".join(c for c in self.columns)
            raise KeyError(f"column {name!r} not found (available: {available})")
        return [row[name] for row in self.rows]

    @classmethod
    def from_csv(cls, path, id_column: str | None = None) -> "ScoreTable":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty CSV") from None
            if id_column is None:
                id_column = header[0]
            rows = []
            for lineno, raw in enumerate(reader, start=2):
                if len(raw) != len(header):
                    raise ValueError(
                        f"{path}:{lineno}: expected {len(header)} cells, got {len(raw)}"
                    )
                row = {}
                for col, cell in zip(header, raw):
                    cell = cell.strip()
                    if col == id_column:
                        row[col] = cell
                    elif cell == "":
                        row[col] = None
                    else:
                        try:
                            row[col] = float(cell)
                        except ValueError:
                            raise ValueError(
                                f"{path}:{lineno}: cell {cell!r} in column {col!r} is not numeric"
                            ) from None
                rows.append(row)
        return cls(columns=tuple(header), rows=tuple(rows), id_column=id_column)

    def to_csv(self, path) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            out = []
            for col in self.columns:
                val = row[col]
                out.append("" if val is None else (val if isinstance(val, str) else repr(val)))
            writer.writerow(out)
        atomic_write_bytes(path, buf.getvalue().encode())


def correlate_table(table: ScoreTable, metric_col: str, score_col: str) -> CorrelationResult:
    """Pearson and Spearman between two columns, dropping incomplete rows."""
    metric = table.column(metric_col)
    score = table.column(score_col)
    xs, ys = [], []
    for mv, sv in zip(metric, score):
        if mv is None or sv is None:
            continue
        xs.append(mv)
        ys.append(sv)
    if len(xs) < 2:
        raise ValueError(
            f"fewer than 2 usable rows between {metric_col!r} and {score_col!r}"
        )
    return CorrelationResult(pcc=pcc(xs, ys), srcc=srcc(xs, ys), n=len(xs))
