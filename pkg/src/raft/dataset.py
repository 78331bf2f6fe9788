"""Tabular data model: feature matrix + target, lineage expressions, CSV I/O.

Every feature column carries a lineage expression over the *original* column
names, so any derived column can be re-evaluated from the raw dataset
bit-exactly.  All numeric kernels used in lineage evaluation live here so that
the transform layer and the round-trip evaluation share one implementation.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# Integer-valued vectors with at most this many distinct values are treated as
# discrete labels.  Task inference and MI label handling share the rule.
MAX_DISCRETE_LABELS = 20

# Default bound on lineage-tree depth (bounds name length and numeric blow-up).
DEFAULT_MAX_DEPTH = 6

UNARY_OPS = ("square", "sqrt", "log")
BINARY_OPS = ("+", "-", "*", "/")

_F64_MAX = float(np.finfo(np.float64).max)
_DIV_EPS = 1e-12

_MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})


class DatasetError(ValueError):
    """Ingestion / schema problem (maps to CLI exit code 3)."""


class TaskKind(Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


# ---------------------------------------------------------------------------
# Lineage expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ident:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    child: "LineageExpr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "LineageExpr"
    right: "LineageExpr"


LineageExpr = Ident | Unary | Binary


def render(expr: LineageExpr) -> str:
    """Canonical string form: IDENT | UNOP "(" expr ")" | "(" expr " " BINOP " " expr ")"."""
    if isinstance(expr, Ident):
        return expr.name
    if isinstance(expr, Unary):
        return f"{expr.op}({render(expr.child)})"
    if isinstance(expr, Binary):
        return f"({render(expr.left)} {expr.op} {render(expr.right)})"
    raise TypeError(f"not a lineage expression: {expr!r}")


def lineage_depth(expr: LineageExpr) -> int:
    if isinstance(expr, Ident):
        return 1
    if isinstance(expr, Unary):
        return 1 + lineage_depth(expr.child)
    return 1 + max(lineage_depth(expr.left), lineage_depth(expr.right))


def lineage_idents(expr: LineageExpr) -> set[str]:
    if isinstance(expr, Ident):
        return {expr.name}
    if isinstance(expr, Unary):
        return lineage_idents(expr.child)
    return lineage_idents(expr.left) | lineage_idents(expr.right)


def parse_lineage(text: str) -> LineageExpr:
    """Inverse of :func:`render`; rejects trailing garbage."""
    expr, pos = _parse_expr(text, 0)
    if pos != len(text):
        raise DatasetError(f"trailing characters after expression: {text[pos:]!r}")
    return expr


def _parse_expr(s: str, pos: int) -> tuple[LineageExpr, int]:
    if pos >= len(s):
        raise DatasetError("unexpected end of lineage expression")
    for op in UNARY_OPS:
        if s.startswith(op + "(", pos):
            child, p = _parse_expr(s, pos + len(op) + 1)
            if p >= len(s) or s[p] != ")":
                raise DatasetError(f"expected ')' at position {p} in {s!r}")
            return Unary(op, child), p + 1
    if s[pos] == "(":
        left, p = _parse_expr(s, pos + 1)
        if p + 3 > len(s) or s[p] != " " or s[p + 2] != " " or s[p + 1] not in BINARY_OPS:
            raise DatasetError(f"expected ' <op> ' at position {p} in {s!r}")
        op = s[p + 1]
        right, p2 = _parse_expr(s, p + 3)
        if p2 >= len(s) or s[p2] != ")":
            raise DatasetError(f"expected ')' at position {p2} in {s!r}")
        return Binary(op, left, right), p2 + 1
    end = pos
    while end < len(s) and s[end] not in " ()":
        end += 1
    if end == pos:
        raise DatasetError(f"expected identifier at position {pos} in {s!r}")
    return Ident(s[pos:end]), end


# ---------------------------------------------------------------------------
# Safe numeric kernels (shared by the transform layer and lineage evaluation)
# ---------------------------------------------------------------------------

def safe_unary_value(op: str, x: np.ndarray) -> np.ndarray:
    """square/sqrt/log with domain guards; result is always finite.

    sqrt and log operate on |x| (log additionally shifts by 1); overflow is
    clamped to the float64 range so downstream invariants never see inf.
    """
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        if op == "square":
            out = x * x
        elif op == "sqrt":
            out = np.sqrt(np.abs(x))
        elif op == "log":
            out = np.log1p(np.abs(x))
        else:
            raise ValueError(f"unknown unary operation {op!r}")
        return np.clip(out, -_F64_MAX, _F64_MAX)


def safe_binary_value(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise + - * / with guarded division; result is always finite."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    with np.errstate(over="ignore"):
        if op == "+":
            out = a + b
        elif op == "-":
            out = a - b
        elif op == "*":
            out = a * b
        elif op == "/":
            tiny = np.abs(b) < _DIV_EPS
            out = np.where(tiny, 0.0, a / np.where(tiny, 1.0, b))
        else:
            raise ValueError(f"unknown binary operation {op!r}")
        return np.clip(out, -_F64_MAX, _F64_MAX)


def evaluate_lineage(expr: LineageExpr, originals: Mapping[str, np.ndarray]) -> np.ndarray:
    """Re-evaluate a lineage tree over the original columns (bit-exact)."""
    if isinstance(expr, Ident):
        if expr.name not in originals:
            raise DatasetError(f"unknown original column {expr.name!r}")
        return np.asarray(originals[expr.name], dtype=np.float64)
    if isinstance(expr, Unary):
        return safe_unary_value(expr.op, evaluate_lineage(expr.child, originals))
    return safe_binary_value(
        expr.op,
        evaluate_lineage(expr.left, originals),
        evaluate_lineage(expr.right, originals),
    )


# ---------------------------------------------------------------------------
# Feature set
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureMeta:
    name: str
    lineage: LineageExpr
    is_original: bool

    @staticmethod
    def from_lineage(expr: LineageExpr) -> "FeatureMeta":
        return FeatureMeta(name=render(expr), lineage=expr, is_original=isinstance(expr, Ident))


@dataclass(frozen=True)
class Target:
    values: np.ndarray
    kind: TaskKind
    name: str

    def __post_init__(self) -> None:
        vals = np.asarray(self.values)
        if vals.ndim != 1 or vals.size < 2:
            raise DatasetError("target must be a vector with at least 2 entries")
        if self.kind is TaskKind.CLASSIFICATION:
            if not np.issubdtype(vals.dtype, np.integer):
                raise DatasetError("classification target must hold integer labels")
            if vals.min() < 0:
                raise DatasetError("classification labels must be >= 0")
        else:
            if not np.all(np.isfinite(vals.astype(np.float64))):
                raise DatasetError("regression target must be finite")

    @property
    def num_classes(self) -> int:
        if self.kind is not TaskKind.CLASSIFICATION:
            raise ValueError("num_classes is only defined for classification targets")
        return int(np.max(self.values)) + 1


@dataclass(frozen=True)
class FeatureSet:
    """Immutable numeric matrix (rows = samples) with per-column lineage."""

    values: np.ndarray
    columns: tuple[FeatureMeta, ...]
    target: Target

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise DatasetError("feature values must be a 2-D matrix")
        m, n = vals.shape
        if m < 2 or n < 1:
            raise DatasetError(f"feature matrix needs >= 2 rows and >= 1 column, got {m}x{n}")
        if not np.all(np.isfinite(vals)):
            raise DatasetError("feature values must be finite")
        if len(self.columns) != n:
            raise DatasetError("column metadata length does not match matrix width")
        if len(self.target.values) != m:
            raise DatasetError("target length does not match row count")
        for meta in self.columns:
            if meta.name != render(meta.lineage):
                raise DatasetError(f"meta name {meta.name!r} is not the canonical rendering")
            if meta.is_original != isinstance(meta.lineage, Ident):
                raise DatasetError(f"is_original flag inconsistent for {meta.name!r}")
        object.__setattr__(self, "values", vals)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def column(self, i: int) -> np.ndarray:
        return self.values[:, i]

    def names(self) -> list[str]:
        return [meta.name for meta in self.columns]

    def original_columns(self) -> dict[str, np.ndarray]:
        """Map original idents -> values; only valid on all-original sets."""
        if not all(meta.is_original for meta in self.columns):
            raise ValueError("original_columns requires an all-original feature set")
        return {meta.name: self.values[:, i] for i, meta in enumerate(self.columns)}

    def subset_rows(self, rows: np.ndarray) -> "FeatureSet":
        target = Target(self.target.values[rows], self.target.kind, self.target.name)
        return FeatureSet(self.values[rows, :], self.columns, target)

    def with_columns(self, values: np.ndarray, columns: Sequence[FeatureMeta]) -> "FeatureSet":
        return FeatureSet(values, tuple(columns), self.target)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _normalize_name(raw: str) -> str:
    return raw.strip().replace(" ", "_")


def _validate_header_name(name: str) -> None:
    if not name:
        raise DatasetError("empty header name")
    if "(" in name or ")" in name:
        raise DatasetError(f"header {name!r} contains parentheses, which break lineage names")
    if name in UNARY_OPS:
        raise DatasetError(f"header {name!r} collides with a unary operation token")


def load_csv(
    path: str | Path,
    target_column: str,
    task: TaskKind | None = None,
    impute: str | None = None,
) -> FeatureSet:
    """Read an RFC-4180 CSV with a header row into a FeatureSet.

    Missing feature cells are rejected unless ``impute == "median"``.  The
    target may be categorical (strings) for classification; numeric targets
    are classified when integer-valued with few distinct labels unless a task
    override is given.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path} is empty")
    raw_header = rows[0]
    data_rows = [r for r in rows[1:] if r]
    if not data_rows:
        raise DatasetError(f"{path} has a header but no data rows")

    if target_column in raw_header:
        target_pos = raw_header.index(target_column)
    else:
        normalized = [_normalize_name(h) for h in raw_header]
        if target_column not in normalized:
            raise DatasetError(f"target column {target_column!r} not found in header")
        target_pos = normalized.index(target_column)

    names = []
    for i, raw in enumerate(raw_header):
        if i == target_pos:
            continue
        name = _normalize_name(raw)
        _validate_header_name(name)
        names.append(name)
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise DatasetError(f"duplicate header names after normalization: {dupes}")
    if not names:
        raise DatasetError("dataset has no feature columns besides the target")

    m = len(data_rows)
    n = len(names)
    values = np.empty((m, n), dtype=np.float64)
    missing: list[tuple[int, int]] = []
    target_raw: list[str] = []
    for r, row in enumerate(data_rows):
        if len(row) != len(raw_header):
            raise DatasetError(f"row {r + 2}: expected {len(raw_header)} cells, got {len(row)}")
        c = 0
        for i, cell in enumerate(row):
            if i == target_pos:
                target_raw.append(cell.strip())
                continue
            text = cell.strip()
            if text.lower() in _MISSING_TOKENS:
                if impute != "median":
                    raise DatasetError(
                        f"row {r + 2}, column {names[c]!r}: missing value (use median imputation to allow)"
                    )
                missing.append((r, c))
                values[r, c] = np.nan
            else:
                try:
                    values[r, c] = float(text)
                except ValueError:
                    raise DatasetError(
                        f"row {r + 2}, column {names[c]!r}: non-numeric value {text!r}"
                    ) from None
            c += 1
    if missing:
        for c in range(n):
            col = values[:, c]
            mask = np.isnan(col)
            if mask.all():
                raise DatasetError(f"column {names[c]!r} has no observed values to impute from")
            if mask.any():
                col[mask] = np.median(col[~mask])
    if not np.all(np.isfinite(values)):
        raise DatasetError("feature values must be finite after ingestion")

    target = _build_target(target_raw, _normalize_name(raw_header[target_pos]), task)
    columns = tuple(FeatureMeta.from_lineage(Ident(name)) for name in names)
    return FeatureSet(values, columns, target)


def _build_target(raw: list[str], name: str, task: TaskKind | None) -> Target:
    numeric = np.empty(len(raw), dtype=np.float64)
    is_numeric = True
    for i, cell in enumerate(raw):
        try:
            numeric[i] = float(cell)
        except ValueError:
            is_numeric = False
            break
    if not is_numeric:
        if task is TaskKind.REGRESSION:
            raise DatasetError("regression requested but target is not numeric")
        labels = _encode_labels(np.asarray(raw, dtype=object))
        return Target(labels, TaskKind.CLASSIFICATION, name)
    if not np.all(np.isfinite(numeric)):
        raise DatasetError("target contains non-finite values")
    if np.unique(numeric).size < 2:
        raise DatasetError("constant target")
    integral = bool(np.all(numeric == np.floor(numeric)))
    few = np.unique(numeric).size <= MAX_DISCRETE_LABELS
    kind = task if task is not None else (
        TaskKind.CLASSIFICATION if integral and few else TaskKind.REGRESSION
    )
    if kind is TaskKind.CLASSIFICATION:
        if not integral:
            raise DatasetError("classification requested but target is not integer-valued")
        return Target(_encode_labels(numeric), TaskKind.CLASSIFICATION, name)
    return Target(numeric, TaskKind.REGRESSION, name)


def _encode_labels(raw: np.ndarray) -> np.ndarray:
    _, codes = np.unique(raw, return_inverse=True)
    return codes.astype(np.int64)


def write_csv(fs: FeatureSet, path: str | Path) -> None:
    """Write values with shortest round-trip float formatting (load is exact)."""
    path = Path(path)
    target = fs.target
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fs.names() + [target.name])
        for r in range(fs.n_rows):
            row = [repr(float(v)) for v in fs.values[r, :]]
            if target.kind is TaskKind.CLASSIFICATION:
                row.append(str(int(target.values[r])))
            else:
                row.append(repr(float(target.values[r])))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Splitting and discretization
# ---------------------------------------------------------------------------

def split_train_valid(fs: FeatureSet, ratio: float, seed: int) -> tuple[FeatureSet, FeatureSet]:
    """Deterministic row split; stratified for classification when possible.

    Each side must end up with at least 2 rows (feature sets are never
    smaller), otherwise the split is rejected.
    """
    if not 0.0 < ratio < 1.0:
        raise DatasetError(f"split ratio must be in (0, 1), got {ratio}")
    m = fs.n_rows
    rng = np.random.default_rng(seed)
    stratify = False
    if fs.target.kind is TaskKind.CLASSIFICATION:
        counts = np.bincount(fs.target.values)
        counts = counts[counts > 0]
        if np.all(counts >= 2):
            stratify = True
        else:
            logger.warning("a class has a single sample; falling back to unstratified split")
    if stratify:
        train_parts = []
        valid_parts = []
        for label in np.unique(fs.target.values):
            idx = np.flatnonzero(fs.target.values == label)
            perm = idx[rng.permutation(idx.size)]
            n_tr = math.floor(ratio * idx.size)
            train_parts.append(perm[:n_tr])
            valid_parts.append(perm[n_tr:])
        train_idx = np.sort(np.concatenate(train_parts))
        valid_idx = np.sort(np.concatenate(valid_parts))
    else:
        perm = rng.permutation(m)
        n_tr = math.floor(ratio * m)
        train_idx = np.sort(perm[:n_tr])
        valid_idx = np.sort(perm[n_tr:])
    if train_idx.size == 0 or valid_idx.size == 0:
        raise DatasetError(f"ratio {ratio} produces an empty split for {m} rows")
    if train_idx.size < 2 or valid_idx.size < 2:
        raise DatasetError(f"ratio {ratio} leaves a split with fewer than 2 rows for {m} rows")
    return fs.subset_rows(train_idx), fs.subset_rows(valid_idx)


def default_bins(m: int) -> int:
    return min(16, math.ceil(math.sqrt(m)))


def discretize(column: np.ndarray, bins: int) -> np.ndarray:
    """Equal-frequency binning into at most ``bins`` labels in [0, bins).

    Quantile edges use linear interpolation; edges that coincide collapse
    bins.  A value equal to an edge falls in the lower bin.
    """
    col = np.asarray(column, dtype=np.float64)
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    if col.ndim != 1 or col.size == 0:
        raise ValueError("column must be a nonempty vector")
    if not np.all(np.isfinite(col)):
        raise ValueError("column must be finite")
    if bins == 1 or col.min() == col.max():
        return np.zeros(col.size, dtype=np.int64)
    qs = np.arange(1, bins) / bins
    edges = np.unique(np.quantile(col, qs, method="linear"))
    return np.searchsorted(edges, col, side="left").astype(np.int64)
