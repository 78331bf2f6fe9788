"""Mathematical operation set and safe feature-group crossing with lineage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import cluster_columns
from .dataset import (
    BINARY_OPS,
    DEFAULT_MAX_DEPTH,
    UNARY_OPS,
    Binary,
    FeatureMeta,
    FeatureSet,
    Unary,
    default_bins,
    lineage_depth,
    safe_binary_value,
    safe_unary_value,
)
from .info_metrics import MICache

DEFAULT_CROSS_CAP = 64
_DEDUP_TOL = 1e-12


@dataclass(frozen=True)
class OperationSet:
    """Ordered unary + binary operations; the order fixes one-hot indices."""

    unary: tuple[str, ...] = UNARY_OPS
    binary: tuple[str, ...] = BINARY_OPS

    def __post_init__(self) -> None:
        if len(self.binary) == 0:
            raise ValueError("the operation set needs at least one binary operation")
        for op in self.unary:
            if op not in UNARY_OPS:
                raise ValueError(f"unknown unary operation {op!r}")
        for op in self.binary:
            if op not in BINARY_OPS:
                raise ValueError(f"unknown binary operation {op!r}")
        ops = self.unary + self.binary
        if len(set(ops)) != len(ops):
            raise ValueError("duplicate operations in the set")

    @property
    def ops(self) -> tuple[str, ...]:
        return self.unary + self.binary

    @property
    def size(self) -> int:
        return len(self.ops)

    def index(self, op: str) -> int:
        try:
            return self.ops.index(op)
        except ValueError:
            raise ValueError(f"operation {op!r} not in the set {self.ops}") from None

    def is_unary(self, op: str) -> bool:
        if op in self.unary:
            return True
        if op in self.binary:
            return False
        raise ValueError(f"operation {op!r} not in the set {self.ops}")


@dataclass
class GeneratedBatch:
    columns: list[np.ndarray]
    metas: list[FeatureMeta]
    head: tuple[int, ...]
    op: str
    tail: tuple[int, ...] | None
    iteration: int

    def __len__(self) -> int:
        return len(self.columns)


def apply_unary(
    op: str,
    cluster_view: FeatureSet,
    head: tuple[int, ...] = (),
    iteration: int = 0,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> GeneratedBatch:
    """One new column per member feature; members whose lineage would exceed
    the depth bound are skipped."""
    columns: list[np.ndarray] = []
    metas: list[FeatureMeta] = []
    for i, meta in enumerate(cluster_view.columns):
        expr = Unary(op, meta.lineage)
        if lineage_depth(expr) > max_depth:
            continue
        columns.append(safe_unary_value(op, cluster_view.column(i)))
        metas.append(FeatureMeta.from_lineage(expr))
    return GeneratedBatch(columns, metas, head, op, None, iteration)


def cross_binary(
    op: str,
    head_view: FeatureSet,
    tail_view: FeatureSet,
    cap: int = DEFAULT_CROSS_CAP,
    bins: int | None = None,
    cache: MICache | None = None,
    head: tuple[int, ...] = (),
    tail: tuple[int, ...] = (),
    iteration: int = 0,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> GeneratedBatch:
    """Cartesian pairing of head and tail members, head-major order.

    When the pairing exceeds ``cap``, the pairs with the largest
    MI(head, y) + MI(tail, y) survive (ties keep head-major order); the
    surviving columns are still emitted in head-major order.
    """
    if head_view.n_cols == 0 or tail_view.n_cols == 0:
        raise ValueError("clusters must be nonempty")
    pairs = [(a, b) for a in range(head_view.n_cols) for b in range(tail_view.n_cols)]
    if len(pairs) > cap:
        cache = MICache() if cache is None else cache
        use_bins = default_bins(head_view.n_rows) if bins is None else bins
        y = np.asarray(head_view.target.values, dtype=np.float64)
        mi_head = [cache.mi(head_view.column(a), y, use_bins) for a in range(head_view.n_cols)]
        mi_tail = [cache.mi(tail_view.column(b), y, use_bins) for b in range(tail_view.n_cols)]
        scored = sorted(range(len(pairs)),
                        key=lambda p: (-(mi_head[pairs[p][0]] + mi_tail[pairs[p][1]]), p))
        pairs = [pairs[p] for p in sorted(scored[:cap])]
    columns: list[np.ndarray] = []
    metas: list[FeatureMeta] = []
    for a, b in pairs:
        expr = Binary(op, head_view.columns[a].lineage, tail_view.columns[b].lineage)
        if lineage_depth(expr) > max_depth:
            continue
        columns.append(safe_binary_value(op, head_view.column(a), tail_view.column(b)))
        metas.append(FeatureMeta.from_lineage(expr))
    return GeneratedBatch(columns, metas, head, op, tail, iteration)


def dedup(batch: GeneratedBatch, fs: FeatureSet) -> GeneratedBatch:
    """Drop constant columns and columns value-equal (within 1e-12 elementwise)
    to an existing column or an earlier batch column."""
    kept_cols: list[np.ndarray] = []
    kept_metas: list[FeatureMeta] = []
    existing = [fs.values[:, i] for i in range(fs.n_cols)]
    for col, meta in zip(batch.columns, batch.metas):
        if float(np.ptp(col)) <= _DEDUP_TOL:
            continue
        duplicate = False
        with np.errstate(over="ignore"):
            for other in existing + kept_cols:
                if np.all(np.abs(col - other) <= _DEDUP_TOL):
                    duplicate = True
                    break
        if not duplicate:
            kept_cols.append(col)
            kept_metas.append(meta)
    return GeneratedBatch(kept_cols, kept_metas, batch.head, batch.op, batch.tail,
                          batch.iteration)


def select_features(
    fs: FeatureSet,
    max_size: int,
    bins: int | None = None,
    cache: MICache | None = None,
) -> FeatureSet:
    """Keep the top ``max_size`` columns by MI with the target (ties keep the
    lower index); surviving columns preserve their relative order."""
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    if fs.n_cols <= max_size:
        return fs
    cache = MICache() if cache is None else cache
    use_bins = default_bins(fs.n_rows) if bins is None else bins
    y = np.asarray(fs.target.values, dtype=np.float64)
    scores = [cache.mi(fs.column(i), y, use_bins) for i in range(fs.n_cols)]
    ranked = sorted(range(fs.n_cols), key=lambda i: (-scores[i], i))
    keep = sorted(ranked[:max_size])
    return fs.with_columns(fs.values[:, keep], tuple(fs.columns[i] for i in keep))


def generation_step(
    fs: FeatureSet,
    head: tuple[int, ...],
    op: str,
    tail: tuple[int, ...] | None,
    op_set: OperationSet,
    max_size: int,
    cap: int = DEFAULT_CROSS_CAP,
    bins: int | None = None,
    cache: MICache | None = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
    iteration: int = 0,
) -> tuple[FeatureSet, GeneratedBatch]:
    """Apply/cross, dedup, append, then shrink back via feature selection.

    An empty post-dedup batch leaves the feature set unchanged (signaled by the
    empty batch, not an error).
    """
    head_view = cluster_columns(fs, head)
    if op_set.is_unary(op):
        batch = apply_unary(op, head_view, head=head, iteration=iteration, max_depth=max_depth)
    else:
        if tail is None:
            raise ValueError(f"binary operation {op!r} needs a tail cluster")
        tail_view = cluster_columns(fs, tail)
        batch = cross_binary(op, head_view, tail_view, cap=cap, bins=bins, cache=cache,
                             head=head, tail=tail, iteration=iteration, max_depth=max_depth)
    batch = dedup(batch, fs)
    if len(batch) == 0:
        return fs, batch
    values = np.concatenate([fs.values] + [c[:, None] for c in batch.columns], axis=1)
    merged = fs.with_columns(values, tuple(fs.columns) + tuple(batch.metas))
    if merged.n_cols > max_size:
        merged = select_features(merged, max_size, bins=bins, cache=cache)
    return merged, batch
