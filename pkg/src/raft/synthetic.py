"""Synthetic fixture datasets for experiments and the acceptance suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import FeatureMeta, FeatureSet, Ident, Target, TaskKind, write_csv


def squared_sum_regression(
    m: int = 500,
    n_distractors: int = 6,
    noise_scale: float = 0.1,
    seed: int = 2024,
) -> FeatureSet:
    """Regression target y = (f1 + f2)^2 + noise with standard-normal features;
    f3..f(2+n_distractors) carry no signal."""
    rng = np.random.default_rng(seed)
    n = 2 + n_distractors
    values = rng.standard_normal((m, n))
    y = (values[:, 0] + values[:, 1]) ** 2 + noise_scale * rng.standard_normal(m)
    columns = tuple(FeatureMeta.from_lineage(Ident(f"f{i + 1}")) for i in range(n))
    return FeatureSet(values, columns, Target(y, TaskKind.REGRESSION, "y"))


def two_class_blobs(m: int = 80, n_features: int = 4, seed: int = 7) -> FeatureSet:
    """Linearly separable-ish two-class classification fixture."""
    rng = np.random.default_rng(seed)
    half = m // 2
    a = rng.standard_normal((half, n_features)) + 2.0
    b = rng.standard_normal((m - half, n_features)) - 2.0
    values = np.vstack([a, b])
    labels = np.concatenate([np.zeros(half, dtype=np.int64),
                             np.ones(m - half, dtype=np.int64)])
    perm = rng.permutation(m)
    columns = tuple(FeatureMeta.from_lineage(Ident(f"x{i}")) for i in range(n_features))
    return FeatureSet(values[perm], columns,
                      Target(labels[perm], TaskKind.CLASSIFICATION, "label"))


def write_fixture(fs: FeatureSet, path: str | Path) -> Path:
    path = Path(path)
    write_csv(fs, path)
    return path
