"""Synthetic Gaussian-blob benchmark data with planted cluster labels.

Optionally hierarchical: sub-cluster means are drawn around super-cluster
means at a quarter of the top-level spread, so both levels of structure are
recoverable and labeled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .tensor_io import FeatureMatrix, LabelVector


@dataclass(frozen=True)
class SynthSpec:
    n_clusters: int
    points_per_cluster: int
    dim: int
    center_scale: float
    noise_sigma: float
    hierarchy: tuple[int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1 or self.points_per_cluster < 1 or self.dim < 1:
            raise InvalidInput("counts and dim must be >= 1")
        if self.noise_sigma < 0:
            raise InvalidInput("noise_sigma must be >= 0")
        if self.hierarchy is not None:
            super_count, sub_per_super = self.hierarchy
            if super_count < 1 or sub_per_super < 1:
                raise InvalidInput("hierarchy counts must be >= 1")
            if super_count * sub_per_super != self.n_clusters:
                raise InvalidInput(
                    f"hierarchy {self.hierarchy} does not factor n_clusters={self.n_clusters}")


def generate(spec: SynthSpec) -> tuple[FeatureMatrix, LabelVector, LabelVector | None]:
    """Sample the benchmark. Same spec (incl. seed) gives bit-identical data.

    Cluster means are isotropic Gaussian draws scaled by center_scale; points
    add isotropic noise_sigma noise. Returns (features, labels, super-labels),
    the last None without hierarchy.
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.n_clusters
    if spec.hierarchy is None:
        means = rng.standard_normal((k, spec.dim)) * spec.center_scale
        super_of = None
    else:
        super_count, sub_per_super = spec.hierarchy
        super_means = rng.standard_normal((super_count, spec.dim)) * spec.center_scale
        offsets = rng.standard_normal((k, spec.dim)) * (spec.center_scale / 4.0)
        means = np.repeat(super_means, sub_per_super, axis=0) + offsets
        super_of = np.repeat(np.arange(super_count, dtype=np.int64), sub_per_super)

    m = spec.points_per_cluster
    rows = []
    labels = np.repeat(np.arange(k, dtype=np.int64), m)
    for j in range(k):
        rows.append(means[j] + rng.standard_normal((m, spec.dim)) * spec.noise_sigma)
    data = np.vstack(rows)
    ids = tuple(f"p{i:05d}" for i in range(k * m))
    matrix = FeatureMatrix(ids, data)
    truth = LabelVector(ids, labels)
    super_truth = None
    if super_of is not None:
        super_truth = LabelVector(ids, super_of[labels])
    return matrix, truth, super_truth


def separation_ratio(matrix: FeatureMatrix, truth: LabelVector) -> float:
    """Min inter-centroid distance over max intra-cluster RMS radius.

    +inf when every cluster is a single repeated point (zero noise). Used to
    gate tests on instances that are genuinely well separated.
    """
    x = matrix.data if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=np.float64)
    y = truth.labels if isinstance(truth, LabelVector) else np.asarray(truth, dtype=np.int64)
    uniq = np.unique(y)
    if len(uniq) < 2:
        raise InvalidInput("separation_ratio needs >= 2 clusters")
    centers = np.vstack([x[y == c].mean(axis=0) for c in uniq])
    radii = [math.sqrt(float(np.mean(np.sum((x[y == c] - centers[i]) ** 2, axis=1))))
             for i, c in enumerate(uniq)]
    min_inter = min(
        float(np.linalg.norm(centers[i] - centers[j]))
        for i in range(len(uniq))
        for j in range(i + 1, len(uniq))
    )
    max_radius = max(radii)
    if max_radius == 0.0:
        return math.inf
    return min_inter / max_radius
