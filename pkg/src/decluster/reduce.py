"""Dimensionality reduction and normalization applied before clustering."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .tensor_io import FeatureMatrix, read_container, write_container

# Above this input width the d x d covariance is not formed; see pca_fit.
_COV_DIM_LIMIT = 4096


def gap(matrix: FeatureMatrix) -> FeatureMatrix:
    """Global average pooling: mean over all trailing axes, per channel.

    Requires ``dim_shape`` with at least 2 dims; the first dim is the
    channel axis, so a (1024, 7, 7) row becomes a 1024-vector and a
    (512, 512) row becomes the per-row means of that square matrix.
    """
    if matrix.dim_shape is None or len(matrix.dim_shape) < 2:
        raise InvalidInput(
            "gap needs dim_shape with >= 2 dims; supply the raw per-row shape"
        )
    channels = matrix.dim_shape[0]
    pooled = matrix.data.reshape(matrix.n, channels, -1).mean(axis=2)
    return FeatureMatrix(matrix.ids, pooled)


@dataclass(frozen=True)
class PcaModel:
    """Mean vector plus top-p orthonormal principal directions.

    ``explained_variance`` is sorted descending; ``rank_deficient`` is set
    when the data had rank below the requested p and fewer components were
    returned.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    rank_deficient: bool = False

    @property
    def p(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]


def _fix_signs(components: np.ndarray) -> np.ndarray:
    # Deterministic orientation: largest-magnitude entry of each row positive.
    out = components.copy()
    for i, row in enumerate(out):
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            out[i] = -row
    return out


def pca_fit(matrix: FeatureMatrix, p: int) -> PcaModel:
    """Top-p principal directions of the centered data.

    Uses the d x d covariance eigendecomposition for d <= 4096 and the
    n x n Gram (dual) eigendecomposition otherwise; both are exact and
    run-to-run deterministic. Sample (n-1) normalization throughout.
    """
    n, d = matrix.n, matrix.d
    if not 1 <= p <= min(n - 1, d):
        raise InvalidInput(f"p={p} outside 1..min(n-1, d)={min(n - 1, d)}")
    mean = matrix.data.mean(axis=0)
    centered = matrix.data - mean
    if d <= _COV_DIM_LIMIT:
        cov = centered.T @ centered / (n - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1]
        variances = eigvals[order]
        components = eigvecs[:, order].T
    else:
        gram = centered @ centered.T / (n - 1)
        eigvals, eigvecs = np.linalg.eigh(gram)
        order = np.argsort(eigvals)[::-1]
        variances = eigvals[order]
        # Map Gram eigenvectors u back to input-space directions v = X^T u / ||.||
        components = np.zeros((len(order), d))
        for i, idx in enumerate(order):
            v = centered.T @ eigvecs[:, idx]
            norm = np.linalg.norm(v)
            if norm > 0:
                components[i] = v / norm

    total = variances.sum()
    tol = max(total, 1.0) * 1e-12
    rank = int(np.sum(variances > tol))
    keep = min(p, rank)
    rank_deficient = keep < p
    variances = np.clip(variances[:keep], 0.0, None)
    return PcaModel(
        mean=mean,
        components=_fix_signs(components[:keep]),
        explained_variance=variances,
        rank_deficient=rank_deficient,
    )


def pca_transform(model: PcaModel, matrix: FeatureMatrix) -> FeatureMatrix:
    """Project rows onto the principal directions (centered coordinates)."""
    if matrix.d != model.d:
        raise InvalidInput(f"matrix has {matrix.d} columns, model expects {model.d}")
    projected = (matrix.data - model.mean) @ model.components.T
    return FeatureMatrix(matrix.ids, projected)


def pca_inverse_transform(model: PcaModel, matrix: FeatureMatrix) -> FeatureMatrix:
    """Map principal coordinates back to the original feature space."""
    if matrix.d != model.p:
        raise InvalidInput(f"matrix has {matrix.d} columns, model has {model.p} components")
    restored = matrix.data @ model.components + model.mean
    return FeatureMatrix(matrix.ids, restored)


def standardize(matrix: FeatureMatrix) -> FeatureMatrix:
    """Center each column to mean 0 and scale to population std 1.

    Zero-variance columns pass through as zeros.
    """
    if matrix.n < 2:
        raise InvalidInput("standardize needs at least 2 rows")
    mean = matrix.data.mean(axis=0)
    std = matrix.data.std(axis=0)
    centered = matrix.data - mean
    out = np.divide(centered, std, out=np.zeros_like(centered), where=std > 0)
    return FeatureMatrix(matrix.ids, out, matrix.dim_shape)


def save_pca(model: PcaModel, path: str | Path) -> None:
    sections = [
        ("mean", FeatureMatrix(("mean",), model.mean.reshape(1, -1))),
        ("components", FeatureMatrix(
            tuple(f"pc{i}" for i in range(model.p)), model.components)),
        ("explained_variance", FeatureMatrix(("var",), model.explained_variance.reshape(1, -1))),
        ("rank_deficient", FeatureMatrix(("flag",), np.array([[1.0 if model.rank_deficient else 0.0]]))),
    ]
    write_container(sections, path)


def load_pca(path: str | Path) -> PcaModel:
    sections = read_container(path)
    return PcaModel(
        mean=sections["mean"].data[0],
        components=sections["components"].data,
        explained_variance=sections["explained_variance"].data[0],
        rank_deficient=bool(sections["rank_deficient"].data[0, 0] != 0.0),
    )
