"""Clustering quality metrics and the report document the pipeline emits.

Internal metrics (silhouette, Calinski-Harabasz) score a partition against
the feature geometry; external metrics (adjusted Rand, V-measure) score it
against a reference labeling. All are exact, not sampled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .tensor_io import FeatureMatrix, LabelVector, align_labels


def _as_array(matrix) -> np.ndarray:
    if isinstance(matrix, FeatureMatrix):
        return matrix.data
    return np.asarray(matrix, dtype=np.float64)


def _labels_for(matrix, labels) -> np.ndarray:
    """Label array positionally aligned with the matrix rows."""
    if isinstance(labels, LabelVector):
        if isinstance(matrix, FeatureMatrix):
            return align_labels(matrix, labels)
        return labels.labels
    out = np.asarray(labels, dtype=np.int64)
    if out.ndim != 1:
        raise InvalidInput("labels must be one-dimensional")
    return out


def _label_pair(truth, pred) -> tuple[np.ndarray, np.ndarray]:
    """Align two labelings by id when both carry ids, else positionally."""
    if isinstance(truth, LabelVector) and isinstance(pred, LabelVector):
        if sorted(truth.ids) != sorted(pred.ids):
            raise InvalidInput("labelings cover different ids")
        pos = {v: i for i, v in enumerate(pred.ids)}
        order = np.array([pos[v] for v in truth.ids], dtype=np.int64)
        return truth.labels, pred.labels[order]
    a = truth.labels if isinstance(truth, LabelVector) else np.asarray(truth, dtype=np.int64)
    b = pred.labels if isinstance(pred, LabelVector) else np.asarray(pred, dtype=np.int64)
    if a.shape != b.shape:
        raise InvalidInput(f"labelings have different lengths: {a.shape} vs {b.shape}")
    return a, b


@dataclass(frozen=True)
class ContingencyTable:
    """Class-vs-cluster co-occurrence counts with marginals."""

    counts: np.ndarray
    row_marginals: np.ndarray
    col_marginals: np.ndarray
    n: int

    @classmethod
    def from_labels(cls, truth, pred) -> "ContingencyTable":
        a, b = _label_pair(truth, pred)
        _, ai = np.unique(a, return_inverse=True)
        _, bi = np.unique(b, return_inverse=True)
        r = int(ai.max()) + 1 if len(ai) else 0
        s = int(bi.max()) + 1 if len(bi) else 0
        counts = np.zeros((r, s), dtype=np.int64)
        np.add.at(counts, (ai, bi), 1)
        return cls(counts, counts.sum(axis=1), counts.sum(axis=0), int(len(a)))


def silhouette(matrix, labels) -> float:
    """Mean of s(i) = (b-a)/max(a,b) over all points, Euclidean distances.

    a is the mean distance to the point's own cluster (excluding itself), b
    the smallest mean distance to any other cluster. Singleton clusters score
    0, as does any point with max(a,b) = 0.
    """
    x = _as_array(matrix)
    y = _labels_for(matrix, labels)
    n = x.shape[0]
    if n < 3:
        raise InvalidInput(f"silhouette needs n >= 3, got {n}")
    uniq = np.unique(y)
    if len(uniq) < 2:
        raise InvalidInput("silhouette undefined for a single cluster")
    # row-wise differences: exact zeros for duplicate points, unlike the
    # Gram expansion which cancels catastrophically at short range
    dist = np.empty((n, n))
    for i in range(n):
        diff = x - x[i]
        dist[i] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    masks = [y == c for c in uniq]
    sizes = [int(m.sum()) for m in masks]
    scores = np.zeros(n)
    for ci, mask in enumerate(masks):
        idx = np.flatnonzero(mask)
        if sizes[ci] == 1:
            continue  # singleton convention: s = 0
        for i in idx:
            a = dist[i, mask].sum() / (sizes[ci] - 1)
            b = min(
                dist[i, other].mean()
                for cj, other in enumerate(masks)
                if cj != ci
            )
            denom = max(a, b)
            scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def calinski_harabasz(matrix, labels) -> float:
    """(B/(k-1)) / (W/(n-k)); returns +inf when the partition is exact (W=0)."""
    x = _as_array(matrix)
    y = _labels_for(matrix, labels)
    n = x.shape[0]
    uniq = np.unique(y)
    k = len(uniq)
    if not 2 <= k <= n - 1:
        raise InvalidInput(f"calinski_harabasz needs 2 <= k <= n-1, got k={k}, n={n}")
    mu = x.mean(axis=0)
    between = 0.0
    within = 0.0
    for c in uniq:
        members = x[y == c]
        center = members.mean(axis=0)
        between += len(members) * float(np.sum((center - mu) ** 2))
        within += float(np.sum((members - center) ** 2))
    if within == 0.0:
        return math.inf
    return (between / (k - 1)) / (within / (n - k))


def _pairs(v: np.ndarray) -> float:
    return float(np.sum(v.astype(np.float64) * (v - 1) / 2.0))


def adjusted_rand(truth, pred) -> float:
    """Chance-corrected pair-counting agreement in [-1, 1]."""
    table = ContingencyTable.from_labels(truth, pred)
    index = _pairs(table.counts.ravel())
    sum_rows = _pairs(table.row_marginals)
    sum_cols = _pairs(table.col_marginals)
    total = _pairs(np.array([table.n]))
    if total == 0.0:
        return 1.0
    expected = sum_rows * sum_cols / total
    maximum = (sum_rows + sum_cols) / 2.0
    if maximum == expected:
        # Both labelings are degenerate (all-singletons or single-block);
        # agreement is then all-or-nothing.
        return 1.0 if index == expected else 0.0
    return (index - expected) / (maximum - expected)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def v_measure(truth, pred) -> float:
    """Harmonic mean of homogeneity and completeness, natural-log entropies."""
    table = ContingencyTable.from_labels(truth, pred)
    n = table.n
    if n == 0:
        return 1.0
    h_c = _entropy(table.row_marginals, n)
    h_k = _entropy(table.col_marginals, n)
    h_c_given_k = 0.0
    h_k_given_c = 0.0
    for i in range(table.counts.shape[0]):
        for j in range(table.counts.shape[1]):
            nij = table.counts[i, j]
            if nij == 0:
                continue
            h_c_given_k -= nij / n * math.log(nij / table.col_marginals[j])
            h_k_given_c -= nij / n * math.log(nij / table.row_marginals[i])
    homogeneity = 1.0 if h_c == 0.0 else 1.0 - h_c_given_k / h_c
    completeness = 1.0 if h_k == 0.0 else 1.0 - h_k_given_c / h_k
    if homogeneity + completeness == 0.0:
        return 0.0
    return 2.0 * homogeneity * completeness / (homogeneity + completeness)


def cluster_sizes(labels) -> np.ndarray:
    """Counts per label value 0..max(labels), zeros included."""
    y = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels, dtype=np.int64)
    if len(y) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.bincount(y, minlength=int(y.max()) + 1).astype(np.int64)


@dataclass(frozen=True)
class MetricsReport:
    """Flat JSON document summarizing one clustering run.

    Null fields mean "not computed": ari/vmes require ground truth, sc/chi
    require at least two clusters. chi may be +inf (exact partition); the
    JSON then carries Infinity plus the chi_infinite flag.
    """

    sc: float | None
    chi: float | None
    ari: float | None
    vmes: float | None
    cluster_sizes: tuple[int, ...]
    k: int
    feature_name: str
    method: str
    sc_space: str = "features"
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "sc": self.sc,
            "chi": self.chi,
            "chi_infinite": self.chi is not None and math.isinf(self.chi),
            "ari": self.ari,
            "vmes": self.vmes,
            "cluster_sizes": list(int(v) for v in self.cluster_sizes),
            "k": self.k,
            "feature_name": self.feature_name,
            "method": self.method,
            "sc_space": self.sc_space,
            "config": self.config,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        return cls(
            sc=doc["sc"],
            chi=doc["chi"],
            ari=doc["ari"],
            vmes=doc["vmes"],
            cluster_sizes=tuple(doc["cluster_sizes"]),
            k=doc["k"],
            feature_name=doc["feature_name"],
            method=doc["method"],
            sc_space=doc.get("sc_space", "features"),
            config=doc.get("config", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))
