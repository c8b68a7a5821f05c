"""Deep embedded clustering: soft assignments, self-training target, and the
joint refinement loop over encoder weights and cluster centroids.

Soft assignment uses the Student's t kernel with one degree of freedom:
    q_ij = (1 + ||z_i - c_j||^2)^-1 / sum_j' (1 + ||z_i - c_j'||^2)^-1
The target distribution sharpens Q and normalizes by soft cluster frequency:
    p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j'),   f_j = sum_i q_ij
Training minimizes KL(P || Q) with P held constant between refreshes, so each
refresh acts as one round of self-training on the model's own confident
predictions. The decoder is dropped after pretraining; only encoder layers
and centroids move.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autoencoder as ae
from .errors import InvalidInput, NumericFailure
from .kmeans import ClusterState, kmeans_fit
from .tensor_io import FeatureMatrix, LabelVector

_ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class SoftAssignment:
    """Row-stochastic membership matrix Q, entries in (0, 1]."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        object.__setattr__(self, "q", q)
        if q.ndim != 2:
            raise InvalidInput("Q must be a 2-D matrix")
        if np.any(q <= 0.0) or np.any(q > 1.0):
            raise InvalidInput("Q entries must lie in (0, 1]")
        if np.max(np.abs(q.sum(axis=1) - 1.0)) > _ROW_SUM_TOL:
            raise InvalidInput("Q rows must sum to 1")

    @property
    def hard_labels(self) -> np.ndarray:
        return np.argmax(self.q, axis=1).astype(np.int64)


@dataclass(frozen=True)
class TargetDistribution:
    """Sharpened target P with the soft cluster frequencies it used."""

    p: np.ndarray
    frequencies: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        f = np.asarray(self.frequencies, dtype=np.float64)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "frequencies", f)
        if p.ndim != 2 or f.shape != (p.shape[1],):
            raise InvalidInput("P and frequencies have inconsistent shapes")
        if np.any(p < 0.0):
            raise InvalidInput("P entries must be >= 0")
        if np.any(f <= 0.0):
            raise InvalidInput("cluster frequencies must be positive")
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > _ROW_SUM_TOL:
            raise InvalidInput("P rows must sum to 1")


@dataclass(frozen=True)
class DecConfig:
    k: int
    max_iter: int = 8000
    convergence_tol: float = 0.0001
    target_update_interval: int = 100
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int | None = None
    restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise InvalidInput("k must be >= 1")
        if self.max_iter < 1:
            raise InvalidInput("max_iter must be >= 1")
        if not 0.0 < self.convergence_tol < 1.0:
            raise InvalidInput("convergence_tol must be in (0, 1)")
        if self.target_update_interval < 1:
            raise InvalidInput("target_update_interval must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidInput(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidInput("batch_size must be >= 1")


@dataclass(frozen=True)
class HistoryRow:
    """One target-distribution refresh: loss and hard-label churn."""

    update_index: int
    kl_loss: float
    label_change_fraction: float


def _latent_array(latent) -> np.ndarray:
    if isinstance(latent, FeatureMatrix):
        return latent.data
    arr = np.asarray(latent, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInput("latent points must form a 2-D matrix")
    return arr


def _sq_dists(z: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = z[:, None, :] - centroids[None, :, :]
    return np.sum(diff * diff, axis=2)


def soft_assign(latent, centroids) -> SoftAssignment:
    """Student's t (df=1) kernel similarities, normalized per row."""
    z = _latent_array(latent)
    c = np.asarray(centroids, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != z.shape[1]:
        raise InvalidInput(f"centroid shape {c.shape} does not match latent dim {z.shape[1]}")
    if c.shape[0] < 1:
        raise InvalidInput("need at least one centroid")
    kernel = 1.0 / (1.0 + _sq_dists(z, c))
    return SoftAssignment(kernel / kernel.sum(axis=1, keepdims=True))


def target_distribution(q: SoftAssignment) -> TargetDistribution:
    """Square Q, divide by soft cluster frequency, renormalize rows."""
    qm = q.q if isinstance(q, SoftAssignment) else np.asarray(q, dtype=np.float64)
    freq = qm.sum(axis=0)
    if np.any(freq <= 0.0):
        raise NumericFailure("empty soft cluster frequency")
    weight = qm * qm / freq
    p = weight / weight.sum(axis=1, keepdims=True)
    return TargetDistribution(p, freq)


def kl_loss(p, q) -> float:
    """sum_ij p_ij ln(p_ij / q_ij); zero-probability target terms contribute 0."""
    pm = p.p if isinstance(p, TargetDistribution) else np.asarray(p, dtype=np.float64)
    qm = q.q if isinstance(q, SoftAssignment) else np.asarray(q, dtype=np.float64)
    if pm.shape != qm.shape:
        raise InvalidInput(f"shape mismatch: P {pm.shape} vs Q {qm.shape}")
    mask = pm > 0.0
    return float(np.sum(pm[mask] * np.log(pm[mask] / qm[mask])))


def kl_grads(latent, centroids, p, q) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of kl_loss with P constant (stop-gradient).

    dL/dz_i =  2 sum_j (p_ij - q_ij) (1 + ||z_i - c_j||^2)^-1 (z_i - c_j)
    dL/dc_j = -2 sum_i (p_ij - q_ij) (1 + ||z_i - c_j||^2)^-1 (z_i - c_j)
    """
    z = _latent_array(latent)
    c = np.asarray(centroids, dtype=np.float64)
    pm = p.p if isinstance(p, TargetDistribution) else np.asarray(p, dtype=np.float64)
    qm = q.q if isinstance(q, SoftAssignment) else np.asarray(q, dtype=np.float64)
    if pm.shape != qm.shape or pm.shape != (z.shape[0], c.shape[0]):
        raise InvalidInput("P/Q shapes do not match latent and centroids")
    diff = z[:, None, :] - c[None, :, :]
    kernel = 1.0 / (1.0 + np.sum(diff * diff, axis=2))
    coef = (pm - qm) * kernel
    grad_z = 2.0 * np.einsum("ij,ijd->id", coef, diff)
    grad_c = -2.0 * np.einsum("ij,ijd->jd", coef, diff)
    return grad_z, grad_c


class _Optimizer:
    """Adam or SGD-with-momentum over a flat list of arrays."""

    def __init__(self, arrays, config: DecConfig):
        self.kind = config.optimizer
        self.lr = config.lr
        self.momentum = config.momentum
        self.step_count = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays, grads):
        self.step_count += 1
        if self.kind == "sgd":
            out = []
            for i, (a, g) in enumerate(zip(arrays, grads)):
                self.m[i] = self.momentum * self.m[i] - self.lr * g
                out.append(a + self.m[i])
            return out
        out, self.m, self.v = ae._adam_update(
            arrays, grads, self.m, self.v, self.step_count,
            self.lr, 0.9, 0.999, 1e-8)
        return out


def _split_encoder(params: ae.MlpParams):
    n_enc = params.bottleneck_index
    arrays = [np.array(w) for w in params.weights[:n_enc]]
    arrays += [np.array(b) for b in params.biases[:n_enc]]
    return n_enc, arrays


def _rebuild(params: ae.MlpParams, n_enc: int, arrays) -> ae.MlpParams:
    weights = tuple(arrays[:n_enc]) + params.weights[n_enc:]
    biases = tuple(arrays[n_enc : 2 * n_enc]) + params.biases[n_enc:]
    return replace(params, weights=weights, biases=biases)


def dec_fit(
    matrix: FeatureMatrix,
    params: ae.MlpParams,
    config: DecConfig,
) -> tuple[ClusterState, ae.MlpParams, list[HistoryRow]]:
    """Refine encoder and centroids by minimizing KL(P || Q).

    Centroids start from best-of-restarts k-means on the encoded data. Every
    target_update_interval optimizer steps, P is refreshed from the current Q
    and the run stops once the fraction of points whose hard label changed
    since the previous refresh falls below convergence_tol. The first history
    row has no previous refresh to compare against; its change fraction is
    recorded as the sentinel 1.0.
    """
    x = matrix.data if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise InvalidInput(f"data dim {x.shape} does not match network input {params.input_dim}")
    n = x.shape[0]
    if config.k > n:
        raise InvalidInput(f"k={config.k} exceeds n={n}")
    if config.batch_size is not None and config.batch_size > n:
        raise InvalidInput(f"batch_size {config.batch_size} exceeds n={n}")

    latent = ae.encode(params, x)
    km = kmeans_fit(latent, config.k, seed=config.seed, restarts=config.restarts)
    centroids = np.array(km.centroids)

    n_enc, enc_arrays = _split_encoder(params)
    opt = _Optimizer(enc_arrays + [centroids], config)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    order = np.arange(n)
    cursor = n  # forces a reshuffle on first batch draw

    prev_labels = None
    p_full = None
    history: list[HistoryRow] = []
    converged = False
    steps_taken = 0

    for step in range(config.max_iter):
        if step % config.target_update_interval == 0:
            latent = ae.encode(params, x)
            q_full = soft_assign(latent, centroids)
            labels = q_full.hard_labels
            update_index = step // config.target_update_interval
            if prev_labels is None:
                change = 1.0
            else:
                change = float(np.mean(labels != prev_labels))
            p_full = target_distribution(q_full)
            history.append(HistoryRow(update_index, kl_loss(p_full, q_full), change))
            prev_labels = labels
            if update_index > 0 and change < config.convergence_tol:
                converged = True
                break

        if config.batch_size is None:
            rows = slice(None)
            xb = x
        else:
            if cursor + config.batch_size > n:
                order = rng.permutation(n)
                cursor = 0
            rows = order[cursor : cursor + config.batch_size]
            cursor += config.batch_size
            xb = x[rows]

        zb = ae.encode(params, xb)
        qb = soft_assign(zb, centroids)
        grad_z, grad_c = kl_grads(zb, centroids, p_full.p[rows], qb)
        enc_grads = ae.encoder_grad_from_latent(params, xb, grad_z)
        flat_grads = list(enc_grads.weights) + list(enc_grads.biases) + [grad_c]
        flat_arrays = opt.step(enc_arrays + [centroids], flat_grads)
        enc_arrays, centroids = flat_arrays[:-1], flat_arrays[-1]
        params = _rebuild(params, n_enc, enc_arrays)
        steps_taken = step + 1

    latent = ae.encode(params, x)
    q_final = soft_assign(latent, centroids)
    assignments = q_final.hard_labels
    wcss = float(np.sum((latent - centroids[assignments]) ** 2))
    state = ClusterState(centroids, assignments, wcss, steps_taken, converged)
    return state, params, history


def subcluster(
    matrix: FeatureMatrix,
    state: ClusterState,
    cluster_id,
    sub_k: int,
    config: DecConfig,
    params: ae.MlpParams | None = None,
    pretrain_dims=None,
    pretrain_epochs: int = 100,
) -> tuple[ClusterState, LabelVector, ae.MlpParams]:
    """Re-run DEC on the members of one cluster.

    cluster_id may be the string "max" to pick the most populated cluster.
    Pass params to reuse an already-pretrained network; otherwise a compact
    autoencoder is pretrained on the member rows first. Returned labels are
    local 0..sub_k-1, keyed by the member ids.
    """
    sizes = np.bincount(state.assignments, minlength=len(state.centroids))
    if cluster_id == "max":
        cluster_id = int(np.argmax(sizes))
    cluster_id = int(cluster_id)
    if not 0 <= cluster_id < len(state.centroids):
        raise InvalidInput(f"cluster_id {cluster_id} out of range")
    member_rows = np.flatnonzero(state.assignments == cluster_id)
    if len(member_rows) < sub_k:
        raise InvalidInput(
            f"cluster {cluster_id} has {len(member_rows)} members, fewer than sub_k={sub_k}")
    sub_matrix = FeatureMatrix(
        tuple(matrix.ids[i] for i in member_rows), matrix.data[member_rows])
    if params is None:
        d = sub_matrix.d
        if pretrain_dims is None:
            latent_dim = min(10, d)
            pretrain_dims = (d, max(32, 2 * latent_dim), latent_dim,
                             max(32, 2 * latent_dim), d)
        params, _ = ae.pretrain(
            sub_matrix, pretrain_dims, seed=config.seed, epochs=pretrain_epochs,
            batch_size=min(256, sub_matrix.n))
    sub_config = replace(config, k=sub_k)
    sub_state, refined, _ = dec_fit(sub_matrix, params, sub_config)
    local = LabelVector(sub_matrix.ids, sub_state.assignments)
    return sub_state, local, refined
