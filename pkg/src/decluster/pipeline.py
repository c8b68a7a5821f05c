"""End-to-end orchestration: load features, reduce, cluster, score, report.

Every entry point returns a dict of artifact filename -> content (text or
bytes). The CLI writes them to the output directory; the service streams the
same dict over HTTP, so both front ends produce identical files.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from . import dec_core, kmeans, metrics, reduce, synth, tensor_io
from .errors import InvalidInput

DEFAULT_ENCODER_DIMS = (500, 500, 2000, 10)


@dataclass(frozen=True)
class PipelineConfig:
    features: str
    out: str
    truth: str | None = None
    reduce: str = "none"
    method: str = "kmeans"
    k: int | None = None
    elbow: tuple[int, int] | None = None
    dims: tuple[int, ...] = DEFAULT_ENCODER_DIMS
    max_iter: int = 8000
    tol: float = 0.0001
    update_interval: int = 100
    optimizer: str = "adam"
    lr: float = 1e-3
    pretrain_epochs: int = 100
    pretrain_batch: int = 256
    batch_size: int | None = None
    restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("kmeans", "dec"):
            raise InvalidInput(f"unknown method {self.method!r}")
        if (self.k is None) == (self.elbow is None):
            raise InvalidInput("exactly one of k and an elbow range is required")
        if self.k is not None and self.k < 1:
            raise InvalidInput("k must be >= 1")
        if self.elbow is not None and not self.elbow[0] < self.elbow[1]:
            raise InvalidInput("elbow range must satisfy min < max")
        for part in _reduce_steps(self.reduce):
            _validate_reduce_step(part)


def _reduce_steps(spec: str) -> list[str]:
    steps = [part.strip() for part in spec.split(",") if part.strip()]
    return [s for s in steps if s != "none"]


def _validate_reduce_step(step: str) -> None:
    if step in ("gap", "std"):
        return
    if step.startswith("pca:"):
        try:
            p = int(step[4:])
        except ValueError:
            raise InvalidInput(f"bad pca component count in {step!r}") from None
        if p < 1:
            raise InvalidInput("pca component count must be >= 1")
        return
    raise InvalidInput(f"unknown reduce step {step!r}")


def load_features(source) -> tensor_io.FeatureMatrix:
    """Read a feature matrix from .fmat or .csv; pass a FeatureMatrix through."""
    if isinstance(source, tensor_io.FeatureMatrix):
        return source
    path = Path(source)
    if path.suffix == ".fmat":
        return tensor_io.read_fmat(path)
    return tensor_io.read_csv(path)


def _feature_name(source) -> str:
    if isinstance(source, tensor_io.FeatureMatrix):
        return "features"
    return Path(source).stem


def apply_reduce(matrix: tensor_io.FeatureMatrix, spec: str) -> tensor_io.FeatureMatrix:
    """Run the comma-separated reduction chain left to right."""
    for step in _reduce_steps(spec):
        _validate_reduce_step(step)
        if step == "gap":
            matrix = reduce.gap(matrix)
        elif step == "std":
            matrix = reduce.standardize(matrix)
        else:
            p = int(step[4:])
            model = reduce.pca_fit(matrix, p)
            matrix = reduce.pca_transform(model, matrix)
    return matrix


def _fmat_bytes(matrix: tensor_io.FeatureMatrix) -> bytes:
    return tensor_io._encode_fmat(matrix)


def _labels_csv(labels: tensor_io.LabelVector) -> str:
    lines = [f"{i},{v}" for i, v in zip(labels.ids, labels.labels)]
    return "\n".join(lines) + "\n"


def _params_bytes(params: ae.MlpParams) -> bytes:
    # save_params writes to a path; round through a private temp file
    with tempfile.TemporaryDirectory() as tdir:
        p = Path(tdir) / "params.net"
        ae.save_params(params, p)
        return p.read_bytes()


def _csv_float(v: float) -> str:
    return repr(float(v))


def write_artifacts(artifacts: dict[str, str | bytes], out_dir: str | Path) -> list[Path]:
    """Write each artifact atomically (temp then rename) into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, content in artifacts.items():
        target = out / name
        tmp = out / (name + ".tmp")
        if isinstance(content, bytes):
            tmp.write_bytes(content)
        else:
            tmp.write_text(content, encoding="utf-8")
        os.replace(tmp, target)
        written.append(target)
    return written


def _load_labels(matrix: tensor_io.FeatureMatrix, source) -> tensor_io.LabelVector:
    labels = source if isinstance(source, tensor_io.LabelVector) else tensor_io.read_labels(source)
    # validate coverage early so downstream ops get aligned labels
    tensor_io.align_labels(matrix, labels)
    return labels


def _score(
    space: tensor_io.FeatureMatrix,
    labels: np.ndarray,
    truth: tensor_io.LabelVector | None,
) -> tuple[float | None, float | None, float | None, float | None]:
    uniq = len(np.unique(labels))
    sc = chi = None
    if uniq >= 2 and space.n >= 3:
        sc = metrics.silhouette(space, labels)
    if 2 <= uniq <= space.n - 1:
        chi = metrics.calinski_harabasz(space, labels)
    ari = vmes = None
    if truth is not None:
        truth_arr = tensor_io.align_labels(space, truth)
        ari = metrics.adjusted_rand(truth_arr, labels)
        vmes = metrics.v_measure(truth_arr, labels)
    return sc, chi, ari, vmes


def _history_csv(history: list[dec_core.HistoryRow]) -> str:
    lines = ["update_index,kl_loss,label_change_fraction"]
    for row in history:
        lines.append(
            f"{row.update_index},{_csv_float(row.kl_loss)},{_csv_float(row.label_change_fraction)}")
    return "\n".join(lines) + "\n"


def _elbow_csv(result: kmeans.ElbowResult) -> str:
    lines = ["k,wcss"]
    for k, w in zip(result.ks, result.wcss):
        lines.append(f"{k},{_csv_float(w)}")
    return "\n".join(lines) + "\n"


def _effective_config(config: PipelineConfig, k: int) -> dict:
    doc = asdict(config)
    doc["k"] = k
    doc["dims"] = list(config.dims)
    doc["elbow"] = list(config.elbow) if config.elbow else None
    return doc


def run_pipeline(config: PipelineConfig, matrix=None, truth=None) -> dict[str, str | bytes]:
    """The full reduce -> cluster -> score path. Returns the artifact dict.

    matrix/truth may be passed in-memory (the service does); otherwise they
    are loaded from the paths in the config.
    """
    matrix = load_features(config.features if matrix is None else matrix)
    if truth is None and config.truth:
        truth = config.truth
    truth = _load_labels(matrix, truth) if truth is not None else None
    reduced = apply_reduce(matrix, config.reduce)
    artifacts: dict[str, str | bytes] = {}

    if config.method == "kmeans":
        k = config.k
        if config.elbow is not None:
            elbow = kmeans.elbow_select(
                reduced, config.elbow[0], config.elbow[1], seed=config.seed)
            artifacts["elbow.csv"] = _elbow_csv(elbow)
            k = elbow.selected_k
        state = kmeans.kmeans_fit(
            reduced, k, seed=config.seed, restarts=config.restarts)
        space = reduced
        sc_space = "features"
    else:
        full_dims = (reduced.d,) + tuple(config.dims) + tuple(config.dims[:-1][::-1]) + (reduced.d,)
        params, _ = ae.pretrain(
            reduced, full_dims, seed=config.seed, epochs=config.pretrain_epochs,
            batch_size=min(config.pretrain_batch, reduced.n))
        k = config.k
        if config.elbow is not None:
            latent0 = ae.encode(params, reduced)
            elbow = kmeans.elbow_select(
                latent0, config.elbow[0], config.elbow[1], seed=config.seed)
            artifacts["elbow.csv"] = _elbow_csv(elbow)
            k = elbow.selected_k
        dconfig = dec_core.DecConfig(
            k=k, max_iter=config.max_iter, convergence_tol=config.tol,
            target_update_interval=config.update_interval,
            optimizer=config.optimizer, lr=config.lr,
            batch_size=config.batch_size, restarts=config.restarts,
            seed=config.seed)
        state, refined, history = dec_core.dec_fit(reduced, params, dconfig)
        artifacts["history.csv"] = _history_csv(history)
        artifacts["params.net"] = _params_bytes(refined)
        space = ae.encode(refined, reduced)
        artifacts["latent.fmat"] = _fmat_bytes(space)
        sc_space = "latent"

    assignments = tensor_io.LabelVector(matrix.ids, state.assignments)
    sc, chi, ari, vmes = _score(space, state.assignments, truth)
    report = metrics.MetricsReport(
        sc=sc, chi=chi, ari=ari, vmes=vmes,
        cluster_sizes=tuple(int(v) for v in metrics.cluster_sizes(state.assignments)),
        k=k, feature_name=Path(config.features).stem, method=config.method,
        sc_space=sc_space, config=_effective_config(config, k))
    artifacts["assignments.csv"] = _labels_csv(assignments)
    artifacts["report.json"] = report.to_json()
    return artifacts


def run_synth(spec: synth.SynthSpec) -> dict[str, str | bytes]:
    matrix, truth, super_truth = synth.generate(spec)
    artifacts: dict[str, str | bytes] = {
        "features.fmat": _fmat_bytes(matrix),
        "truth.csv": _labels_csv(truth),
    }
    if super_truth is not None:
        artifacts["super.csv"] = _labels_csv(super_truth)
    doc = asdict(spec)
    doc["hierarchy"] = list(spec.hierarchy) if spec.hierarchy else None
    artifacts["spec.json"] = json.dumps(doc, indent=2) + "\n"
    return artifacts


def run_reduce(features, reduce_spec: str) -> dict[str, str | bytes]:
    matrix = load_features(features)
    reduced = apply_reduce(matrix, reduce_spec)
    return {"reduced.fmat": _fmat_bytes(reduced)}


def run_metrics(
    features,
    labels,
    truth=None,
    reduce_spec: str = "none",
    method: str = "external",
) -> dict[str, str | bytes]:
    """Score an existing labeling against the (optionally reduced) features."""
    matrix = load_features(features)
    aligned = tensor_io.align_labels(matrix, _load_labels(matrix, labels))
    truth_vec = _load_labels(matrix, truth) if truth is not None else None
    space = apply_reduce(matrix, reduce_spec)
    sc, chi, ari, vmes = _score(space, aligned, truth_vec)
    k = int(len(np.unique(aligned)))
    report = metrics.MetricsReport(
        sc=sc, chi=chi, ari=ari, vmes=vmes,
        cluster_sizes=tuple(int(v) for v in metrics.cluster_sizes(aligned)),
        k=k, feature_name=_feature_name(features), method=method,
        sc_space="features",
        config={"features": _feature_name(features),
                "truth": truth is not None, "reduce": reduce_spec})
    return {"report.json": report.to_json()}


def run_elbow(
    features,
    k_min: int,
    k_max: int,
    reduce_spec: str = "none",
    seed: int = 0,
    restarts: int = 5,
) -> dict[str, str | bytes]:
    matrix = apply_reduce(load_features(features), reduce_spec)
    result = kmeans.elbow_select(matrix, k_min, k_max, seed=seed, restarts=restarts)
    doc = {"selected_k": result.selected_k, "no_knee": result.no_knee,
           "ks": list(result.ks), "wcss": list(result.wcss)}
    return {"elbow.csv": _elbow_csv(result), "elbow.json": json.dumps(doc, indent=2) + "\n"}


def _sweep_csv(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(_csv_float(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def run_ksweep(
    config: PipelineConfig, k_list: list[int], matrix=None, truth=None,
) -> dict[str, str | bytes]:
    """Cluster once per k with a fixed method/seed; tabulate (k, sc, chi)."""
    if not k_list or any(k < 1 for k in k_list):
        raise InvalidInput("k list must be non-empty positive integers")
    matrix = load_features(config.features if matrix is None else matrix)
    if truth is None and config.truth:
        truth = config.truth
    truth = _load_labels(matrix, truth) if truth is not None else None
    reduced = apply_reduce(matrix, config.reduce)
    rows = []
    for k in k_list:
        if config.method == "kmeans":
            state = kmeans.kmeans_fit(reduced, k, seed=config.seed, restarts=config.restarts)
            space = reduced
        else:
            full_dims = (reduced.d,) + tuple(config.dims) + tuple(config.dims[:-1][::-1]) + (reduced.d,)
            params, _ = ae.pretrain(
                reduced, full_dims, seed=config.seed, epochs=config.pretrain_epochs,
                batch_size=min(config.pretrain_batch, reduced.n))
            dconfig = dec_core.DecConfig(
                k=k, max_iter=config.max_iter, convergence_tol=config.tol,
                target_update_interval=config.update_interval,
                optimizer=config.optimizer, lr=config.lr,
                batch_size=config.batch_size, restarts=config.restarts, seed=config.seed)
            state, refined, _ = dec_core.dec_fit(reduced, params, dconfig)
            space = ae.encode(refined, reduced)
        sc, chi, _, _ = _score(space, state.assignments, truth)
        rows.append([k, sc, chi])
    return {"ksweep.csv": _sweep_csv(["k", "sc", "chi"], rows)}


def run_encsweep(
    config: PipelineConfig, z_list: list[int], matrix=None, truth=None,
) -> dict[str, str | bytes]:
    """Rerun pretrain + refinement per bottleneck size, fixed seed."""
    if not z_list or any(z < 1 for z in z_list):
        raise InvalidInput("z list must be non-empty positive integers")
    if config.k is None:
        raise InvalidInput("encoder sweep needs a fixed k")
    matrix = load_features(config.features if matrix is None else matrix)
    if truth is None and config.truth:
        truth = config.truth
    truth = _load_labels(matrix, truth) if truth is not None else None
    reduced = apply_reduce(matrix, config.reduce)
    rows = []
    for z in z_list:
        enc = tuple(config.dims[:-1]) + (z,)
        full_dims = (reduced.d,) + enc + tuple(enc[:-1][::-1]) + (reduced.d,)
        params, _ = ae.pretrain(
            reduced, full_dims, seed=config.seed, epochs=config.pretrain_epochs,
            batch_size=min(config.pretrain_batch, reduced.n))
        dconfig = dec_core.DecConfig(
            k=config.k, max_iter=config.max_iter, convergence_tol=config.tol,
            target_update_interval=config.update_interval,
            optimizer=config.optimizer, lr=config.lr,
            batch_size=config.batch_size, restarts=config.restarts, seed=config.seed)
        state, refined, _ = dec_core.dec_fit(reduced, params, dconfig)
        space = ae.encode(refined, reduced)
        sc, chi, ari, vmes = _score(space, state.assignments, truth)
        rows.append([z, sc, chi, ari, vmes])
    return {"encsweep.csv": _sweep_csv(["z", "sc", "chi", "ari", "vmes"], rows)}


def run_subcluster(
    features,
    labels,
    cluster_id,
    sub_k: int,
    config: PipelineConfig,
) -> dict[str, str | bytes]:
    """Cluster the members of one parent cluster; labels stay local 0..sub_k-1."""
    matrix = load_features(features)
    aligned = tensor_io.align_labels(matrix, _load_labels(matrix, labels))
    n_clusters = int(aligned.max()) + 1
    reduced = apply_reduce(matrix, config.reduce)
    if cluster_id == "max":
        cluster_id = int(np.argmax(np.bincount(aligned, minlength=n_clusters)))
    cluster_id = int(cluster_id)
    if not 0 <= cluster_id < n_clusters:
        raise InvalidInput(f"cluster_id {cluster_id} out of range")
    member_rows = np.flatnonzero(aligned == cluster_id)
    if len(member_rows) < sub_k:
        raise InvalidInput(
            f"cluster {cluster_id} has {len(member_rows)} members, fewer than sub_k={sub_k}")
    sub_matrix = tensor_io.FeatureMatrix(
        tuple(reduced.ids[i] for i in member_rows), reduced.data[member_rows])

    if config.method == "kmeans":
        state = kmeans.kmeans_fit(sub_matrix, sub_k, seed=config.seed, restarts=config.restarts)
        local = tensor_io.LabelVector(sub_matrix.ids, state.assignments)
        space = sub_matrix
        sc_space = "features"
    else:
        centroids = np.vstack(
            [reduced.data[aligned == c].mean(axis=0) for c in range(n_clusters)])
        parent = kmeans.ClusterState(centroids, aligned, 0.0)
        dconfig = dec_core.DecConfig(
            k=sub_k, max_iter=config.max_iter, convergence_tol=config.tol,
            target_update_interval=config.update_interval,
            optimizer=config.optimizer, lr=config.lr,
            batch_size=config.batch_size, restarts=config.restarts, seed=config.seed)
        dims = (sub_matrix.d,) + tuple(config.dims) + tuple(config.dims[:-1][::-1]) + (sub_matrix.d,)
        params, _ = ae.pretrain(
            sub_matrix, dims, seed=config.seed, epochs=config.pretrain_epochs,
            batch_size=min(config.pretrain_batch, sub_matrix.n))
        state, local, refined = dec_core.subcluster(
            reduced, parent, cluster_id, sub_k, dconfig, params=params)
        space = tensor_io.FeatureMatrix(sub_matrix.ids, ae.encode(refined, sub_matrix.data))
        sc_space = "latent"

    sc, chi, _, _ = _score(space, local.labels, None)
    report = metrics.MetricsReport(
        sc=sc, chi=chi, ari=None, vmes=None,
        cluster_sizes=tuple(int(v) for v in metrics.cluster_sizes(local.labels)),
        k=sub_k, feature_name=_feature_name(features), method=config.method,
        sc_space=sc_space,
        config={"cluster_id": cluster_id, "sub_k": sub_k, "seed": config.seed,
                "reduce": config.reduce, "method": config.method})
    return {"subassignments.csv": _labels_csv(local), "subreport.json": report.to_json()}


def run_project2d(
    features,
    labels=None,
    reduce_spec: str = "none",
) -> dict[str, str | bytes]:
    """First two principal coordinates per row plus a label column."""
    matrix = apply_reduce(load_features(features), reduce_spec)
    if matrix.d < 2:
        raise InvalidInput("projection needs feature dimension >= 2")
    if labels is not None:
        aligned = tensor_io.align_labels(matrix, _load_labels(matrix, labels))
    else:
        aligned = np.zeros(matrix.n, dtype=np.int64)
    p = min(2, matrix.n - 1, matrix.d) if matrix.n > 1 else 1
    if matrix.n == 1:
        coords = np.zeros((1, 2))
    else:
        model = reduce.pca_fit(matrix, p)
        raw = reduce.pca_transform(model, matrix).data
        coords = np.zeros((matrix.n, 2))
        coords[:, : raw.shape[1]] = raw
    lines = ["id,x,y,label"]
    for i, rid in enumerate(matrix.ids):
        lines.append(f"{rid},{_csv_float(coords[i, 0])},{_csv_float(coords[i, 1])},{aligned[i]}")
    return {"projection.csv": "\n".join(lines) + "\n"}
