"""HTTP service wrapping the pipeline.

Each endpoint accepts the inputs inline (matrices as id+row lists), runs the
same pipeline function the CLI uses, and returns the artifact files that a
local run would have written: text artifacts verbatim, binary ones base64.
Error categories map to status codes: config 400, io 404, numeric 422.
"""

from __future__ import annotations

import base64

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import pipeline, synth, tensor_io
from .errors import ClusterError

app = FastAPI(title="decluster", version="1.0")


class MatrixModel(BaseModel):
    ids: list[str]
    data: list[list[float]]
    dim_shape: list[int] | None = None

    def to_matrix(self) -> tensor_io.FeatureMatrix:
        return tensor_io.FeatureMatrix(
            tuple(self.ids), np.asarray(self.data, dtype=np.float64),
            tuple(self.dim_shape) if self.dim_shape else None)

    @classmethod
    def from_matrix(cls, m: tensor_io.FeatureMatrix) -> "MatrixModel":
        return cls(ids=list(m.ids), data=[[float(v) for v in row] for row in m.data],
                   dim_shape=list(m.dim_shape) if m.dim_shape else None)


class LabelsModel(BaseModel):
    ids: list[str]
    labels: list[int]

    def to_labels(self) -> tensor_io.LabelVector:
        return tensor_io.LabelVector(tuple(self.ids), np.asarray(self.labels, dtype=np.int64))


class ConfigModel(BaseModel):
    features: str = "features"
    out: str = "out"
    truth: str | None = None
    reduce: str = "none"
    method: str = "kmeans"
    k: int | None = None
    elbow: list[int] | None = None
    dims: list[int] = Field(default_factory=lambda: list(pipeline.DEFAULT_ENCODER_DIMS))
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

    def to_config(self) -> pipeline.PipelineConfig:
        return pipeline.PipelineConfig(
            features=self.features, out=self.out, truth=self.truth,
            reduce=self.reduce, method=self.method, k=self.k,
            elbow=tuple(self.elbow) if self.elbow else None,
            dims=tuple(self.dims), max_iter=self.max_iter, tol=self.tol,
            update_interval=self.update_interval, optimizer=self.optimizer,
            lr=self.lr, pretrain_epochs=self.pretrain_epochs,
            pretrain_batch=self.pretrain_batch, batch_size=self.batch_size,
            restarts=self.restarts, seed=self.seed)


class SynthRequest(BaseModel):
    n_clusters: int
    points_per_cluster: int
    dim: int
    center_scale: float
    noise_sigma: float
    hierarchy: list[int] | None = None
    seed: int = 0


class ReduceRequest(BaseModel):
    features: MatrixModel
    reduce: str


class RunRequest(BaseModel):
    config: ConfigModel
    features: MatrixModel
    truth: LabelsModel | None = None


class MetricsRequest(BaseModel):
    features: MatrixModel
    labels: LabelsModel
    truth: LabelsModel | None = None
    reduce: str = "none"


class ElbowRequest(BaseModel):
    features: MatrixModel
    k_min: int
    k_max: int
    reduce: str = "none"
    seed: int = 0
    restarts: int = 5


class KsweepRequest(BaseModel):
    config: ConfigModel
    features: MatrixModel
    truth: LabelsModel | None = None
    ks: list[int]


class EncsweepRequest(BaseModel):
    config: ConfigModel
    features: MatrixModel
    truth: LabelsModel | None = None
    zs: list[int]


class SubclusterRequest(BaseModel):
    config: ConfigModel
    features: MatrixModel
    labels: LabelsModel
    cluster_id: str = "max"
    sub_k: int = 2


class Project2dRequest(BaseModel):
    features: MatrixModel
    labels: LabelsModel | None = None
    reduce: str = "none"


class ArtifactModel(BaseModel):
    text: str | None = None
    b64: str | None = None


class ArtifactsResponse(BaseModel):
    artifacts: dict[str, ArtifactModel]


_STATUS = {"config": 400, "io": 404, "numeric": 422}


@app.exception_handler(ClusterError)
async def _cluster_error(request: Request, exc: ClusterError) -> JSONResponse:
    return JSONResponse(
        status_code=_STATUS.get(exc.category, 400),
        content={"detail": str(exc), "category": exc.category})


@app.exception_handler(OSError)
async def _os_error(request: Request, exc: OSError) -> JSONResponse:
    # endpoints mostly take inline data, but configs may still name paths
    return JSONResponse(status_code=_STATUS["io"],
                        content={"detail": str(exc), "category": "io"})


def _pack(artifacts: dict[str, str | bytes]) -> ArtifactsResponse:
    out = {}
    for name, content in artifacts.items():
        if isinstance(content, bytes):
            out[name] = ArtifactModel(b64=base64.b64encode(content).decode("ascii"))
        else:
            out[name] = ArtifactModel(text=content)
    return ArtifactsResponse(artifacts=out)


@app.get("/healthz")
async def healthz() -> dict:
    return {"status": "ok"}


@app.post("/synth", response_model=ArtifactsResponse)
async def synth_endpoint(req: SynthRequest) -> ArtifactsResponse:
    spec = synth.SynthSpec(
        n_clusters=req.n_clusters, points_per_cluster=req.points_per_cluster,
        dim=req.dim, center_scale=req.center_scale, noise_sigma=req.noise_sigma,
        hierarchy=tuple(req.hierarchy) if req.hierarchy else None, seed=req.seed)
    return _pack(pipeline.run_synth(spec))


@app.post("/reduce", response_model=ArtifactsResponse)
async def reduce_endpoint(req: ReduceRequest) -> ArtifactsResponse:
    return _pack(pipeline.run_reduce(req.features.to_matrix(), req.reduce))


@app.post("/run", response_model=ArtifactsResponse)
async def run_endpoint(req: RunRequest) -> ArtifactsResponse:
    truth = req.truth.to_labels() if req.truth else None
    artifacts = pipeline.run_pipeline(
        req.config.to_config(), matrix=req.features.to_matrix(), truth=truth)
    return _pack(artifacts)


@app.post("/metrics", response_model=ArtifactsResponse)
async def metrics_endpoint(req: MetricsRequest) -> ArtifactsResponse:
    truth = req.truth.to_labels() if req.truth else None
    artifacts = pipeline.run_metrics(
        req.features.to_matrix(), req.labels.to_labels(), truth=truth,
        reduce_spec=req.reduce)
    return _pack(artifacts)


@app.post("/elbow", response_model=ArtifactsResponse)
async def elbow_endpoint(req: ElbowRequest) -> ArtifactsResponse:
    artifacts = pipeline.run_elbow(
        req.features.to_matrix(), req.k_min, req.k_max, reduce_spec=req.reduce,
        seed=req.seed, restarts=req.restarts)
    return _pack(artifacts)


@app.post("/ksweep", response_model=ArtifactsResponse)
async def ksweep_endpoint(req: KsweepRequest) -> ArtifactsResponse:
    truth = req.truth.to_labels() if req.truth else None
    artifacts = pipeline.run_ksweep(
        req.config.to_config(), req.ks, matrix=req.features.to_matrix(), truth=truth)
    return _pack(artifacts)


@app.post("/encsweep", response_model=ArtifactsResponse)
async def encsweep_endpoint(req: EncsweepRequest) -> ArtifactsResponse:
    truth = req.truth.to_labels() if req.truth else None
    artifacts = pipeline.run_encsweep(
        req.config.to_config(), req.zs, matrix=req.features.to_matrix(), truth=truth)
    return _pack(artifacts)


@app.post("/subcluster", response_model=ArtifactsResponse)
async def subcluster_endpoint(req: SubclusterRequest) -> ArtifactsResponse:
    artifacts = pipeline.run_subcluster(
        req.features.to_matrix(), req.labels.to_labels(), req.cluster_id,
        req.sub_k, req.config.to_config())
    return _pack(artifacts)


@app.post("/project2d", response_model=ArtifactsResponse)
async def project2d_endpoint(req: Project2dRequest) -> ArtifactsResponse:
    labels = req.labels.to_labels() if req.labels else None
    artifacts = pipeline.run_project2d(
        req.features.to_matrix(), labels=labels, reduce_spec=req.reduce)
    return _pack(artifacts)
