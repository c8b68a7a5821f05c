"""Command-line front end.

Subcommands run the pipeline in-process by default. With --server URL they
instead POST the same request to a running service instance and write the
artifacts it returns, so batch scripts can offload compute without changing
their output handling. A --config FILE of key=value lines supplies defaults;
explicit flags win.

Exit codes: 0 ok, 2 bad configuration, 3 I/O failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import base64
import sys
from pathlib import Path

from . import pipeline, synth, tensor_io
from .errors import ClusterError, InvalidInput, exit_code_for

_INT_KEYS = {
    "k", "max_iter", "update_interval", "seed", "pretrain_epochs",
    "pretrain_batch", "batch_size", "restarts", "clusters", "points", "dim",
    "sub_k", "port",
}
_FLOAT_KEYS = {"tol", "lr", "center_scale", "noise_sigma"}


def _coerce(key: str, value: str):
    if key in _INT_KEYS:
        try:
            return int(value)
        except ValueError:
            raise InvalidInput(f"config key {key} needs an integer, got {value!r}") from None
    if key in _FLOAT_KEYS:
        try:
            return float(value)
        except ValueError:
            raise InvalidInput(f"config key {key} needs a number, got {value!r}") from None
    return value


def read_config_file(path: str | Path) -> dict:
    """Flat key=value lines; blank lines and #-comments ignored."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInput(f"config line {lineno} is not key=value: {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        values[key] = _coerce(key, value.strip())
    return values


def _parse_elbow(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise InvalidInput(f"--elbow wants MIN:MAX, got {text!r}") from None


def _parse_dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(p) for p in text.split("-"))
    except ValueError:
        raise InvalidInput(f"--dims wants D1-D2-...-Z, got {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise InvalidInput(f"--dims values must be >= 1, got {text!r}")
    return dims


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise InvalidInput(f"{flag} wants a comma-separated integer list, got {text!r}") from None


def _parse_hierarchy(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError:
        raise InvalidInput(f"--hierarchy wants SUPER:SUB, got {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decluster",
        description="Feature clustering pipelines: k-means and latent-space refinement.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value defaults file")
        p.add_argument("--server", help="run remotely against a service at this base URL")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=None)

    def io_flags(p, truth=True):
        p.add_argument("--features", help="input matrix (.fmat or .csv)")
        if truth:
            p.add_argument("--truth", help="ground-truth labels CSV")
        p.add_argument("--reduce", default=None,
                       help="none | gap | pca:P | std, comma-chainable")

    def k_flags(p):
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--elbow", default=None, help="MIN:MAX scan range")

    def dec_flags(p):
        p.add_argument("--dims", default=None, help="encoder sizes D1-D2-...-Z")
        p.add_argument("--max-iter", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--update-interval", type=int, default=None)
        p.add_argument("--optimizer", choices=["adam", "sgd"], default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--pretrain-epochs", type=int, default=None)
        p.add_argument("--pretrain-batch", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--restarts", type=int, default=None)

    p = sub.add_parser("synth", help="generate a labeled synthetic benchmark")
    common(p)
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--points", type=int, default=None, help="points per cluster")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--center-scale", type=float, default=None)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--hierarchy", default=None, help="SUPER:SUB split of the clusters")

    p = sub.add_parser("reduce", help="apply a reduction chain, write reduced.fmat")
    common(p)
    io_flags(p, truth=False)

    p = sub.add_parser("kmeans", help="k-means clustering pipeline")
    common(p)
    io_flags(p)
    k_flags(p)
    p.add_argument("--restarts", type=int, default=None)

    p = sub.add_parser("dec", help="pretrain, then refine latent clusters")
    common(p)
    io_flags(p)
    k_flags(p)
    dec_flags(p)

    p = sub.add_parser("metrics", help="score an existing labeling")
    common(p)
    io_flags(p)
    p.add_argument("--labels", help="labels CSV to score")

    p = sub.add_parser("elbow", help="scan k and pick the knee of the wcss curve")
    common(p)
    io_flags(p, truth=False)
    p.add_argument("--elbow", default=None, help="MIN:MAX scan range")
    p.add_argument("--restarts", type=int, default=None)

    p = sub.add_parser("ksweep", help="metrics table across a list of k values")
    common(p)
    io_flags(p)
    p.add_argument("--ks", default=None, help="comma-separated k values")
    p.add_argument("--method", choices=["kmeans", "dec"], default=None)
    dec_flags(p)

    p = sub.add_parser("encsweep", help="metrics table across bottleneck sizes")
    common(p)
    io_flags(p)
    p.add_argument("--zs", default=None, help="comma-separated bottleneck sizes")
    p.add_argument("--k", type=int, default=None)
    dec_flags(p)

    p = sub.add_parser("subcluster", help="re-cluster the members of one cluster")
    common(p)
    io_flags(p, truth=False)
    p.add_argument("--labels", help="parent assignments CSV")
    p.add_argument("--cluster-id", default=None, help="cluster index, or 'max'")
    p.add_argument("--sub-k", type=int, default=None)
    p.add_argument("--method", choices=["kmeans", "dec"], default=None)
    dec_flags(p)

    p = sub.add_parser("project2d", help="2-D principal-coordinate projection CSV")
    common(p)
    io_flags(p, truth=False)
    p.add_argument("--labels", help="labels CSV for the label column")

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


_DEFAULTS = {
    "seed": 0,
    "reduce": "none",
    "method": "kmeans",
    "dims": "500-500-2000-10",
    "max_iter": 8000,
    "tol": 0.0001,
    "update_interval": 100,
    "optimizer": "adam",
    "lr": 1e-3,
    "pretrain_epochs": 100,
    "pretrain_batch": 256,
    "batch_size": None,
    "clusters": 10,
    "points": 50,
    "dim": 512,
    "center_scale": 10.0,
    "noise_sigma": 1.0,
    "cluster_id": "max",
}


def _merge(ns: argparse.Namespace) -> dict:
    """Effective settings: explicit flag > config file > built-in default."""
    args = dict(vars(ns))
    file_values = read_config_file(args["config"]) if args.get("config") else {}
    merged = dict(_DEFAULTS)
    merged.update(file_values)
    for key, value in args.items():
        if value is not None:
            merged[key] = value
        elif key not in merged:
            merged[key] = None
    return merged


def _require(args: dict, *keys: str) -> None:
    for key in keys:
        if args.get(key) is None:
            raise InvalidInput(f"--{key.replace('_', '-')} is required")


def _pipeline_config(args: dict, method: str) -> pipeline.PipelineConfig:
    _require(args, "features", "out")
    elbow = _parse_elbow(args["elbow"]) if args.get("elbow") else None
    k = args.get("k")
    if k is None and elbow is None:
        raise InvalidInput("one of --k or --elbow is required")
    restarts = args.get("restarts")
    return pipeline.PipelineConfig(
        features=args["features"], out=args["out"], truth=args.get("truth"),
        reduce=args["reduce"], method=method, k=k, elbow=elbow,
        dims=_parse_dims(args["dims"]), max_iter=args["max_iter"], tol=args["tol"],
        update_interval=args["update_interval"], optimizer=args["optimizer"],
        lr=args["lr"], pretrain_epochs=args["pretrain_epochs"],
        pretrain_batch=args["pretrain_batch"], batch_size=args.get("batch_size"),
        restarts=10 if restarts is None else restarts, seed=args["seed"])


def _synth_spec(args: dict) -> synth.SynthSpec:
    hierarchy = _parse_hierarchy(args["hierarchy"]) if args.get("hierarchy") else None
    return synth.SynthSpec(
        n_clusters=args["clusters"], points_per_cluster=args["points"],
        dim=args["dim"], center_scale=args["center_scale"],
        noise_sigma=args["noise_sigma"], hierarchy=hierarchy, seed=args["seed"])


def _cmd_synth(args: dict):
    _require(args, "out")
    return pipeline.run_synth(_synth_spec(args)), args["out"]


def _cmd_reduce(args: dict):
    _require(args, "features", "out")
    return pipeline.run_reduce(args["features"], args["reduce"]), args["out"]


def _cmd_kmeans(args: dict):
    config = _pipeline_config(args, "kmeans")
    return pipeline.run_pipeline(config), config.out


def _cmd_dec(args: dict):
    config = _pipeline_config(args, "dec")
    return pipeline.run_pipeline(config), config.out


def _cmd_metrics(args: dict):
    _require(args, "features", "labels", "out")
    artifacts = pipeline.run_metrics(
        args["features"], args["labels"], truth=args.get("truth"),
        reduce_spec=args["reduce"])
    return artifacts, args["out"]


def _cmd_elbow(args: dict):
    _require(args, "features", "elbow", "out")
    k_min, k_max = _parse_elbow(args["elbow"])
    restarts = args["restarts"] if args.get("restarts") is not None else 5
    artifacts = pipeline.run_elbow(
        args["features"], k_min, k_max, reduce_spec=args["reduce"],
        seed=args["seed"], restarts=restarts)
    return artifacts, args["out"]


def _cmd_ksweep(args: dict):
    _require(args, "features", "ks", "out")
    ks = _parse_int_list(args["ks"], "--ks")
    base = dict(args)
    base["k"] = ks[0]
    base["elbow"] = None
    config = _pipeline_config(base, args["method"])
    return pipeline.run_ksweep(config, ks), args["out"]


def _cmd_encsweep(args: dict):
    _require(args, "features", "zs", "k", "out")
    zs = _parse_int_list(args["zs"], "--zs")
    base = dict(args)
    base["elbow"] = None
    config = _pipeline_config(base, "dec")
    return pipeline.run_encsweep(config, zs), args["out"]


def _cmd_subcluster(args: dict):
    _require(args, "features", "labels", "sub_k", "out")
    base = dict(args)
    base["k"] = args["sub_k"]
    base["elbow"] = None
    config = _pipeline_config(base, args["method"])
    artifacts = pipeline.run_subcluster(
        args["features"], args["labels"], args["cluster_id"], args["sub_k"], config)
    return artifacts, args["out"]


def _cmd_project2d(args: dict):
    _require(args, "features", "out")
    artifacts = pipeline.run_project2d(
        args["features"], labels=args.get("labels"), reduce_spec=args["reduce"])
    return artifacts, args["out"]


_HANDLERS = {
    "synth": _cmd_synth,
    "reduce": _cmd_reduce,
    "kmeans": _cmd_kmeans,
    "dec": _cmd_dec,
    "metrics": _cmd_metrics,
    "elbow": _cmd_elbow,
    "ksweep": _cmd_ksweep,
    "encsweep": _cmd_encsweep,
    "subcluster": _cmd_subcluster,
    "project2d": _cmd_project2d,
}


def _matrix_payload(path: str) -> dict:
    m = pipeline.load_features(path)
    return {
        "ids": list(m.ids),
        "data": [[float(v) for v in row] for row in m.data],
        "dim_shape": list(m.dim_shape) if m.dim_shape else None,
    }


def _labels_payload(path: str) -> dict:
    lv = tensor_io.read_labels(path)
    return {"ids": list(lv.ids), "labels": [int(v) for v in lv.labels]}


def _config_payload(args: dict, method: str) -> dict:
    config = _pipeline_config(args, method)
    return pipeline._effective_config(config, config.k)


def _remote_request(args: dict) -> tuple[str, dict]:
    """(endpoint, JSON payload) for the subcommand in remote mode."""
    command = args["command"]
    if command == "synth":
        _require(args, "out")
        spec = _synth_spec(args)
        doc = {"n_clusters": spec.n_clusters, "points_per_cluster": spec.points_per_cluster,
               "dim": spec.dim, "center_scale": spec.center_scale,
               "noise_sigma": spec.noise_sigma,
               "hierarchy": list(spec.hierarchy) if spec.hierarchy else None,
               "seed": spec.seed}
        return "/synth", doc
    if command == "reduce":
        _require(args, "features", "out")
        return "/reduce", {"features": _matrix_payload(args["features"]),
                           "reduce": args["reduce"]}
    if command in ("kmeans", "dec"):
        payload = {"config": _config_payload(args, command),
                   "features": _matrix_payload(args["features"])}
        if args.get("truth"):
            payload["truth"] = _labels_payload(args["truth"])
        return "/run", payload
    if command == "metrics":
        _require(args, "features", "labels", "out")
        payload = {"features": _matrix_payload(args["features"]),
                   "labels": _labels_payload(args["labels"]),
                   "reduce": args["reduce"]}
        if args.get("truth"):
            payload["truth"] = _labels_payload(args["truth"])
        return "/metrics", payload
    if command == "elbow":
        _require(args, "features", "elbow", "out")
        k_min, k_max = _parse_elbow(args["elbow"])
        restarts = args["restarts"] if args.get("restarts") is not None else 5
        return "/elbow", {"features": _matrix_payload(args["features"]),
                          "k_min": k_min, "k_max": k_max, "reduce": args["reduce"],
                          "seed": args["seed"], "restarts": restarts}
    if command == "ksweep":
        _require(args, "features", "ks", "out")
        ks = _parse_int_list(args["ks"], "--ks")
        base = dict(args)
        base["k"] = ks[0]
        base["elbow"] = None
        payload = {"config": _config_payload(base, args["method"]),
                   "features": _matrix_payload(args["features"]), "ks": ks}
        if args.get("truth"):
            payload["truth"] = _labels_payload(args["truth"])
        return "/ksweep", payload
    if command == "encsweep":
        _require(args, "features", "zs", "k", "out")
        zs = _parse_int_list(args["zs"], "--zs")
        base = dict(args)
        base["elbow"] = None
        payload = {"config": _config_payload(base, "dec"),
                   "features": _matrix_payload(args["features"]), "zs": zs}
        if args.get("truth"):
            payload["truth"] = _labels_payload(args["truth"])
        return "/encsweep", payload
    if command == "subcluster":
        _require(args, "features", "labels", "sub_k", "out")
        base = dict(args)
        base["k"] = args["sub_k"]
        base["elbow"] = None
        return "/subcluster", {"config": _config_payload(base, args["method"]),
                               "features": _matrix_payload(args["features"]),
                               "labels": _labels_payload(args["labels"]),
                               "cluster_id": str(args["cluster_id"]),
                               "sub_k": args["sub_k"]}
    if command == "project2d":
        _require(args, "features", "out")
        payload = {"features": _matrix_payload(args["features"]),
                   "reduce": args["reduce"]}
        if args.get("labels"):
            payload["labels"] = _labels_payload(args["labels"])
        return "/project2d", payload
    raise InvalidInput(f"subcommand {command} cannot run remotely")


def _client(base_url: str):
    # separated so tests can swap in an in-process transport
    import httpx

    return httpx.Client(base_url=base_url, timeout=300.0)


_STATUS_CATEGORY = {400: "config", 404: "io", 422: "numeric"}


class RemoteError(ClusterError):
    """Server-side failure relayed to the local exit-code convention."""

    def __init__(self, message: str, category: str):
        super().__init__(message)
        self.category = category


def _run_remote(args: dict) -> tuple[dict, str]:
    endpoint, payload = _remote_request(args)
    with _client(args["server"]) as client:
        response = client.post(endpoint, json=payload)
        if response.status_code != 200:
            category = _STATUS_CATEGORY.get(response.status_code, "config")
            try:
                detail = response.json().get("detail", "")
            except ValueError:
                detail = response.text
            raise RemoteError(f"server error ({response.status_code}): {detail}", category)
        body = response.json()
    artifacts: dict[str, str | bytes] = {}
    for name, entry in body["artifacts"].items():
        if entry.get("b64") is not None:
            artifacts[name] = base64.b64decode(entry["b64"])
        else:
            artifacts[name] = entry.get("text", "")
    return artifacts, args["out"]


def main(argv=None) -> int:
    try:
        ns = _build_parser().parse_args(argv)
        if ns.command == "serve":
            import uvicorn

            from .service import app

            uvicorn.run(app, host=ns.host, port=ns.port)
            return 0
        args = _merge(ns)
        if args.get("server"):
            artifacts, out_dir = _run_remote(args)
        else:
            artifacts, out_dir = _HANDLERS[args["command"]](args)
        written = pipeline.write_artifacts(artifacts, out_dir)
        for path in written:
            print(path)
        return 0
    except ClusterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
