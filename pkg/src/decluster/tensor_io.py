"""Feature matrix data model and the FMAT interchange format.

FMAT v1 layout (all integers little-endian):

    magic "FMAT" (4 bytes)
    version     u32 = 1
    rows        u64
    cols        u64
    flags       u32   (bit0: dim_shape block present; other bits reserved, must be 0)
    [if bit0]   ndims u32, then ndims x u64 dims (product must equal cols)
    payload     rows x cols little-endian f32, row-major
    string table: rows x (u32 byte length + UTF-8 id bytes)

Values are stored as f32 and promoted to f64 for computation. A valid file
parses to exactly its own byte length; anything left over is an error, so
single-byte header corruption is always caught.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInput

MAGIC = b"FMAT"
CONTAINER_MAGIC = b"FMCN"
VERSION = 1
_FLAG_DIM_SHAPE = 1


@dataclass(frozen=True)
class FeatureMatrix:
    """n x d feature matrix with per-row sample ids.

    ``data`` is held as float64; f32 quantization happens only on write.
    ``dim_shape`` optionally records the original per-row tensor shape
    (e.g. (1024, 7, 7)) before flattening.
    """

    ids: tuple[str, ...]
    data: np.ndarray
    dim_shape: tuple[int, ...] | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InvalidInput(f"data must be 2-D, got shape {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "ids", tuple(self.ids))
        if len(self.ids) != data.shape[0]:
            raise InvalidInput(
                f"{len(self.ids)} ids for {data.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise FormatError("duplicate_id", "sample ids are not unique")
        if data.size and not np.isfinite(data).all():
            raise FormatError("non_finite", "matrix contains NaN or Inf")
        if self.dim_shape is not None:
            shape = tuple(int(s) for s in self.dim_shape)
            if any(s < 1 for s in shape):
                raise InvalidInput(f"dim_shape entries must be >= 1: {shape}")
            if math.prod(shape) != data.shape[1]:
                raise InvalidInput(
                    f"dim_shape {shape} does not flatten to {data.shape[1]} columns"
                )
            object.__setattr__(self, "dim_shape", shape)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray, dim_shape: tuple[int, ...] | None = None) -> "FeatureMatrix":
        """Same ids, new values (used by transforms that preserve row identity)."""
        return FeatureMatrix(self.ids, data, dim_shape)


@dataclass(frozen=True)
class LabelVector:
    """Per-sample integer cluster or class labels."""

    ids: tuple[str, ...]
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise InvalidInput("labels must be 1-D")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", tuple(self.ids))
        if len(self.ids) != labels.shape[0]:
            raise InvalidInput(f"{len(self.ids)} ids for {labels.shape[0]} labels")
        if len(set(self.ids)) != len(self.ids):
            raise FormatError("duplicate_id", "label ids are not unique")
        if labels.size and labels.min() < 0:
            raise InvalidInput("labels must be non-negative")

    @property
    def n(self) -> int:
        return len(self.ids)

    def remapped(self) -> "LabelVector":
        """Labels compacted to 0..k-1 (sorted by original value)."""
        if self.labels.size == 0:
            return self
        uniq = np.unique(self.labels)
        lookup = {int(v): i for i, v in enumerate(uniq)}
        return LabelVector(self.ids, np.array([lookup[int(v)] for v in self.labels]))


class _Cursor:
    """Sequential reader over a byte buffer with truncation checks."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated", f"file ends {self.pos + n - len(self.buf)} bytes early")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError("trailing_data", f"{len(self.buf) - self.pos} unexpected trailing bytes")


def _encode_fmat(matrix: FeatureMatrix) -> bytes:
    data32 = matrix.data.astype("<f4")
    if data32.size and not np.isfinite(data32).all():
        raise FormatError("non_finite", "values exceed f32 range; refusing to write")
    parts = [MAGIC, struct.pack("<IQQ", VERSION, matrix.n, matrix.d)]
    if matrix.dim_shape is not None:
        parts.append(struct.pack("<I", _FLAG_DIM_SHAPE))
        parts.append(struct.pack("<I", len(matrix.dim_shape)))
        parts.extend(struct.pack("<Q", s) for s in matrix.dim_shape)
    else:
        parts.append(struct.pack("<I", 0))
    parts.append(data32.tobytes(order="C"))
    for sid in matrix.ids:
        raw = sid.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def write_fmat(matrix: FeatureMatrix, path: str | Path) -> None:
    """Write in FMAT v1. Byte-deterministic for identical input."""
    Path(path).write_bytes(_encode_fmat(matrix))


def _decode_fmat(buf: bytes) -> FeatureMatrix:
    cur = _Cursor(buf)
    if cur.take(4) != MAGIC:
        raise FormatError("bad_magic", "not an FMAT file")
    version = cur.u32()
    if version != VERSION:
        raise FormatError("bad_version", f"unsupported FMAT version {version}")
    rows = cur.u64()
    cols = cur.u64()
    flags = cur.u32()
    if flags & ~_FLAG_DIM_SHAPE:
        raise FormatError("bad_flags", f"unknown flag bits 0x{flags:x}")
    dim_shape = None
    if flags & _FLAG_DIM_SHAPE:
        ndims = cur.u32()
        dims = tuple(cur.u64() for _ in range(ndims))
        if ndims < 1 or any(s < 1 for s in dims):
            raise FormatError("bad_dim_shape", f"invalid dims {dims}")
        if math.prod(dims) != cols:
            raise FormatError("bad_dim_shape", f"dims {dims} do not flatten to {cols} columns")
        dim_shape = dims
    raw = cur.take(rows * cols * 4)
    data = np.frombuffer(raw, dtype="<f4").reshape(rows, cols).astype(np.float64)
    ids = []
    for _ in range(rows):
        length = cur.u32()
        try:
            ids.append(cur.take(length).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError("bad_id", f"id is not valid UTF-8: {exc}") from exc
    cur.done()
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate_id", "sample ids are not unique")
    if data.size and not np.isfinite(data).all():
        raise FormatError("non_finite", "payload contains NaN or Inf")
    return FeatureMatrix(tuple(ids), data, dim_shape)


def read_fmat(path: str | Path) -> FeatureMatrix:
    """Read and validate an FMAT v1 file."""
    return _decode_fmat(Path(path).read_bytes())


def read_csv(path: str | Path, has_header: bool = False) -> FeatureMatrix:
    """Load features from CSV: first column is the sample id, the rest are values."""
    ids = []
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if lineno == 1 and has_header:
                continue
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise FormatError(
                    "ragged_row",
                    f"line {lineno}: expected {width} columns, got {len(cells)}",
                )
            ids.append(cells[0])
            try:
                rows.append([float(c) for c in cells[1:]])
            except ValueError as exc:
                raise FormatError("bad_number", f"line {lineno}: {exc}") from exc
    data = np.array(rows, dtype=np.float64) if rows else np.zeros((0, 0))
    return FeatureMatrix(tuple(ids), data)


def write_csv(matrix: FeatureMatrix, path: str | Path) -> None:
    """Write features as id,v1,...,vd lines. Floats use shortest round-trip form."""
    with open(path, "w", encoding="utf-8") as fh:
        for sid, row in zip(matrix.ids, matrix.data):
            fh.write(sid + "," + ",".join(repr(float(v)) for v in row) + "\n")


def write_labels(labels: LabelVector, path: str | Path) -> None:
    """Write a LabelVector as bare id,label lines (no header)."""
    with open(path, "w", encoding="utf-8") as fh:
        for sid, lab in zip(labels.ids, labels.labels):
            fh.write(f"{sid},{int(lab)}\n")


def read_labels(path: str | Path) -> LabelVector:
    """Read id,label lines; labels are remapped to 0..k-1 (sorted by value)."""
    ids = []
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (lineno == 1 and line == "id,label"):
                continue
            cells = line.split(",")
            if len(cells) != 2:
                raise FormatError("ragged_row", f"line {lineno}: expected id,label")
            try:
                labels.append(int(cells[1]))
            except ValueError as exc:
                raise FormatError("bad_number", f"line {lineno}: {exc}") from exc
            ids.append(cells[0])
    if labels and min(labels) < 0:
        raise InvalidInput("labels must be non-negative")
    return LabelVector(tuple(ids), np.array(labels, dtype=np.int64)).remapped()


def write_container(sections: list[tuple[str, FeatureMatrix]], path: str | Path) -> None:
    """Write named FMAT sections into one container file.

    Layout: magic "FMCN" | u32 version | u32 nsections | nsections x u64
    blob lengths | the FMAT blobs | name table (u32 length + UTF-8, appended
    like the FMAT string table).
    """
    blobs = [_encode_fmat(m) for _, m in sections]
    parts = [CONTAINER_MAGIC, struct.pack("<II", VERSION, len(sections))]
    parts.extend(struct.pack("<Q", len(b)) for b in blobs)
    parts.extend(blobs)
    for name, _ in sections:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    Path(path).write_bytes(b"".join(parts))


def read_container(path: str | Path) -> dict[str, FeatureMatrix]:
    """Read a section container; order of sections is preserved."""
    cur = _Cursor(Path(path).read_bytes())
    if cur.take(4) != CONTAINER_MAGIC:
        raise FormatError("bad_magic", "not an FMCN container")
    version = cur.u32()
    if version != VERSION:
        raise FormatError("bad_version", f"unsupported container version {version}")
    count = cur.u32()
    lengths = [cur.u64() for _ in range(count)]
    matrices = [_decode_fmat(cur.take(n)) for n in lengths]
    names = []
    for _ in range(count):
        length = cur.u32()
        try:
            names.append(cur.take(length).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError("bad_id", f"section name is not valid UTF-8: {exc}") from exc
    cur.done()
    if len(set(names)) != len(names):
        raise FormatError("duplicate_id", "section names are not unique")
    return dict(zip(names, matrices))


def align_labels(matrix: FeatureMatrix, labels: LabelVector) -> np.ndarray:
    """Label array reordered to match matrix row order; ids must agree as sets."""
    lookup = {sid: int(lab) for sid, lab in zip(labels.ids, labels.labels)}
    missing = [sid for sid in matrix.ids if sid not in lookup]
    if missing or len(lookup) != matrix.n:
        raise InvalidInput("label ids do not match matrix ids")
    return np.array([lookup[sid] for sid in matrix.ids], dtype=np.int64)
