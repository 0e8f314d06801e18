"""Reading and writing embedding files.

Binary layout (little-endian)::

    magic  b"DPRV"
    version u32
    dim     u32
    count   u64
    count x (id u64, dim x f32)

A line-delimited JSON variant with ``{"id": ..., "vector": [...]}`` per line
is accepted for small fixtures.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DPRV"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


class EmbeddingFormatError(ValueError):
    """Raised for malformed embedding files."""


def write_embeddings(path, ids, vectors):
    ids = np.asarray(ids, dtype="<u8")
    vectors = np.asarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or len(ids) != len(vectors):
        raise ValueError("ids and vectors must align as (n,) and (n, d)")
    n, dim = vectors.shape
    rec = np.empty(n, dtype=_record_dtype(dim))
    rec["id"] = ids
    rec["vector"] = vectors
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, dim, n))
        fh.write(rec.tobytes())


def read_binary(path):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: truncated header")
    magic, version, dim, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic bytes {magic!r}")
    if version != VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported format version {version}")
    if dim == 0:
        raise EmbeddingFormatError(f"{path}: dim must be positive")
    dt = _record_dtype(dim)
    body = raw[_HEADER.size:]
    if len(body) != count * dt.itemsize:
        raise EmbeddingFormatError(
            f"{path}: expected {count} records of {dt.itemsize} bytes, "
            f"found {len(body)} bytes")
    rec = np.frombuffer(body, dtype=dt, count=count)
    return rec["id"].astype(np.uint64), rec["vector"].astype(np.float32)


def read_jsonl(path):
    ids, vectors = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ids.append(int(obj["id"]))
                vectors.append([float(v) for v in obj["vector"]])
            except (ValueError, KeyError, TypeError) as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: {exc}") from exc
    return ids, vectors


def write_jsonl(path, ids, vectors):
    with open(path, "w") as fh:
        for i, v in zip(ids, vectors):
            fh.write(json.dumps({"id": int(i), "vector": [float(x) for x in v]}) + "\n")


def read_embeddings(path):
    """Read either format, sniffing the magic bytes.

    Returns ``(ids, vectors)``; vectors is a list of lists for JSONL input so
    that ragged rows reach the index builder and get reported by id.
    """
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return read_binary(path)
    if head[:1] in (b"{", b" ", b"\n", b""):
        return read_jsonl(path)
    raise EmbeddingFormatError(f"{path}: bad magic bytes {head!r}")


def _record_dtype(dim):
    return np.dtype([("id", "<u8"), ("vector", "<f4", (dim,))])
