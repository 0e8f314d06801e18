"""Exact maximum-inner-product retrieval over unit embeddings."""

from dataclasses import dataclass, field

import numpy as np

from . import embio

NORM_TOL = 1e-6
QUERY_NORM_TOL = 1e-3


class IndexInputError(ValueError):
    """Invalid index input or query."""


class EmptyEffectiveDataset(IndexInputError):
    pass


@dataclass(frozen=True)
class EmbeddingRecord:
    id: int
    vector: np.ndarray


@dataclass(frozen=True, eq=False)
class RetrievalIndex:
    """Immutable store of unit vectors (float32) keyed by uint64 ids."""

    ids: np.ndarray
    vectors: np.ndarray
    _pos: dict = field(repr=False, compare=False)

    @property
    def count(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return self.count

    def position(self, record_id):
        return self._pos[int(record_id)]

    def vector(self, record_id):
        return self.vectors[self.position(record_id)]

    def records(self):
        return [EmbeddingRecord(int(i), v) for i, v in zip(self.ids, self.vectors)]

    def save(self, path):
        embio.write_embeddings(path, self.ids, self.vectors)


@dataclass(frozen=True, eq=False)
class SubsetMask:
    included: np.ndarray  # bool, aligned with index.ids
    rate: float
    seed: int

    @property
    def size(self):
        return int(self.included.sum())


@dataclass(frozen=True)
class NeighborSet:
    ids: np.ndarray
    scores: np.ndarray
    vectors: np.ndarray

    def __len__(self):
        return len(self.ids)

    @property
    def entries(self):
        return list(zip(self.ids.tolist(), self.scores.tolist(), self.vectors))


def build_index(source, vectors=None):
    """Build an index from a file path, a list of records, or ``(ids, vectors)``.

    Vectors are L2-normalized in float64 and stored as float32. Inputs already
    within ``NORM_TOL`` of unit norm are kept as-is, so that writing an index
    and reading it back is bit-exact.
    """
    if vectors is not None:
        ids, vecs = source, vectors
    elif isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        ids, vecs = embio.read_embeddings(source)
    else:
        recs = list(source)
        ids = [r.id if hasattr(r, "id") else r[0] for r in recs]
        vecs = [r.vector if hasattr(r, "vector") else r[1] for r in recs]

    if isinstance(vecs, np.ndarray) and vecs.ndim == 2:
        return _build_from_array(ids, vecs)

    ids = [int(i) for i in ids]
    if not ids:
        raise IndexInputError("empty dataset")
    if len(ids) != len(vecs):
        raise IndexInputError("ids and vectors differ in length")

    dim = None
    rows = []
    seen = set()
    for rid, v in zip(ids, vecs):
        if rid < 0 or rid >= 2**64:
            raise IndexInputError(f"record {rid}: id outside u64 range")
        if rid in seen:
            raise IndexInputError(f"record {rid}: duplicate id")
        seen.add(rid)
        v = np.asarray(v, dtype=np.float64).ravel()
        if dim is None:
            dim = v.size
            if dim == 0:
                raise IndexInputError(f"record {rid}: dimension must be positive")
        elif v.size != dim:
            raise IndexInputError(f"record {rid}: dimension {v.size} != {dim}")
        if not np.all(np.isfinite(v)):
            raise IndexInputError(f"record {rid}: non-finite coordinates")
        rows.append(v)

    mat = np.vstack(rows)
    mat = _normalize_rows(mat, ids)
    return _make_index(np.asarray(ids, dtype=np.uint64), mat)


def _build_from_array(ids, mat):
    ids = np.asarray(ids)
    if ids.size == 0 or mat.shape[0] == 0:
        raise IndexInputError("empty dataset")
    if ids.shape != (mat.shape[0],):
        raise IndexInputError("ids and vectors differ in length")
    if mat.shape[1] == 0:
        raise IndexInputError("dimension must be positive")
    if ids.dtype.kind not in "iu" or (ids.dtype.kind == "i" and ids.min() < 0):
        raise IndexInputError("ids must be nonnegative integers")
    uniq, counts = np.unique(ids, return_counts=True)
    if np.any(counts > 1):
        raise IndexInputError(f"record {uniq[np.argmax(counts > 1)]}: duplicate id")
    mat = np.asarray(mat, dtype=np.float64)
    bad = np.flatnonzero(~np.all(np.isfinite(mat), axis=1))
    if bad.size:
        raise IndexInputError(f"record {ids[bad[0]]}: non-finite coordinates")
    ids = ids.astype(np.uint64)
    return _make_index(ids, _normalize_rows(mat, ids))


def load_index(path):
    return build_index(path)


def _make_index(ids, vectors):
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    vectors.setflags(write=False)
    ids = np.ascontiguousarray(ids, dtype=np.uint64)
    ids.setflags(write=False)
    pos = {int(i): p for p, i in enumerate(ids)}
    return RetrievalIndex(ids, vectors, pos)


def _normalize_rows(mat, ids):
    norms = np.linalg.norm(mat, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise IndexInputError(f"record {ids[zero[0]]}: zero-norm vector")
    out = mat / norms[:, None]
    as32 = mat.astype(np.float32)
    keep = np.abs(np.linalg.norm(as32.astype(np.float64), axis=1) - 1.0) <= NORM_TOL / 4
    out[keep] = as32[keep]
    return out.astype(np.float32)


def _unit_hash(seed, ids):
    """Uniform [0, 1) values keyed by (seed, id); splitmix64 finalizer."""
    with np.errstate(over="ignore"):
        z = ids.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        z ^= np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * np.uint64(0xD1B54A32D192ED03)
        z += np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z ^= z >> np.uint64(31)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)


def poisson_subsample(index, q, seed):
    """Include each record independently with probability ``q``.

    The draw for a record depends only on ``(seed, id)``, so masks do not
    depend on record order.
    """
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise IndexInputError(f"subsample rate {q} outside [0, 1]")
    included = _unit_hash(int(seed), index.ids) < q
    included.setflags(write=False)
    return SubsetMask(included, q, int(seed))


def prepare_query(query, dim):
    y = np.asarray(query, dtype=np.float64).ravel()
    if y.size != dim:
        raise IndexInputError(f"query dimension {y.size} != index dimension {dim}")
    norm = np.linalg.norm(y)
    if abs(norm - 1.0) > QUERY_NORM_TOL:
        raise IndexInputError(f"query norm {norm:.6g} is not within {QUERY_NORM_TOL} of 1")
    return y / norm


def knn(index, query, k, mask=None):
    """Top-``k`` records by inner product; ties go to the smaller id."""
    k = int(k)
    if k < 1:
        raise IndexInputError("k must be >= 1")
    y = prepare_query(query, index.dim)
    if mask is not None:
        if len(mask.included) != index.count:
            raise IndexInputError("mask does not match index size")
        cand = np.flatnonzero(mask.included)
    else:
        cand = np.arange(index.count)
    if cand.size == 0:
        raise EmptyEffectiveDataset("empty effective dataset")

    scores = index.vectors[cand].astype(np.float64) @ y
    m = min(k, cand.size)
    if m < cand.size:
        # every record scoring at least the m-th best is a candidate, so ties
        # straddling the cut are resolved by id below
        kth = np.partition(scores, cand.size - m)[cand.size - m]
        sel = np.flatnonzero(scores >= kth)
    else:
        sel = np.arange(cand.size)
    order = np.lexsort((index.ids[cand[sel]], -scores[sel]))[:m]
    rows = cand[sel[order]]
    return NeighborSet(index.ids[rows].copy(), scores[sel[order]], index.vectors[rows].astype(np.float64))
