"""Density and coverage of a generated sample set against a real one.

Both use balls around each real point whose radius is the distance to its
K-th nearest other real point. Balls are closed.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class SampleSet:
    vectors: np.ndarray
    label: str = "real"

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if v.size == 0 or len(v) == 0:
            raise MetricError("sample set is empty")
        object.__setattr__(self, "vectors", v)

    def __len__(self):
        return len(self.vectors)


def _as_set(s, label):
    return s if isinstance(s, SampleSet) else SampleSet(s, label)


def _check_k(K, n):
    if int(K) != K or K < 1:
        raise MetricError("K must be a positive integer")
    if K >= n:
        raise MetricError(f"K={K} must be smaller than the set size {n}")


def nnd_radii(real, K):
    """Distance from every point to its K-th nearest other point."""
    real = _as_set(real, "real")
    _check_k(K, len(real))
    d = cdist(real.vectors, real.vectors)
    # column 0 after sorting is the point itself at distance 0
    np.fill_diagonal(d, -np.inf)
    return np.sort(d, axis=1)[:, K]


def nnd_k(samples, i, K):
    return float(nnd_radii(samples, K)[i])


def _inside(real, fake, K):
    real = _as_set(real, "real")
    fake = _as_set(fake, "fake")
    if real.vectors.shape[1] != fake.vectors.shape[1]:
        raise MetricError("real and fake sets differ in dimension")
    radii = nnd_radii(real, K)
    return cdist(real.vectors, fake.vectors) <= radii[:, None]


def density(real, fake, K=5):
    inside = _inside(real, fake, K)
    return float(inside.sum() / (K * inside.shape[1]))


def coverage(real, fake, K=5):
    inside = _inside(real, fake, K)
    return float(inside.any(axis=1).mean())


def report(real, fake, K=5, **external):
    """JSON-ready report. ``external`` carries optional FID/CLIPScore values."""
    real = _as_set(real, "real")
    fake = _as_set(fake, "fake")
    inside = _inside(real, fake, K)
    out = {
        "density": float(inside.sum() / (K * len(fake))),
        "coverage": float(inside.any(axis=1).mean()),
        "K": int(K),
        "n_real": len(real),
        "n_fake": len(fake),
        "fid": None,
        "clip_score": None,
    }
    out.update({k: v for k, v in external.items() if v is not None})
    return out
