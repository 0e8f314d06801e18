import math

import numpy as np
import pytest


def scan_knn(ids, vectors, query, k, included=None):
    """Brute-force top-k by inner product, ties to the smaller id."""
    q = [float(x) for x in query]
    norm = math.sqrt(math.fsum(x * x for x in q))
    q = [x / norm for x in q]
    rows = []
    for p, (i, v) in enumerate(zip(ids, vectors)):
        if included is not None and not included[p]:
            continue
        rows.append((-math.fsum(float(a) * b for a, b in zip(v, q)), int(i)))
    rows.sort()
    return [i for _, i in rows[:k]]


def kth_other_distance(points, i, K):
    d = sorted(math.dist(points[i], p) for j, p in enumerate(points) if j != i)
    return d[K - 1]


def density_oracle(real, fake, K):
    radii = [kth_other_distance(real, i, K) for i in range(len(real))]
    total = 0
    for f in fake:
        for r, rad in zip(real, radii):
            total += math.dist(f, r) <= rad
    return total / (K * len(fake))


def coverage_oracle(real, fake, K):
    hit = 0
    for i, r in enumerate(real):
        rad = kth_other_distance(real, i, K)
        hit += any(math.dist(f, r) <= rad for f in fake)
    return hit / len(real)


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


class CountingLedger:
    """Stand-in ledger for mechanism tests that only counts charges."""

    def __init__(self):
        self.calls = 0

    def charge(self):
        self.calls += 1


def neighbor_gap(rng, n, d, k, adjacency="replace"):
    """Noiseless aggregate difference between two neighboring private indices."""
    from dprdm.index import build_index, knn
    from dprdm.mechanism import noisy_aggregate

    vecs = unit_rows(rng, n, d)
    ids = np.arange(n)
    if adjacency == "replace":
        other = vecs.copy()
        other[rng.integers(n)] = unit_rows(rng, 1, d)[0]
        a, b = build_index(ids, vecs), build_index(ids, other)
    else:
        drop = rng.integers(n)
        keep = np.arange(n) != drop
        a, b = build_index(ids, vecs), build_index(ids[keep], vecs[keep])
    y = unit_rows(rng, 1, d)[0]
    za = noisy_aggregate(knn(a, y, k), k, 0.0, 0)
    zb = noisy_aggregate(knn(b, y, k), k, 0.0, 0)
    return float(np.linalg.norm(za - zb))
