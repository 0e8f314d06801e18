"""Private retrieval: subsample, retrieve, aggregate with Gaussian noise, interpolate."""

from dataclasses import dataclass, field

import numpy as np

from .index import knn, poisson_subsample, prepare_query


class MechanismError(ValueError):
    pass


class InsufficientNeighbors(MechanismError):
    def __init__(self, found, k):
        super().__init__(f"insufficient neighbors: {found} retrieved, k={k} required")
        self.found = found
        self.k = k


@dataclass(frozen=True)
class PrivacyParams:
    k: int
    q: float
    sigma: float
    lam: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise MechanismError("k must be a positive integer")
        if not 0.0 <= self.q <= 1.0:
            raise MechanismError("q must lie in [0, 1]")
        if not self.sigma >= 0:
            raise MechanismError("sigma must be nonnegative")
        if not 0.0 <= self.lam <= 1.0:
            raise MechanismError("lambda must lie in [0, 1]")
        object.__setattr__(self, "k", int(self.k))
        for name in ("q", "sigma", "lam"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def to_dict(self):
        return {"k": self.k, "q": self.q, "sigma": self.sigma, "lambda": self.lam}

    @classmethod
    def from_dict(cls, d):
        lam = d["lambda"] if "lambda" in d else d["lam"]
        return cls(int(d["k"]), float(d["q"]), float(d["sigma"]), float(lam))


@dataclass(frozen=True)
class PrivatizedConditioning:
    z: np.ndarray
    interpolated: np.ndarray  # (k, d)
    noise_seed: int
    private_ids: tuple = field(default=(), repr=False)
    public_ids: tuple = field(default=(), repr=False)


def noise_rng(seed, ordinal=0):
    """Counter-style generator keyed by ``(seed, ordinal)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(ordinal)])))


def query_seed(seed, ordinal):
    """Subsampling seed for query ``ordinal`` so each query draws a fresh subset."""
    a, b = np.random.SeedSequence([int(seed), int(ordinal)]).generate_state(2, np.uint32)
    return (int(a) << 31) | (int(b) >> 1)


def noisy_aggregate(neighbors, k, sigma, seed, ordinal=0):
    """Mean of exactly ``k`` neighbor vectors plus N(0, sigma^2 I).

    The divisor is always ``k``; a short neighbor set is an error rather than
    a smaller mean, since the 2/k sensitivity bound needs k summands.
    """
    if len(neighbors) < k:
        raise InsufficientNeighbors(len(neighbors), k)
    if sigma < 0:
        raise MechanismError("sigma must be nonnegative")
    vecs = np.asarray(neighbors.vectors[:k], dtype=np.float64)
    mean = vecs.sum(axis=0) / k
    if sigma == 0:
        return mean
    return mean + sigma * noise_rng(seed, ordinal).standard_normal(mean.shape[0])


def interpolate(public_neighbors, z, lam, k):
    """Row j is (1 - lam) * O_j + lam * z. Rows are not renormalized."""
    if not 0.0 <= lam <= 1.0:
        raise MechanismError("lambda must lie in [0, 1]")
    z = np.asarray(z, dtype=np.float64)
    pub = np.asarray(public_neighbors.vectors, dtype=np.float64)
    if len(pub) < k:
        raise InsufficientNeighbors(len(pub), k)
    pub = pub[:k]
    if pub.shape[1] != z.shape[0]:
        raise MechanismError(f"dimension mismatch: public {pub.shape[1]} vs z {z.shape[0]}")
    if lam == 0:
        return pub.copy()
    if lam == 1:
        return np.tile(z, (k, 1))
    return (1.0 - lam) * pub + lam * z[None, :]


def _run(private_index, public_index, query, params, seed, charge, ordinal=0):
    k = params.k
    private_ids = ()
    if params.lam > 0:
        if private_index.dim != len(np.ravel(query)):
            raise MechanismError("query and private index dimensions differ")
        mask = poisson_subsample(private_index, params.q, query_seed(seed, ordinal))
        if mask.size < k:
            raise InsufficientNeighbors(mask.size, k)
        nk = knn(private_index, query, k, mask)
    if charge is not None:
        # after the private neighbors are known, before anything is released
        charge()
    if params.lam > 0:
        z = noisy_aggregate(nk, k, params.sigma, seed, ordinal)
        private_ids = tuple(int(i) for i in nk.ids)
    else:
        # nothing from the private side enters the output
        z = np.zeros(len(np.ravel(query)))

    if params.lam < 1:
        if public_index is None:
            raise MechanismError("a public index is required when lambda < 1")
        ok = knn(public_index, query, k)
        e = interpolate(ok, z, params.lam, k)
        public_ids = tuple(int(i) for i in ok.ids)
    else:
        e = np.tile(z, (k, 1))
        public_ids = ()
    return PrivatizedConditioning(z, e, int(seed), private_ids, public_ids)


def private_retrieve(private_index, public_index, query, params, seed, ledger, ordinal=0):
    """One metered query; charges ``ledger`` once the private k-NN has succeeded.

    Raises :class:`~dprdm.ledger.BudgetExhausted` when the budget is spent and
    :class:`InsufficientNeighbors` (uncharged) when the subsample is too small.
    """
    if ledger is None:
        raise MechanismError("private_retrieve requires a ledger")
    prepare_query(query, private_index.dim if params.lam > 0 else public_index.dim)
    return _run(private_index, public_index, query, params, seed, ledger.charge, ordinal)


@dataclass(frozen=True)
class LeakageReport:
    mean_cosine: float
    max_cosine: float
    hit_rate: float
    trials: int
    params: PrivacyParams


def _cos(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def leakage_probe(private_index, target_id, query, params, trials, public_index=None, seed=0):
    """Replay the mechanism ``trials`` times and measure how much of the target leaks.

    Cosine is taken between the target vector and the mean of the released
    conditioning set (which is ``z`` when lambda = 1). Unmetered: this is an
    attack simulation, not a serving path.
    """
    target = private_index.vector(target_id).astype(np.float64)
    cos = np.empty(trials)
    hits = 0
    for t in range(trials):
        out = _run(private_index, public_index, query, params, seed + t, None)
        cos[t] = _cos(out.interpolated.mean(axis=0), target)
        hits += int(target_id) in out.private_ids
    return LeakageReport(float(cos.mean()), float(cos.max()), hits / trials, trials, params)
