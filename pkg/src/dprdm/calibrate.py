"""Inverse problems on the accountant: pick k, q, or the (k, q) trade-off."""

import csv
import json
import math
from dataclasses import asdict, dataclass
from itertools import product

import numpy as np

from . import accountant
from .ledger import BudgetTarget
from .mechanism import PrivacyParams

CSV_COLUMNS = ("n", "r", "k", "q", "sigma", "t", "delta", "alpha_star", "epsilon")


class CalibrationError(ValueError):
    def __init__(self, message, best_epsilon=None):
        super().__init__(message)
        self.best_epsilon = best_epsilon


@dataclass(frozen=True)
class TradeoffPoint:
    n: int
    r: float
    sigma: float
    t: int
    delta: float
    epsilon_min: float
    k_star: int
    q_star: float
    alpha_star: float

    def row(self):
        return {"n": self.n, "r": self.r, "k": self.k_star, "q": self.q_star,
                "sigma": self.sigma, "t": self.t, "delta": self.delta,
                "alpha_star": self.alpha_star, "epsilon": self.epsilon_min}


def _eps(k, q, sigma, t, delta, orders):
    return accountant.epsilon_for(PrivacyParams(int(k), q, sigma, 1.0), t, delta, orders)


def calibrate_k(target, sigma, q, k_max, orders=accountant.DEFAULT_ORDERS):
    """Smallest k in [1, k_max] whose converted epsilon meets the target."""
    k_max = int(k_max)
    if k_max < 1:
        raise CalibrationError("k_max must be >= 1")
    at_max = _eps(k_max, q, sigma, target.t, target.delta, orders).epsilon
    if at_max > target.epsilon:
        raise CalibrationError(
            f"no k <= {k_max} reaches epsilon {target.epsilon:g} (epsilon at k_max = {at_max:.6g})",
            at_max)
    lo, hi = 0, k_max  # eps(lo) > target (or lo = 0), eps(hi) <= target
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _eps(mid, q, sigma, target.t, target.delta, orders).epsilon <= target.epsilon:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_q(target, sigma, k, tol=1e-3, orders=accountant.DEFAULT_ORDERS):
    """Largest q in [0, 1] meeting the target, to relative precision ``tol``."""
    def ok(q):
        return _eps(k, q, sigma, target.t, target.delta, orders).epsilon <= target.epsilon

    if ok(1.0):
        return 1.0
    hi = 1.0
    # find the scale geometrically first so small answers converge quickly
    while not ok(hi / 2):
        hi /= 2
        if hi < 1e-12:
            return 0.0
    lo = hi / 2
    while hi - lo > tol * lo:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _boundary_eps(k, rn, sigma, t, delta, orders):
    return _eps(k, min(1.0, k / rn), sigma, t, delta, orders)


def min_epsilon_over_kq(n, r, sigma, t, delta, orders=accountant.DEFAULT_ORDERS, points=64):
    """Minimize converted epsilon over (k, q) subject to k <= r q n.

    Epsilon rises with q at fixed k, so for each k the best feasible q is
    k / (r n). The search runs over k on that boundary: a geometric grid of
    ``points`` integers in [1, floor(r n)] and one refinement grid between the
    neighbours of the best grid point.
    """
    n = int(n)
    if not 0 < r <= 1:
        raise CalibrationError("concept density r must lie in (0, 1]")
    if n < 1 or sigma <= 0:
        raise CalibrationError("n must be >= 1 and sigma > 0")
    rn = r * n
    k_hi = int(math.floor(rn * (1 + 1e-12)))
    if k_hi < 1:
        raise CalibrationError("concept absent: r * n < 1")

    cache = {}

    def ev(k):
        if k not in cache:
            cache[k] = _boundary_eps(k, rn, sigma, t, delta, orders)
        return cache[k].epsilon

    grid = np.unique(np.round(np.geomspace(1, k_hi, points)).astype(np.int64))
    vals = [ev(int(k)) for k in grid]
    i = int(np.argmin(vals))
    lo = int(grid[max(i - 1, 0)])
    hi = int(grid[min(i + 1, len(grid) - 1)])
    if hi - lo > 1:
        for k in np.unique(np.round(np.geomspace(lo, hi, points)).astype(np.int64)):
            ev(int(k))
    k_star = min(cache, key=lambda k: (cache[k].epsilon, k))
    g = cache[k_star]
    return TradeoffPoint(n, float(r), float(sigma), int(t), float(delta), g.epsilon,
                         int(k_star), min(1.0, k_star / rn), g.best_order)


def sweep(ks, qs, sigmas, ts, delta, orders=accountant.DEFAULT_ORDERS):
    """Converted epsilon over the product grid; returns rows in CSV column order."""
    rows = []
    for k, q, s, t in product(ks, qs, sigmas, ts):
        g = accountant.epsilon_for(PrivacyParams(int(k), float(q), float(s), 1.0),
                                   int(t), delta, orders)
        rows.append({"n": "", "r": "", "k": int(k), "q": float(q), "sigma": float(s),
                     "t": int(t), "delta": float(delta), "alpha_star": g.best_order,
                     "epsilon": g.epsilon})
    return rows


def write_csv(path, rows, metadata=None):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({c: _fmt(row.get(c, "")) for c in CSV_COLUMNS})
    if metadata is not None:
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(metadata, fh, indent=2, sort_keys=True, default=_jsonable)


def _fmt(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return v


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


__all__ = ["BudgetTarget", "TradeoffPoint", "CalibrationError", "calibrate_k", "calibrate_q",
           "min_epsilon_over_kq", "sweep", "write_csv", "CSV_COLUMNS"]
