"""Renyi-DP accounting for the subsampled Gaussian retrieval mechanism.

Per query, the mechanism is a Poisson-subsampled Gaussian mechanism whose
mean aggregate has L2 sensitivity ``2/k``. Normalizing by the sensitivity
gives the noise multiplier ``sigma' = k * sigma / 2`` used throughout. All
epsilons are in nats.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp

DEFAULT_ORDERS = tuple(range(2, 65))


class AccountantError(ValueError):
    pass


class QuadratureError(ArithmeticError):
    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved tolerance {achieved:.3g})")
        self.achieved = achieved


@dataclass(frozen=True)
class RdpCurve:
    orders: tuple
    epsilons: tuple
    noise_multiplier: float = float("nan")
    q: float = float("nan")
    t: int = 1

    def __post_init__(self):
        orders = tuple(float(a) for a in self.orders)
        eps = tuple(float(e) for e in self.epsilons)
        if len(orders) != len(eps):
            raise AccountantError("orders and epsilons differ in length")
        if any(a <= 1 for a in orders):
            raise AccountantError("Renyi orders must exceed 1")
        if any(not math.isfinite(e) or e < 0 for e in eps):
            raise AccountantError("RDP epsilons must be finite and nonnegative")
        if any(b <= a for a, b in zip(orders, orders[1:])):
            raise AccountantError("orders must be strictly ascending")
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "epsilons", eps)

    def __len__(self):
        return len(self.orders)

    def at(self, alpha):
        return self.epsilons[self.orders.index(float(alpha))]

    def to_dict(self):
        return {
            "orders": list(self.orders),
            "epsilons": list(self.epsilons),
            "noise_multiplier": self.noise_multiplier,
            "q": self.q,
            "t": self.t,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["orders"]), tuple(d["epsilons"]),
                   d.get("noise_multiplier", float("nan")), d.get("q", float("nan")),
                   int(d.get("t", 1)))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class DpGuarantee:
    epsilon: float
    delta: float
    best_order: float
    conversion: str = "improved"
    clamped: bool = False
    per_order: tuple = field(default=(), repr=False)


def _check(q, noise_multiplier):
    if not 0.0 <= q <= 1.0:
        raise AccountantError(f"sampling rate {q} outside [0, 1]")
    if not noise_multiplier > 0:
        raise AccountantError("noise multiplier must be positive")


def _is_int(a):
    return float(a).is_integer()


def _rdp_int_many(q, s, orders):
    """Binomial-sum RDP for many integer orders at once.

    Uses moment - 1 = sum_{i>=2} C(a,i) q^i (1-q)^(a-i) expm1((i^2-i) / (2 s^2)),
    whose terms are all positive, so tiny epsilons keep full relative precision.
    """
    a = np.asarray(orders, dtype=np.float64)
    top = int(a.max())
    i = np.arange(2, top + 1, dtype=np.float64)
    aa = a[:, None]
    valid = i[None, :] <= aa
    c = (i * i - i) / (2 * s * s)
    log_expm1_c = c + np.log(-np.expm1(-c))
    with np.errstate(invalid="ignore"):
        log_binom = gammaln(aa + 1) - gammaln(i + 1) - gammaln(np.maximum(aa - i, 0) + 1)
        terms = log_binom + i * math.log(q) + (aa - i) * math.log1p(-q) + log_expm1_c
    terms = np.where(valid, terms, -np.inf)
    return np.logaddexp(0.0, logsumexp(terms, axis=1)) / (a - 1)


def sgm_rdp(q, noise_multiplier, orders=DEFAULT_ORDERS):
    """RDP curve of the Poisson-subsampled Gaussian mechanism (unit sensitivity).

    Integer orders use the exact binomial expansion evaluated in log space;
    fractional orders fall back to :func:`quadrature_rdp`.
    """
    q = float(q)
    s = float(noise_multiplier)
    _check(q, s)
    orders = tuple(float(a) for a in orders)
    if any(a <= 1 for a in orders):
        raise AccountantError("Renyi orders must exceed 1")
    if q == 0:
        eps = [0.0] * len(orders)
    elif q == 1:
        eps = [a / (2 * s * s) for a in orders]
    else:
        eps = [0.0] * len(orders)
        ints = [j for j, a in enumerate(orders) if _is_int(a)]
        if ints:
            vals = _rdp_int_many(q, s, [orders[j] for j in ints])
            for j, v in zip(ints, vals):
                eps[j] = float(v)
        for j, a in enumerate(orders):
            if not _is_int(a):
                eps[j] = quadrature_rdp(q, s, a)
    return RdpCurve(orders, tuple(eps), s, q, 1)


def _log_integrand(x, q, s, alpha):
    """log of N(x; 0, s^2) * [(1 + u)^alpha - 1 - alpha u], u = q (L(x) - 1).

    The linear term integrates to zero against N(0, s^2), and subtracting it
    leaves a nonnegative integrand with no cancellation.
    """
    x = np.asarray(x, dtype=np.float64)
    log_n0 = -0.5 * (x / s) ** 2 - math.log(s * math.sqrt(2 * math.pi))
    log_l = (2 * x - 1) / (2 * s * s)
    u = q * np.expm1(log_l)
    # u >= -q > -1, so log1p(u) is finite
    v = alpha * np.log1p(u)
    out = np.empty_like(x)
    small = v < 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.expm1(v[small]) - alpha * u[small]
        out[small] = np.log(np.maximum(val, 0.0))
        vb = v[~small]
        out[~small] = vb + np.log1p(-(1.0 + alpha * u[~small]) * np.exp(-vb))
    return log_n0 + out


def quadrature_rdp(q, noise_multiplier, alpha):
    """Renyi divergence D_alpha((1-q)N(0,s^2) + qN(1,s^2) || N(0,s^2)) by quadrature.

    Independent of the binomial closed form; valid for any real alpha > 1.
    """
    q = float(q)
    s = float(noise_multiplier)
    alpha = float(alpha)
    _check(q, s)
    if alpha <= 1:
        raise AccountantError("Renyi order must exceed 1")
    if q == 0:
        return 0.0

    # The integrand is a mixture of Gaussians centred on 0..alpha with width s.
    lo = -14.0 * s - 1.0
    hi = alpha + 14.0 * s + 1.0
    grid = np.linspace(lo, hi, 4001)
    lg = _log_integrand(grid, q, s, alpha)
    finite = np.isfinite(lg)
    if not finite.any():
        return 0.0
    peak = float(np.max(lg[finite]))
    x_peak = float(grid[finite][np.argmax(lg[finite])])

    def f(x):
        return float(np.exp(_log_integrand(np.array([x]), q, s, alpha)[0] - peak))

    # split at the peak and at the mixture centres so quad sees every bump
    cuts = sorted({lo, hi, x_peak, 0.0, 0.5, min(alpha, hi)})
    total = 0.0
    err = 0.0
    for a, b in zip(cuts, cuts[1:]):
        if b <= a:
            continue
        val, e, info = integrate.quad(f, a, b, epsabs=1e-12, epsrel=1e-13,
                                      limit=1000, full_output=True)[:3]
        total += val
        err += e
    if total <= 0:
        return 0.0
    if err > max(1e-12, 1e-9 * total):
        raise QuadratureError("Renyi integral did not converge", err / total)
    # moment - 1 = exp(peak) * total
    log_excess = peak + math.log(total)
    return float(np.logaddexp(0.0, log_excess) / (alpha - 1))


def compose(curve, t):
    """T-fold adaptive composition: RDP adds up."""
    t = int(t)
    if t < 0:
        raise AccountantError("composition count must be nonnegative")
    return RdpCurve(curve.orders, tuple(e * t for e in curve.epsilons),
                    curve.noise_multiplier, curve.q, curve.t * t)


def _improved(eps, alpha, delta):
    return eps + math.log((alpha - 1) / alpha) - (math.log(delta) + math.log(alpha)) / (alpha - 1)


def _classical(eps, alpha, delta):
    return eps + math.log(1 / delta) / (alpha - 1)


def to_approx_dp(curve, delta, conversion="improved"):
    """Convert an RDP curve to (epsilon, delta)-DP, minimizing over stored orders.

    ``conversion="classical"`` uses eps + log(1/delta)/(alpha-1) instead.
    """
    delta = float(delta)
    if not 0 < delta < 1:
        raise AccountantError("delta must lie in (0, 1)")
    if len(curve) == 0:
        raise AccountantError("empty RDP curve")
    if conversion not in ("improved", "classical"):
        raise AccountantError(f"unknown conversion {conversion!r}")
    if all(e == 0 for e in curve.epsilons):
        # zero divergence at any order means identical output distributions
        return DpGuarantee(0.0, delta, math.inf, conversion, False,
                           tuple(0.0 for _ in curve.orders))
    fn = _improved if conversion == "improved" else _classical
    per = tuple(fn(e, a, delta) for a, e in zip(curve.orders, curve.epsilons))
    best = int(np.argmin(per))
    eps = per[best]
    clamped = eps < 0
    return DpGuarantee(max(eps, 0.0), delta, curve.orders[best], conversion, clamped, per)


def noise_multiplier(k, sigma):
    return k * sigma / 2.0


def mechanism_rdp(params, orders=DEFAULT_ORDERS):
    """Per-query RDP of the private retrieval mechanism for ``params``."""
    orders = tuple(float(a) for a in orders)
    if params.lam == 0 or params.q == 0:
        return RdpCurve(orders, tuple(0.0 for _ in orders), math.inf, params.q, 1)
    if params.sigma == 0:
        raise AccountantError("non-private configuration: sigma = 0 with lambda > 0 and q > 0")
    return sgm_rdp(params.q, noise_multiplier(params.k, params.sigma), orders)


def epsilon_for(params, t, delta, orders=DEFAULT_ORDERS, conversion="improved"):
    """Converted epsilon after ``t`` queries; a shorthand used by the calibrators."""
    return to_approx_dp(compose(mechanism_rdp(params, orders), t), delta, conversion)
