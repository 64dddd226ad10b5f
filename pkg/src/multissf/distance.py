"""Step-distance law: the gamma family in exponential-family form.

The family has sufficient statistics T(d) = (log d, -d), base measure
b(d) = 1, and natural parameters eta = (shape - 1, rate). The descriptor
record keeps the family pluggable, but gamma is the only instance used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidNaturalParams


@dataclass(frozen=True)
class ExpFamilySpec:
    """Descriptor of a one-dimensional exponential family for distances."""

    m: int
    sufficient_stats: Callable[[float], np.ndarray]
    log_base_measure: Callable[[float], float]
    log_partition: Callable[[np.ndarray], float]


@dataclass(frozen=True)
class GammaParams:
    """Gamma distribution with shape and scale (rate = 1/scale)."""

    shape: float
    scale: float

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise ValueError("shape and scale must be positive")

    @property
    def mean(self) -> float:
        return self.shape * self.scale


def gamma_to_natural(g: GammaParams) -> np.ndarray:
    """Natural parameters (shape - 1, rate) of a gamma distribution."""
    return np.array([g.shape - 1.0, 1.0 / g.scale])


def natural_to_gamma(eta) -> GammaParams:
    """Inverse of gamma_to_natural; valid on {eta1 > -1, eta2 > 0}."""
    eta = np.asarray(eta, dtype=float)
    if eta[0] <= -1.0 or eta[1] <= 0.0:
        raise InvalidNaturalParams(f"eta={tuple(eta)} outside the gamma domain")
    return GammaParams(shape=eta[0] + 1.0, scale=1.0 / eta[1])


def gamma_log_partition(eta) -> float:
    """A(eta) = log Gamma(eta1 + 1) - (eta1 + 1) log eta2."""
    eta = np.asarray(eta, dtype=float)
    if eta[0] <= -1.0 or eta[1] <= 0.0:
        raise InvalidNaturalParams(f"eta={tuple(eta)} outside the gamma domain")
    return math.lgamma(eta[0] + 1.0) - (eta[0] + 1.0) * math.log(eta[1])


GAMMA_FAMILY = ExpFamilySpec(
    m=2,
    sufficient_stats=lambda d: np.array([math.log(d), -d]),
    log_base_measure=lambda d: 0.0,
    log_partition=gamma_log_partition,
)


def gamma_logpdf(d, g: GammaParams):
    """Log density, evaluated through the exponential-family decomposition."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("d must be positive")
    eta1, eta2 = gamma_to_natural(g)
    out = eta1 * np.log(d) - eta2 * d - gamma_log_partition((eta1, eta2))
    return float(out) if out.ndim == 0 else out


def gamma_sample(rng: np.random.Generator, g: GammaParams) -> float:
    """Draw from the gamma by the Marsaglia-Tsang squeeze method."""
    shape = g.shape
    if shape < 1.0:
        # boost: draw at shape+1 and thin with U^(1/shape)
        u = rng.uniform()
        while u == 0.0:
            u = rng.uniform()
        return gamma_sample(rng, GammaParams(shape + 1.0, g.scale)) * u ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = rng.standard_normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = rng.uniform()
        if u < 1.0 - 0.0331 * x ** 4:
            return d * v * g.scale
        if u > 0.0 and math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v * g.scale


def _lower_reg_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x).

    Series expansion for x < a + 1, continued fraction otherwise.
    """
    if x <= 0.0:
        return 0.0
    lg = math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        n = a
        while True:
            n += 1.0
            term *= x / n
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return total * math.exp(-x + a * math.log(x) - lg)
    # Lentz continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    q = math.exp(-x + a * math.log(x) - lg) * h
    return 1.0 - q


def gamma_cdf(d: float, g: GammaParams) -> float:
    if d <= 0:
        return 0.0
    return _lower_reg_gamma(g.shape, d / g.scale)


def gamma_quantile(p: float, g: GammaParams) -> float:
    """Quantile by bisection on the CDF, accurate to 1e-9 in probability."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    lo, hi = 0.0, g.mean + g.scale
    while gamma_cdf(hi, g) < p:
        hi *= 2.0
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        if gamma_cdf(mid, g) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * hi:
            break
    return 0.5 * (lo + hi)
