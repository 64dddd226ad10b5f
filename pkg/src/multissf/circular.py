"""Circular-statistics primitives: angle arithmetic, modified Bessel I0,
von Mises density and sampling, and the consensus direction/concentration.

All angles are radians in (-pi, pi]. Sampling takes an explicit
``numpy.random.Generator``; there is no global RNG state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BesselOverflow

TWO_PI = 2.0 * math.pi

# bessel_i0 switches from the power series to the asymptotic expansion here
_SERIES_CUTOFF = 15.0
# exp() overflows a double just above 709
_EXP_OVERFLOW = 709.0


def wrap_angle(a):
    """Reduce an angle (or array of angles) modulo 2*pi into (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = a - TWO_PI * np.ceil((a - np.pi) / TWO_PI)
    # guard against ceil rounding putting us exactly at -pi
    w = np.where(w <= -np.pi, w + TWO_PI, w)
    return float(w) if w.ndim == 0 else w


@dataclass(frozen=True)
class Consensus:
    """Direction and length of a weighted sum of unit vectors.

    The length acts as the von Mises concentration of the implied turning
    distribution. A zero-length vector reports direction 0 by convention.
    """

    mean_direction: float
    concentration: float


def consensus_vector(prev_direction, target_directions, kappas) -> Consensus:
    """Combine persistence and target attraction into a single direction.

    kappas[0] weights the previous heading; kappas[1:] weight the target
    bearings. Negative weights model repulsion.
    """
    kappas = np.asarray(kappas, dtype=float)
    dirs = np.concatenate(([prev_direction], np.asarray(target_directions, dtype=float)))
    if len(kappas) != len(dirs):
        raise ValueError("need one kappa per direction (previous heading first)")
    vx = float(np.dot(kappas, np.cos(dirs)))
    vy = float(np.dot(kappas, np.sin(dirs)))
    norm = math.hypot(vx, vy)
    if norm == 0.0:
        return Consensus(0.0, 0.0)
    return Consensus(wrap_angle(math.atan2(vy, vx)), norm)


def _i0_series(x: float) -> float:
    # sum_m (x/2)^(2m) / (m!)^2 ; all terms positive, no cancellation
    term = 1.0
    total = 1.0
    q = 0.25 * x * x
    m = 1
    while True:
        term *= q / (m * m)
        total += term
        if term < 1e-17 * total:
            return total
        m += 1


def _i0_asymptotic_log(x: float) -> float:
    # I0(x) ~ e^x / sqrt(2 pi x) * sum_k prod((2j-1)^2) / (k! (8x)^k)
    term = 1.0
    total = 1.0
    k = 1
    while True:
        nxt = term * (2 * k - 1) ** 2 / (8.0 * k * x)
        if nxt >= term or nxt < 1e-18 * total:
            total += nxt
            break
        term = nxt
        total += term
        k += 1
    return x - 0.5 * math.log(TWO_PI * x) + math.log(total)


def log_bessel_i0(x: float) -> float:
    """log I0(x) for x >= 0, accurate for arguments well beyond overflow."""
    if x < 0:
        raise ValueError("argument must be nonnegative")
    if x <= _SERIES_CUTOFF:
        return math.log(_i0_series(x))
    return _i0_asymptotic_log(x)


def bessel_i0(x: float) -> float:
    """Modified Bessel function of the first kind, order 0.

    Raises BesselOverflow instead of silently returning inf; use
    log_bessel_i0 for large arguments.
    """
    if x < 0:
        raise ValueError("argument must be nonnegative")
    if x <= _SERIES_CUTOFF:
        return _i0_series(x)
    lg = _i0_asymptotic_log(x)
    if lg > _EXP_OVERFLOW:
        raise BesselOverflow(f"I0({x}) exceeds double range; use log_bessel_i0")
    return math.exp(lg)


def vonmises_logpdf(phi, mu, kappa):
    """Log density of the von Mises distribution on (-pi, pi].

    kappa = 0 gives the uniform circle density 1/(2 pi). Accepts array
    ``phi`` with scalar ``mu`` and ``kappa``.
    """
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    phi = np.asarray(phi, dtype=float)
    out = kappa * np.cos(phi - mu) - math.log(TWO_PI) - log_bessel_i0(kappa)
    return float(out) if out.ndim == 0 else out


def vonmises_sample(rng: np.random.Generator, mu: float, kappa: float) -> float:
    """Draw one angle from von Mises(mu, kappa) by Best-Fisher rejection."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if kappa < 1e-10:
        return wrap_angle(rng.uniform(-math.pi, math.pi))
    tau = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
    rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * kappa)
    r = (1.0 + rho * rho) / (2.0 * rho)
    while True:
        u1, u2 = rng.uniform(size=2)
        z = math.cos(math.pi * u1)
        f = (1.0 + r * z) / (r + z)
        c = kappa * (r - f)
        if c * (2.0 - c) - u2 > 0.0 or math.log(c / u2) + 1.0 - c >= 0.0:
            break
    theta = math.acos(f) if rng.uniform() > 0.5 else -math.acos(f)
    return wrap_angle(mu + theta)
