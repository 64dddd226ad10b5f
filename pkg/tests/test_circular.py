import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import iv, ive
from scipy.stats import vonmises as scipy_vonmises

from multissf.circular import (Consensus, bessel_i0, consensus_vector,
                               log_bessel_i0, vonmises_logpdf,
                               vonmises_sample, wrap_angle)
from multissf.errors import BesselOverflow

angles = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)


@given(angles)
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi


@given(angles, st.integers(min_value=-50, max_value=50))
def test_wrap_angle_periodicity(a, k):
    assert wrap_angle(a + 2 * math.pi * k) == pytest.approx(wrap_angle(a), abs=1e-9)


def test_wrap_angle_boundary_convention():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.0) == 0.0


def test_wrap_angle_array():
    out = wrap_angle(np.array([0.0, 2 * math.pi, -3 * math.pi]))
    assert out == pytest.approx([0.0, 0.0, math.pi])


@pytest.mark.parametrize("x", [0.0, 1e-8, 0.5, 1.0, 5.0, 14.9, 15.0, 15.1,
                               20.0, 50.0, 200.0, 700.0, 5000.0])
def test_log_bessel_i0_against_scipy(x):
    # scipy's exponentially scaled ive(0, x) = I0(x) exp(-x) stays finite
    expected = math.log(ive(0, x)) + x
    assert log_bessel_i0(x) == pytest.approx(expected, rel=1e-12, abs=1e-13)


def test_bessel_i0_small_values():
    for x in [0.0, 0.3, 2.0, 14.0, 15.0, 20.0]:
        assert bessel_i0(x) == pytest.approx(float(iv(0, x)), rel=1e-12)


def test_bessel_i0_overflow_raises():
    with pytest.raises(BesselOverflow):
        bessel_i0(800.0)
    # but the log variant keeps working there
    assert np.isfinite(log_bessel_i0(800.0))


def test_bessel_negative_argument_rejected():
    with pytest.raises(ValueError):
        log_bessel_i0(-1.0)
    with pytest.raises(ValueError):
        bessel_i0(-0.1)


@pytest.mark.parametrize("kappa", [0.0, 2.0, 10.0, 15.0, 20.0, 22.0])
def test_vonmises_normalization(kappa):
    total, _ = quad(lambda p: math.exp(vonmises_logpdf(p, 0.7, kappa)),
                    -math.pi, math.pi, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_vonmises_logpdf_against_scipy():
    phis = np.linspace(-3.0, 3.0, 7)
    for kappa in [0.5, 5.0, 20.0]:
        expected = scipy_vonmises.logpdf(phis, kappa, loc=1.2)
        assert vonmises_logpdf(phis, 1.2, kappa) == pytest.approx(expected, rel=1e-10)


def test_vonmises_logpdf_kappa_zero_uniform():
    assert vonmises_logpdf(2.1, 0.3, 0.0) == pytest.approx(-math.log(2 * math.pi))


def test_vonmises_logpdf_negative_kappa_rejected():
    with pytest.raises(ValueError):
        vonmises_logpdf(0.0, 0.0, -1.0)


def test_vonmises_sample_moments(rng):
    mu, kappa = 1.0, 5.0
    draws = np.array([vonmises_sample(rng, mu, kappa) for _ in range(20000)])
    assert np.all(draws > -math.pi) and np.all(draws <= math.pi)
    c, s = np.cos(draws).mean(), np.sin(draws).mean()
    assert math.atan2(s, c) == pytest.approx(mu, abs=0.03)
    # mean resultant length = I1(kappa) / I0(kappa)
    expected_r = float(iv(1, kappa) / iv(0, kappa))
    assert math.hypot(c, s) == pytest.approx(expected_r, abs=0.02)


def test_vonmises_sample_kappa_zero_is_uniform(rng):
    draws = np.array([vonmises_sample(rng, 2.0, 0.0) for _ in range(5000)])
    c, s = np.cos(draws).mean(), np.sin(draws).mean()
    assert math.hypot(c, s) < 0.05


def test_consensus_vector_matches_manual_sum():
    prev = 0.4
    targets = [1.5, -2.0]
    kap = [3.0, 2.0, -1.0]
    dirs = np.array([prev] + targets)
    vx = float(np.dot(kap, np.cos(dirs)))
    vy = float(np.dot(kap, np.sin(dirs)))
    cons = consensus_vector(prev, targets, kap)
    assert cons.concentration == pytest.approx(math.hypot(vx, vy))
    assert cons.mean_direction == pytest.approx(math.atan2(vy, vx))


@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0),
       st.floats(0.1, 10.0), st.floats(-5.0, 5.0), st.floats(-3.0, 3.0))
@settings(max_examples=50)
def test_consensus_rotation_equivariance(prev, target, k0, k1, delta):
    base = consensus_vector(prev, [target], [k0, k1])
    rotated = consensus_vector(prev + delta, [target + delta], [k0, k1])
    if base.concentration < 1e-6:
        return
    assert rotated.concentration == pytest.approx(base.concentration, rel=1e-9)
    gap = wrap_angle(rotated.mean_direction - base.mean_direction - delta)
    assert gap == pytest.approx(0.0, abs=1e-7)


def test_consensus_zero_vector_convention():
    cons = consensus_vector(0.7, [math.pi], [0.0, 0.0])
    assert cons == Consensus(0.0, 0.0)
    # opposing unit vectors cancel up to rounding
    near = consensus_vector(0.0, [math.pi], [1.0, 1.0])
    assert near.concentration < 1e-12


def test_consensus_dimension_mismatch():
    with pytest.raises(ValueError):
        consensus_vector(0.0, [1.0, 2.0], [1.0, 1.0])
