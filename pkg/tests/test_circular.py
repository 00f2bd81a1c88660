import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from tsa.circular import (
    GeneralizedVonMises,
    VonMisesConv,
    bessel_i0,
    bessel_i0e,
    bessel_i1,
    bessel_i1e,
    bessel_ratio_i1_i0,
    bessel_ratio_over_x,
    conv_to_nat,
    gvm_log_normalizer,
    gvm_log_pdf,
    log_bessel_i0,
    nat_to_conv,
    vm_log_pdf,
    vm_sample,
    wrap_angle,
)


def _power_series_i0(x, terms=80):
    return math.fsum((x / 2) ** (2 * m) / math.factorial(m) ** 2 for m in range(terms))


def _refined_log_normalizer(eta, tol=1e-12):
    # independent oracle: scipy's adaptive quadrature with the peak subtracted
    h = np.arange(1, len(eta) + 1)

    def f(s):
        return float(eta[:, 0] @ np.cos(h * s) + eta[:, 1] @ np.sin(h * s))

    grid = np.linspace(0, 2 * np.pi, 20001)
    top = max(f(s) for s in grid)
    from scipy.integrate import quad
    val, _ = quad(lambda s: math.exp(f(s) - top), 0, 2 * np.pi, epsabs=0, epsrel=tol, limit=500)
    return top + math.log(val)


def test_conversion_examples():
    np.testing.assert_allclose(conv_to_nat(0.0, 2.0), [2.0, 0.0])
    np.testing.assert_allclose(conv_to_nat(np.pi / 2, 1.0), [0.0, 1.0], atol=1e-16)
    mu, kappa = nat_to_conv([0.0, 1.0])
    assert mu == pytest.approx(np.pi / 2) and kappa == pytest.approx(1.0)
    assert nat_to_conv([0.0, 0.0]) == (0.0, 0.0)
    mu, kappa = nat_to_conv([-1.0, -1.0])
    assert mu == pytest.approx(np.mod(math.atan2(-1, -1), 2 * np.pi))
    assert mu == pytest.approx(5 * np.pi / 4)
    assert kappa == pytest.approx(np.sqrt(2))


def test_von_mises_conv_validation():
    with pytest.raises(ValueError):
        VonMisesConv(0.0, -1.0)
    assert VonMisesConv(-np.pi / 2, 1.0).mu == pytest.approx(3 * np.pi / 2)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2 * np.pi, exclude_max=True), st.floats(1e-3, 1e3))
def test_conversion_roundtrip(mu, kappa):
    m2, k2 = nat_to_conv(conv_to_nat(mu, kappa))
    assert k2 == pytest.approx(kappa, rel=1e-12)
    assert abs(np.angle(np.exp(1j * (m2 - mu)))) < 1e-12


def test_wrap_angle_range():
    a = wrap_angle(np.array([-1e-18, -np.pi, 7.0, 2 * np.pi]))
    assert np.all((a >= 0) & (a < 2 * np.pi))


def test_bessel_trivial_values():
    assert bessel_i0(0.0) == 1.0
    assert bessel_i1(0.0) == 0.0
    assert bessel_i0(1.0) == pytest.approx(_power_series_i0(1.0), rel=1e-15)
    assert bessel_i0(1.0) == pytest.approx(1.26606587775, abs=1e-11)
    r = bessel_ratio_i1_i0(1e6)
    assert 0.9999 < r < 1.0
    # asymptotic oracle: 1 - 1/(2x) - 1/(8x^2)
    assert r == pytest.approx(1 - 0.5e-6 - 0.125e-12, rel=1e-14)


@pytest.mark.parametrize("x", [1e-6, 0.1, 1.0, 2.5, 10.0, 14.99, 15.01, 20.0, 40.0, 100.0, 1e3, 1e5])
def test_bessel_vs_mpmath(x):
    for fn, order in ((bessel_i0e, 0), (bessel_i1e, 1)):
        ref = float(mpmath.besseli(order, x) * mpmath.exp(-x))
        assert fn(x) == pytest.approx(ref, rel=2e-14)
    assert log_bessel_i0(x) == pytest.approx(float(mpmath.log(mpmath.besseli(0, x))), rel=1e-14)


def test_bessel_vs_scipy_dense():
    x = np.concatenate([np.linspace(0, 30, 3001), np.geomspace(30, 1e6, 200)])
    np.testing.assert_allclose(bessel_i0e(x), special.i0e(x), rtol=5e-14)
    np.testing.assert_allclose(bessel_i1e(x), special.i1e(x), rtol=5e-14, atol=1e-300)


def test_bessel_no_overflow():
    assert np.isfinite(log_bessel_i0(1e8))
    assert log_bessel_i0(800.0) == pytest.approx(float(mpmath.log(mpmath.besseli(0, 800))), rel=1e-14)


def test_bessel_negative_rejected():
    with pytest.raises(ValueError):
        bessel_i0(-1.0)


def test_ratio_over_x_continuity():
    assert bessel_ratio_over_x(0.0) == 0.5
    assert bessel_ratio_over_x(1e-9) == pytest.approx(0.5)
    assert bessel_ratio_over_x(2.0) == pytest.approx(special.i1(2.0) / (2 * special.i0(2.0)), rel=1e-14)


def test_vm_log_pdf_examples():
    phi = np.linspace(0, 2 * np.pi, 9)
    np.testing.assert_allclose(vm_log_pdf(phi, [0.0, 0.0]), -np.log(2 * np.pi))
    eta = conv_to_nat(0.7, 1.0)
    diff = vm_log_pdf(0.7, eta) - vm_log_pdf(0.7 + np.pi, eta)
    assert diff == pytest.approx(2.0)
    np.testing.assert_allclose(vm_log_pdf(phi, eta), stats.vonmises.logpdf(phi, 1.0, loc=0.7), atol=1e-12)


def test_gvm_pdf_normalized():
    rng = np.random.default_rng(0)
    g = GeneralizedVonMises(rng.normal(size=(2, 2)) * 2)
    from scipy.integrate import quad
    total, _ = quad(lambda s: np.exp(gvm_log_pdf(s, g)), 0, 2 * np.pi, epsabs=1e-13, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_gvm_normalizer_examples():
    assert gvm_log_normalizer(np.zeros((3, 2))) == pytest.approx(np.log(2 * np.pi), rel=1e-15)
    for mu in (0.0, 1.3, 4.0):
        g = GeneralizedVonMises.from_conventional([mu], [3.0])
        assert g.log_normalizer() == pytest.approx(np.log(2 * np.pi * special.i0(3.0)), rel=1e-14)
    g = GeneralizedVonMises.from_conventional([0.3, 1.1], [1.0, 2.0])
    assert g.log_normalizer() == pytest.approx(_refined_log_normalizer(g.eta_plus), abs=1e-12)


def test_gvm_normalizer_large_kappa():
    g = GeneralizedVonMises.from_conventional([0.2, 2.0], [400.0, 300.0])
    assert g.log_normalizer() == pytest.approx(_refined_log_normalizer(g.eta_plus), rel=1e-12)


def test_gvm_normalizer_batch_and_shift_invariance():
    rng = np.random.default_rng(3)
    eta = rng.normal(size=(4, 3, 2))
    batch = gvm_log_normalizer(eta)
    for i in range(4):
        assert batch[i] == pytest.approx(gvm_log_normalizer(eta[i]), abs=1e-13)
    # substituting s -> s + c rotates harmonic h by h*c and leaves Z unchanged
    c = 0.77
    mu, kappa = nat_to_conv(eta[0])
    shifted = conv_to_nat(mu + np.arange(1, 4) * c, kappa)
    assert gvm_log_normalizer(shifted) == pytest.approx(batch[0], abs=1e-12)


def test_gvm_properties():
    g = GeneralizedVonMises.from_conventional([0.5, 1.0], [2.0, 0.0])
    np.testing.assert_allclose(g.kappa_plus, [2.0, 0.0])
    assert g.K == 2 and g.extended(4).K == 4 and g.extended(1) is g
    with pytest.raises(ValueError):
        GeneralizedVonMises(np.zeros(2))
    assert GeneralizedVonMises.uniform(3).log_pdf(1.0) == pytest.approx(-np.log(2 * np.pi))


def test_vm_sample_uniform_ks():
    s = vm_sample(0.0, 0.0, size=10000, rng=1)
    ks = stats.kstest(s / (2 * np.pi), "uniform").statistic
    assert ks < 0.02


def test_vm_sample_concentrated_mean():
    s = vm_sample(1.0, 50.0, size=10000, rng=2)
    mean = np.angle(np.mean(np.exp(1j * s)))
    assert abs(mean - 1.0) < 0.01


def test_vm_sample_matches_distribution():
    s = vm_sample(2.0, 3.0, size=20000, rng=4)
    ks = stats.kstest(np.mod(s - 2.0 + np.pi, 2 * np.pi) - np.pi,
                      stats.vonmises(3.0).cdf).statistic
    assert ks < 0.015


def test_vm_sample_deterministic():
    a = vm_sample(0.3, 2.0, size=50, rng=9)
    b = vm_sample(0.3, 2.0, size=50, rng=9)
    np.testing.assert_array_equal(a, b)
    assert isinstance(vm_sample(0.3, 2.0, rng=9), float)
