import math

import numpy as np
import pytest

from gefbasins.errors import CapacityError, DomainError
from gefbasins.gef import (coeff_covariance_bound, complex_gaussians, eval_jet, kernel_f,
                           kernel_xi, make_specimen, sample_from_manifest, sample_gef,
                           sample_manifest, scaled_values, taylor_coefficients, translate_eval,
                           truncation_degree)


def direct_f(coef, z, der=0):
    k = np.arange(coef.size)
    w = coef * np.exp(-0.5 * np.array([math.lgamma(j + 1.0) for j in k]))
    if der == 0:
        return np.polyval(w[::-1], z)
    if der == 1:
        return np.polyval((w[1:] * k[1:])[::-1], z)
    return np.polyval((w[2:] * k[2:] * (k[2:] - 1))[::-1], z)


def test_gaussians_prefix_and_determinism():
    a = complex_gaussians(5, 100)
    b = complex_gaussians(5, 40)
    assert np.array_equal(a[:40], b)
    assert np.array_equal(a, complex_gaussians(5, 100))
    assert not np.array_equal(a, complex_gaussians(6, 100))


def test_gaussian_moments():
    x = complex_gaussians(1, 200_000)
    assert abs(np.mean(np.abs(x) ** 2) - 1) < 0.01
    assert abs(np.mean(x)) < 0.01
    assert abs(np.mean(x * x)) < 0.01


def test_truncation_tail_bound():
    R = 8.0
    n = truncation_degree(R, 1e-12)
    k = np.arange(n + 1, n + 400)
    tail = np.exp(k * math.log(R) - 0.5 * np.array([math.lgamma(j + 1) for j in k]))
    assert tail.sum() <= 1e-12
    # one term less would violate the tolerance
    k = np.arange(n, n + 400)
    tail = np.exp(k * math.log(R) - 0.5 * np.array([math.lgamma(j + 1) for j in k]))
    assert tail.sum() > 1e-12
    with pytest.raises(CapacityError):
        truncation_degree(1e4, 1e-12, max_degree=1000)


def test_eval_matches_direct_polynomial_small_radius():
    s = sample_gef(11, 3.0)
    z = np.array([0.3 + 0.1j, -1.2 + 0.7j, 2.0 - 1.1j, 0j])
    jet = eval_jet(s, z)
    for der, got in enumerate((jet.f, jet.f_prime, jet.f_second)):
        ref = direct_f(s.coefficients, z, der)
        assert np.allclose(got, ref, rtol=1e-11, atol=1e-12)
    h = jet.f_prime / jet.f
    assert np.allclose(jet.grad_U, np.conj(h) - z)
    dh = jet.f_second / jet.f - h * h
    assert np.allclose(jet.hessian_det, 1 - np.abs(dh) ** 2)


def test_scaled_values_large_radius_finite():
    s = sample_gef(2, 40.0)
    z = np.array([35.0 + 10j, -20 - 30j])
    F0, F1, F2 = scaled_values(s, z)
    assert np.all(np.isfinite(F0)) and np.all(np.isfinite(F1))
    # log|f| - |z|^2/2 is of order log|z| for a typical point
    assert np.all(np.abs(np.log(np.abs(F0))) < 20)


def test_domain_error():
    s = sample_gef(0, 5.0)
    with pytest.raises(DomainError):
        eval_jet(s, 5.5)


def test_monomial_specimen():
    m = make_specimen("ring", 16, factor=False)
    z = np.array([1.5 + 2j, -3.0 + 0.5j])
    jet = eval_jet(m, z)
    assert np.allclose(jet.U, 16 * np.log(np.abs(z)) - 0.5 * math.lgamma(17) - 0.5 * np.abs(z) ** 2)
    assert np.allclose(jet.grad_U, 16 / np.conj(z) - z)


def test_ring_and_drift_specimens():
    r = make_specimen("ring", 400)
    assert r.params["R"] == 20.0
    jet = eval_jet(r, 20j)
    ref = 400 / np.conj(20j) - 20j + (1 / 200) / (1 + np.conj(20j) / 200)
    assert abs(jet.grad_U - ref) < 1e-9
    d = make_specimen("drift", 100, delta=0.5)
    assert d.params["M"] == math.ceil(20 * 10**0.5)
    assert d.valid_radius == 20.0
    z = 9.0 + 3j
    j2 = eval_jet(d, z)
    R = 10.0
    exact = 100 / np.conj(z) - z + R ** (0.5 - 1)
    assert abs(j2.grad_U - exact) < 1e-6


def test_kernels_and_bound():
    assert kernel_f(0, 1.0) == 1.0
    assert abs(kernel_xi(1j, 1j) - math.exp(1)) < 1e-12
    assert coeff_covariance_bound(0, 0, 0, 0) == 1.0
    assert abs(coeff_covariance_bound(1, 1, 0, 4) - 5 * math.exp(-4)) < 1e-15
    with pytest.raises(ValueError):
        coeff_covariance_bound(-1, 0, 0, 0)


def test_taylor_coefficients_at_origin_are_xi():
    s = sample_gef(4, 8.0)
    xi = taylor_coefficients(s, 0j, 10)
    assert np.allclose(xi, s.coefficients[:11], atol=1e-12)


def test_translate_eval_identity():
    s = sample_gef(4, 8.0)
    w, z = 1.0 + 0.5j, 0.3 - 0.2j
    direct = eval_jet(s, w + z).f * np.exp(-z * np.conj(w) - abs(w) ** 2 / 2)
    assert abs(translate_eval(s, w, z) - direct) <= 1e-10 * abs(direct)


def test_manifest_round_trip():
    s = sample_gef(9, 6.0)
    t = sample_from_manifest(sample_manifest(s))
    assert np.array_equal(s.coefficients, t.coefficients)
    assert t.valid_radius == s.valid_radius
