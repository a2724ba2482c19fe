import math

import numpy as np
import pytest

from zrplab import metric, pde
from zrplab.errors import ConvergenceError

from conftest import smooth_field


def _mode(M, k=1):
    return np.cos(2 * np.pi * k * (np.arange(M) + 0.5) / M)


def _lambda_h(M, k=1):
    h = 1.0 / M
    return 2 * (1 - math.cos(2 * math.pi * k * h)) / h ** 2


def test_laplacian_constant_and_fourier():
    w = np.ones(64)
    assert np.abs(metric.laplacian_weighted(w, np.full(64, 3.7))).max() < 1e-12
    xi = _mode(64)
    lap = metric.laplacian_weighted(w, xi)
    assert np.abs(lap + _lambda_h(64) * xi).max() < 1e-9


def test_laplacian_adjointness():
    rng = np.random.default_rng(1)
    w = 0.5 + rng.random(48)
    xi, zeta = rng.standard_normal(48), rng.standard_normal(48)
    lhs = (metric.laplacian_weighted(w, xi) * zeta).sum()
    rhs = (xi * metric.laplacian_weighted(w, zeta)).sum()
    assert abs(lhs - rhs) < 1e-12 * max(abs(lhs), 1.0)


def test_laplacian_zero_mean_output():
    rng = np.random.default_rng(2)
    w = 0.5 + rng.random(64)
    xi = rng.standard_normal(64)
    out = metric.laplacian_weighted(w, xi)
    assert abs(out.sum()) < 1e-10 * np.abs(out).max()


def test_poisson_fourier_oracle():
    w = np.ones(64)
    u = _mode(64)
    xi = metric.poisson_solve(w, u)
    assert np.abs(xi + u / _lambda_h(64)).max() < 1e-12


def test_poisson_trivial_and_compat():
    w = np.ones(32)
    assert np.abs(metric.poisson_solve(w, np.zeros(32))).max() == 0.0
    with pytest.raises(ValueError, match="zero-mean"):
        metric.poisson_solve(w, np.ones(32))


def test_poisson_roundtrip():
    rng = np.random.default_rng(3)
    w = 0.2 + rng.random(96)
    xi = metric.gauge(rng.standard_normal(96))
    back = metric.poisson_solve(w, metric.laplacian_weighted(w, xi))
    assert np.abs(back - xi).max() < 1e-8


def test_poisson_budget_error():
    w = np.ones(64)
    with pytest.raises(ConvergenceError, match="residual"):
        metric.poisson_solve(w, metric.gauge(np.sin(np.arange(64.0))), max_iter=2)


def test_hneg1_inner():
    w = np.ones(64)
    u = _mode(64)
    # Fourier oracle: ||cos||^2_{H^-1} = (1/2)/lambda_h on the unit torus
    assert metric.hneg1w_inner(w, u, u) == pytest.approx(0.5 / _lambda_h(64), rel=1e-11)
    rng = np.random.default_rng(4)
    z = metric.gauge(rng.standard_normal(64))
    assert metric.hneg1w_inner(w, z, z) > 0
    assert metric.hneg1w_inner(w, np.zeros(64), np.zeros(64)) == 0.0


def test_duality_h1_hneg1():
    rng = np.random.default_rng(5)
    w = 0.3 + rng.random(48)
    xi = metric.gauge(rng.standard_normal(48))
    zeta = metric.gauge(rng.standard_normal(48))
    lhs = metric.hneg1w_inner(w, metric.laplacian_weighted(w, xi),
                              metric.laplacian_weighted(w, zeta))
    rhs = metric.h1w_inner(w, xi, zeta)
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_metric_tensor_paths_and_bilinearity(linear, constant):
    rng = np.random.default_rng(6)
    f = pde.DensityField(smooth_field(64, amplitude=0.4))
    z1 = metric.gauge(rng.standard_normal(64))
    z2 = metric.gauge(rng.standard_normal(64))
    w = metric.density_weight(constant, f.values)
    g12 = metric.metric_tensor(constant, f.values, z1, z2)
    xi1 = metric.poisson_solve(w, z1)
    xi2 = metric.poisson_solve(w, z2)
    assert g12 == pytest.approx(metric.h1w_inner(w, xi1, xi2), abs=1e-10 * abs(g12) + 1e-14)
    # bilinearity is exact in floating point for scalar factors of 2
    assert metric.metric_tensor(constant, f.values, 2.0 * z1, z2) == pytest.approx(2 * g12, rel=1e-12)
    # Linear model at rho = 1: weight Phi(rho) = 1, plain H^-1 norm
    ones_field = pde.DensityField(np.ones(64))
    u = _mode(64)
    g = metric.metric_tensor(linear, ones_field.values, u, u)
    assert g == pytest.approx(0.5 / _lambda_h(64), rel=1e-9)
    with pytest.raises(ValueError, match="zero mean"):
        metric.metric_tensor(linear, ones_field.values, u + 1.0, u)


def test_metric_tensor_symmetry_psd(constant):
    rng = np.random.default_rng(7)
    f = pde.DensityField(smooth_field(32, amplitude=0.3))
    for _ in range(4):
        z1 = metric.gauge(rng.standard_normal(32))
        z2 = metric.gauge(rng.standard_normal(32))
        g12 = metric.metric_tensor(constant, f.values, z1, z2)
        g21 = metric.metric_tensor(constant, f.values, z2, z1)
        assert g12 == pytest.approx(g21, rel=1e-9, abs=1e-13)
        assert metric.metric_tensor(constant, f.values, z1, z1) > 0


def test_onsager_inverse_pair(constant):
    rng = np.random.default_rng(8)
    f = pde.DensityField(smooth_field(48, amplitude=0.35))
    zeta = metric.gauge(rng.standard_normal(48))
    w = metric.density_weight(constant, f.values)
    xi = metric.poisson_solve(w, -zeta)
    back = metric.onsager_apply(constant, f.values, xi)
    assert np.abs(back - zeta).max() < 1e-8
    assert np.abs(metric.onsager_apply(constant, f.values, np.full(48, 2.2))).max() < 1e-10


def test_onsager_gradient_flow_consistency(constant):
    # K(rho) S'(rho) reproduces -Lap Phi(rho) up to O(h^2)
    errs = []
    for M in (32, 64, 128):
        f = pde.DensityField(smooth_field(M, amplitude=0.4))
        phi = constant.phi_vec(f.values)
        sprime = metric.gauge(np.log(phi))
        flow = metric.onsager_apply(constant, f.values, sprime)
        target = -metric.laplacian_weighted(np.ones(M), phi)
        errs.append(np.abs(flow - target).max())
    assert math.log2(errs[0] / errs[1]) > 1.7
    assert math.log2(errs[1] / errs[2]) > 1.7


def test_entropy_pairing_identity(constant):
    # <dS, zeta> = g_rho(zeta, K(rho) S'(rho)): discrete pairing is exact
    # because the potential of K S' is S' itself (up to the gauge)
    rng = np.random.default_rng(9)
    f = pde.DensityField(smooth_field(64, amplitude=0.3))
    sprime = np.log(constant.phi_vec(f.values))
    kds = metric.onsager_apply(constant, f.values, sprime)
    for _ in range(3):
        zeta = metric.gauge(rng.standard_normal(64))
        lhs = (zeta * sprime).sum() / 64
        rhs = metric.metric_tensor(constant, f.values, zeta, kds)
        assert lhs == pytest.approx(rhs, abs=1e-8 * max(1.0, abs(lhs)))


def test_log_identity_refinement(constant):
    errs = []
    for M in (32, 64, 128):
        f = pde.DensityField(smooth_field(M, amplitude=0.5))
        phi = constant.phi_vec(f.values)
        w = np.maximum(phi, 1e-12)
        xi = metric.poisson_solve(w, metric.laplacian_weighted(np.ones(M), phi))
        errs.append(np.abs(xi - metric.gauge(np.log(phi))).max())
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) > 1.8


def test_weight_floor(constant):
    vals = np.zeros(16)
    w = metric.density_weight(constant, vals, floor=1e-12)
    assert np.all(w == 1e-12)


def test_d2_poisson():
    u = (np.arange(24) + 0.5) / 24
    X, Y = np.meshgrid(u, u, indexing="ij")
    rhs = np.cos(2 * np.pi * X) * np.cos(2 * np.pi * Y)
    w = np.ones((24, 24))
    xi = metric.poisson_solve(w, rhs)
    lam = 2 * _lambda_h(24)  # two directions contribute equally
    assert np.abs(xi + rhs / lam).max() < 1e-11
