import math

import numpy as np
import pytest

from zrplab import action, metric, pde
from zrplab.errors import ConvergenceError

from conftest import smooth_field


def _quad_V():
    return (lambda x: 0.5 * x ** 2), (lambda x: x)


# ----- toy action ---------------------------------------------------------------


def test_toy_rate_free_straight_path():
    # V = 0, x(t) = a t: rate = a^2 T / 2 exactly
    V = lambda x: 0.0 * x
    Vp = lambda x: 0.0 * x
    a, T, K = 1.7, 2.0, 500
    tp = action.ToyPath(times=np.linspace(0, T, K + 1),
                        positions=a * np.linspace(0, T, K + 1), V=V, Vp=Vp)
    assert action.toy_rate(tp) == pytest.approx(0.5 * a ** 2 * T, rel=1e-12)


def test_toy_rate_vanishes_on_flow():
    V, Vp = _quad_V()
    tp = action.gradient_flow_path(V, Vp, 1.0, 1.0, 10000)
    assert action.toy_rate(tp) <= 1e-8


def test_toy_split_identity():
    V, Vp = _quad_V()
    rng = np.random.default_rng(0)
    x = np.cumsum(rng.standard_normal(2001)) * 0.01 + 1.0
    tp = action.ToyPath(times=np.linspace(0, 1, 2001), positions=x, V=V, Vp=Vp)
    k, p, b = action.toy_rate_split(tp)
    # midpoint quadrature integrates V' = x exactly along segments
    assert action.toy_rate(tp) == pytest.approx(k + p + b, rel=1e-12)


def test_toy_path_validation():
    V, Vp = _quad_V()
    with pytest.raises(ValueError):
        action.ToyPath(times=np.array([0.0, 0.5, 0.7]),
                       positions=np.zeros(3), V=V, Vp=Vp)


# ----- field path rate ------------------------------------------------------------


def test_path_rate_static_zero(constant):
    f = pde.DensityField(np.full(32, 1.1))
    path = pde.FieldPath(times=np.linspace(0, 1, 6), fields=[f.copy() for _ in range(6)])
    assert action.path_rate(constant, path) == 0.0
    dec = action.rate_decomposition(constant, path)
    assert dec.action == 0.0
    assert dec.dissipation == pytest.approx(0.0, abs=1e-18)
    assert dec.entropy_delta == 0.0


def test_path_rate_mass_check(constant):
    f1 = pde.DensityField(np.full(16, 1.0))
    f2 = pde.DensityField(np.full(16, 1.1))
    path = pde.FieldPath(times=np.array([0.0, 0.1]), fields=[f1, f2])
    with pytest.raises(ValueError, match="mass"):
        action.path_rate(constant, path)


def test_path_rate_decays_on_pde_paths(constant):
    f0 = pde.DensityField(smooth_field(32, amplitude=0.3))
    rates = []
    for dt in (4e-4, 2e-4, 1e-4):
        path = pde.solve(constant, f0, 0.02, dt, snapshot_dt=dt)
        rates.append(action.path_rate(constant, path))
    assert rates[0] / rates[1] >= 3.8
    assert rates[1] / rates[2] >= 3.8


def test_reversed_path_costs_the_entropy_drop(constant):
    f0 = pde.DensityField(smooth_field(32, amplitude=0.3))
    path = pde.solve(constant, f0, 0.016, 4e-4, snapshot_dt=4e-4)
    fwd = action.path_rate(constant, path)
    rev = pde.FieldPath(times=path.times, fields=path.fields[::-1])
    drop = pde.entropy_functional(constant, path.fields[0]) \
        - pde.entropy_functional(constant, path.fields[-1])
    assert drop > 0
    assert action.path_rate(constant, rev) >= fwd + drop


def test_decomposition_identity_under_refinement(constant):
    resids = []
    for M, dt in ((32, 3.2e-3), (64, 1.6e-3), (128, 8e-4)):
        f0 = pde.DensityField(smooth_field(M, amplitude=0.3))
        path = pde.solve(constant, f0, 0.016, dt, snapshot_dt=dt)
        rate = action.path_rate(constant, path)
        dec = action.rate_decomposition(constant, path)
        assert dec.entropy_delta < 0
        resids.append(abs(rate - dec.total()))
    assert resids[0] / resids[1] >= 1.8
    assert resids[1] / resids[2] >= 1.8


def test_decomposition_heat_fourier_oracle(linear):
    # Linear model, small single-mode profile: the action and dissipation both
    # approach the Fourier value int_0^T lam a(t)^2/2 dt with a(t) = a0 e^{-lam t}
    M, a0, T, dt = 64, 0.01, 0.004, 1e-5
    lam = 4 * math.pi ** 2
    f0 = pde.from_function(lambda u: 1.0 + a0 * np.cos(2 * np.pi * u), M)
    path = pde.solve(linear, f0, T, dt, snapshot_dt=4e-4)
    dec = action.rate_decomposition(linear, path)
    # d_t rho = -lam a cos: ||d_t rho||^2_{H^-1_{Phi~1}} = lam a^2/2, integrated
    # against a(t) = a0 e^{-lam t} this gives a0^2 (1 - e^{-2 lam T})/4
    oracle = a0 ** 2 * (1 - math.exp(-2 * lam * T)) / 4.0
    assert dec.action == pytest.approx(oracle, rel=2e-2)
    assert dec.dissipation == pytest.approx(oracle, rel=2e-2)
    assert dec.entropy_delta == pytest.approx(-oracle, rel=2e-2)


# ----- proximal stepping ------------------------------------------------------------


def test_jko_constant_fixed_point(constant):
    f = pde.DensityField(np.full(24, 0.9))
    out = action.jko_step(constant, f, 1e-3)
    assert np.abs(out.values - 0.9).max() < 1e-10


def test_jko_step_properties(constant):
    f = pde.DensityField(smooth_field(64, amplitude=0.3))
    h = 2e-4
    out = action.jko_step(constant, f, h)
    # mass conservation
    assert abs(out.mass() - f.mass()) <= 1e-12 * f.mass()
    # Euler-Lagrange residual at the reported tolerance
    w = metric.density_weight(constant, f.values)
    sprime = np.log(constant.phi_vec(np.maximum(out.values, 1e-12)))
    resid = (out.values - f.values) / h - metric.laplacian_weighted(w, sprime)
    assert np.linalg.norm(resid) <= 1e-9
    # proximal objective decreases, hence so does the entropy
    drho = out.values - f.values
    drho -= drho.mean()
    J_out = metric.hneg1w_inner(w, drho, drho) / (2 * h) \
        + pde.entropy_functional(constant, out)
    assert J_out <= pde.entropy_functional(constant, f) + 1e-12
    assert pde.entropy_functional(constant, out) <= pde.entropy_functional(constant, f)


def test_jko_rejects_bad_step(constant):
    f = pde.DensityField(smooth_field(16))
    with pytest.raises(ValueError):
        action.jko_step(constant, f, -1e-3)


def test_jko_flow_entropy_series(constant):
    f0 = pde.DensityField(smooth_field(32, amplitude=0.4))
    path, S = action.jko_flow(constant, f0, 1e-3, 40)
    assert np.all(np.diff(S) <= 1e-12)
    assert len(path) == 41
    masses = [f.mass() for f in path.fields]
    assert max(abs(m - masses[0]) for m in masses) < 1e-12


def test_jko_flow_relaxes_to_flat(constant):
    f0 = pde.DensityField(smooth_field(32, amplitude=0.4))
    path, _ = action.jko_flow(constant, f0, 2e-3, 800)
    assert np.abs(path.fields[-1].values - f0.mass()).max() < 1e-6


def test_jko_matches_pde_first_order(constant):
    M, T = 64, 0.01
    f0 = pde.DensityField(smooth_field(M, amplitude=0.3))
    dists = []
    for hstep in (4e-4, 2e-4):
        n = int(round(T / hstep))
        ref = pde.solve(constant, f0, T, 1e-5, snapshot_dt=hstep)
        path, _ = action.jko_flow(constant, f0, hstep, n)
        dists.append(max(np.abs(path.fields[k].values - ref.fields[k].values).sum() / M
                         for k in range(n + 1)))
    assert math.log2(dists[0] / dists[1]) > 0.8
