import numpy as np
import pytest
from scipy import stats

from zrplab import kmc, pde


# ----- product measure sampling ----------------------------------------------------


def test_zero_density_is_empty(constant):
    cfg = kmc.sample_equilibrium(constant, 0.0, 64, 1, seed=1)
    assert cfg.total == 0


def test_sample_mean_in_band(linear):
    # Poisson(2) marginal: chi = 2
    cfg = kmc.sample_equilibrium(linear, 2.0, 64, 1, seed=2)
    se = np.sqrt(2.0 / 64)
    assert abs(cfg.eta.mean() - 2.0) < 4 * se


def test_sample_matches_marginal_chisq(constant):
    # pooled over seeds; Geometric(1/2) marginal at rho = 1
    etas = np.concatenate([
        kmc.sample_equilibrium(constant, 1.0, 128, 1, seed=s).eta
        for s in range(30)
    ])
    pmf = constant.marginal_pmf(1.0)
    kmax = 9
    p = np.concatenate([pmf[:kmax], [1.0 - pmf[:kmax].sum()]])
    obs = np.concatenate([
        np.bincount(np.minimum(etas, kmax), minlength=kmax + 1)
    ])
    chi2 = stats.chisquare(obs, p * etas.size)
    assert chi2.pvalue > 0.01


def test_profile_constant_equals_equilibrium(constant):
    prof = pde.DensityField(np.full(4, 1.3))
    a = kmc.sample_profile(constant, prof, 64, seed=9)
    b = kmc.sample_equilibrium(constant, 1.3, 64, 1, seed=9)
    assert np.array_equal(a.eta, b.eta)


def test_profile_zero_region_empty(linear):
    u = (np.arange(32) + 0.5) / 32
    prof = pde.DensityField(np.where(u < 0.5, 1.0, 0.0))
    cfg = kmc.sample_profile(linear, prof, 64, seed=4)
    assert cfg.eta[32:].sum() == 0
    assert cfg.eta[:32].sum() > 0


def test_profile_block_band(linear):
    # local Poisson means: block averages track the profile
    M, N = 16, 256
    prof = pde.from_function(lambda u: 1.0 + 0.5 * np.sin(2 * np.pi * u), M)
    cfg = kmc.sample_profile(linear, prof, N, seed=5)
    emp = kmc.empirical_density(cfg, M)
    per_block = N // M
    se = np.sqrt((1.5 + prof.values) / per_block)  # chi <= rho for Poisson
    assert np.all(np.abs(emp.values - prof.values) < 4.5 * se)


# ----- dynamics ---------------------------------------------------------------------


def test_empty_configuration_unchanged(constant):
    cfg = kmc.Configuration(16, 1, np.zeros(16, dtype=np.int64))
    res = kmc.run(constant, cfg, 1.0, seed=1)
    assert res.n_events == 0
    assert res.config.total == 0


def test_mass_conserved_and_kernels_agree(linear):
    cfg = kmc.sample_equilibrium(linear, 1.0, 16, 1, seed=7)
    py = kmc.run(linear, cfg, 0.02, 123, record_events=True, _kernel_impl=kmc._kernel)
    nb = kmc.run(linear, cfg, 0.02, 123, record_events=True)
    assert py.config.total == cfg.total
    assert np.array_equal(py.config.eta, nb.config.eta)
    assert py.n_events == nb.n_events
    assert np.array_equal(py.events.times, nb.events.times)


def test_event_log_structure(constant):
    cfg = kmc.sample_equilibrium(constant, 1.0, 32, 1, seed=8)
    res = kmc.run(constant, cfg, 0.05, 9, record_events=True)
    ev = res.events
    assert np.all(np.diff(ev.times) > 0)
    assert np.all(ev.times <= 0.05)
    # nearest neighbour moves on the 1-d torus
    gap = np.abs(ev.src - ev.dst)
    assert np.all((gap == 1) | (gap == 31))


def test_event_log_structure_d2(constant):
    N = 8
    cfg = kmc.sample_equilibrium(constant, 1.0, N, 2, seed=12)
    res = kmc.run(constant, cfg, 0.02, 13, record_events=True)
    si, sj = res.events.src // N, res.events.src % N
    di, dj = res.events.dst // N, res.events.dst % N
    step_i = np.minimum((si - di) % N, (di - si) % N)
    step_j = np.minimum((sj - dj) % N, (dj - sj) % N)
    # exactly one coordinate moves by one (torus distance)
    assert np.all(step_i + step_j == 1)


def test_event_gaps_exponential_protocol(linear):
    # normalised gaps Lambda_i * tau_i are iid Exp(1); KS at alpha = 0.01
    passes = 0
    for s in range(100):
        cfg = kmc.sample_equilibrium(linear, 1.0, 16, 1, seed=1000 + s)
        res = kmc.run(linear, cfg, 0.02, 2000 + s, record_events=True)
        gaps = np.diff(np.concatenate([[0.0], res.events.times]))
        unit = gaps * res.events.total_rate
        if stats.kstest(unit, "expon").pvalue > 0.01:
            passes += 1
    assert passes >= 98


def test_equilibrium_mean_jump_rate(linear):
    # time average of sum_x g/N over replicas brackets Phi(1) = 1
    vals = []
    for s in range(16):
        cfg = kmc.sample_equilibrium(linear, 1.0, 64, 1, seed=3000 + s)
        vals.append(kmc.run(linear, cfg, 0.1, 4000 + s).time_avg_jump_rate)
    vals = np.array(vals)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - 1.0) < 4 * se


def test_stationarity_quick(constant):
    # marginal at time T matches the equilibrium marginal (product measure start)
    etas = []
    for s in range(50):
        cfg = kmc.sample_equilibrium(constant, 1.0, 64, 1, seed=5000 + s)
        etas.append(kmc.run(constant, cfg, 0.5, 6000 + s).config.eta)
    etas = np.concatenate(etas)
    pmf = constant.marginal_pmf(1.0)
    kmax = 8
    p = np.concatenate([pmf[:kmax], [1.0 - pmf[:kmax].sum()]])
    obs = np.bincount(np.minimum(etas, kmax), minlength=kmax + 1)
    assert stats.chisquare(obs, p * etas.size).pvalue > 0.01


def test_single_particle_msd_vs_ctrw_oracle(linear):
    # one particle: continuous-time walk, rate 2 N^2, steps +-1/N
    N, T, reps = 32, 0.05, 3000
    seeds = np.random.SeedSequence(42).generate_state(reps)
    msd = []
    eta0 = np.zeros(N, dtype=np.int64)
    eta0[0] = 1
    for s in seeds:
        res = kmc.run(linear, kmc.Configuration(N, 1, eta0.copy()), T, s,
                      snapshot_times=np.array([T]), tag_site=0)
        msd.append((res.tag_displacements[0, 0] / N) ** 2)
    msd = np.array(msd)
    # independent oracle: number of steps ~ Poisson(2 N^2 T), displacement a
    # sum of +-1 steps
    rng = np.random.default_rng(7)
    n_jumps = rng.poisson(2 * N * N * T, size=reps)
    disp = np.array([rng.integers(0, 2, size=n) * 2 - 1 for n in n_jumps], dtype=object)
    oracle = np.array([float(d.sum()) ** 2 for d in disp]) / N ** 2
    se = np.sqrt(msd.var() / reps + oracle.var() / reps)
    assert abs(msd.mean() - oracle.mean()) < 4 * se
    assert abs(msd.mean() - 2 * T) < 4 * np.sqrt(msd.var() / reps)


def test_reversibility_two_time_covariance(linear):
    # stationary reversible dynamics: Cov(eta_x(0), eta_y(t)) is symmetric
    # under swapping the roles of x and y with the time direction
    N, T, reps = 8, 0.05, 4000
    a = np.empty(reps)
    b = np.empty(reps)
    c = np.empty(reps)
    d = np.empty(reps)
    seeds = np.random.SeedSequence(11).generate_state(2 * reps)
    for r in range(reps):
        cfg = kmc.sample_equilibrium(linear, 1.0, N, 1, seeds[2 * r])
        res = kmc.run(linear, cfg, T, seeds[2 * r + 1])
        a[r], b[r] = cfg.eta[0], res.config.eta[1]
        c[r], d[r] = cfg.eta[1], res.config.eta[0]
    cov_fg = np.mean(a * b) - a.mean() * b.mean()
    cov_gf = np.mean(c * d) - c.mean() * d.mean()
    se = np.sqrt(np.var(a * b) / reps + np.var(c * d) / reps)
    assert abs(cov_fg - cov_gf) < 4 * se


def test_snapshots_and_time_grid(constant):
    cfg = kmc.sample_equilibrium(constant, 1.0, 32, 1, seed=21)
    times = np.linspace(0.0, 0.1, 6)
    res = kmc.run(constant, cfg, 0.1, 22, snapshot_times=times)
    assert res.snapshots.shape == (6, 32)
    assert np.array_equal(res.snapshots[0], cfg.eta)  # t = 0 snapshot
    assert np.array_equal(res.snapshots[-1], res.config.eta)
    assert np.ptp(res.snapshots.sum(axis=1)) == 0  # mass at every snapshot


# ----- block averaging ---------------------------------------------------------------


def test_empirical_density_exact(linear):
    cfg = kmc.Configuration(8, 1, np.array([3, 0, 1, 1, 0, 0, 2, 1], dtype=np.int64))
    f = kmc.empirical_density(cfg, 4)
    assert np.array_equal(f.values, np.array([1.5, 1.0, 0.0, 1.5]))
    assert f.mass() == cfg.total / 8
    with pytest.raises(ValueError, match="divide"):
        kmc.empirical_density(cfg, 3)


def test_empirical_density_constant(linear):
    cfg = kmc.Configuration(16, 2, np.full(256, 3, dtype=np.int64))
    f = kmc.empirical_density(cfg, 4)
    assert np.all(f.values == 3.0)


# ----- tagged particle ----------------------------------------------------------------


def test_tagged_requires_occupied_site(constant):
    cfg = kmc.Configuration(8, 1, np.zeros(8, dtype=np.int64))
    with pytest.raises(ValueError, match="occupied"):
        kmc.run(constant, cfg, 0.1, 1, tag_site=3)
    with pytest.raises(ValueError):
        kmc.tagged_run(constant, 0.0, 8, 1, 0.1, 1, 10)


def test_tagged_linear_sigma_is_one(linear):
    # independent walkers: sigma(rho) = 1 regardless of rho
    res = kmc.tagged_run(linear, 1.0, 64, 1, 2.0, seed=31, replicas=80)
    assert abs(res.sigma_hat - 1.0) < 4 * res.stderr


def test_tagged_track_increments(linear):
    # unwrapped positions per event: steps are unit vectors or zero
    cfg = kmc.sample_equilibrium(linear, 1.0, 16, 1, seed=41)
    site = int(np.flatnonzero(cfg.eta > 0)[0])
    res = kmc.run(linear, cfg, 0.05, 42, record_events=True, tag_site=site,
                  snapshot_times=np.array([0.05]))
    track = res.events.tag_track
    assert track.shape == (res.n_events, 1)
    steps = np.abs(np.diff(track, axis=0))
    assert np.all(steps <= 1)
    assert track[0, 0] - site in (-1, 0, 1)
    # final track point agrees with the snapshot displacement
    assert track[-1, 0] - site == res.tag_displacements[-1, 0]


def test_tagged_dilute_limit(constant):
    # rho -> 0: sigma -> g(1) = 1; at rho = 0.02 the formula gives 0.980
    rho = 0.02
    res = kmc.tagged_run(constant, rho, 64, 1, 1.0, seed=33, replicas=80)
    sigma = constant.self_diffusivity(rho)
    assert abs(sigma - 1.0) < 0.03
    assert abs(res.sigma_hat - sigma) < 4 * res.stderr
