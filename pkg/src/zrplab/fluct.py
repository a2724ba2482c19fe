"""Fluctuation fields and martingale diagnostics for the particle simulator.

The density fluctuation field pairs a smooth test function with the gap
between the simulated empirical measure and a deterministic reference:

    Y(t) = N^{d/2} ( <g, rho_ref(t)> - N^{-d} sum_x g(x/N) eta_t(x) ).

Test functions are finite Fourier sums, so their gradient and Laplacian are
exact and the compensators below carry no spatial discretisation error.
Against an equilibrium reference the limiting field is a stationary
Ornstein-Uhlenbeck process: per Fourier mode the drift eigenvalue is
Phi'(rho*) lambda and the quadratic variation rate is 2 Phi(rho*) lambda
(both lattice directions contribute to the noise under the mass-2d
neighbour kernel), giving the stationary variance Phi/Phi' = chi per unit
test-function mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kmc
from .pde import DensityField, FieldPath


@dataclass(frozen=True)
class FourierTestFunction:
    """g(u) = c0 + sum_m a_m cos(2 pi k_m . u) + b_m sin(2 pi k_m . u) on the torus.

    modes: tuple of (k, a, b) with k an int (d = 1) or int pair (d = 2).
    """

    d: int
    c0: float = 0.0
    modes: tuple = field(default_factory=tuple)

    def _kvecs(self):
        ks = np.array([np.atleast_1d(m[0]) for m in self.modes],
                      dtype=float).reshape(len(self.modes), self.d)
        a = np.array([float(m[1]) for m in self.modes])
        b = np.array([float(m[2]) for m in self.modes])
        return ks, a, b

    def __call__(self, u: np.ndarray) -> np.ndarray:
        """Evaluate at points u of shape (..., d)."""
        u = np.asarray(u, dtype=float).reshape(-1, self.d)
        out = np.full(u.shape[0], self.c0)
        if self.modes:
            ks, a, b = self._kvecs()
            phase = 2 * np.pi * (u @ ks.T)
            out = out + np.cos(phase) @ a + np.sin(phase) @ b
        return out

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1, self.d)
        out = np.zeros(u.shape[0])
        if self.modes:
            ks, a, b = self._kvecs()
            lam = (2 * np.pi) ** 2 * (ks ** 2).sum(axis=1)
            phase = 2 * np.pi * (u @ ks.T)
            out = -(np.cos(phase) * lam) @ a - (np.sin(phase) * lam) @ b
        return out

    def grad_sq(self, u: np.ndarray) -> np.ndarray:
        """|grad g|^2 pointwise."""
        u = np.asarray(u, dtype=float).reshape(-1, self.d)
        out = np.zeros(u.shape[0])
        if self.modes:
            ks, a, b = self._kvecs()
            phase = 2 * np.pi * (u @ ks.T)
            for j in range(self.d):
                dj = (-np.sin(phase) * (2 * np.pi * ks[:, j])) @ a \
                    + (np.cos(phase) * (2 * np.pi * ks[:, j])) @ b
                out += dj ** 2
        return out

    def l2_norm_sq(self) -> float:
        """Integral of g^2 over the torus (Parseval)."""
        _, a, b = self._kvecs() if self.modes else (None, np.zeros(0), np.zeros(0))
        return float(self.c0 ** 2 + 0.5 * (a ** 2).sum() + 0.5 * (b ** 2).sum())

    def h1_norm_sq(self) -> float:
        """Integral of |grad g|^2 over the torus."""
        if not self.modes:
            return 0.0
        ks, a, b = self._kvecs()
        lam = (2 * np.pi) ** 2 * (ks ** 2).sum(axis=1)
        return float(0.5 * (lam * (a ** 2 + b ** 2)).sum())


def lattice_points(N: int, d: int) -> np.ndarray:
    """Site positions x/N on the unit torus, flat row-major order."""
    u = np.arange(N) / N
    if d == 1:
        return u.reshape(-1, 1)
    X, Y = np.meshgrid(u, u, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def _reference_on_lattice(rho_ref, times, N: int, d: int) -> np.ndarray:
    """Reference density at each snapshot time on the lattice, shape (K, n)."""
    n = N ** d
    if np.isscalar(rho_ref):
        return np.full((len(times), n), float(rho_ref))
    if isinstance(rho_ref, DensityField):
        M = rho_ref.M
        cells = (np.arange(N) * M) // N
        vals = rho_ref.values[cells] if d == 1 else rho_ref.values[np.ix_(cells, cells)].ravel()
        return np.tile(vals, (len(times), 1))
    if isinstance(rho_ref, FieldPath):
        out = np.empty((len(times), n))
        for i, t in enumerate(times):
            j = int(np.argmin(np.abs(rho_ref.times - t)))
            if abs(rho_ref.times[j] - t) > 1e-9 * max(t, 1.0) + 1e-12:
                raise ValueError(f"reference path has no snapshot near t = {t:g}")
            out[i] = _reference_on_lattice(rho_ref.fields[j], [t], N, d)[0]
        return out
    raise TypeError("rho_ref must be a number, DensityField or FieldPath")


def fluctuation_values(g_sites: np.ndarray, ref_sites: np.ndarray,
                       snapshots: np.ndarray, N: int, d: int) -> np.ndarray:
    """Y at each snapshot: N^{d/2} * N^{-d} sum_x g(x/N) (rho_ref(x) - eta(x))."""
    n = N ** d
    scale = N ** (d / 2) / n
    return scale * ((ref_sites * g_sites).sum(axis=1) - snapshots @ g_sites)


@dataclass
class FluctuationSample:
    replica: int
    seed: int
    times: np.ndarray
    Y: np.ndarray


def fluctuation_samples(ens, rho_ref, g: FourierTestFunction, N: int,
                        replicas: int, seed, times=None, d: int | None = None
                        ) -> list[FluctuationSample]:
    """Simulate replicas and evaluate the fluctuation field on a time grid.

    rho_ref may be a constant (equilibrium), a DensityField, or a pde
    FieldPath whose snapshots cover the requested times.  The initial
    configurations are drawn from the product measure matching rho_ref at
    t = 0.
    """
    d = g.d if d is None else d
    if times is None:
        times = np.array([0.0])
    times = np.asarray(times, dtype=float)
    T = float(times[-1])
    pts = lattice_points(N, d)
    g_sites = g(pts)
    ref_sites = _reference_on_lattice(rho_ref, times, N, d)
    if isinstance(rho_ref, FieldPath):
        rho0 = rho_ref.fields[0]
    elif isinstance(rho_ref, DensityField):
        rho0 = rho_ref
    else:
        rho0 = DensityField(np.full((1,) * d, float(rho_ref)))
    seeds = np.random.SeedSequence(seed).generate_state(2 * replicas)
    out = []
    for r in range(replicas):
        cfg = kmc.sample_profile(ens, rho0, N, seeds[2 * r])
        if T > 0:
            res = kmc.run(ens, cfg, T, seeds[2 * r + 1], snapshot_times=times)
            snaps = res.snapshots
        else:
            snaps = cfg.eta[None, :]
        Y = fluctuation_values(g_sites, ref_sites, snaps, N, d)
        out.append(FluctuationSample(replica=r, seed=int(seeds[2 * r]), times=times, Y=Y))
    return out


# ----- equilibrium variance ------------------------------------------------------


@dataclass
class VarianceReport:
    var_hat: float
    stderr: float
    static_prediction: float  # chi(rho*) * ||g||_{L2}^2
    ou_prediction: float      # stationary variance of the limiting OU field
    replicas: int
    passed: bool


def ou_stationary_variance(ens, rho_star: float, g: FourierTestFunction) -> float:
    """Mode-wise stationary variance of the limiting Ornstein-Uhlenbeck field.

    Nonconstant modes: (qv rate)/(2 drift) = 2 Phi lam / (2 Phi' lam) = Phi/Phi'
    per unit mode mass.  The constant mode carries no dynamics and keeps its
    static variance chi * c0^2.
    """
    phi = ens.mean_jump_rate(rho_star)
    dphi = ens.phi_prime(rho_star)
    chi = ens.compressibility(rho_star)
    mode_mass = g.l2_norm_sq() - g.c0 ** 2
    return (phi / dphi) * mode_mass + chi * g.c0 ** 2


def equilibrium_variance_check(ens, rho_star: float, g: FourierTestFunction,
                               N: int, replicas: int, seed,
                               d: int | None = None) -> VarianceReport:
    """Compare Var Y(0) under the product measure with the CLT predictions."""
    d = g.d if d is None else d
    samples = fluctuation_samples(ens, rho_star, g, N, replicas, seed, d=d)
    y = np.array([s.Y[0] for s in samples])
    y2 = (y - y.mean()) ** 2
    var_hat = float(y2.sum() / (len(y) - 1))
    stderr = float(y2.std(ddof=1) / np.sqrt(len(y)))
    static_pred = ens.compressibility(rho_star) * g.l2_norm_sq()
    ou_pred = ou_stationary_variance(ens, rho_star, g)
    return VarianceReport(
        var_hat=var_hat, stderr=stderr, static_prediction=static_pred,
        ou_prediction=ou_pred, replicas=replicas,
        passed=bool(abs(var_hat - static_pred) <= 4 * stderr),
    )


# ----- martingale residuals -------------------------------------------------------


@dataclass
class MartingaleReport:
    mean_increment: float
    stderr: float
    z: float
    replicas: int
    window: tuple


def _poly_eval(coeffs, y):
    out = np.zeros_like(y)
    for c in reversed(coeffs):
        out = out * y + c
    return out


def _poly_der(coeffs):
    return [c * k for k, c in enumerate(coeffs)][1:] or [0.0]


def _trapz_cum(vals, times):
    out = np.zeros_like(vals)
    out[1:] = np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(times))
    return out


def martingale_increments(ens, rho_ref, g: FourierTestFunction, F_list,
                          N: int, replicas: int, window: tuple, seed,
                          n_snaps: int = 61, d: int | None = None) -> list[np.ndarray]:
    """Per-replica martingale increments M(t2) - M(t1), one array per polynomial.

    All polynomials are evaluated on the same simulated trajectories.
    """
    t1, t2 = window
    if not 0 <= t1 < t2:
        raise ValueError("need 0 <= t1 < t2")
    for F_coeffs in F_list:
        if len(F_coeffs) > 5:
            raise ValueError("F must be a polynomial of degree <= 4")
    d = g.d if d is None else d
    times = np.linspace(0.0, t2, n_snaps)
    i1 = int(np.argmin(np.abs(times - t1)))
    i2 = n_snaps - 1
    pts = lattice_points(N, d)
    g_sites = g(pts)
    lapg_sites = g.laplacian(pts)
    gradsq_sites = g.grad_sq(pts)
    ref_sites = _reference_on_lattice(rho_ref, times, N, d)
    uvals, uinv = np.unique(ref_sites, return_inverse=True)
    phi_ref = ens.phi_vec(uvals)[uinv].reshape(ref_sites.shape)
    dphi_ref = ens.phi_prime_vec(uvals)[uinv].reshape(ref_sites.shape)
    # quadratic variation rate per snapshot (lattice quadrature, exact for Fourier g)
    n = N ** d
    qv = 2.0 * (phi_ref * gradsq_sites).sum(axis=1) / n
    A = dphi_ref * lapg_sites  # drift pairing function on the lattice

    if isinstance(rho_ref, FieldPath):
        rho0 = rho_ref.fields[0]
    elif isinstance(rho_ref, DensityField):
        rho0 = rho_ref
    else:
        rho0 = DensityField(np.full((1,) * d, float(rho_ref)))
    seeds = np.random.SeedSequence(seed).generate_state(2 * replicas)
    incr = [np.empty(replicas) for _ in F_list]
    scale = N ** (d / 2) / n
    for r in range(replicas):
        cfg = kmc.sample_profile(ens, rho0, N, seeds[2 * r])
        res = kmc.run(ens, cfg, t2, seeds[2 * r + 1], snapshot_times=times)
        snaps = res.snapshots
        Y = scale * ((ref_sites * g_sites).sum(axis=1) - snaps @ g_sites)
        YA = scale * ((ref_sites * A).sum(axis=1) - (snaps * A).sum(axis=1))
        for fi, F_coeffs in enumerate(F_list):
            Fp = _poly_der(list(F_coeffs))
            Fpp = _poly_der(Fp)
            drift = _poly_eval(Fp, Y) * YA
            noise = 0.5 * _poly_eval(Fpp, Y) * qv
            M = _poly_eval(list(F_coeffs), Y) - _poly_eval(list(F_coeffs), Y[:1]) \
                - _trapz_cum(drift, times) - _trapz_cum(noise, times)
            incr[fi][r] = M[i2] - M[i1]
    return incr


def martingale_residual(ens, rho_ref, g: FourierTestFunction, F_coeffs,
                        N: int, replicas: int, window: tuple, seed,
                        n_snaps: int = 61, d: int | None = None) -> MartingaleReport:
    """Test the martingale property of the compensated fluctuation functional.

    Per replica computes

        M(t) = F(Y t) - F(Y 0) - int_0^t F'(Y) <Y, Phi'(rho) Lap g> ds
                                - (1/2) int_0^t F''(Y) qv(s) ds,

    with qv(s) = 2 * integral Phi(rho(s)) |grad g|^2 dx (the lattice noise
    feeds both neighbour directions), and reports the z-score of the sample
    mean of M(t2) - M(t1), which vanishes for a martingale.

    F_coeffs are polynomial coefficients (constant first, degree <= 4).
    """
    if replicas < 100:
        raise ValueError("martingale residual needs at least 100 replicas")
    incr = martingale_increments(ens, rho_ref, g, [F_coeffs], N, replicas,
                                 window, seed, n_snaps=n_snaps, d=d)[0]
    mean = float(incr.mean())
    stderr = float(incr.std(ddof=1) / np.sqrt(replicas))
    return MartingaleReport(mean_increment=mean, stderr=stderr,
                            z=mean / stderr if stderr > 0 else 0.0,
                            replicas=replicas, window=window)
