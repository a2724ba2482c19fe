"""Grand canonical thermodynamics of a jump rate model.

For a jump rate g the one-site equilibrium marginal at fugacity phi is
(1/Z) phi^k / g!(k) with partition function Z(phi) = sum_k phi^k / g!(k).
Everything else here derives from that series:

    R(phi)   = phi Z'(phi)/Z(phi)          mean occupancy (density function)
    Phi(rho) = R^{-1}(rho)                 mean local jump rate, the PDE nonlinearity
    S(rho)   = rho log Phi(rho) - log Z(Phi(rho))   entropy density, S' = log Phi
    chi(rho) = Var of the marginal         compressibility, chi = Phi/Phi'
    sigma(rho) = Phi(rho)/rho              tagged-particle self-diffusivity

The Evans and Landim families additionally have closed-form densities via
the hypergeometric and polylogarithm series implemented at the bottom.

Series are accumulated with a shared scale factor (a running exponent), so
partition sums never overflow even when Z is astronomically large; all
factorial products enter through the term recurrence t_{k+1} = t_k*phi/g(k+1).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from . import jump_rates as jr
from .errors import ConvergenceError, OutOfDomainError, SaturationError

_RESCALE_AT = 1e250


@dataclass(frozen=True)
class ThermoValue:
    """Bundle of thermodynamic quantities at one density."""

    rho: float
    phi: float
    S: float
    dS: float  # = log phi for rho > 0, -inf at rho = 0
    sigma: float
    chi: float


def _series_moments(spec, phi, tol, max_terms):
    """Moment sums of the unnormalised marginal weights t_k = phi^k/g!(k).

    Returns (S0, S1, S2, shift) with

        Z   = S0 * exp(shift)
        Z'  = (S1/phi) * exp(shift)
        Z'' = (S2/phi^2) * exp(shift)

    where S1 = sum k t_k and S2 = sum k(k-1) t_k (relative to the shift).
    Truncation uses the geometric tail bound with the true limiting term
    ratio phi/liminf g, so the requested relative tolerance is honoured
    arbitrarily close to the critical fugacity.
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0):
        raise OutOfDomainError("fugacity must be >= 0")
    g_inf = jr.rate_tail_limit(spec)
    phimax = float(phi.max(initial=0.0))
    r_limit = 0.0 if math.isinf(g_inf) else phimax / g_inf
    if r_limit >= 1.0:
        raise OutOfDomainError(
            f"fugacity {phimax:g} at or above the critical fugacity"
        )

    # blocked accumulation: one numpy pass per BLOCK terms keeps the python
    # overhead negligible even when convergence near phi_c needs 1e5+ terms
    n = phi.size
    block_cap = max(16, min(256, int(4e6 / max(n, 1))))
    t_last = np.ones_like(phi)
    s0 = np.ones_like(phi)
    s1 = np.zeros_like(phi)
    s2 = np.zeros_like(phi)
    shift = 0.0
    k = 0
    while k < max_terms:
        ks = np.arange(k + 1, k + block_cap + 1, dtype=float)
        rates = jr.evaluate(spec, ks.astype(np.int64))
        # bound the within-block growth so tt (times k^2) cannot overflow
        log_ratio = 0.0
        if phimax > 0:
            log_ratio = max(math.log(phimax) - math.log(float(rates.min())), 0.0)
        block = block_cap
        if block * log_ratio > 580.0:
            block = max(8, int(580.0 / log_ratio))
            ks = ks[:block]
            rates = rates[:block]
        tmax = float(t_last.max())
        if tmax > 0.0 and math.log(tmax) + block * log_ratio \
                + 2 * math.log(k + block + 2) > 620.0:
            t_last /= tmax
            s0 /= tmax
            s1 /= tmax
            s2 /= tmax
            shift += math.log(tmax)
        tt = t_last[..., None] * np.cumprod(phi[..., None] / rates, axis=-1)
        s0 += tt.sum(axis=-1)
        s1 += (tt * ks).sum(axis=-1)
        s2 += (tt * ks * (ks - 1.0)).sum(axis=-1)
        t_last = np.ascontiguousarray(tt[..., -1])
        k += block
        r_next = phimax / float(jr.evaluate(spec, k + 1))
        r_bar = max(r_next, r_limit)
        if r_bar < 1.0:
            # geometric tail bounds: sum_{m>=1} (k+m)^p r^m <= 2 q (k+c)^p
            # with q = r/(1-r), c = 1/(1-r)
            q = r_bar / (1.0 - r_bar)
            c = 1.0 / (1.0 - r_bar)
            ok0 = t_last * q <= tol * s0
            ok2 = 2.0 * t_last * q * (k + c) ** 2 <= tol * (s1 + s2) + 1e-300
            if np.all(ok0) and np.all(ok2):
                break
        big = float(s0.max())
        if not math.isfinite(big):
            raise ConvergenceError(f"partition series overflowed at phi={phimax:g}")
        if big > _RESCALE_AT:
            t_last /= big
            s0 /= big
            s1 /= big
            s2 /= big
            shift += math.log(big)
    else:
        raise ConvergenceError(
            f"partition series did not converge within {max_terms} terms at phi={phimax:g}"
        )
    return s0, s1, s2, shift


class Ensemble:
    """Cached thermodynamic tables for one jump rate spec.

    Construction is single-threaded; afterwards the instance is safe for
    concurrent reads.  The bracketing table for fugacity inversion grows
    lazily under a lock and is swapped in atomically.
    """

    def __init__(self, spec: jr.JumpRateSpec, series_tol: float = 1e-14,
                 max_terms: int = 10 ** 6):
        self.spec = spec
        self.series_tol = float(series_tol)
        self.max_terms = int(max_terms)
        self.phi_c = jr.critical_fugacity(spec)
        self._g1 = jr.evaluate(spec, 1)
        self._lock = threading.Lock()
        self._table = self._build_table()

    # ----- bracketing table ------------------------------------------------

    def _node_grid(self, phi_top):
        if math.isinf(self.phi_c):
            return np.concatenate([[0.0], np.geomspace(1e-8, phi_top, 96)])
        # approach a finite phi_c geometrically from below
        lo = np.geomspace(1e-8, 0.5 * self.phi_c, 48)
        j = np.arange(1, 15)
        hi = self.phi_c * (1.0 - 0.5 ** j)
        nodes = np.concatenate([[0.0], lo, hi])
        return np.unique(nodes[nodes < self.phi_c])

    def _build_table(self, phi_top=None):
        if phi_top is None:
            phi_top = 16.0 if math.isinf(self.phi_c) else self.phi_c
        phi = self._node_grid(phi_top)
        keep_phi, logZ, logZp, R = [0.0], [0.0], [-math.log(self._g1)], [0.0]
        for p in phi[phi > 0]:
            try:
                s0, s1, s2, shift = _series_moments(
                    self.spec, np.array([p]), self.series_tol, self.max_terms
                )
            except ConvergenceError:
                break  # deeper nodes towards phi_c are unaffordable; stop here
            keep_phi.append(float(p))
            logZ.append(math.log(float(s0[0])) + shift)
            logZp.append(math.log(float(s1[0])) - math.log(p) + shift)
            R.append(float(s1[0] / s0[0]))
        return (np.array(keep_phi), np.array(logZ), np.array(logZp), np.array(R))

    def table_nodes(self):
        """Cached (phi, Z, Z', R) nodes used for inversion bracketing."""
        phi, logZ, logZp, R = self._table
        return phi.copy(), np.exp(logZ), np.exp(logZp), R.copy()

    def _ensure_cover(self, rho_max: float):
        """Grow the node table until its density range covers rho_max."""
        phi, _, _, R = self._table
        if R[-1] > rho_max:
            return self._table
        if math.isfinite(self.phi_c):
            raise SaturationError(
                f"density {rho_max:g} at or above the estimated supremum "
                f"{R[-1]:g} of the density function (phi_c = {self.phi_c:g})"
            )
        with self._lock:
            phi, _, _, R = self._table
            phi_top = phi[-1]
            while self._table[3][-1] <= rho_max:
                phi_top *= 2.0
                if phi_top > 1e9:
                    raise ConvergenceError(
                        f"no fugacity below 1e9 reaches density {rho_max:g}"
                    )
                self._table = self._build_table(phi_top)
        return self._table

    # ----- series evaluations ----------------------------------------------

    def _moments(self, phi):
        phi = np.asarray(phi, dtype=float)
        if float(phi.max(initial=0.0)) >= self.phi_c:
            raise OutOfDomainError(
                f"fugacity {float(phi.max()):g} >= critical fugacity {self.phi_c:g}"
            )
        return _series_moments(self.spec, phi, self.series_tol, self.max_terms)

    def log_partition_vec(self, phi):
        """(log Z, log Z') for an array of fugacities; phi = 0 entries allowed."""
        phi = np.asarray(phi, dtype=float)
        pos = phi > 0
        logZ = np.zeros_like(phi)
        logZp = np.full_like(phi, -math.log(self._g1))
        if np.any(pos):
            s0, s1, _, shift = self._moments(phi[pos])
            logZ[pos] = np.log(s0) + shift
            logZp[pos] = np.log(s1) - np.log(phi[pos]) + shift
        return logZ, logZp

    def partition_function(self, phi: float):
        """(Z, Z') at one fugacity strictly below phi_c."""
        logZ, logZp = self.log_partition_vec(np.array([float(phi)]))
        return float(np.exp(logZ[0])), float(np.exp(logZp[0]))

    def density_series(self, phi):
        """R(phi) = phi Z'/Z straight from the series (generic path)."""
        phi = np.asarray(phi, dtype=float)
        out = np.zeros_like(phi)
        pos = phi > 0
        if np.any(pos):
            s0, s1, _, _ = self._moments(phi[pos])
            out[pos] = s1 / s0
        return float(out[0]) if out.size == 1 and np.ndim(phi) == 0 else out

    def density(self, phi):
        """Mean occupancy R(phi), using the Evans/Landim closed forms when exact."""
        scalar = np.ndim(phi) == 0
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        if float(phi.max(initial=0.0)) >= self.phi_c:
            raise OutOfDomainError(
                f"fugacity {float(phi.max()):g} >= critical fugacity {self.phi_c:g}"
            )
        if self.spec.epsilon == 0.0 and self.spec.model == "evans":
            out = evans_density(self.spec.b, phi, tol=self.series_tol)
        elif self.spec.epsilon == 0.0 and self.spec.model == "landim":
            out = landim_density(self.spec.b, phi, tol=self.series_tol)
        else:
            out = np.atleast_1d(self.density_series(phi))
        return float(out[0]) if scalar else out

    def _density_and_slope(self, phi):
        """R and R' = Var(k)/phi for positive fugacities (series path)."""
        s0, s1, s2, _ = self._moments(phi)
        R = s1 / s0
        var = (s2 + s1) / s0 - R * R
        return R, var / phi, var

    # ----- fugacity inversion ----------------------------------------------

    def phi_vec(self, rho, tol: float = 1e-12, max_iter: int = 200):
        """Phi(rho) solving R(Phi) = rho, elementwise on an array.

        Bracketed from the cached node table, polished by safeguarded Newton
        using the series derivative R' = Var/phi.
        """
        rho = np.asarray(rho, dtype=float)
        if np.any(rho < 0):
            raise ValueError("density must be >= 0")
        out = np.zeros_like(rho)
        pos = rho > 0
        if not np.any(pos):
            return out
        r = rho[pos]
        tab_phi, _, _, tab_R = self._ensure_cover(float(r.max()))
        hi_idx = np.searchsorted(tab_R, r, side="left").clip(1, len(tab_R) - 1)
        lo = tab_phi[hi_idx - 1]
        hi = tab_phi[hi_idx]
        phi = np.interp(r, tab_R, tab_phi)
        phi = np.clip(phi, lo, hi)
        active = np.ones_like(r, dtype=bool)
        for _ in range(max_iter):
            R, Rp, _ = self._density_and_slope(phi)
            f = R - r
            active = np.abs(f) > tol * (1.0 + r)
            if not np.any(active):
                break
            lo = np.where(f < 0, phi, lo)
            hi = np.where(f > 0, phi, hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(Rp > 0, f / Rp, 0.0)
            cand = phi - step
            bad = (cand <= lo) | (cand >= hi) | ~np.isfinite(cand)
            cand = np.where(bad, 0.5 * (lo + hi), cand)
            phi = np.where(active, cand, phi)
        else:
            raise ConvergenceError("fugacity inversion did not converge")
        out[pos] = phi
        return out

    def mean_jump_rate(self, rho: float) -> float:
        """Phi(rho), the inverse of the density function; Phi(0) = 0."""
        return float(self.phi_vec(np.array([float(rho)]))[0])

    def phi_prime_vec(self, rho, tol: float = 1e-12):
        """Phi'(rho) = 1/R'(Phi(rho)), with the exact limit g(1)+eps at rho = 0."""
        rho = np.asarray(rho, dtype=float)
        out = np.full_like(rho, self._g1)
        pos = rho > 0
        if np.any(pos):
            phi = self.phi_vec(rho[pos], tol=tol)
            _, Rp, _ = self._density_and_slope(phi)
            out[pos] = 1.0 / Rp
        return out

    def phi_prime(self, rho: float) -> float:
        return float(self.phi_prime_vec(np.array([float(rho)]))[0])

    # ----- entropy and friends ---------------------------------------------

    def entropy_vec(self, rho):
        """S(rho) = rho log Phi(rho) - log Z(Phi(rho)) elementwise; S(0) = 0."""
        rho = np.asarray(rho, dtype=float)
        out = np.zeros_like(rho)
        pos = rho > 0
        if np.any(pos):
            phi = self.phi_vec(rho[pos])
            logZ, _ = self.log_partition_vec(phi)
            out[pos] = rho[pos] * np.log(phi) - logZ
        return out

    def entropy(self, rho: float) -> float:
        return float(self.entropy_vec(np.array([float(rho)]))[0])

    def entropy_derivative(self, rho: float) -> float:
        """S'(rho) = log Phi(rho); returns -inf at rho = 0 (boundary limit)."""
        if rho < 0:
            raise ValueError("density must be >= 0")
        if rho == 0:
            return -math.inf
        return math.log(self.mean_jump_rate(rho))

    def entropy_derivative_vec(self, rho, floor: float = 0.0):
        rho = np.asarray(rho, dtype=float)
        if floor > 0:
            rho = np.maximum(rho, floor)
        return np.log(self.phi_vec(rho))

    def static_rate(self, rho_star: float, rho: float) -> float:
        """Large-deviation rate of observing density rho under equilibrium rho_star.

        Equals S(rho) - S(rho_star) - S'(rho_star)(rho - rho_star) >= 0.
        """
        if rho_star <= 0:
            raise ValueError("reference density must be > 0")
        phi_star = self.mean_jump_rate(rho_star)
        logZ_star, _ = self.log_partition_vec(np.array([phi_star]))
        if rho == 0:
            return float(logZ_star[0])
        phi = self.mean_jump_rate(rho)
        logZ, _ = self.log_partition_vec(np.array([phi]))
        return float(rho * (math.log(phi) - math.log(phi_star)) - (logZ[0] - logZ_star[0]))

    def compressibility(self, rho: float) -> float:
        """Variance of the one-site marginal at density rho (direct moment sums)."""
        if rho <= 0:
            raise ValueError("density must be > 0")
        phi = self.phi_vec(np.array([float(rho)]))
        _, _, var = self._density_and_slope(phi)
        return float(var[0])

    def self_diffusivity(self, rho: float) -> float:
        """sigma(rho) = Phi(rho)/rho, continued to g(1)+eps at rho -> 0."""
        if rho < 0:
            raise ValueError("density must be >= 0")
        if rho == 0:
            return self._g1
        return self.mean_jump_rate(rho) / rho

    def thermo_value(self, rho: float) -> ThermoValue:
        phi = self.mean_jump_rate(rho)
        return ThermoValue(
            rho=rho,
            phi=phi,
            S=self.entropy(rho),
            dS=math.log(phi) if rho > 0 else -math.inf,
            sigma=self.self_diffusivity(rho),
            chi=self.compressibility(rho) if rho > 0 else 0.0,
        )

    # ----- marginal pmf -----------------------------------------------------

    def marginal_pmf(self, rho: float, tail_mass: float = 1e-12):
        """Probabilities of the one-site marginal at density rho.

        The tail is cut once the geometric bound puts its mass below
        tail_mass relative to the partial sum, then renormalised.
        """
        return self.marginal_pmf_from_phi(self.mean_jump_rate(rho), tail_mass)

    def marginal_pmf_from_phi(self, phi: float, tail_mass: float = 1e-12):
        """Marginal pmf at a given fugacity (see marginal_pmf)."""
        if phi == 0.0:
            return np.array([1.0])
        if phi < 0 or phi >= self.phi_c:
            raise OutOfDomainError(f"fugacity {phi:g} outside [0, phi_c)")
        g_inf = jr.rate_tail_limit(self.spec)
        r_limit = 0.0 if math.isinf(g_inf) else phi / g_inf
        terms = [1.0]
        total = 1.0
        t = 1.0
        k = 0
        while True:
            k += 1
            t *= phi / jr.evaluate(self.spec, k)
            terms.append(t)
            total += t
            r_bar = max(phi / jr.evaluate(self.spec, k + 1), r_limit)
            if r_bar < 1.0 and t * r_bar / (1.0 - r_bar) <= tail_mass * total:
                break
            if k >= self.max_terms:
                raise ConvergenceError("marginal pmf tail did not close")
        p = np.array(terms)
        return p / p.sum()

    # ----- McCann condition --------------------------------------------------

    def mccann_check(self, rho_grid, d: int, n_panels: int = 2048):
        """Check Phi*Phi' >= (1 - 1/d) * int_0^rho Phi'(r)^2 dr on a grid.

        Phi' here is taken by central differences on the uniform integration
        grid (second order); the integral is a composite trapezoid from 0.
        """
        rho_grid = np.asarray(rho_grid, dtype=float)
        if rho_grid.size == 0:
            raise ValueError("rho_grid must be nonempty")
        if np.any(rho_grid <= 0):
            raise ValueError("grid densities must be > 0")
        if d < 1:
            raise ValueError("dimension must be >= 1")
        rmax = float(rho_grid.max())
        r = np.linspace(0.0, rmax, n_panels + 1)
        dr = r[1] - r[0]
        phi = self.phi_vec(r)
        dphi = np.empty_like(phi)
        dphi[1:-1] = (phi[2:] - phi[:-2]) / (2 * dr)
        dphi[0] = self._g1  # exact limit Phi'(0) = g(1)+eps
        dphi[-1] = (3 * phi[-1] - 4 * phi[-2] + phi[-3]) / (2 * dr)
        integral = np.concatenate([[0.0], np.cumsum(0.5 * (dphi[1:] ** 2 + dphi[:-1] ** 2) * dr)])
        lhs_all = phi * dphi
        rhs_all = (1.0 - 1.0 / d) * integral
        lhs = np.interp(rho_grid, r, lhs_all)
        rhs = np.interp(rho_grid, r, rhs_all)
        margins = lhs - rhs
        i = int(np.argmin(margins))
        return McCannReport(
            holds=bool(np.all(margins >= 0)),
            worst_margin=float(margins[i]),
            witness=float(rho_grid[i]),
            rho=rho_grid.copy(),
            lhs=lhs,
            rhs=rhs,
        )


@dataclass(frozen=True)
class McCannReport:
    holds: bool
    worst_margin: float
    witness: float
    rho: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray


# ----- special function series ------------------------------------------------


def hyp2f1(a: float, b: float, c: float, z, tol: float = 1e-14,
           max_terms: int = 10 ** 6):
    """Gauss hypergeometric series sum_k (a)_k (b)_k / (c)_k z^k / k! for 0 <= z < 1."""
    if c <= 0 and c == int(c):
        raise ValueError("c must not be a nonpositive integer")
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if np.any((z < 0) | (z >= 1)):
        raise OutOfDomainError("hypergeometric series requires 0 <= z < 1")
    zmax = float(z.max(initial=0.0))
    out = np.ones_like(z)
    t = np.ones_like(z)
    k = 0
    while k < max_terms:
        ratio_k = (a + k) * (b + k) / ((c + k) * (k + 1.0))
        t = t * ratio_k * z
        out += t
        k += 1
        # term ratios are monotone towards z once k dominates a, b, c
        r_next = abs((a + k) * (b + k) / ((c + k) * (k + 1.0))) * zmax
        r_bar = max(r_next, zmax)
        if k >= 8 and r_bar < 1.0 and \
                float(np.abs(t).max()) * r_bar / (1.0 - r_bar) <= tol * float(out.min()):
            break
    else:
        raise ConvergenceError(f"2F1 series did not converge within {max_terms} terms")
    return float(out[0]) if scalar else out


def polylog(s: float, z, tol: float = 1e-14, max_terms: int = 10 ** 6):
    """Li_s(z) = sum_{k>=1} z^k / k^s for 0 <= z < 1; z = 1 allowed for s > 1."""
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if np.any(z < 0) or np.any(z > 1) or (np.any(z == 1) and s <= 1):
        raise OutOfDomainError("polylog requires 0 <= z < 1 (z = 1 only for s > 1)")
    out = np.zeros_like(z)
    inner = z < 1
    if np.any(~inner):
        out[~inner] = _zeta(s)
    zi = z[inner]
    if zi.size:
        zmax = float(zi.max(initial=0.0))
        acc = zi.copy()
        t = zi.copy()
        k = 1
        while k < max_terms:
            ratio_k = (k / (k + 1.0)) ** s
            t = t * ratio_k * zi
            acc += t
            k += 1
            r_bar = max(ratio_k * zmax, zmax)
            if r_bar < 1.0 and float(np.abs(t).max()) * r_bar / (1.0 - r_bar) <= tol * float(np.abs(acc).min() + 1e-300):
                break
        else:
            raise ConvergenceError(f"polylog series did not converge within {max_terms} terms")
        out[inner] = acc
    return float(out[0]) if scalar else out


def _zeta(s: float, K: int = 100000) -> float:
    """zeta(s) for s > 1: partial sum plus Euler-Maclaurin tail corrections."""
    ks = np.arange(1, K + 1, dtype=float)
    partial = float(np.sum(ks ** (-s)))
    tail = K ** (1.0 - s) / (s - 1.0) - 0.5 * K ** (-s) + s * K ** (-s - 1.0) / 12.0 \
        - s * (s + 1.0) * (s + 2.0) * K ** (-s - 3.0) / 720.0
    return partial + tail


def evans_density(b: float, phi, tol: float = 1e-14):
    """Closed-form density of the Evans model, valid on [0, 1)."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    num = hyp2f1(2.0, 2.0, 2.0 + b, phi, tol=tol)
    den = hyp2f1(1.0, 1.0, 1.0 + b, phi, tol=tol)
    return phi * np.atleast_1d(num) / ((1.0 + b) * np.atleast_1d(den))


def landim_density(b: float, phi, tol: float = 1e-14):
    """Closed-form density of the Landim model, valid on [0, 1)."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    return np.atleast_1d(polylog(b - 1.0, phi, tol=tol)) / (
        1.0 + np.atleast_1d(polylog(b, phi, tol=tol))
    )
