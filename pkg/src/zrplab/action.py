"""Path action functionals and the proximal (JKO-type) stepping scheme.

The zero range path functional penalises deviations of a density path from
the nonlinear diffusion flow in the weighted negative Sobolev norm,

    rate = sum_k dt * || (rho_{k+1}-rho_k)/dt - Lap_h Phi(rho_mid) ||^2_{H^-1_{Phi(rho_mid)}},

with midpoint fields in both the flux and the weight.  Expanding the square
splits the rate into a metric action, a dissipation term and (twice) the
entropy change along the path; rate_decomposition returns the three pieces.

jko_step performs one implicit step of the gradient flow: it minimises

    J(rho) = ||rho - rho_prev||^2_{H^-1_w} / (2 hstep) + entropy(rho),
    w = Phi(rho_prev) frozen,

over nonnegative fields of equal mass.  Freezing the weight makes J
strictly convex; damped Newton on the optimality system converges fast and
the entropy barrier keeps iterates positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import metric, pde
from .errors import ConvergenceError


# ----- toy one-dimensional action ---------------------------------------------


@dataclass
class ToyPath:
    """Piecewise-linear scalar path on a uniform time grid, with a potential."""

    times: np.ndarray
    positions: np.ndarray
    V: callable
    Vp: callable

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.times.size < 2 or self.times.size != self.positions.size:
            raise ValueError("need matching time/position grids with K >= 1 steps")
        dts = np.diff(self.times)
        if np.any(dts <= 0) or abs(dts.max() - dts.min()) > 1e-9 * dts.max():
            raise ValueError("time grid must be uniform and increasing")


def toy_rate(path: ToyPath) -> float:
    """Action integral of (xdot + V'(x))^2 / 2, midpoint quadrature."""
    dt = path.times[1] - path.times[0]
    x = path.positions
    xdot = np.diff(x) / dt
    mid = 0.5 * (x[1:] + x[:-1])
    return float(0.5 * np.sum((xdot + path.Vp(mid)) ** 2) * dt)


def toy_rate_split(path: ToyPath) -> tuple[float, float, float]:
    """(kinetic, potential-square, boundary) pieces whose sum matches toy_rate.

    kinetic = int xdot^2/2, potential = int V'(x)^2/2, boundary = V(x_T)-V(x_0).
    """
    dt = path.times[1] - path.times[0]
    x = path.positions
    xdot = np.diff(x) / dt
    mid = 0.5 * (x[1:] + x[:-1])
    kinetic = float(0.5 * np.sum(xdot ** 2) * dt)
    potential = float(0.5 * np.sum(path.Vp(mid) ** 2) * dt)
    boundary = float(path.V(x[-1]) - path.V(x[0]))
    return kinetic, potential, boundary


def gradient_flow_path(V, Vp, x0: float, T: float, K: int) -> ToyPath:
    """Explicit Euler solution of xdot = -V'(x) on K uniform steps."""
    times = np.linspace(0.0, T, K + 1)
    dt = T / K
    x = np.empty(K + 1)
    x[0] = x0
    for k in range(K):
        x[k + 1] = x[k] - dt * Vp(x[k])
    return ToyPath(times=times, positions=x, V=V, Vp=Vp)


# ----- zero range path functional ----------------------------------------------


def _check_path(path: pde.FieldPath):
    if len(path) < 2:
        raise ValueError("path needs at least two fields")
    dts = np.diff(path.times)
    if np.any(dts <= 0) or abs(dts.max() - dts.min()) > 1e-9 * dts.max():
        raise ValueError("path time grid must be uniform and increasing")
    masses = np.array([f.mass() for f in path.fields])
    if np.max(np.abs(masses - masses[0])) > 1e-10 * max(masses[0], 1e-300):
        raise ValueError("path fields must have equal mass")
    return float(dts[0])


def path_rate(ens, path: pde.FieldPath, floor: float = 1e-12,
              tol: float = 1e-12) -> float:
    """Weighted H^-1 action of a density path; zero exactly on static paths."""
    dt = _check_path(path)
    total = 0.0
    for k in range(len(path) - 1):
        a = path.fields[k].values
        b = path.fields[k + 1].values
        mid = 0.5 * (a + b)
        phi_mid = ens.phi_vec(mid)
        w = np.maximum(phi_mid, floor)
        flux = metric.laplacian_weighted(np.ones_like(mid), phi_mid)
        resid = (b - a) / dt - flux
        resid -= resid.mean()  # zero-mean by construction; drop float dust
        if float(np.abs(resid).max()) == 0.0:
            continue
        total += dt * metric.hneg1w_inner(w, resid, resid, tol=tol)
    return total


@dataclass(frozen=True)
class RateDecomposition:
    action: float          # sum dt * g_rho(d rho, d rho), metric term
    dissipation: float     # sum dt * entropy production at the midpoints
    entropy_delta: float   # entropy(end) - entropy(start)

    def total(self) -> float:
        return self.action + self.dissipation + 2.0 * self.entropy_delta


def rate_decomposition(ens, path: pde.FieldPath, floor: float = 1e-12,
                       tol: float = 1e-12) -> RateDecomposition:
    """Split of path_rate into metric action + dissipation + 2 * entropy change.

    The cross (null Lagrangian) term is evaluated through the entropy
    functional; path_rate - total() tends to zero under joint time/space
    refinement.
    """
    dt = _check_path(path)
    action = 0.0
    diss = 0.0
    for k in range(len(path) - 1):
        a = path.fields[k].values
        b = path.fields[k + 1].values
        mid = pde.DensityField(0.5 * (a + b))
        w = np.maximum(ens.phi_vec(mid.values), floor)
        drho = (b - a) / dt
        drho -= drho.mean()  # equal masses up to roundoff
        if float(np.abs(drho).max()) > 0.0:
            action += dt * metric.hneg1w_inner(w, drho, drho, tol=tol)
        diss += dt * pde.dissipation(ens, mid, rho_floor=floor)
    dS = pde.entropy_functional(ens, path.fields[-1]) - pde.entropy_functional(ens, path.fields[0])
    return RateDecomposition(action=action, dissipation=diss, entropy_delta=dS)


# ----- JKO proximal stepping ----------------------------------------------------


def _laplacian_matrix(w: np.ndarray, h: float) -> sp.csr_matrix:
    """Sparse matrix of the weighted laplacian (periodic, arithmetic-mean faces)."""
    n = w.size
    idx = np.arange(n).reshape(w.shape)
    rows, cols, vals = [], [], []
    for ax in range(w.ndim):
        nb = np.roll(idx, -1, axis=ax)
        wf = (0.5 * (w + np.roll(w, -1, axis=ax))).ravel() / h ** 2
        i = idx.ravel()
        j = nb.ravel()
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [wf, wf, -wf, -wf]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def jko_step(ens, prev: pde.DensityField, hstep: float, floor: float = 1e-12,
             grad_tol: float = 1e-9, max_newton: int = 60) -> pde.DensityField:
    """One proximal step of the entropy in the frozen-weight H^-1 metric.

    Solves the optimality system rho - hstep * Div(w grad S'(rho)) = rho_prev
    with w = Phi(rho_prev) by damped Newton; iterates stay above the density
    floor and the Euler-Lagrange residual is driven below grad_tol in the
    discrete l2 norm.
    """
    if hstep <= 0:
        raise ValueError("hstep must be > 0")
    w = metric.density_weight(ens, prev.values, floor)
    h = prev.h
    L = _laplacian_matrix(w, h)
    n = prev.values.size
    eye = sp.identity(n, format="csr")

    rho_prev = prev.values.ravel()
    rho = np.maximum(rho_prev, floor).copy()

    def el_residual(r):
        sprime = np.log(ens.phi_vec(np.maximum(r, floor)))
        return (r - rho_prev) / hstep - L @ sprime

    res = el_residual(rho)
    norm = float(np.linalg.norm(res))
    for _ in range(max_newton):
        if norm <= grad_tol:
            break
        rr = np.maximum(rho, floor)
        # S''(rho) = Phi'(rho)/Phi(rho)
        s2 = ens.phi_prime_vec(rr) / np.maximum(ens.phi_vec(rr), 1e-300)
        J = eye / hstep - L @ sp.diags(s2)
        delta = spla.spsolve(J.tocsc(), -res)
        lam = 1.0
        neg = delta < 0
        if np.any(neg):
            lam = min(1.0, float(0.99 * np.min((rho[neg] - floor) / -delta[neg] + 1e-300)))
        improved = False
        for _ in range(40):
            cand = rho + lam * delta
            cand_res = el_residual(cand)
            cand_norm = float(np.linalg.norm(cand_res))
            if cand_norm < norm:
                rho, res, norm = cand, cand_res, cand_norm
                improved = True
                break
            lam *= 0.5
        if not improved:
            raise ConvergenceError(
                f"proximal Newton stalled at residual {norm:.3e}; reduce hstep"
            )
    else:
        raise ConvergenceError(
            f"proximal Newton did not reach residual {grad_tol:g} "
            f"(at {norm:.3e}); reduce hstep"
        )
    return pde.DensityField(rho.reshape(prev.values.shape))


def jko_flow(ens, f0: pde.DensityField, hstep: float, n_steps: int,
             floor: float = 1e-12, grad_tol: float = 1e-9):
    """Iterate jko_step; returns (path, entropy series including the start)."""
    f = f0.copy()
    times = [0.0]
    fields = [f.copy()]
    entropies = [pde.entropy_functional(ens, f)]
    for k in range(1, n_steps + 1):
        f = jko_step(ens, f, hstep, floor=floor, grad_tol=grad_tol)
        times.append(k * hstep)
        fields.append(f.copy())
        entropies.append(pde.entropy_functional(ens, f))
    return pde.FieldPath(times=np.array(times), fields=fields), np.array(entropies)
