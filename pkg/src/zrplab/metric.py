"""Weighted elliptic machinery on the uniform periodic grid.

Grid functions are plain numpy arrays of shape (M,) in 1-d or (M, M) in
2-d, interpreted as cell values on the unit torus with mesh width h = 1/M.
The central object is the conservative operator

    (L_w xi)_i = (1/h^2) * sum_faces w_face (xi_j - xi_i),
    w_face = (w_i + w_j)/2,

whose kernel on the torus is the constants; potentials are gauged to zero
mean.  Its zero-mean inverse delivers the weighted H^1/H^-1 inner products,
the thermodynamic metric tensor and the Onsager operator.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError


def mesh_width(u: np.ndarray) -> float:
    return 1.0 / u.shape[0]


def cell_volume(u: np.ndarray) -> float:
    return mesh_width(u) ** u.ndim


def gauge(xi: np.ndarray) -> np.ndarray:
    """Project onto the zero-mean subspace."""
    return xi - xi.mean()


def density_weight(ens, values: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Mobility weight w = Phi(rho), floored to keep the operator nondegenerate."""
    return np.maximum(ens.phi_vec(values), floor)


def laplacian_weighted(w: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Div(w grad xi) with arithmetic-mean face weights; zero mean by telescoping."""
    h = mesh_width(xi)
    out = np.zeros_like(xi)
    for ax in range(xi.ndim):
        wp = 0.5 * (w + np.roll(w, -1, axis=ax))
        flux = wp * (np.roll(xi, -1, axis=ax) - xi)  # flux through the +face
        out += flux - np.roll(flux, 1, axis=ax)
    return out / h ** 2


def poisson_solve(w: np.ndarray, u: np.ndarray, tol: float = 1e-12,
                  max_iter: int | None = None) -> np.ndarray:
    """Solve Div(w grad xi) = u for the zero-mean potential xi.

    Jacobi-preconditioned conjugate gradients on -L_w, which is symmetric
    positive definite on the zero-mean subspace.  The input must be
    compatible (zero mean to 1e-10 relative); it is projected exactly
    before solving.
    """
    vol = cell_volume(u)
    scale = float(np.abs(u).sum()) * vol
    imbalance = abs(float(u.sum())) * vol
    if scale == 0.0:
        return np.zeros_like(u)
    if imbalance > 1e-10 * scale:
        raise ValueError(
            f"right-hand side integrates to {imbalance:g}; not a zero-mean source"
        )
    b = -(u - u.mean())
    h = mesh_width(u)
    diag = np.zeros_like(w)
    for ax in range(u.ndim):
        diag += 0.5 * (w + np.roll(w, -1, axis=ax)) + 0.5 * (w + np.roll(w, 1, axis=ax))
    diag /= h ** 2

    x = np.zeros_like(b)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float((r * z).sum())
    bnorm = float(np.sqrt((b * b).sum()))
    if max_iter is None:
        max_iter = 200 + 80 * u.shape[0]
    for _ in range(max_iter):
        if float(np.sqrt((r * r).sum())) <= tol * bnorm:
            return gauge(x)
        Ap = -laplacian_weighted(w, p)
        alpha = rz / float((p * Ap).sum())
        x += alpha * p
        r -= alpha * Ap
        z = r / diag
        rz_new = float((r * z).sum())
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.sqrt((r * r).sum())) / bnorm
    raise ConvergenceError(
        f"poisson solve stalled at relative residual {res:.3e} after {max_iter} iterations"
    )


def h1w_inner(w: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
    """<u, v>_{H^1_w} = sum over faces of w_face (du/h)(dv/h) h^d."""
    h = mesh_width(u)
    vol = cell_volume(u)
    acc = 0.0
    for ax in range(u.ndim):
        wp = 0.5 * (w + np.roll(w, -1, axis=ax))
        du = (np.roll(u, -1, axis=ax) - u) / h
        dv = (np.roll(v, -1, axis=ax) - v) / h
        acc += float((wp * du * dv).sum())
    return acc * vol


def hneg1w_inner(w: np.ndarray, u: np.ndarray, v: np.ndarray,
                 tol: float = 1e-12) -> float:
    """<u, v>_{H^-1_w} = -integral of u * (L_w^{-1} v)."""
    xi = poisson_solve(w, v, tol=tol)
    return -float((u * xi).sum()) * cell_volume(u)


def metric_tensor(ens, values: np.ndarray, zeta1: np.ndarray, zeta2: np.ndarray,
                  floor: float = 1e-12, tol: float = 1e-12) -> float:
    """Thermodynamic metric g_rho(zeta1, zeta2) = <zeta1, zeta2>_{H^-1_{Phi(rho)}}.

    Tangent vectors must be zero-mean grid functions (mass conservation).
    """
    for z in (zeta1, zeta2):
        if abs(float(z.sum())) * cell_volume(z) > 1e-10 * (float(np.abs(z).sum()) * cell_volume(z) + 1e-300):
            raise ValueError("tangent vectors must have zero mean")
    w = density_weight(ens, values, floor)
    return hneg1w_inner(w, zeta1, zeta2, tol=tol)


def onsager_apply(ens, values: np.ndarray, xi: np.ndarray,
                  floor: float = 1e-12) -> np.ndarray:
    """Onsager operator K(rho) xi = -Div(Phi(rho) grad xi).

    Maps a cotangent potential to a zero-mean tangent vector; it is the
    inverse of the map zeta -> xi_zeta realised by poisson_solve.
    """
    w = density_weight(ens, values, floor)
    return -laplacian_weighted(w, xi)
