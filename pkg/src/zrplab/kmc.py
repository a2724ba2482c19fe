"""Exact kinetic Monte Carlo for the symmetric nearest-neighbour zero range process.

Configurations live on the discrete torus with N sites per dimension
(d = 1 or 2).  A site with k particles fires at rate g(k); on an event one
particle moves to a uniformly chosen nearest neighbour.  The diffusive N^2
factor is folded into the clock, so run(..., T) advances T units of
macroscopic (hydrodynamic) time: with neighbour weight 1 per direction the
total event rate is 2 d N^2 sum_x g(eta(x)).

Site selection uses a Fenwick (partial-sum) tree: O(log n) per event with
O(1) rate bookkeeping, rebuilt periodically to flush float drift.  The
event loop is a single plain-Python function compiled with numba when
available; numba reproduces the legacy numpy MT19937 stream, so the
compiled and interpreted paths produce bit-identical trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import jump_rates as jr
from .pde import DensityField

try:
    import numba

    _njit = numba.njit(cache=True)
except ImportError:  # pragma: no cover - numba is a declared dependency
    def _njit(f):
        return f

_REBUILD_EVERY = 1 << 22


@dataclass
class Configuration:
    """Occupation numbers on the discrete torus, row-major."""

    N: int
    d: int
    eta: np.ndarray  # int64, flat, length N**d

    def __post_init__(self):
        self.eta = np.ascontiguousarray(self.eta, dtype=np.int64)
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        if self.eta.size != self.N ** self.d:
            raise ValueError("eta must have N**d entries")
        if np.any(self.eta < 0):
            raise ValueError("occupancies must be >= 0")

    @property
    def total(self) -> int:
        return int(self.eta.sum())

    def grid(self) -> np.ndarray:
        return self.eta.reshape((self.N,) * self.d)

    def copy(self) -> "Configuration":
        return Configuration(self.N, self.d, self.eta.copy())


@dataclass
class EventLog:
    times: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    total_rate: np.ndarray  # event rate in force while waiting for each event
    T: float
    tag_track: np.ndarray | None = None  # unwrapped tag position after each event


@dataclass
class RunResult:
    config: Configuration
    n_events: int
    time_avg_jump_rate: float  # time average of sum_x g(eta(x)) / N^d
    snapshot_times: np.ndarray | None = None
    snapshots: np.ndarray | None = None  # (K, n) occupancies at snapshot times
    tag_displacements: np.ndarray | None = None  # (K, d) lattice displacement
    tag_site: int | None = None
    events: EventLog | None = None


# ----- event loop (numba-compiled; keep to plain indexing and np.random) -----


def _kernel(eta, gtab, N, d, T, seed,
            snap_times, snap_eta, snap_tag,
            tag_site, record_events, ev_cap, ev_t, ev_src, ev_dst, ev_rate,
            ev_tag):
    np.random.seed(seed)
    n = eta.size
    nd = 2 * d
    rate_factor = float(nd) * float(N) * float(N)

    tree = np.zeros(n + 1)
    top_bit = 1
    while top_bit * 2 <= n:
        top_bit *= 2

    total = 0.0
    for x in range(n):
        gx = gtab[eta[x]]
        i = x + 1
        while i <= n:
            tree[i] += gx
            i += i & (-i)
        total += gx

    t = 0.0
    s_idx = 0
    n_snap = snap_times.size
    n_events = 0
    g_integral = 0.0
    tag_dx = 0
    tag_dy = 0
    since_rebuild = 0
    done = False

    while not done:
        if total > 0.0:
            t_next = t + np.random.exponential(1.0) / (rate_factor * total)
        else:
            t_next = T + 1.0
        while s_idx < n_snap and snap_times[s_idx] <= min(t_next, T):
            for x in range(n):
                snap_eta[s_idx, x] = eta[x]
            snap_tag[s_idx, 0] = tag_dx
            if d == 2:
                snap_tag[s_idx, 1] = tag_dy
            s_idx += 1
        if t_next > T:
            g_integral += total * (T - t)
            done = True
            continue
        g_integral += total * (t_next - t)
        t = t_next

        # departure site ~ g(eta(x)) via Fenwick prefix search
        r = np.random.random() * total
        idx = 0
        bit = top_bit
        while bit > 0:
            nxt = idx + bit
            if nxt <= n and tree[nxt] < r:
                idx = nxt
                r -= tree[nxt]
            bit >>= 1
        src = idx
        if src >= n:
            src = n - 1
        while eta[src] == 0:  # float boundary guard
            src = (src + 1) % n

        # uniform neighbour
        u = np.random.random()
        dirn = int(u * nd)
        if dirn >= nd:
            dirn = nd - 1
        if d == 1:
            if dirn == 0:
                dst = src + 1 if src + 1 < N else 0
                sx = 1
            else:
                dst = src - 1 if src > 0 else N - 1
                sx = -1
            sy = 0
        else:
            i0 = src // N
            j0 = src - i0 * N
            sx = 0
            sy = 0
            if dirn == 0:
                i1 = i0 + 1 if i0 + 1 < N else 0
                j1 = j0
                sx = 1
            elif dirn == 1:
                i1 = i0 - 1 if i0 > 0 else N - 1
                j1 = j0
                sx = -1
            elif dirn == 2:
                i1 = i0
                j1 = j0 + 1 if j0 + 1 < N else 0
                sy = 1
            else:
                i1 = i0
                j1 = j0 - 1 if j0 > 0 else N - 1
                sy = -1
            dst = i1 * N + j1

        if tag_site == src:
            k = eta[src]
            if np.random.random() * k < 1.0:
                tag_site = dst
                tag_dx += sx
                tag_dy += sy

        if record_events == 1 and n_events < ev_cap:
            ev_t[n_events] = t
            ev_src[n_events] = src
            ev_dst[n_events] = dst
            ev_rate[n_events] = rate_factor * total
            ev_tag[n_events, 0] = tag_dx
            ev_tag[n_events, 1] = tag_dy

        k_src = eta[src]
        eta[src] = k_src - 1
        delta = gtab[k_src - 1] - gtab[k_src]
        i = src + 1
        while i <= n:
            tree[i] += delta
            i += i & (-i)
        total += delta

        k_dst = eta[dst]
        eta[dst] = k_dst + 1
        delta = gtab[k_dst + 1] - gtab[k_dst]
        i = dst + 1
        while i <= n:
            tree[i] += delta
            i += i & (-i)
        total += delta

        n_events += 1
        since_rebuild += 1
        if since_rebuild >= _REBUILD_EVERY:
            since_rebuild = 0
            for i in range(n + 1):
                tree[i] = 0.0
            total = 0.0
            for x in range(n):
                gx = gtab[eta[x]]
                i = x + 1
                while i <= n:
                    tree[i] += gx
                    i += i & (-i)
                total += gx

    return n_events, g_integral, tag_site, tag_dx, tag_dy


_kernel_fast = _njit(_kernel)


# ----- sampling of product measures -------------------------------------------


def sample_profile(ens, rho0: DensityField, N: int, seed) -> Configuration:
    """Product measure with slowly varying profile: site x has fugacity Phi(rho0(x/N)).

    Site x reads the profile at the grid cell containing x/N.  Marginal pmf
    tails are cut at 1e-12 cumulative mass and renormalised.
    """
    d = rho0.d
    n = N ** d
    M = rho0.M
    if d == 1:
        cells = (np.arange(N) * M) // N
        site_rho = rho0.values[cells]
    else:
        c = (np.arange(N) * M) // N
        site_rho = rho0.values[np.ix_(c, c)].ravel()
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    eta = np.zeros(n, dtype=np.int64)
    vals, inverse = np.unique(site_rho, return_inverse=True)
    inverse = inverse.ravel()
    for gi, rho in enumerate(vals):
        mask = inverse == gi
        if rho == 0.0:
            continue
        pmf = ens.marginal_pmf(float(rho))
        cdf = np.cumsum(pmf)
        eta[mask] = np.searchsorted(cdf, u[mask], side="left")
    return Configuration(N=N, d=d, eta=eta)


def sample_equilibrium(ens, rho: float, N: int, d: int, seed) -> Configuration:
    """Translation-invariant product measure at density rho (i.i.d. sites)."""
    shape = (1,) * d
    return sample_profile(ens, DensityField(np.full(shape, float(rho))), N, seed)


# ----- running the dynamics ----------------------------------------------------


def _rate_table(ens, total: int) -> np.ndarray:
    return np.asarray(jr.evaluate(ens.spec, np.arange(total + 1)), dtype=float)


def run(ens, config: Configuration, T: float, seed,
        snapshot_times=None, record_events: bool = False,
        max_events: int = 2 ** 22, tag_site: int | None = None,
        _kernel_impl=None) -> RunResult:
    """Simulate for T units of macroscopic time.

    snapshot_times: optional increasing array in [0, T]; occupancies (and the
    tagged particle's displacement) are recorded at those times.
    record_events: keep the full event log (times, sites, rates) up to
    max_events; an overflowing log raises.
    tag_site: follow one particle starting at this (occupied) site; when its
    site fires, the tagged particle is the mover with probability 1/eta(x).
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    if tag_site is not None and config.eta[tag_site] == 0:
        raise ValueError("tagged site must be occupied")
    eta = config.eta.copy()
    gtab = _rate_table(ens, int(eta.sum()))
    if snapshot_times is None:
        snap_times = np.empty(0)
    else:
        snap_times = np.asarray(snapshot_times, dtype=float)
        if np.any(np.diff(snap_times) < 0) or (snap_times.size and
                                               (snap_times[0] < 0 or snap_times[-1] > T)):
            raise ValueError("snapshot times must be increasing within [0, T]")
    n_snap = snap_times.size
    snap_eta = np.zeros((max(n_snap, 1), eta.size), dtype=np.int64)
    snap_tag = np.zeros((max(n_snap, 1), 2), dtype=np.int64)
    cap = int(max_events) if record_events else 1
    ev_t = np.zeros(cap)
    ev_src = np.zeros(cap, dtype=np.int64)
    ev_dst = np.zeros(cap, dtype=np.int64)
    ev_rate = np.zeros(cap)
    ev_tag = np.zeros((cap, 2), dtype=np.int64)

    kern = _kernel_impl if _kernel_impl is not None else _kernel_fast
    n_events, g_integral, tag_final, tag_dx, tag_dy = kern(
        eta, gtab, config.N, config.d, float(T), int(np.uint32(seed)),
        snap_times, snap_eta, snap_tag,
        -1 if tag_site is None else int(tag_site),
        1 if record_events else 0, cap, ev_t, ev_src, ev_dst, ev_rate, ev_tag,
    )
    if record_events and n_events > cap:
        raise ValueError(f"event log overflow: {n_events} events > cap {cap}")

    events = None
    if record_events:
        m = min(n_events, cap)
        track = None
        if tag_site is not None:
            # unwrapped integer positions: start site plus cumulative steps
            if config.d == 1:
                start = np.array([tag_site])
            else:
                start = np.array([tag_site // config.N, tag_site % config.N])
            track = start[None, :] + ev_tag[:m, : config.d]
        events = EventLog(times=ev_t[:m].copy(), src=ev_src[:m].copy(),
                          dst=ev_dst[:m].copy(), total_rate=ev_rate[:m].copy(),
                          T=T, tag_track=track)
    out = RunResult(
        config=Configuration(config.N, config.d, eta),
        n_events=int(n_events),
        time_avg_jump_rate=g_integral / (T * config.N ** config.d) if T > 0 else 0.0,
        events=events,
        tag_site=None if tag_site is None else int(tag_final),
    )
    if n_snap:
        out.snapshot_times = snap_times
        out.snapshots = snap_eta
        if tag_site is not None:
            out.tag_displacements = snap_tag[:, : config.d].copy()
    return out


def empirical_density(config: Configuration, M: int) -> DensityField:
    """Block-averaged empirical density on an M^d grid; conserves mass exactly."""
    N, d = config.N, config.d
    if N % M != 0:
        raise ValueError(f"M = {M} must divide N = {N}")
    b = N // M
    scale = (M / N) ** d
    if d == 1:
        counts = config.eta.reshape(M, b).sum(axis=1)
    else:
        counts = config.grid().reshape(M, b, M, b).sum(axis=(1, 3))
    return DensityField(counts * scale)


# ----- tagged particle ----------------------------------------------------------


@dataclass
class TaggedResult:
    sigma_hat: float
    stderr: float
    per_replica: np.ndarray
    msd_times: np.ndarray
    msd_mean: np.ndarray  # mean squared macroscopic displacement


def tagged_run(ens, rho: float, N: int, d: int, T: float, seed,
               replicas: int, n_snaps: int = 26) -> TaggedResult:
    """Estimate the self-diffusivity from the tagged mean-square displacement.

    Equilibrium start; the tag sits at a uniformly chosen occupied site.  In
    macroscopic units MSD(t) -> 2 d sigma t, and sigma is estimated from the
    affine fit of MSD over the window [T/2, T] (the early window absorbs the
    environment transient), averaged over replicas.
    """
    if rho <= 0:
        raise ValueError("tagged runs need a positive density")
    if replicas < 2:
        raise ValueError("need at least 2 replicas")
    children = np.random.SeedSequence(seed).spawn(replicas)
    times = np.linspace(0.0, T, n_snaps)
    window = times >= T / 2 - 1e-12
    slopes = np.empty(replicas)
    msd_acc = np.zeros(n_snaps)
    for r in range(replicas):
        keys = children[r].generate_state(8)
        occupied = np.empty(0)
        for attempt in range(6):  # dilute configurations may come up empty
            cfg = sample_equilibrium(ens, rho, N, d, keys[attempt])
            occupied = np.flatnonzero(cfg.eta > 0)
            if occupied.size:
                break
        if not occupied.size:
            raise ValueError(f"no occupied site found at density {rho:g}")
        pick = np.random.default_rng(keys[6]).integers(occupied.size)
        res = run(ens, cfg, T, keys[7],
                  snapshot_times=times, tag_site=int(occupied[pick]))
        x_macro = res.tag_displacements.astype(float) / N
        msd = (x_macro ** 2).sum(axis=1)
        msd_acc += msd
        a = np.polyfit(times[window], msd[window], 1)
        slopes[r] = a[0] / (2 * d)
    sigma_hat = float(slopes.mean())
    stderr = float(slopes.std(ddof=1) / np.sqrt(replicas))
    return TaggedResult(sigma_hat=sigma_hat, stderr=stderr, per_replica=slopes,
                        msd_times=times, msd_mean=msd_acc / replicas)
