"""Finite-state discretizations of ergodic Markov processes.

Everything here works on dense row-stochastic matrices. Grids are small
(a few hundred states), so direct linear algebra beats iterative schemes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.special import ndtr

from .errors import ConvergenceError, GridError, KernelError, SingularSystemError

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class StateGrid:
    points: np.ndarray
    u_indices: np.ndarray
    z_index: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        u = np.asarray(self.u_indices, dtype=int)
        if pts.ndim != 1 or len(pts) < 1:
            raise GridError("points must be a non-empty 1-d array")
        if np.any(np.diff(pts) <= 0):
            raise GridError("points must be strictly increasing")
        if len(u) == 0:
            raise GridError("U not resolvable at this resolution")
        if np.any(np.diff(u) != 1):
            raise GridError("U must be a contiguous index range")
        if not u[0] <= self.z_index <= u[-1]:
            raise GridError("anchor z must lie in U")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "u_indices", u)
        object.__setattr__(self, "z_index", int(self.z_index))

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def z(self) -> float:
        return float(self.points[self.z_index])

    @property
    def u_points(self) -> np.ndarray:
        return self.points[self.u_indices]

    def distance(self, i, j):
        return np.abs(self.points[i] - self.points[j])


@dataclass(frozen=True)
class TransitionKernel:
    rows: np.ndarray
    dt: float

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1]:
            raise KernelError("kernel must be a square matrix")
        if not self.dt > 0:
            raise KernelError("dt must be positive")
        if np.any(rows < 0) or not np.all(np.isfinite(rows)):
            raise KernelError("kernel entries must be finite and non-negative")
        if np.max(np.abs(rows.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
            raise KernelError("kernel rows must sum to 1")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class ErgodicityProfile:
    tv_distances: np.ndarray  # shape (n, k_max); column k-1 holds step k
    fitted_rate: float
    fitted_scale: np.ndarray
    h_integral: float
    dt: float
    rate_infinite: bool = False
    steps: np.ndarray = field(default=None)


def build_grid(x_min, x_max, n, u_range, z) -> StateGrid:
    if not x_min < x_max:
        raise GridError("x_min must be below x_max")
    if n < 2:
        raise GridError("need at least two grid points")
    lo, hi = u_range
    if lo > hi or lo < x_min or hi > x_max:
        raise GridError("u_range must lie inside [x_min, x_max]")
    if not lo <= z <= hi:
        raise GridError("z must lie in u_range")
    points = np.linspace(x_min, x_max, n)
    eps = 1e-9 * (x_max - x_min) / (n - 1)
    inside = np.flatnonzero((points >= lo - eps) & (points <= hi + eps))
    if len(inside) == 0:
        raise GridError("U not resolvable at this resolution")
    # argmin returns the first minimiser, which breaks ties to the lower index
    z_index = int(np.argmin(np.abs(points - z)))
    if z_index not in inside:
        raise GridError("U not resolvable at this resolution")
    return StateGrid(points, inside, z_index)


def _cell_edges(points):
    mids = 0.5 * (points[1:] + points[:-1])
    return np.concatenate(([-np.inf], mids)), np.concatenate((mids, [np.inf]))


def gaussian_cell_masses(points, mean, sd):
    """Probability of each grid cell under N(mean, sd^2); tails lumped on the end cells."""
    lower, upper = _cell_edges(points)
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    # difference of upper tails on the right of the mean avoids cancellation
    right = a >= 0
    return np.where(right, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))


def build_ou_kernel(grid: StateGrid, theta, sigma, dt) -> TransitionKernel:
    if theta <= 0 or sigma <= 0 or dt <= 0:
        raise KernelError("theta, sigma and dt must be positive")
    decay = np.exp(-theta * dt)
    var = sigma**2 * (-np.expm1(-2.0 * theta * dt)) / (2.0 * theta)
    if not var > 0:
        raise KernelError("OU step variance underflows; dt too small")
    sd = np.sqrt(var)
    rows = np.vstack([gaussian_cell_masses(grid.points, decay * x, sd) for x in grid.points])
    sums = rows.sum(axis=1)
    if not np.all(np.isfinite(sums)) or np.max(np.abs(sums - 1.0)) > 1e-9:
        raise KernelError("OU rows numerically degenerate for this dt")
    rows /= sums[:, None]
    check_ergodic(rows)
    return TransitionKernel(rows, dt)


def build_custom_kernel(rows, dt, normalize=True) -> TransitionKernel:
    """Validated kernel. ``normalize=False`` keeps rows that already sum to 1 within
    STOCHASTIC_TOL bit for bit, so written kernels read back exactly."""
    rows = np.array(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] != rows.shape[1]:
        raise KernelError("kernel must be a square matrix")
    if np.any(rows < 0) or not np.all(np.isfinite(rows)):
        raise KernelError("kernel entries must be finite and non-negative")
    sums = rows.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > 1e-9:
        raise KernelError("non-stochastic row")
    if normalize or np.max(np.abs(sums - 1.0)) > STOCHASTIC_TOL:
        rows = rows / sums[:, None]
    check_ergodic(rows)
    return TransitionKernel(rows, dt)


def period(rows) -> int:
    """Period of an irreducible chain, from BFS levels of the support graph."""
    adj = (np.asarray(rows) > 0).astype(np.int8)
    order, _ = breadth_first_order(adj, 0, directed=True, return_predecessors=True)
    level = np.full(len(adj), -1)
    level[0] = 0
    for u in order:
        nbrs = np.flatnonzero(adj[u])
        fresh = nbrs[level[nbrs] < 0]
        level[fresh] = level[u] + 1
    d = 0
    src, dst = np.nonzero(adj)
    for diff in np.unique(level[src] + 1 - level[dst]):
        d = gcd(d, int(abs(diff)))
    return d


def check_ergodic(rows):
    adj = np.asarray(rows) > 0
    ncomp, _ = connected_components(adj, directed=True, connection="strong")
    if ncomp != 1:
        raise KernelError("reducible/periodic kernel rejected")
    if period(rows) != 1:
        raise KernelError("reducible/periodic kernel rejected")


def _gth(rows):
    # Grassmann-Taksar-Heyman elimination; subtraction-free, so entries stay >= 0
    a = np.array(rows, dtype=float)
    n = len(a)
    for k in range(n - 1, 0, -1):
        s = a[k, :k].sum()
        if s <= 0:
            raise KernelError("GTH elimination hit a zero pivot")
        a[:k, k] /= s
        a[:k, :k] += np.outer(a[:k, k], a[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ a[:k, k]
    return pi / pi.sum()


def stationary_distribution(P: TransitionKernel, tol=1e-12, max_polish=10_000) -> np.ndarray:
    mu = _gth(P.rows)
    residual = np.abs(mu @ P.rows - mu).sum()
    it = 0
    while residual >= tol:
        if it >= max_polish:
            raise ConvergenceError(f"stationary distribution residual {residual:.3e}", residual)
        mu = mu @ P.rows
        mu /= mu.sum()
        residual = np.abs(mu @ P.rows - mu).sum()
        it += 1
    return mu


def _reaches(rows, target):
    """Boolean mask of states with a positive-probability path into ``target``."""
    adj_t = (np.asarray(rows) > 0).T
    seen = np.zeros(len(rows), dtype=bool)
    seen[list(target)] = True
    frontier = np.flatnonzero(seen)
    while len(frontier):
        new = adj_t[frontier].any(axis=0) & ~seen
        seen |= new
        frontier = np.flatnonzero(new)
    return seen


def absorbed_solve(rows, inside, rhs):
    """Solve x = rhs + P x on ``inside`` with x = 0 elsewhere."""
    rows = np.asarray(rows)
    idx = np.flatnonzero(inside)
    out = np.zeros(len(rows))
    if len(idx) == 0:
        return out
    outside = np.flatnonzero(~np.asarray(inside))
    if len(outside) == 0 or not _reaches(rows, outside)[idx].all():
        raise SingularSystemError("exit set unreachable from part of the region")
    A = np.eye(len(idx)) - rows[np.ix_(idx, idx)]
    out[idx] = np.linalg.solve(A, np.asarray(rhs, dtype=float)[idx])
    return out


def expected_hitting_time(P: TransitionKernel, target) -> np.ndarray:
    target = np.unique(np.asarray(list(target), dtype=int))
    if len(target) == 0:
        raise KernelError("target must be non-empty")
    off = np.ones(P.n, dtype=bool)
    off[target] = False
    try:
        t = absorbed_solve(P.rows, off, np.full(P.n, P.dt))
    except SingularSystemError as exc:
        raise SingularSystemError("target unreachable from some state") from exc
    return t


def tv_rows(P: TransitionKernel, mu, k_max) -> np.ndarray:
    out = np.empty((P.n, k_max))
    Pk = np.eye(P.n)
    for k in range(k_max):
        Pk = Pk @ P.rows
        out[:, k] = 0.5 * np.abs(Pk - mu).sum(axis=1)
    return np.clip(out, 0.0, 1.0)


def ergodicity_profile(P: TransitionKernel, mu, k_max, floor=1e-14) -> ErgodicityProfile:
    tv = tv_rows(P, mu, k_max)
    steps = np.arange(1, k_max + 1)
    tail = steps > k_max // 2
    sub = tv[:, tail]
    usable = sub > floor
    if not usable.any():
        return ErgodicityProfile(tv, np.inf, np.zeros(P.n), 0.0, P.dt, True, steps)
    # shared slope, per-state intercept: centre each row then regress
    t = np.broadcast_to(steps[tail] * P.dt, sub.shape)
    logv = np.log(np.where(usable, sub, 1.0))
    counts = usable.sum(axis=1)
    ok = counts > 0
    t_mean = np.where(ok, (t * usable).sum(axis=1) / np.maximum(counts, 1), 0.0)
    y_mean = np.where(ok, (logv * usable).sum(axis=1) / np.maximum(counts, 1), 0.0)
    tc = (t - t_mean[:, None]) * usable
    yc = (logv - y_mean[:, None]) * usable
    denom = (tc * tc).sum()
    if denom <= 0:
        # one usable point per state: fall back to the geometric mean decay
        rate = float(-np.mean(y_mean[ok] / np.maximum(t_mean[ok], P.dt)))
    else:
        rate = float(-(tc * yc).sum() / denom)
    scale = np.where(ok, np.exp(y_mean + rate * t_mean), 0.0)
    h_int = float(np.sum(np.exp(-rate * steps * P.dt)) * P.dt)
    return ErgodicityProfile(tv, rate, scale, h_int, P.dt, False, steps)
