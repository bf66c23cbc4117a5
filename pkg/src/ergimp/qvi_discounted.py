"""Discounted impulse control: the QVI v = max(Mv, f*dt_eff + e^{-alpha dt} P v).

Scheme constants: at most one impulse per step. A step in state x first
fires the impulse (if any) to xi in U paying c(x, xi), then accrues the
reward at the post-impulse state, then moves with P.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import StateGrid, TransitionKernel, absorbed_solve, expected_hitting_time
from .errors import ConvergenceError, SingularSystemError
from .potentials import RewardSpec, delta_eff, resolvent, step_discount
from .reports import BoundReport

TRIANGLE_TOL = 1e-12


@dataclass(frozen=True)
class CostSpec:
    c: np.ndarray  # shape (n, |U|)
    u_indices: np.ndarray
    z_index: int
    kind: str = "general"
    d: np.ndarray = None
    e: np.ndarray = None

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        u = np.asarray(self.u_indices, dtype=int)
        if c.ndim != 2 or c.shape[1] != len(u):
            raise ValueError("cost must have one column per U state")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost entries must be finite")
        if not np.max(c) < 0:
            raise ValueError("impulse cost must be bounded away from zero (c_max < 0)")
        if self.z_index not in u:
            raise ValueError("anchor z must lie in U")
        cu = c[u]  # c(z', z) for z', z in U
        lhs = c[:, None, :]
        rhs = c[:, :, None] + cu[None, :, :]
        gap = lhs - rhs
        if np.min(gap) < -TRIANGLE_TOL:
            x, j1, j2 = np.unravel_index(np.argmin(gap), gap.shape)
            raise ValueError(
                f"triangle inequality fails at x={x}, via U[{j1}] to U[{j2}] (gap {gap[x, j1, j2]:.3e})"
            )
        if self.kind == "separated":
            if self.d is None or self.e is None:
                raise ValueError("separated cost needs d and e")
            if np.max(np.abs(np.add.outer(self.d, self.e) - c)) > 0:
                raise ValueError("separated cost must equal d(x) + e(xi) exactly")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "u_indices", u)

    @property
    def n(self):
        return self.c.shape[0]

    @property
    def c_max(self) -> float:
        return float(np.max(self.c))

    @property
    def z_col(self) -> int:
        return int(np.flatnonzero(self.u_indices == self.z_index)[0])

    @property
    def kappa(self) -> float:
        to_z = np.abs(self.c[self.u_indices, self.z_col])
        from_z = np.abs(self.c[self.z_index])
        return float(np.max(np.maximum(to_z, from_z)))

    @property
    def c_lower(self) -> np.ndarray:
        return self.c.min(axis=1)

    @property
    def c_upper(self) -> np.ndarray:
        return self.c.max(axis=1)

    def clamped(self, L) -> "CostSpec":
        return CostSpec(np.maximum(self.c, -L), self.u_indices, self.z_index)


def constant_cost(grid: StateGrid, k0) -> CostSpec:
    n, m = grid.n, len(grid.u_indices)
    return CostSpec(np.full((n, m), -abs(k0)), grid.u_indices, grid.z_index, kind="constant")


def proportional_cost(grid: StateGrid, k0, kappa1) -> CostSpec:
    dist = np.abs(grid.points[:, None] - grid.u_points[None, :])
    return CostSpec(-abs(k0) - abs(kappa1) * dist, grid.u_indices, grid.z_index)


def separated_cost(grid: StateGrid, d, e) -> CostSpec:
    d = np.asarray(d, dtype=float)
    e = np.asarray(e, dtype=float)
    return CostSpec(np.add.outer(d, e), grid.u_indices, grid.z_index, kind="separated", d=d, e=e)


@dataclass
class DiscountedSolution:
    alpha: float
    v: np.ndarray
    Mv: np.ndarray
    impulse_mask: np.ndarray
    target_map: np.ndarray  # U-column per state, -1 off the impulse region
    outer_iterations: int
    residual: float
    truncation_level: float = None
    method: str = "howard"
    increments: list = field(default_factory=list)  # min_x (v_{k+1} - v_k) per outer step
    z_index: int = 0

    @property
    def w(self) -> np.ndarray:
        return self.v - self.v[self.z_index]


def apply_M(cost: CostSpec, v):
    vals = cost.c + np.asarray(v)[cost.u_indices][None, :]
    arg = np.argmax(vals, axis=1)  # first maximiser = lowest U-index
    return vals[np.arange(len(vals)), arg], arg


def apply_M_truncated(cost: CostSpec, v, L):
    if not L > 0:
        raise ValueError("truncation level must be positive")
    vals = np.maximum(cost.c, -L) + np.asarray(v)[cost.u_indices][None, :]
    return vals.max(axis=1)


def continuation(P: TransitionKernel, running, v, alpha):
    return np.asarray(running) * delta_eff(alpha, P.dt) + step_discount(alpha, P.dt) * (P.rows @ v)


def _evaluate_stopping(P, running, obstacle, alpha, stop):
    beta = step_discount(alpha, P.dt)
    go = ~stop
    u = np.where(stop, obstacle, 0.0)
    if not go.any():
        return u
    rhs = np.asarray(running, dtype=float) * delta_eff(alpha, P.dt) + beta * (P.rows[:, stop] @ u[stop])
    if alpha > 0:
        idx = np.flatnonzero(go)
        A = np.eye(len(idx)) - beta * P.rows[np.ix_(idx, idx)]
        u[idx] = np.linalg.solve(A, rhs[idx])
    else:
        u += absorbed_solve(P.rows, go, rhs)
    return u


def solve_optimal_stopping(
    P: TransitionKernel,
    running,
    obstacle,
    alpha,
    tol_inner=1e-10,
    tol_region=None,
    max_iter=1_000_000,
    method="howard",
):
    """Least fixed point of u = max(obstacle, running*dt_eff + e^{-alpha dt} P u).

    ``method="howard"`` improves stopping sets and evaluates each exactly;
    ``method="iterate"`` runs the plain monotone sweep. Both start from
    max(obstacle, resolvent(running)) when alpha > 0.
    """
    running = np.asarray(running, dtype=float)
    obstacle = np.asarray(obstacle, dtype=float)
    if alpha > 0:
        u = np.maximum(obstacle, resolvent(P, running, alpha))
    else:
        u = obstacle.copy()
    if tol_region is None:
        tol_region = 1e-8 * (1.0 + float(np.max(np.abs(running))) / max(alpha, 1e-300))
        if alpha == 0:
            tol_region = 1e-8
    it = 0
    if method == "iterate":
        while True:
            new = np.maximum(obstacle, continuation(P, running, u, alpha))
            residual = float(np.max(np.abs(new - u)))
            u = new
            it += 1
            if residual < tol_inner:
                break
            if it >= max_iter:
                raise ConvergenceError(f"optimal stopping did not converge (residual {residual:.3e})", residual)
    else:
        stop = None
        while True:
            cont = continuation(P, running, u, alpha)
            new_stop = obstacle >= cont
            if stop is not None:
                # keep the incumbent decision on near-ties to avoid cycling
                tie = np.abs(obstacle - cont) <= 1e-14 * (1 + np.abs(cont))
                new_stop = np.where(tie, stop, new_stop)
                if np.array_equal(new_stop, stop):
                    break
            stop = new_stop
            try:
                u = np.maximum(u, _evaluate_stopping(P, running, obstacle, alpha, stop))
            except SingularSystemError:
                raise ConvergenceError("continuation region never stops") from None
            it += 1
            if it >= max_iter:
                raise ConvergenceError("optimal stopping policy iteration cap exceeded")
        residual = float(np.max(np.abs(u - np.maximum(obstacle, continuation(P, running, u, alpha)))))
        sweeps = 0
        while residual >= tol_inner and sweeps < 1000:
            u = np.maximum(obstacle, continuation(P, running, u, alpha))
            residual = float(np.max(np.abs(u - np.maximum(obstacle, continuation(P, running, u, alpha)))))
            sweeps += 1
        if residual >= tol_inner:
            raise ConvergenceError(f"optimal stopping residual {residual:.3e}", residual)
    stop_mask = u <= obstacle + tol_region
    return u, stop_mask


def qvi_residual(P, f, cost, v, alpha, L=None):
    """Sup-norm of v - max(Mv, Cv); zero exactly at the QVI solution."""
    values = f.values if isinstance(f, RewardSpec) else np.asarray(f, dtype=float)
    Mv = apply_M(cost, v)[0] if L is None else apply_M_truncated(cost, v, L)
    Cv = continuation(P, values, v, alpha)
    return float(np.max(np.abs(v - np.maximum(Mv, Cv))))


def evaluate_impulse_policy(P, values, cost_matrix, u_indices, alpha, impulse, targets):
    """Discounted value of a stationary (impulse set, target column) policy.

    Impulse states satisfy v(x) = c(x, xi) + v(xi); continuation states
    satisfy v = f*dt_eff + beta*P v. Chained impulses are followed.
    """
    n = P.n
    beta = step_discount(alpha, P.dt)
    A = np.eye(n)
    b = np.asarray(values, dtype=float) * delta_eff(alpha, P.dt)
    go = ~impulse
    A[go] -= beta * P.rows[go]
    idx = np.flatnonzero(impulse)
    if len(idx):
        tgt = u_indices[targets[idx]]
        A[idx, tgt] -= 1.0
        b = b.copy()
        b[idx] = cost_matrix[idx, targets[idx]]
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("impulse policy chains without letting time pass") from exc


def _greedy(P, values, cost, v, alpha, L):
    cm = cost.c if L is None else np.maximum(cost.c, -L)
    vals = cm + v[cost.u_indices][None, :]
    targets = np.argmax(vals, axis=1)
    Mv = vals[np.arange(len(vals)), targets]
    Cv = continuation(P, values, v, alpha)
    return Mv, Cv, targets, cm


def solve_discounted_qvi(
    P: TransitionKernel,
    f: RewardSpec,
    cost: CostSpec,
    alpha,
    tol=1e-10,
    L=None,
    method="howard",
    tol_region=None,
    max_outer=10_000,
    max_inner=1_000_000,
) -> DiscountedSolution:
    """Solve the discounted QVI starting from the resolvent of f.

    ``method="operator"`` runs v_{k+1} = T v_k where T solves the optimal
    stopping problem with obstacle M v_k (one more impulse per round).
    ``method="howard"`` alternates greedy impulse/target choices with exact
    policy evaluation. Both produce nondecreasing iterates above resolvent(f).
    """
    if not alpha > 0:
        raise ValueError("discounted QVI needs alpha > 0")
    values = f.values if isinstance(f, RewardSpec) else np.asarray(f, dtype=float)
    norm = float(np.max(np.abs(values)))
    if tol_region is None:
        tol_region = 1e-8 * (1.0 + norm / alpha)
    v = resolvent(P, values, alpha)
    increments = []
    outer = 0
    if method == "operator":
        while True:
            Mv = apply_M(cost, v)[0] if L is None else apply_M_truncated(cost, v, L)
            new, _ = solve_optimal_stopping(P, values, Mv, alpha, tol_inner=tol * 1e-2, max_iter=max_inner)
            increments.append(float(np.min(new - v)))
            step = float(np.max(np.abs(new - v)))
            v = new
            outer += 1
            if step < tol:
                break
            if outer >= max_outer:
                raise ConvergenceError(f"outer QVI iteration cap exceeded (step {step:.3e})", step)
    elif method == "howard":
        impulse = np.zeros(P.n, dtype=bool)
        targets = np.zeros(P.n, dtype=int)
        while True:
            Mv, Cv, new_targets, cm = _greedy(P, values, cost, v, alpha, L)
            scale = 1e-13 * (1.0 + np.abs(Cv))
            new_impulse = Mv > Cv + scale
            keep = np.abs(Mv - Cv) <= scale
            new_impulse = np.where(keep, impulse, new_impulse)
            # keep incumbent targets unless strictly improved
            old_val = cm[np.arange(P.n), targets] + v[cost.u_indices[targets]]
            new_targets = np.where(old_val >= Mv - scale, targets, new_targets)
            if outer > 0 and np.array_equal(new_impulse, impulse) and np.array_equal(
                new_targets[impulse], targets[impulse]
            ):
                break
            impulse, targets = new_impulse, new_targets
            new = evaluate_impulse_policy(P, values, cm, cost.u_indices, alpha, impulse, targets)
            increments.append(float(np.min(new - v)))
            v = np.maximum(v, new)
            outer += 1
            if outer >= max_outer:
                raise ConvergenceError("QVI policy iteration cap exceeded")
        # polish with exact sweeps of the QVI map
        for _ in range(100):
            Mv, Cv, _, _ = _greedy(P, values, cost, v, alpha, L)
            new = np.maximum(Mv, Cv)
            if np.max(np.abs(new - v)) < tol * 1e-3:
                v = new
                break
            v = new
    else:
        raise ValueError(f"unknown method {method!r}")
    Mv, Cv, targets, _ = _greedy(P, values, cost, v, alpha, L)
    residual = float(np.max(np.abs(v - np.maximum(Mv, Cv))))
    impulse_mask = (v - Mv <= tol_region) & (Mv > Cv - tol_region)
    target_map = np.where(impulse_mask, targets, -1)
    sol = DiscountedSolution(
        alpha=alpha,
        v=v,
        Mv=Mv,
        impulse_mask=impulse_mask,
        target_map=target_map,
        outer_iterations=outer,
        residual=residual,
        truncation_level=L,
        method=method,
        increments=increments,
        z_index=cost.z_index,
    )
    return sol


def solve_discounted_qvi_truncated(P, f, cost, alpha, L, tol=1e-10, **kw) -> DiscountedSolution:
    if not L > 0:
        raise ValueError("truncation level must be positive")
    return solve_discounted_qvi(P, f, cost, alpha, tol=tol, L=L, **kw)


def verify_discounted_bounds(
    sol: DiscountedSolution,
    cost: CostSpec,
    grid: StateGrid,
    P: TransitionKernel,
    f: RewardSpec,
    hitting=None,
    tol=1e-8,
) -> BoundReport:
    """Slack of the oscillation bounds on v_alpha and w_alpha = v_alpha - v_alpha(z)."""
    values = f.values if isinstance(f, RewardSpec) else np.asarray(f, dtype=float)
    z, zc = cost.z_index, cost.z_col
    u = cost.u_indices
    v = sol.v
    w = v - v[z]
    kappa = cost.kappa
    report = BoundReport()
    c_to_z = cost.c[:, zc]
    c_from_z = cost.c[z]
    # (a) c(x,z) <= v(x) - v(z) <= -c(z,x) on U, plus the lower half on E
    report.add("eq10", np.concatenate([w[u] - c_to_z[u], -c_from_z - w[u], w - c_to_z]), tol)
    report.add("eq11", kappa - np.abs(w[u]), tol)
    if hitting is None:
        hitting = expected_hitting_time(P, u)
    upper = hitting * np.max(np.abs(values - sol.alpha * v[z])) + kappa
    report.add("eq13", np.concatenate([w - c_to_z, upper - w]), tol)
    report.add("obstacle", v - sol.Mv + max(sol.residual, 0.0), tol)
    report.add("sup_norm", np.max(np.abs(values)) / sol.alpha - np.abs(v), tol * (1 + np.max(np.abs(v))))
    return report
