"""Reward truncation outside a ball around z and the resulting bounds.

f_N keeps f on the ball of radius N, blends linearly to a constant level
eta on [N, N+1] and stays at eta beyond. f~_N does the same with level
||f|| + 1. Auxiliary problems use a constant impulse cost -delta.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chain import StateGrid, TransitionKernel, absorbed_solve, stationary_distribution
from .errors import ConvergenceError, RegimeError, SingularSystemError
from .potentials import RewardSpec, mean_under_mu
from .qvi_discounted import CostSpec, constant_cost
from .qvi_ergodic import ACTIVE, ErgodicSolution, solve_ergodic_qvi_bisection, worker_count


@dataclass(frozen=True)
class TruncationInstance:
    N: float
    eta_level: float
    f_N: RewardSpec
    f_tilde_N: RewardSpec
    delta: float | None = None
    mu_f_N: float = np.nan
    mu_f_tilde_N: float = np.nan
    compact_ok: bool = True


@dataclass
class TruncationRow:
    N: float
    delta: float
    lambda_bar_Nc: float
    lambda_tilde_Ndelta: float
    lambda_tilde_tilde_Ndelta: float
    lambda_bar_Ndelta: float
    lambda_hat_N: float
    assumption_C_ratio: float
    slack_lo: float
    slack_hi: float
    lambda_bar_estimate: float

    @property
    def sandwich(self):
        return (self.slack_lo, self.slack_hi)


@dataclass
class TruncationReport:
    lambda_bar: float
    eta_level: float
    rows: list = field(default_factory=list)

    def csv(self) -> str:
        head = "N,delta,lambda_bar_Nc,lambda_tilde,ratio_C,slack_lo,slack_hi"
        lines = [head]
        for r in self.rows:
            vals = (r.N, r.delta, r.lambda_bar_Nc, r.lambda_tilde_Ndelta, r.assumption_C_ratio, r.slack_lo, r.slack_hi)
            lines.append(",".join(f"{v:.17g}" for v in vals))
        return "\n".join(lines) + "\n"

    def ladder(self, attr):
        """Values of ``attr`` per distinct N, in ladder order."""
        seen = {}
        for r in self.rows:
            seen.setdefault(r.N, getattr(r, attr))
        return list(seen.values())

    def to_dict(self):
        return {
            "lambda_bar": self.lambda_bar,
            "eta_level": self.eta_level,
            "rows": [dict(vars(r)) for r in self.rows],
        }


def _dist_to_z(grid: StateGrid):
    return np.abs(grid.points - grid.z)


def hats(grid: StateGrid, N):
    """(inner hat, outer ramp): 1 on B_N decaying to 0 at N+1, and its complement-type ramp."""
    r = _dist_to_z(grid)
    inner = np.clip(1.0 - np.maximum(0.0, r - N), 0.0, None)
    outer = np.clip(1.0 - np.maximum(0.0, N + 1.0 - r), 0.0, None)
    return inner, outer


def default_N_ladder(grid: StateGrid, k=4):
    radius = min(grid.z - grid.points[0], grid.points[-1] - grid.z)
    return list(np.linspace(radius / 2.0, radius - 1.0, k))


def default_delta_ladder(cost: CostSpec):
    return [0.25 * -cost.c_max, 0.5 * -cost.c_max]


def build_truncations(f: RewardSpec, grid: StateGrid, N, eta_level, mu=None, P=None, delta=None) -> TruncationInstance:
    fn = f.sup_norm
    if mu is not None:
        mu_f = mean_under_mu(mu, f)
        if not mu_f < eta_level < fn:
            raise ValueError(f"eta_level must lie in (mu(f), ||f||) = ({mu_f:.6g}, {fn:.6g})")
    elif not eta_level < fn:
        raise ValueError("eta_level must be below ||f||")
    if grid.z - N - 1 < grid.points[0] - 1e-12 or grid.z + N + 1 > grid.points[-1] + 1e-12:
        raise ValueError("ball B_{z,N+1} exceeds the grid")
    inner, outer = hats(grid, N)
    f_N = RewardSpec(f.values * inner + eta_level * outer)
    f_t = RewardSpec(f.values * inner + (fn + 1.0) * outer)
    mu_fn = mu_ft = np.nan
    compact = True
    if mu is not None:
        mu_fn = mean_under_mu(mu, f_N)
        mu_ft = mean_under_mu(mu, f_t)
        low = f_N.values <= mu_fn
        compact = bool(np.all(_dist_to_z(grid)[low] < N + 1.0))
    return TruncationInstance(float(N), float(eta_level), f_N, f_t, delta, mu_fn, mu_ft, compact)


def _stopping_value(P: TransitionKernel, gain, rel_tol=1e-12, max_iter=10_000):
    """sup over stopping sets of E sum_{k<tau} gain(X_k), obstacle 0; Howard iteration.

    Returns +inf where continuing forever is improving (closed continuation set).
    """
    n = P.n
    cont = np.zeros(n, dtype=bool)
    u = np.zeros(n)
    for _ in range(max_iter):
        q = gain + P.rows @ u
        scale = np.abs(gain) + np.abs(P.rows @ np.abs(u))
        better = q > rel_tol * scale
        keep = cont & (q >= -rel_tol * scale)
        new = better | keep
        if np.array_equal(new, cont):
            return u
        cont = new
        if cont.all():
            return np.full(n, np.inf)
        try:
            u = absorbed_solve(P.rows, cont, gain)
        except SingularSystemError:
            return np.full(n, np.inf)
    raise ConvergenceError("stopping policy iteration did not settle")


def assumption_C_ratio(P: TransitionKernel, grid: StateGrid, N, tol=1e-6, mu=None) -> float:
    """sup over x in U and stopping times of E(time outside B_{z,N}) / E(tau), by bisection on beta."""
    outside = (_dist_to_z(grid) > N + 1e-12).astype(float)
    if not outside.any():
        return 0.0
    mu = stationary_distribution(P) if mu is None else mu
    lo = float(mu @ outside)
    hi = 1.0
    u_idx = grid.u_indices

    def positive(beta):
        g = _stopping_value(P, (outside - beta) * P.dt)
        return float(np.max(g[u_idx])) > 1e-14 * P.dt

    if positive(hi):
        raise RegimeError("assumption (C) bracket failure: ratio exceeds 1")
    for _ in range(400):
        if hi - lo <= tol * hi + 1e-300:
            break
        mid = 0.5 * (lo + hi)
        if positive(mid):
            lo = mid
        else:
            hi = mid
    return hi


def _aux_lambda(P, reward, cost_delta: CostSpec, tol):
    sol = solve_ergodic_qvi_bisection(P, reward, cost_delta, tol=tol)
    return sol.lam, sol


def lambda_N_c(P, inst: TruncationInstance, cost: CostSpec, tol=1e-10) -> tuple[float, ErgodicSolution]:
    if not inst.compact_ok:
        raise RegimeError("{f_N <= mu(f_N)} is not contained in B_{z,N+1}")
    sol = solve_ergodic_qvi_bisection(P, inst.f_N, cost, tol=tol)
    if not inst.eta_level < sol.lam:
        raise RegimeError(
            f"edge level eta={inst.eta_level:.6g} is not below lambda_N={sol.lam:.6g}"
        )
    return sol.lam, sol


def delta_cost(grid: StateGrid, delta) -> CostSpec:
    if not delta > 0:
        raise ValueError("delta must be positive")
    return constant_cost(grid, delta)


def lambda_tilde_N_delta(P, grid, inst: TruncationInstance, delta, tol=1e-10):
    """Auxiliary value for reward f~_N - f_N with cost -delta."""
    return _aux_lambda(P, RewardSpec(inst.f_tilde_N.values - inst.f_N.values), delta_cost(grid, delta), tol)[0]


def lambda_tilde_tilde_N_delta(P, grid, f: RewardSpec, inst: TruncationInstance, delta, tol=1e-10):
    return _aux_lambda(P, RewardSpec(inst.f_tilde_N.values - f.values), delta_cost(grid, delta), tol)[0]


def lambda_bar_N_delta(P, grid, f: RewardSpec, inst: TruncationInstance, delta, tol=1e-10):
    """Value of the difference problem f - f_N; constant in x on an irreducible chain, so the range is a point."""
    lam = _aux_lambda(P, RewardSpec(f.values - inst.f_N.values), delta_cost(grid, delta), tol)[0]
    return lam, (lam, lam)


def sandwich_check(lambda_bar, lambda_bar_Nc, lambda_bar_Ndelta, lambda_tilde_Ndelta, delta, c_max, f_norm):
    """(lower slack, upper slack) for the two-sided bound on lambda_N - lambda."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not delta < -c_max:
        raise ValueError("delta must be below -c_max")
    gap = lambda_bar_Nc - lambda_bar
    lower = -lambda_bar_Ndelta - delta * f_norm / (-c_max)
    upper = lambda_tilde_Ndelta + delta * 2.0 * f_norm / (-c_max)
    return gap - lower, upper - gap


def truncation_study(
    P: TransitionKernel,
    grid: StateGrid,
    f: RewardSpec,
    cost: CostSpec,
    N_ladder=None,
    delta_ladder=None,
    eta_level=None,
    lambda_bar=None,
    tol=1e-10,
    workers=None,
) -> TruncationReport:
    mu = stationary_distribution(P)
    if lambda_bar is None:
        lambda_bar = solve_ergodic_qvi_bisection(P, f, cost, tol=tol).lam
    mu_f = mean_under_mu(mu, f)
    if eta_level is None:
        eta_level = 0.5 * (mu_f + lambda_bar)
    N_ladder = default_N_ladder(grid) if N_ladder is None else list(N_ladder)
    delta_ladder = default_delta_ladder(cost) if delta_ladder is None else list(delta_ladder)
    workers = worker_count() if workers is None else workers

    def per_N(N):
        inst = build_truncations(f, grid, N, eta_level, mu=mu)
        lam_nc, _ = lambda_N_c(P, inst, cost, tol)
        lam_hat = solve_ergodic_qvi_bisection(P, inst.f_tilde_N, cost, tol=tol).lam
        ratio = assumption_C_ratio(P, grid, N, mu=mu)
        rows = []
        for d in delta_ladder:
            lt = lambda_tilde_N_delta(P, grid, inst, d, tol)
            ltt = lambda_tilde_tilde_N_delta(P, grid, f, inst, d, tol)
            lbd, _ = lambda_bar_N_delta(P, grid, f, inst, d, tol)
            lo, hi = sandwich_check(lambda_bar, lam_nc, lbd, ltt, d, cost.c_max, f.sup_norm)
            rows.append(TruncationRow(float(N), float(d), lam_nc, lt, ltt, lbd, lam_hat, ratio, lo, hi, lam_nc))
        return rows

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(per_N, N_ladder))
    else:
        parts = [per_N(N) for N in N_ladder]
    report = TruncationReport(float(lambda_bar), float(eta_level))
    for rows in parts:
        report.rows.extend(rows)
    return report
