"""Average-reward impulse control: the pair (w, lambda) with

    w = max(Mw, (f - lambda) dt + P w),   w(z) = 0.

Two independent routes produce it. ``solve_ergodic_qvi_bisection`` is the
canonical one (residual-certified); ``vanishing_discount`` extrapolates
alpha * v_alpha(z) and w_alpha from a schedule of discounted solves.
"""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chain import StateGrid, TransitionKernel, expected_hitting_time, stationary_distribution
from .errors import ConvergenceError, RegimeError, SingularSystemError
from .potentials import RewardSpec, default_alpha_schedule, delta_eff, mean_under_mu, step_discount
from .qvi_discounted import CostSpec, DiscountedSolution, apply_M, solve_discounted_qvi
from .reports import BoundReport

ACTIVE = "active"
DO_NOTHING = "do_nothing"


@dataclass
class ErgodicSolution:
    lam: float
    w: np.ndarray
    Mw: np.ndarray
    impulse_mask: np.ndarray
    target_map: np.ndarray
    method: str
    regime: str
    mu_f: float
    z_index: int
    residual: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    u_indices: np.ndarray = None
    argmax_map: np.ndarray = None  # M-argmax column at every state

    @property
    def target_states(self) -> np.ndarray:
        return np.where(self.target_map >= 0, self.u_indices[self.target_map], -1)


def default_tol_regime(f: RewardSpec) -> float:
    return 1e-5 * (1.0 + f.sup_norm)


def worker_count() -> int:
    raw = os.environ.get("ERGIMP_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _values(f):
    return f.values if isinstance(f, RewardSpec) else np.asarray(f, dtype=float)


def ergodic_residual(P, f, cost, w, lam) -> float:
    values = _values(f)
    Mw = apply_M(cost, w)[0]
    Cw = (values - lam) * P.dt + P.rows @ w
    return float(np.max(np.abs(w - np.maximum(Mw, Cw))))


def _finish(P, f, cost, w, lam, method, mu_f, tol_regime, tol_region, diagnostics):
    values = _values(f)
    w = w - w[cost.z_index]
    Mw, targets = apply_M(cost, w)
    Cw = (values - lam) * P.dt + P.rows @ w
    residual = float(np.max(np.abs(w - np.maximum(Mw, Cw))))
    regime = detect_do_nothing(lam, mu_f, tol_regime)
    if regime == DO_NOTHING:
        mask = np.zeros(P.n, dtype=bool)
    else:
        mask = (w <= Mw + tol_region) & (Mw > Cw - tol_region)
    return ErgodicSolution(
        lam=float(lam),
        w=w,
        Mw=Mw,
        impulse_mask=mask,
        target_map=np.where(mask, targets, -1),
        method=method,
        regime=regime,
        mu_f=mu_f,
        z_index=cost.z_index,
        residual=residual,
        diagnostics=diagnostics,
        u_indices=np.asarray(cost.u_indices),
        argmax_map=targets,
    )


# ---------------------------------------------------------------- discounted route


def w_alpha(sol: DiscountedSolution, z_index) -> np.ndarray:
    return sol.v - sol.v[z_index]


def w_alpha_residual(P, f, cost, sol: DiscountedSolution) -> float:
    """Defect of w_a = max(Mw_a, (f - a v_a(z)) dt_eff + e^{-a dt} P w_a)."""
    values = _values(f)
    a = sol.alpha
    w = w_alpha(sol, cost.z_index)
    Mw = apply_M(cost, w)[0]
    Cw = (values - a * sol.v[cost.z_index]) * delta_eff(a, P.dt) + step_discount(a, P.dt) * (P.rows @ w)
    return float(np.max(np.abs(w - np.maximum(Mw, Cw))))


def discounted_sweep(P, f, cost, alphas, tol=1e-10, method="howard", workers=None):
    workers = worker_count() if workers is None else workers

    def one(a):
        return solve_discounted_qvi(P, f, cost, a, tol=tol, method=method)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, alphas))
    return [one(a) for a in alphas]


def linear_extrapolate(alphas, values, n_fit=4):
    """Intercept at alpha = 0 of a least-squares line through the last n_fit points."""
    a = np.asarray(alphas[-n_fit:], dtype=float)
    y = np.asarray(values[-n_fit:], dtype=float)
    design = np.column_stack([np.ones_like(a), a])
    coef, *_ = np.linalg.lstsq(design, y.reshape(len(a), -1), rcond=None)
    out = coef[0]
    return float(out[0]) if out.size == 1 else out


def vanishing_discount(
    P: TransitionKernel,
    f: RewardSpec,
    cost: CostSpec,
    alpha_schedule=None,
    tol=1e-10,
    mu=None,
    tol_regime=None,
    tol_region=None,
    probe_states=None,
    n_fit=4,
    workers=None,
) -> ErgodicSolution:
    alphas = list(default_alpha_schedule(P.dt) if alpha_schedule is None else alpha_schedule)
    if len(alphas) < 6:
        raise ValueError("alpha schedule needs at least 6 points")
    if np.any(np.diff(alphas) >= 0) or alphas[-1] <= 0:
        raise ValueError("alpha schedule must decrease strictly towards 0")
    if mu is None:
        mu = stationary_distribution(P)
    mu_f = mean_under_mu(mu, f)
    tol_regime = default_tol_regime(f) if tol_regime is None else tol_regime
    tol_region = 1e-8 * (1.0 + f.sup_norm) if tol_region is None else tol_region
    sols = discounted_sweep(P, f, cost, alphas, tol=tol, workers=workers)
    z = cost.z_index
    seq = np.array([a * s.v[z] for a, s in zip(alphas, sols)])
    lam = linear_extrapolate(alphas, seq, n_fit)
    ws = np.array([w_alpha(s, z) for s in sols])
    w = np.asarray(linear_extrapolate(alphas, ws, n_fit))
    diffs = np.diff(seq[-n_fit:])
    monotone = bool(np.all(diffs <= 1e-12) or np.all(diffs >= -1e-12))
    diag = {
        "alphas": alphas,
        "alpha_v_z": seq.tolist(),
        "w_alpha_min": ws[-1],
        "w_alpha_residuals": [w_alpha_residual(P, f, cost, s) for s in sols],
        "monotone_tail": monotone,
        "warnings": [] if monotone else ["alpha*v_alpha(z) not monotone over the fitted tail"],
    }
    if not monotone:
        warnings.warn(diag["warnings"][0], RuntimeWarning, stacklevel=2)
    if probe_states is not None:
        a_min = alphas[-1]
        diag["alpha_v_probe"] = (a_min * sols[-1].v[np.asarray(probe_states)]).tolist()
    res = _finish(P, f, cost, w, lam, "vanishing_discount", mu_f, tol_regime, tol_region, diag)
    # the impulse region of the smallest-alpha problem is the policy reported
    last = sols[-1]
    if res.regime == ACTIVE:
        res.impulse_mask = last.impulse_mask.copy()
        res.target_map = last.target_map.copy()
    if probe_states is not None and res.regime == DO_NOTHING:
        detect_do_nothing(lam, mu_f, tol_regime, diag["alpha_v_probe"])
    return res


# ---------------------------------------------------------------- bisection route


def _step_operator(P, values, cost, lam, h):
    """One step of the controlled chain at price lam: max(Ch, M(Ch))."""
    Ch = (values - lam) * P.dt + P.rows @ h
    vals = cost.c + Ch[cost.u_indices][None, :]
    return np.maximum(Ch, vals.max(axis=1))


def relative_drift(P, f, cost, lam, h0=None, tol=1e-13, max_sweeps=1_000_000, mix=0.1):
    """Relative value iteration at a fixed price lam.

    Returns (drift, h): drift is the increment at z per sweep after
    convergence (per step of length dt) and h is recentred so h(z) = 0.
    Positive drift means lam is below the optimal long-run average.
    ``mix`` blends in the identity to rule out periodic controlled chains.
    """
    values = _values(f)
    z = cost.z_index
    h = np.zeros(P.n) if h0 is None else np.array(h0, dtype=float)
    h -= h[z]
    drift = 0.0
    for sweep in range(1, max_sweeps + 1):
        Th = mix * h + (1.0 - mix) * _step_operator(P, values, cost, lam, h)
        drift = Th[z]
        new = Th - drift
        change = float(np.max(np.abs(new - h)))
        h = new
        if change < tol * (1.0 + float(np.max(np.abs(h)))):
            return drift / (1.0 - mix), h
    raise ConvergenceError(f"relative value iteration stalled (change {change:.3e})", change)


def _polish(P, values, cost, h, lam_hint):
    """Exact (gain, bias) of the greedy policy of h, or None if it is not stable."""
    n = P.n
    Ch = values * P.dt + P.rows @ h
    vals = cost.c + Ch[cost.u_indices][None, :]
    targets = np.argmax(vals, axis=1)
    Mch = vals[np.arange(n), targets]
    impulse = Mch > Ch + 1e-12 * (1 + np.abs(Ch))
    src = np.where(impulse, cost.u_indices[targets], np.arange(n))
    r = values[src] * P.dt + np.where(impulse, cost.c[np.arange(n), targets], 0.0)
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = np.eye(n) - P.rows[src]
    A[:n, n] = P.dt  # gain per unit time times dt
    A[n, cost.z_index] = 1.0
    b = np.append(r, 0.0)
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return None
    hp, lam = sol[:n], sol[n]
    if not np.all(np.isfinite(sol)) or ergodic_residual(P, values, cost, hp, lam) > 1e-9:
        return None
    return lam, hp


def solve_ergodic_qvi_bisection(
    P: TransitionKernel,
    f: RewardSpec,
    cost: CostSpec,
    bracket=None,
    tol=1e-10,
    mu=None,
    tol_regime=None,
    tol_region=None,
    max_bisections=200,
) -> ErgodicSolution:
    values = _values(f)
    if mu is None:
        mu = stationary_distribution(P)
    mu_f = mean_under_mu(mu, f)
    tol_regime = default_tol_regime(f) if tol_regime is None else tol_regime
    tol_region = 1e-8 * (1.0 + f.sup_norm) if tol_region is None else tol_region
    lo, hi = (mu_f, f.sup_norm + abs(cost.c_max) / P.dt) if bracket is None else bracket
    # drift is a per-step quantity; compare it on the per-unit-time scale
    d_lo, h_lo = relative_drift(P, values, cost, lo)
    d_hi, h_hi = relative_drift(P, values, cost, hi, h0=h_lo)
    g_lo, g_hi = d_lo / P.dt, d_hi / P.dt
    history = [(lo, g_lo), (hi, g_hi)]
    if abs(g_lo) < tol:
        lam, h = lo, h_lo
    elif abs(g_hi) < tol:
        lam, h = hi, h_hi
    else:
        if not (g_lo > 0 > g_hi):
            raise RegimeError(
                f"bracket [{lo}, {hi}] does not straddle: drift {g_lo:+.3e} at lo, {g_hi:+.3e} at hi"
            )
        h = h_lo
        lam = 0.5 * (lo + hi)
        for _ in range(max_bisections):
            lam = 0.5 * (lo + hi)
            g, h = relative_drift(P, values, cost, lam, h0=h)
            g /= P.dt
            history.append((lam, g))
            if abs(g) < tol or hi - lo < tol:
                break
            if g > 0:
                lo = lam
            else:
                hi = lam
        else:
            raise ConvergenceError("bisection cap exceeded")
    diag = {"bisection": history, "lambda_bisection": lam}
    polished = _polish(P, values, cost, h, lam)
    if polished is not None and abs(polished[0] - lam) < max(10 * tol, 1e-8):
        lam, h = polished
        diag["polished"] = True
    else:
        diag["polished"] = False
    return _finish(P, f, cost, h, lam, "bisection", mu_f, tol_regime, tol_region, diag)


# ---------------------------------------------------------------- regime and checks


def detect_do_nothing(lam, mu_f, tol_regime=1e-5, alpha_v_probe=None) -> str:
    if lam < mu_f - 1e-6:
        raise RegimeError(
            "lambda below mu(f) contradicts liminf_{alpha->0} alpha v_alpha(x) >= mu(f)"
        )
    if lam > mu_f + tol_regime:
        return ACTIVE
    if alpha_v_probe is not None:
        spread = float(np.ptp(np.asarray(alpha_v_probe, dtype=float)))
        if spread >= 10 * tol_regime:
            raise RegimeError(f"alpha v_alpha not uniform over probes (spread {spread:.3e})")
    return DO_NOTHING


def verify_ergodic_bounds(
    sol: ErgodicSolution,
    cost: CostSpec,
    grid: StateGrid,
    P: TransitionKernel,
    f: RewardSpec,
    t=None,
    q=None,
    q_neg_sup=None,
    tol=1e-8,
) -> BoundReport:
    """Slack report for the bounds on w and Mw (active regime only)."""
    report = BoundReport()
    report.add("from_above", np.array([sol.lam - sol.mu_f]), tol)
    names = ("eq22'", "eq22''", "wbounds", "w_bounded")
    if sol.regime != ACTIVE:
        for name in names:
            report.skip(name, "do-nothing regime")
        return report
    values = _values(f)
    u = cost.u_indices
    z = cost.z_index
    kappa = cost.kappa
    w, Mw = sol.w, sol.Mw
    if t is None:
        t = expected_hitting_time(P, u)
    c_to_z = cost.c[:, cost.z_col]
    upper_t = t * np.max(np.abs(values - sol.lam)) + kappa
    report.add("eq22'", np.concatenate([w - c_to_z, upper_t - w]), tol)
    report.add("eq22''", np.concatenate([Mw - (cost.c_lower - kappa), kappa - Mw]), tol)
    c_low_u = float(np.max(np.abs(cost.c_lower[u])))
    lower = np.maximum(c_to_z, t * (-f.sup_norm - sol.lam) - kappa - c_low_u)
    upper = upper_t
    if q is not None:
        qn = 0.0 if q_neg_sup is None else q_neg_sup
        upper = np.minimum(upper, q + kappa + qn)
    report.add("wbounds", np.concatenate([w - lower, upper - w]), tol)
    gamma = np.zeros(P.n, dtype=bool)
    gamma[u] = True
    gamma |= values >= sol.lam
    cap = max(kappa, float(np.max(np.abs(w[gamma]))))
    report.add("w_bounded", cap - w, tol)
    report.add("normalization", np.array([-abs(w[z])]), 0.0)
    return report


def supermartingale_check(sol: ErgodicSolution, P: TransitionKernel, f, k_max=1, tol=1e-9) -> BoundReport:
    """w >= sum_{j<k} P^j (f - lambda) dt + P^k w for k = 1..k_max."""
    values = _values(f)
    report = BoundReport()
    inc = (values - sol.lam) * P.dt
    acc = np.zeros(P.n)
    term = inc.copy()
    Pk_w = sol.w.copy()
    worst = np.inf
    worst_k = 0
    worst_state = 0
    for k in range(1, k_max + 1):
        acc += term
        term = P.rows @ term
        Pk_w = P.rows @ Pk_w
        slack = (sol.w - (acc + Pk_w)) / k
        i = int(np.argmin(slack))
        if slack[i] < worst:
            worst, worst_k, worst_state = float(slack[i]), k, i
        if k == 1:
            report.add("supermartingale_1", slack, tol)
    # per-step slack so the tolerance does not grow with k
    chk = report.add("supermartingale_iter", np.array([worst]), tol, note=f"k={worst_k}")
    chk.state = worst_state
    return report
