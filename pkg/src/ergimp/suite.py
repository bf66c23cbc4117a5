"""End-to-end runs shared by the command line, scripts and tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import expected_hitting_time, stationary_distribution
from .errors import ErgImpError, RegimeError
from .models import Instance
from .potentials import check_dynkin, mean_under_mu, potential_table, q_negative_part_sup
from .qvi_discounted import apply_M, solve_discounted_qvi, verify_discounted_bounds
from .qvi_ergodic import (
    ACTIVE,
    ErgodicSolution,
    default_tol_regime,
    ergodic_residual,
    solve_ergodic_qvi_bisection,
    supermartingale_check,
    vanishing_discount,
    verify_ergodic_bounds,
)
from .reports import BoundCheck, BoundReport
from .simulate import simulate_paths, tauberian_check
from .strategy import (
    ImpulsePolicy,
    average_reward,
    cycle_stats,
    extract_policy,
    impulse_rate_bound_check,
    occupation_measure,
    stationarity_residual,
    stationary_controlled,
)
from .truncation import truncation_study

ERGODIC_CHECKS = ("eq22'", "eq22''", "wbounds", "w_bounded", "normalization")


@dataclass
class Solved:
    instance: Instance
    mu: np.ndarray
    mu_f: float
    bisection: ErgodicSolution
    vanishing: ErgodicSolution
    table: object
    alphas: list


def solve_instance(inst: Instance, alphas=None, tol=1e-10, tol_regime=None) -> Solved:
    from .potentials import default_alpha_schedule

    alphas = default_alpha_schedule(inst.P.dt) if alphas is None else list(alphas)
    mu = stationary_distribution(inst.P)
    tol_regime = default_tol_regime(inst.f) if tol_regime is None else tol_regime
    bis = solve_ergodic_qvi_bisection(inst.P, inst.f, inst.cost, tol=tol, mu=mu, tol_regime=tol_regime)
    vd = vanishing_discount(
        inst.P, inst.f, inst.cost, alphas, tol=tol, mu=mu, tol_regime=tol_regime, probe_states=inst.cost.u_indices
    )
    table = potential_table(inst.P, inst.f, mu, alphas)
    return Solved(inst, mu, mean_under_mu(mu, inst.f), bis, vd, table, alphas)


def solution_from_values(inst: Instance, w, lam, mu_f, mask=None, tol_regime=None) -> ErgodicSolution:
    """Rebuild an ErgodicSolution from stored (w, lambda) so it can be re-verified."""
    from .qvi_ergodic import detect_do_nothing

    w = np.asarray(w, dtype=float)
    Mw, targets = apply_M(inst.cost, w)
    tol_regime = default_tol_regime(inst.f) if tol_regime is None else tol_regime
    try:
        regime = detect_do_nothing(lam, mu_f, tol_regime)
    except RegimeError:
        regime = ACTIVE  # let the from_above check report it
    if mask is None:
        mask = w <= Mw + 1e-8 * (1 + inst.f.sup_norm)
    if regime != ACTIVE:
        mask = np.zeros(len(w), dtype=bool)
    return ErgodicSolution(
        lam=float(lam),
        w=w,
        Mw=Mw,
        impulse_mask=np.asarray(mask, dtype=bool),
        target_map=np.where(mask, targets, -1),
        method="loaded",
        regime=regime,
        mu_f=mu_f,
        z_index=inst.cost.z_index,
        residual=ergodic_residual(inst.P, inst.f, inst.cost, w, lam),
        u_indices=inst.cost.u_indices,
        argmax_map=targets,
    )


def probe_policies(inst: Instance, sol: ErgodicSolution, rng_seed=0):
    """Optimal, never-impulse, impulse-everywhere-but-target and two random policies."""
    n = inst.P.n
    u = inst.cost.u_indices
    out = {"never": ImpulsePolicy.never(n, u)}
    if sol.regime == ACTIVE:
        out["optimal"] = extract_policy(sol)
    col = inst.cost.z_col
    mask = np.ones(n, dtype=bool)
    mask[u[col]] = False
    out["everywhere"] = ImpulsePolicy.from_set(mask, np.full(n, col), u)
    rng = np.random.default_rng(rng_seed)
    for k in range(2):
        m = rng.random(n) < 0.5
        m[u] = False  # keeps targets out of the impulse set
        out[f"random{k}"] = ImpulsePolicy.from_set(m, rng.integers(0, len(u), n), u)
    return out


def _merge_min(target: BoundReport, other: BoundReport, suffix=""):
    for c in other.checks:
        name = c.name + suffix
        try:
            cur = target[name]
        except KeyError:
            target.checks.append(BoundCheck(name, c.slack, c.state, c.tol, c.skipped, c.note))
            continue
        if not c.skipped and (cur.skipped or c.slack + c.tol < cur.slack + cur.tol):
            cur.slack, cur.state, cur.tol, cur.skipped, cur.note = c.slack, c.state, c.tol, False, c.note


def verify_suite(
    inst: Instance,
    solved: Solved,
    sol: ErgodicSolution | None = None,
    seed=20240611,
    horizon=1000.0,
    n_paths=100,
    bound_tol=1e-8,
    truncation=True,
    N_ladder=None,
    delta_ladder=None,
    eta_level=None,
) -> BoundReport:
    """Every named invariant check; ergodic bounds are SKIPPED in the do-nothing regime."""
    P, f, cost, grid = inst.P, inst.f, inst.cost, inst.grid
    sol = solved.bisection if sol is None else sol
    rep = BoundReport()
    scale = 1.0 + f.sup_norm
    rep.add("bellman", np.array([1e-8 * scale - sol.residual]), 0.0)
    rep.add(
        "dynkin",
        np.array([1e-9 * scale - check_dynkin(solved.table.q, P, f, solved.mu_f, 5)]),
        0.0,
    )
    t = expected_hitting_time(P, cost.u_indices)
    disc = BoundReport()
    for a in solved.alphas:
        dsol = solve_discounted_qvi(P, f, cost, a)
        _merge_min(disc, verify_discounted_bounds(dsol, cost, grid, P, f, hitting=t, tol=bound_tol))
    rep.extend(disc)
    gap_l = abs(solved.vanishing.lam - solved.bisection.lam)
    gap_w = float(np.max(np.abs(solved.vanishing.w - solved.bisection.w)))
    rep.add("vd_consistency", np.array([1e-6 - gap_l, 1e-5 - gap_w]), 0.0)
    qn = q_negative_part_sup(solved.table)
    rep.extend(verify_ergodic_bounds(sol, cost, grid, P, f, t=t, q=solved.table.q, q_neg_sup=qn, tol=bound_tol))
    active = sol.regime == ACTIVE
    if active:
        rep.extend(supermartingale_check(sol, P, f, k_max=20))
        pol = extract_policy(sol)
        targets = np.unique(pol.target_states[pol.impulse_mask])
        if len(targets) == 1:
            eta = occupation_measure(pol, P, int(targets[0]))
        else:
            eta = stationary_controlled(pol, P)
        rep.add("invmeas", np.array([1e-8 - stationarity_residual(eta, pol, P)]), 0.0)
        rep.add("average_reward", np.array([1e-6 - abs(average_reward(pol, P, f, cost, eta) - sol.lam)]), 0.0)
        if cost.kind == "separated":
            st = cycle_stats(pol, P, f, cost, int(targets[0]))
            rep.add("equiv2", np.array([1e-6 - abs(st.ratio - sol.lam)]), 0.0)
        else:
            rep.skip("equiv2", "cost not separated")
        rep.extend(impulse_rate_bound_check(pol, P, f, cost, eta=eta))
    else:
        rep.skip("supermartingale_1", "do-nothing regime")
        rep.skip("invmeas", "do-nothing regime")
        rep.skip("equiv2", "do-nothing regime")
        pol = ImpulsePolicy.never(P.n, cost.u_indices)
        rep.add("strbound", np.array([(f.sup_norm + 1e-6) / -cost.c_max]), 0.0, note="rate=0")
    sim = simulate_paths(P, pol, f, cost, horizon, n_paths, seed, cost.z_index)
    rep.extend(tauberian_check(sim))
    if truncation and active and _truncation_applicable(inst):
        try:
            tr = truncation_study(
                P, grid, f, cost, N_ladder, delta_ladder, eta_level, lambda_bar=solved.bisection.lam
            )
        except (ErgImpError, ValueError) as exc:
            rep.add("fact1", np.array([-np.inf]), 0.0, note=str(exc))
        else:
            slacks = [min(r.slack_lo, r.slack_hi) for r in tr.rows]
            rep.add("fact1", np.array(slacks), 1e-6)
            ratios = tr.ladder("assumption_C_ratio")
            rep.add("assumption_C_monotone", -np.diff(ratios) if len(ratios) > 1 else np.zeros(1), 1e-12)
    else:
        rep.skip("fact1", "do-nothing regime or grid without a ball around z")
    return rep


def _truncation_applicable(inst: Instance) -> bool:
    g = inst.grid
    radius = min(g.z - g.points[0], g.points[-1] - g.z)
    return radius >= 3.0 and g.n >= 20
