"""Executable impulse strategies and their exact cycle statistics.

Step timing used throughout: an impulse fires at the start of a step if the
current state is in the impulse set, then the reward of the post-impulse
state accrues for dt, then the chain moves by P. Occupation measures count
post-impulse states.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .chain import TransitionKernel, absorbed_solve
from .errors import PolicyError, RegimeError, SingularSystemError
from .potentials import RewardSpec
from .qvi_discounted import CostSpec
from .qvi_ergodic import ACTIVE, ErgodicSolution
from .reports import BoundReport


@dataclass(frozen=True)
class ImpulsePolicy:
    impulse_mask: np.ndarray
    target_map: np.ndarray  # U-column per state, -1 off the impulse set
    u_indices: np.ndarray
    one_impulse_per_step: bool = field(default=True, init=False)

    def __post_init__(self):
        mask = np.array(self.impulse_mask, dtype=bool)
        tmap = np.array(self.target_map, dtype=int)
        u = np.array(self.u_indices, dtype=int)
        if mask.shape != tmap.shape:
            raise PolicyError("mask and target map differ in length")
        if mask.all():
            raise PolicyError("degenerate policy: continuation region is empty")
        if np.any((tmap[mask] < 0) | (tmap[mask] >= len(u))):
            raise PolicyError("impulse targets must lie in U")
        tmap = np.where(mask, tmap, -1)
        for name, arr in (("impulse_mask", mask), ("target_map", tmap), ("u_indices", u)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.target_states[mask] == np.flatnonzero(mask)):
            warnings.warn("policy maps an impulse state to itself", RuntimeWarning, stacklevel=2)

    @property
    def n(self) -> int:
        return len(self.impulse_mask)

    @property
    def target_states(self) -> np.ndarray:
        return np.where(self.impulse_mask, self.u_indices[np.maximum(self.target_map, 0)], -1)

    @property
    def post_impulse(self) -> np.ndarray:
        """State at reward time for each pre-impulse state."""
        return np.where(self.impulse_mask, self.target_states, np.arange(self.n))

    @classmethod
    def never(cls, n, u_indices):
        return cls(np.zeros(n, dtype=bool), np.full(n, -1), u_indices)

    @classmethod
    def from_set(cls, mask, target_col, u_indices):
        mask = np.asarray(mask, dtype=bool)
        return cls(mask, np.where(mask, target_col, -1), u_indices)


@dataclass(frozen=True)
class CycleStats:
    start: int
    expected_cycle_time: float
    expected_cycle_reward: float
    ratio: float
    running_part: float = 0.0
    cost_part: float = 0.0


def extract_policy(sol: ErgodicSolution, tol_region=None) -> ImpulsePolicy:
    if sol.regime != ACTIVE:
        raise RegimeError("no impulse strategy in the do-nothing regime")
    mask = sol.impulse_mask if tol_region is None else sol.w <= sol.Mw + tol_region
    return ImpulsePolicy.from_set(mask, sol.argmax_map, sol.u_indices)


def _pushforward_rows(policy: ImpulsePolicy, rows):
    out = np.zeros_like(rows)
    np.add.at(out.T, policy.post_impulse, rows.T)
    return out


def controlled_kernel(policy: ImpulsePolicy, P: TransitionKernel, timing="post") -> TransitionKernel:
    """Kernel of the controlled chain.

    timing="pre" substitutes the target's row at impulse states (chain of
    pre-impulse states). timing="post" additionally relabels landing states
    by the impulse map, giving the chain of reward-time states; the
    occupation measure is stationary for this one.
    """
    sub = P.rows[policy.post_impulse]
    if timing == "pre":
        rows = sub
    elif timing == "post":
        rows = _pushforward_rows(policy, sub)
    else:
        raise ValueError("timing must be 'pre' or 'post'")
    rows = rows / rows.sum(axis=1, keepdims=True)
    return TransitionKernel(rows, P.dt)


def _cycle_solves(policy: ImpulsePolicy, P: TransitionKernel, rhs_cont, terminal):
    """E sum_{1<=k<sigma} rhs(X_k) + terminal(X_sigma) from each state, sigma = hit of S."""
    S = policy.impulse_mask
    if not S.any():
        raise SingularSystemError("impulse set is empty: cycle never ends")
    rhs = np.where(S, 0.0, rhs_cont) + np.where(S, 0.0, P.rows @ np.where(S, terminal, 0.0))
    try:
        inner = absorbed_solve(P.rows, ~S, rhs)
    except SingularSystemError as exc:
        raise SingularSystemError("impulse set unreachable: expected cycle length infinite") from exc
    return np.where(S, terminal, inner)


def occupation_measure(policy: ImpulsePolicy, P: TransitionKernel, start) -> np.ndarray:
    if start not in set(policy.u_indices.tolist()):
        raise PolicyError("cycle start must lie in U")
    S = policy.impulse_mask
    if not S.any():
        raise SingularSystemError("impulse set is empty: cycle never ends")
    y0 = policy.post_impulse[start]
    C = np.flatnonzero(~S)
    nu = P.rows[y0, C]
    A = np.eye(len(C)) - P.rows[np.ix_(C, C)]
    from .chain import _reaches

    if not _reaches(P.rows, np.flatnonzero(S))[C].all():
        raise SingularSystemError("impulse set unreachable: expected cycle length infinite")
    visits = np.linalg.solve(A.T, nu)
    occ = np.zeros(P.n)
    occ[C] = visits
    occ[y0] += 1.0
    return occ / occ.sum()


def stationary_controlled(policy: ImpulsePolicy, P: TransitionKernel) -> np.ndarray:
    """Stationary law of the post-impulse chain (single recurrent class assumed)."""
    Ps = controlled_kernel(policy, P).rows
    n = P.n
    A = np.vstack([Ps.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    eta, *_ = np.linalg.lstsq(A, b, rcond=None)
    eta = np.clip(eta, 0.0, None)
    eta /= eta.sum()
    for _ in range(50):
        eta = eta @ Ps
    return eta


def stationarity_residual(eta, policy, P) -> float:
    Ps = controlled_kernel(policy, P).rows
    return float(np.abs(eta @ Ps - eta).sum())


def cycle_stats(policy: ImpulsePolicy, P: TransitionKernel, f, cost: CostSpec, start, return_to_start=False) -> CycleStats:
    """Exact expected length, reward and ratio of one impulse cycle from ``start``.

    The cycle covers the step at ``start`` and ends with the impulse fired at
    the first later visit to the impulse set. The closing cost goes to the
    policy target, or back to ``start`` when ``return_to_start`` is set.
    """
    values = f.values if isinstance(f, RewardSpec) else np.asarray(f, dtype=float)
    if start not in set(policy.u_indices.tolist()):
        raise PolicyError("cycle start must lie in U")
    S = policy.impulse_mask
    n = P.n
    if return_to_start:
        col = int(np.flatnonzero(cost.u_indices == start)[0])
        closing = cost.c[:, col]
    else:
        closing = cost.c[np.arange(n), np.maximum(policy.target_map, 0)]
    closing = np.where(S, closing, 0.0)
    # steps(y): visits to the continuation set from y until the impulse set is hit
    steps = _cycle_solves(policy, P, np.ones(n), np.zeros(n))
    run = _cycle_solves(policy, P, values * P.dt, np.zeros(n))
    term = _cycle_solves(policy, P, np.zeros(n), closing)
    # a probe cycle starts at ``start`` itself; a policy cycle may fire first
    y0 = start if return_to_start else policy.post_impulse[start]
    row = P.rows[y0]
    e_steps = 1.0 + row @ steps
    e_run = values[y0] * P.dt + row @ run
    e_cost = row @ term
    if S[start] and not return_to_start:
        e_cost += cost.c[start, policy.target_map[start]]
    time = e_steps * P.dt
    reward = e_run + e_cost
    return CycleStats(int(start), float(time), float(reward), float(reward / time), float(e_run), float(e_cost))


def average_reward(policy: ImpulsePolicy, P: TransitionKernel, f, cost: CostSpec, eta=None) -> float:
    """Long-run reward per unit time from the post-impulse stationary law."""
    values = f.values if isinstance(f, RewardSpec) else np.asarray(f, dtype=float)
    if eta is None:
        eta = stationary_controlled(policy, P)
    S = policy.impulse_mask
    fire = cost.c[np.arange(P.n), np.maximum(policy.target_map, 0)] * S
    return float(eta @ values + eta @ (P.rows @ fire) / P.dt)


def impulse_rate(policy: ImpulsePolicy, P: TransitionKernel, eta=None) -> float:
    if not policy.impulse_mask.any():
        return 0.0
    if eta is None:
        eta = stationary_controlled(policy, P)
    return float(eta @ P.rows[:, policy.impulse_mask].sum(axis=1) / P.dt)


def impulse_rate_bound_check(policy, P, f, cost: CostSpec, eps=1e-6, eta=None) -> BoundReport:
    fn = f.sup_norm if isinstance(f, RewardSpec) else float(np.max(np.abs(f)))
    rate = impulse_rate(policy, P, eta)
    bound = (fn + eps) / (-cost.c_max)
    report = BoundReport()
    report.add("strbound", np.array([bound - rate]), 0.0, note=f"rate={rate:.6g} bound={bound:.6g}")
    return report


def threshold_sets(n):
    """All stopping sets {i <= a} U {i >= b} with a < b - 1 (non-empty complement)."""
    for a in range(-1, n):
        for b in range(a + 2, n + 1):
            mask = np.zeros(n, dtype=bool)
            mask[: a + 1] = True
            mask[b:] = True
            if mask.any():
                yield mask


def separated_ratio_probe(P, f, cost: CostSpec, lam, starts=None, tol=1e-6):
    """Max ratio over starts in U and threshold stopping sets; must not exceed lam."""
    starts = cost.u_indices if starts is None else starts
    best = -np.inf
    arg = None
    for mask in threshold_sets(P.n):
        for x in starts:
            col = int(np.flatnonzero(cost.u_indices == x)[0])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                pol = ImpulsePolicy.from_set(mask, np.full(P.n, col), cost.u_indices)
            try:
                st = cycle_stats(pol, P, f, cost, int(x), return_to_start=True)
            except SingularSystemError:
                continue
            if st.ratio > best:
                best, arg = st.ratio, (int(x), np.flatnonzero(mask))
    report = BoundReport()
    report.add("equiv2_sup", np.array([lam + tol - best]), 0.0, note=f"start={arg[0] if arg else None}")
    return best, arg, report


def export_policy_csv(policy: ImpulsePolicy) -> str:
    lines = ["state,impulse_flag,target_state"]
    for i, (m, t) in enumerate(zip(policy.impulse_mask, policy.target_states)):
        lines.append(f"{i},{int(m)},{int(t)}")
    return "\n".join(lines) + "\n"
