"""Monte Carlo execution of a stationary impulse policy.

Randomness: one Philox stream per path, keyed by the master seed with the
path id in the counter's top word. A path's draws therefore do not depend on
how paths are batched or how many workers run.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chain import TransitionKernel
from .errors import ErgImpError
from .potentials import RewardSpec, delta_eff
from .qvi_discounted import CostSpec
from .qvi_ergodic import worker_count
from .reports import BoundReport
from .strategy import ImpulsePolicy

Z95 = 1.959963984540054
_MASK64 = (1 << 64) - 1


@dataclass
class Estimate:
    value: float
    half_width: float

    def __iter__(self):
        yield self.value
        yield self.half_width


@dataclass
class SimulationReport:
    n_paths: int
    horizon_T: float
    j_estimate: Estimate
    j_hat_estimate: Estimate | None
    impulse_rate: Estimate
    per_path_discounted: dict
    seed: int
    start: int
    partial_averages: dict = field(default_factory=dict)
    # raw per-path data kept for the checks below
    path_average: np.ndarray = None
    path_impulses: np.ndarray = None
    path_discounted: dict = field(default_factory=dict)
    cycle_rewards: np.ndarray = None
    cycle_durations: np.ndarray = None

    def to_dict(self):
        return {
            "n_paths": self.n_paths,
            "horizon_T": self.horizon_T,
            "seed": self.seed,
            "start": self.start,
            "j_estimate": list(self.j_estimate),
            "j_hat_estimate": None if self.j_hat_estimate is None else list(self.j_hat_estimate),
            "impulse_rate": list(self.impulse_rate),
            "per_path_discounted": {repr(a): list(e) for a, e in self.per_path_discounted.items()},
            "partial_averages": {repr(t): v for t, v in self.partial_averages.items()},
        }

    def path_csv(self) -> str:
        lines = ["path_id,final_average,impulse_count"]
        for i, (a, k) in enumerate(zip(self.path_average, self.path_impulses)):
            lines.append(f"{i},{a!r},{int(k)}")
        return "\n".join(lines) + "\n"


def path_generator(seed, path_id) -> np.random.Generator:
    key = int(seed) & _MASK64
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, int(path_id)]))


def mean_ci(samples) -> Estimate:
    x = np.asarray(samples, dtype=float)
    if len(x) < 2:
        return Estimate(float(x.mean()), np.inf)
    return Estimate(float(np.mean(x)), float(Z95 * np.std(x, ddof=1) / np.sqrt(len(x))))


class _Sampler:
    """Inverse-CDF sampling for many rows at once through one searchsorted."""

    def __init__(self, rows):
        n = rows.shape[0]
        cdf = np.cumsum(rows, axis=1)
        cdf[:, -1] = 1.0
        self.n = n
        self.flat = (cdf + np.arange(n)[:, None]).ravel()

    def __call__(self, states, u):
        idx = np.searchsorted(self.flat, states + u, side="right")
        return np.clip(idx - states * self.n, 0, self.n - 1)


def _run_block(P, policy, values, fire_cost, path_ids, seed, start, n_steps, alphas, marks):
    m = len(path_ids)
    gens = [path_generator(seed, p) for p in path_ids]
    sampler = _Sampler(P.rows)
    mask = policy.impulse_mask
    post = policy.post_impulse
    dt = P.dt
    x = np.full(m, start, dtype=np.int64)
    total = np.zeros(m)
    count = np.zeros(m, dtype=np.int64)
    betas = np.exp(-np.asarray(alphas) * dt)
    deffs = np.array([delta_eff(a, dt) for a in alphas])
    disc = np.zeros((len(alphas), m))
    weight = np.ones(len(alphas))
    partial = {}
    ev_path, ev_step, ev_cum = [], [], []
    chunk = 4096
    buf = None
    for k in range(n_steps):
        j = k % chunk
        if j == 0:
            size = min(chunk, n_steps - k)
            buf = np.stack([g.random(size) for g in gens])
        fire = mask[x]
        if fire.any():
            c = fire_cost[x[fire]]
            total[fire] += c
            count[fire] += 1
            disc[:, fire] += weight[:, None] * c[None, :]
            ev_path.append(np.flatnonzero(fire))
            ev_step.append(np.full(int(fire.sum()), k))
            ev_cum.append(total[fire].copy())
        y = post[x]
        r = values[y] * dt
        total += r
        disc += (weight * deffs / dt)[:, None] * r[None, :]
        weight *= betas
        x = sampler(y, buf[:, j])
        if k + 1 in marks:
            partial[k + 1] = total / ((k + 1) * dt)
    events = (
        (np.concatenate(ev_path), np.concatenate(ev_step), np.concatenate(ev_cum))
        if ev_path
        else (np.zeros(0, int), np.zeros(0, int), np.zeros(0))
    )
    return total, count, disc, partial, events


def _cycles(events, n_paths):
    """Per-cycle (reward, duration in steps) from impulse events, path by path."""
    path, step, cum = events
    if len(path) == 0:
        return np.zeros(0), np.zeros(0)
    order = np.lexsort((step, path))
    path, step, cum = path[order], step[order], cum[order]
    first = np.ones(len(path), dtype=bool)
    first[1:] = path[1:] != path[:-1]
    prev_cum = np.where(first, 0.0, np.roll(cum, 1))
    prev_step = np.where(first, 0, np.roll(step, 1))
    return cum - prev_cum, (step - prev_step).astype(float)


def ratio_jackknife(rewards, durations) -> Estimate:
    """Ratio of sums with a delete-one-cycle jackknife half-width."""
    r = np.asarray(rewards, dtype=float)
    d = np.asarray(durations, dtype=float)
    n = len(r)
    R, D = r.sum(), d.sum()
    theta = R / D
    if n < 2:
        return Estimate(float(theta), np.inf)
    loo = (R - r) / (D - d)
    var = (n - 1) / n * np.sum((loo - loo.mean()) ** 2)
    return Estimate(float(theta), float(Z95 * np.sqrt(var)))


def simulate_paths(
    P: TransitionKernel,
    policy: ImpulsePolicy,
    f,
    cost: CostSpec,
    T,
    n_paths,
    seed,
    start,
    alphas=None,
    workers=None,
) -> SimulationReport:
    if T < 100 * P.dt:
        raise ValueError("horizon must cover at least 100 steps")
    if n_paths < 2:
        raise ValueError("need at least two paths")
    values = f.values if isinstance(f, RewardSpec) else np.asarray(f, dtype=float)
    n_steps = int(round(T / P.dt))
    T = n_steps * P.dt
    alphas = default_tauberian_alphas(T) if alphas is None else list(alphas)
    fire_cost = cost.c[np.arange(P.n), np.maximum(policy.target_map, 0)]
    marks = {max(1, n_steps // 4), max(1, n_steps // 2), n_steps}
    workers = worker_count() if workers is None else workers
    blocks = np.array_split(np.arange(n_paths), max(1, min(workers, n_paths)))

    def run(ids):
        return _run_block(P, policy, values, fire_cost, ids, seed, start, n_steps, alphas, marks)

    if len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(blocks[0])]
    total = np.concatenate([p[0] for p in parts])
    count = np.concatenate([p[1] for p in parts])
    disc = np.concatenate([p[2] for p in parts], axis=1)
    partial = {k * P.dt: float(np.mean(np.concatenate([p[3][k] for p in parts]))) for k in sorted(marks)}
    offs = np.cumsum([0] + [len(b) for b in blocks])
    ev = [
        (p[4][0] + off, p[4][1], p[4][2]) for p, off in zip(parts, offs[:-1])
    ]
    events = tuple(np.concatenate([e[i] for e in ev]) for i in range(3))
    rewards, durations = _cycles(events, n_paths)
    durations = durations * P.dt
    j_hat = ratio_jackknife(rewards, durations) if len(rewards) else None
    avg = total / T
    per_alpha = {a: mean_ci(a * disc[i]) for i, a in enumerate(alphas)}
    return SimulationReport(
        n_paths=n_paths,
        horizon_T=T,
        j_estimate=mean_ci(avg),
        j_hat_estimate=j_hat,
        impulse_rate=mean_ci(count / T),
        per_path_discounted=per_alpha,
        seed=int(seed),
        start=int(start),
        partial_averages=partial,
        path_average=avg,
        path_impulses=count,
        path_discounted={a: a * disc[i] for i, a in enumerate(alphas)},
        cycle_rewards=rewards,
        cycle_durations=durations,
    )


def default_tauberian_alphas(T):
    # alpha*T >= 40 keeps the discounted weight beyond the horizon below e^-40
    return [160.0 / T, 80.0 / T, 40.0 / T]


def estimate_j_hat(report: SimulationReport) -> Estimate:
    if report.cycle_rewards is None or len(report.cycle_rewards) == 0:
        raise ErgImpError("horizon too short: no completed impulse cycle")
    return ratio_jackknife(report.cycle_rewards, report.cycle_durations)


def tauberian_check(report: SimulationReport, alphas=None) -> BoundReport:
    """Finite-horizon average versus the smallest alpha-scaled discounted sum, paired by path."""
    alphas = sorted(report.path_discounted) if alphas is None else alphas
    rhs = {a: float(np.mean(report.path_discounted[a])) for a in alphas}
    a_star = min(rhs, key=rhs.get)
    diff = report.path_average - report.path_discounted[a_star]
    est = mean_ci(diff)
    out = BoundReport()
    out.add("tauberian", np.array([2.0 * est.half_width - est.value]), 0.0, note=f"alpha={a_star:.3g}")
    return out


def impulse_count_check(report: SimulationReport, cost: CostSpec, f, eps=1e-6, eps_optimal=True) -> BoundReport:
    out = BoundReport()
    if not eps_optimal:
        out.skip("strbound_mc", "not applicable: policy not eps-optimal")
        return out
    fn = f.sup_norm if isinstance(f, RewardSpec) else float(np.max(np.abs(f)))
    bound = (fn + eps) / (-cost.c_max)
    rate, hw = report.impulse_rate
    out.add("strbound_mc", np.array([bound + hw - rate]), 0.0, note=f"rate={rate:.4g} bound={bound:.4g}")
    return out


def start_independence(rep_a: SimulationReport, rep_b: SimulationReport) -> BoundReport:
    (a, ha), (b, hb) = rep_a.j_estimate, rep_b.j_estimate
    out = BoundReport()
    out.add("start_independence", np.array([3.0 * np.hypot(ha, hb) - abs(a - b)]), 0.0)
    return out
