"""Centred potentials of the running reward and their resolvents.

The continuous-time integral over a step of length dt is replaced by a
piecewise-constant path: a step started at time k*dt carries weight
exp(-alpha*k*dt) * delta_eff(alpha, dt), which tends to dt as alpha -> 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import TransitionKernel
from .errors import SingularSystemError


@dataclass(frozen=True)
class RewardSpec:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("reward values must be a finite 1-d array")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def shifted(self, k) -> "RewardSpec":
        return RewardSpec(self.values + k)


@dataclass
class PotentialTable:
    mu_f: float
    alphas: list
    q_alpha: dict = field(default_factory=dict)
    q: np.ndarray = None


def delta_eff(alpha, dt):
    """Discounted length of one step; equals dt at alpha = 0."""
    if alpha == 0:
        return dt
    return -np.expm1(-alpha * dt) / alpha


def step_discount(alpha, dt):
    return np.exp(-alpha * dt)


def default_alpha_schedule(dt, n_terms=12, ratio=0.5, alpha0=None):
    a0 = 1.0 / (10.0 * dt) if alpha0 is None else alpha0
    return [a0 * ratio**k for k in range(n_terms)]


def mean_under_mu(mu, f) -> float:
    values = f.values if isinstance(f, RewardSpec) else np.asarray(f, dtype=float)
    return float(np.dot(mu, values))


def resolvent(P: TransitionKernel, f, alpha) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("resolvent needs alpha > 0")
    values = f.values if isinstance(f, RewardSpec) else np.asarray(f, dtype=float)
    beta = step_discount(alpha, P.dt)
    A = np.eye(P.n) - beta * P.rows
    return np.linalg.solve(A, values * delta_eff(alpha, P.dt))


def q_alpha(P: TransitionKernel, f, mu, alpha, cond_limit=1e12) -> np.ndarray:
    values = f.values if isinstance(f, RewardSpec) else np.asarray(f, dtype=float)
    centred = values - float(np.dot(mu, values))
    if alpha > 0:
        return resolvent(P, centred, alpha)
    # Poisson equation with the mean-zero normalisation (group-inverse solution)
    A = np.eye(P.n) - P.rows + np.outer(np.ones(P.n), mu)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularSystemError(f"Poisson system ill-conditioned (cond {cond:.2e})")
    return np.linalg.solve(A, centred * P.dt)


def potential_table(P, f, mu, alphas) -> PotentialTable:
    table = PotentialTable(mu_f=mean_under_mu(mu, f), alphas=list(alphas))
    for a in table.alphas:
        table.q_alpha[a] = q_alpha(P, f, mu, a)
    table.q = table.q_alpha[0.0] if 0.0 in table.q_alpha else q_alpha(P, f, mu, 0.0)
    return table


def check_dynkin(q, P: TransitionKernel, f, mu_f, k) -> float:
    """Sup-norm defect of q = sum_{j<k} P^j (f - mu(f)) dt + P^k q."""
    values = f.values if isinstance(f, RewardSpec) else np.asarray(f, dtype=float)
    centred = (values - mu_f) * P.dt
    acc = np.zeros(P.n)
    term = centred.copy()
    Pk_q = np.asarray(q, dtype=float).copy()
    for _ in range(k):
        acc += term
        term = P.rows @ term
        Pk_q = P.rows @ Pk_q
    return float(np.max(np.abs(q - acc - Pk_q)))


def q_negative_part_sup(table: PotentialTable) -> float:
    worst = 0.0
    arrays = list(table.q_alpha.values())
    if table.q is not None:
        arrays.append(table.q)
    for arr in arrays:
        worst = max(worst, float(np.max(np.maximum(-arr, 0.0))))
    return worst


def certified_potential_bound(profile, f) -> np.ndarray:
    """Per-state scale K(x) * ||f|| * int h reported alongside |q_alpha|."""
    norm = f.sup_norm if isinstance(f, RewardSpec) else float(np.max(np.abs(f)))
    return profile.fitted_scale * norm * profile.h_integral
