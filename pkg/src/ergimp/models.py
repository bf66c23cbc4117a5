"""Built-in rewards and instances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import StateGrid, TransitionKernel, build_custom_kernel, build_grid, build_ou_kernel
from .potentials import RewardSpec
from .qvi_discounted import CostSpec, constant_cost, proportional_cost, separated_cost


@dataclass(frozen=True)
class Instance:
    name: str
    grid: StateGrid
    P: TransitionKernel
    f: RewardSpec
    cost: CostSpec


def bump(points, z=0.0, amplitude=5.0, scale=1.0):
    return amplitude / (1.0 + ((np.asarray(points) - z) / scale) ** 2)


BUILTIN_REWARDS = {
    "bump": bump,
    "unit_bump": lambda pts, z=0.0: bump(pts, z, 1.0, 1.0),
    "constant": lambda pts, z=0.0, level=1.0: np.full(len(pts), float(level)),
}


def builtin_reward(name, points, z=0.0, **params) -> RewardSpec:
    try:
        fn = BUILTIN_REWARDS[name]
    except KeyError:
        raise ValueError(f"unknown builtin reward {name!r}") from None
    return RewardSpec(fn(points, z, **params))


def ts1_grid() -> StateGrid:
    return StateGrid(np.array([0.0, 1.0]), np.array([0]), 0)


def ts1(k0=0.2) -> Instance:
    grid = ts1_grid()
    P = build_custom_kernel([[0.5, 0.5], [0.5, 0.5]], 1.0)
    return Instance("ts1" if k0 == 0.2 else f"ts1_k{k0:g}", grid, P, RewardSpec([1.0, 0.0]), constant_cost(grid, k0))


def ou_grid_kernel(theta=1.0, sigma=1.0, x_min=-6.0, x_max=6.0, n=241, u_range=(-1.0, 1.0), z=0.0, dt=0.1):
    grid = build_grid(x_min, x_max, n, u_range, z)
    return grid, build_ou_kernel(grid, theta, sigma, dt)


def separated_default(grid: StateGrid) -> CostSpec:
    d = -0.5 - 0.5 * np.abs(grid.points - grid.z)
    e = -0.25 * np.abs(grid.u_points - grid.z)
    return separated_cost(grid, d, e)


def builtin_instances() -> dict:
    grid, P = ou_grid_kernel()
    prop = proportional_cost(grid, 0.5, 0.5)
    f_active = builtin_reward("bump", grid.points, grid.z)
    return {
        "ts1": ts1(0.2),
        "ts1_expensive": ts1(2.0),
        "ou_default": Instance("ou_default", grid, P, f_active, prop),
        "ou_separated": Instance("ou_separated", grid, P, f_active, separated_default(grid)),
        "ou_unit_bump": Instance("ou_unit_bump", grid, P, builtin_reward("unit_bump", grid.points, grid.z), prop),
        "ou_constant": Instance("ou_constant", grid, P, builtin_reward("constant", grid.points, grid.z), prop),
    }
