"""Run configuration: JSON document validated against the shipped schema."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .chain import StateGrid, build_grid, build_ou_kernel
from .errors import ConfigError, ErgImpError
from .io import matrix_from_csv, read_kernel, vector_from_csv
from .models import Instance, builtin_reward, separated_default
from .potentials import RewardSpec, default_alpha_schedule
from .qvi_discounted import CostSpec, constant_cost, proportional_cost, separated_cost

BUILTIN_PREFIX = "builtin:"


@dataclass(frozen=True)
class Tolerances:
    qvi: float = 1e-10
    ergodic: float = 1e-10
    regime: float | None = None
    bound: float = 1e-8


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    base_dir: Path
    name: str = "run"
    seed: int = 20240611
    horizon: float = 1000.0
    n_paths: int = 100
    tolerances: Tolerances = field(default_factory=Tolerances)
    N_ladder: list | None = None
    delta_ladder: list | None = None
    eta_level: float | None = None

    def with_seed(self, seed):
        if seed is None:
            return self
        raw = dict(self.raw, seed=int(seed))
        return parse_config(raw, self.base_dir)


def schema() -> dict:
    return json.loads(resources.files("ergimp").joinpath("config.schema.json").read_text())


def builtin_config_names():
    return sorted(
        p.name[:-5] for p in resources.files("ergimp").joinpath("configs").iterdir() if p.name.endswith(".json")
    )


def load_config(spec: str) -> RunConfig:
    """Read a config from a path, or from a packaged one named ``builtin:NAME``."""
    if spec.startswith(BUILTIN_PREFIX):
        name = spec[len(BUILTIN_PREFIX):]
        if name not in builtin_config_names():
            raise ConfigError(f"unknown builtin config {name!r}; choose from {builtin_config_names()}")
        node = resources.files("ergimp").joinpath("configs", f"{name}.json")
        with resources.as_file(node) as path:
            return load_config(str(path))
    path = Path(spec)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw, path.parent.resolve())


def parse_config(raw: dict, base_dir) -> RunConfig:
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    tol = Tolerances(**raw.get("tolerances", {}))
    trunc = raw.get("truncation", {})
    cfg = RunConfig(
        raw=raw,
        base_dir=Path(base_dir),
        name=raw.get("name", "run"),
        seed=int(raw.get("seed", 20240611)),
        horizon=float(raw.get("horizon", 1000.0)),
        n_paths=int(raw.get("n_paths", 100)),
        tolerances=tol,
        N_ladder=trunc.get("N_ladder"),
        delta_ladder=trunc.get("delta_ladder"),
        eta_level=trunc.get("eta_level"),
    )
    # build once so every precondition is checked before any solve
    build_instance(cfg)
    return cfg


def _resolve(cfg: RunConfig, rel) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else cfg.base_dir / p


def _grid_for_custom(cfg, n):
    model = cfg.raw["model"]
    g = cfg.raw.get("grid", {})
    points = np.asarray(model.get("points", np.arange(n)), dtype=float)
    if len(points) != n:
        raise ConfigError("model.points length differs from the kernel size")
    lo, hi = g.get("u_range", [points[0], points[0]])
    z = g.get("z", lo)
    u = np.flatnonzero((points >= lo - 1e-12) & (points <= hi + 1e-12))
    if len(u) == 0:
        raise ConfigError("U not resolvable at this resolution")
    z_index = int(np.argmin(np.abs(points - z)))
    return StateGrid(points, u, z_index)


def _build(cfg: RunConfig) -> Instance:
    raw = cfg.raw
    model = raw["model"]
    if model["type"] == "ou":
        g = raw.get("grid")
        if g is None or "dt" not in raw:
            raise ConfigError("ou model needs grid and dt")
        missing = {"x_min", "x_max", "n", "u_range", "z"} - set(g)
        if missing:
            raise ConfigError(f"grid misses {sorted(missing)}")
        grid = build_grid(g["x_min"], g["x_max"], g["n"], tuple(g["u_range"]), g["z"])
        P = build_ou_kernel(grid, model["theta"], model["sigma"], raw["dt"])
    else:
        P = read_kernel(_resolve(cfg, model["kernel_file"]))
        if "dt" in raw and abs(raw["dt"] - P.dt) > 1e-15 * max(1.0, P.dt):
            raise ConfigError("dt in config disagrees with the kernel file")
        grid = _grid_for_custom(cfg, P.n)
    rw = raw["reward"]
    if "values" in rw:
        f = RewardSpec(rw["values"])
    else:
        params = {k: v for k, v in rw.items() if k != "builtin"}
        f = builtin_reward(rw["builtin"], grid.points, grid.z, **params)
    if len(f.values) != grid.n:
        raise ConfigError(f"reward has {len(f.values)} entries for {grid.n} states")
    cost = _build_cost(cfg, grid)
    return Instance(cfg.name, grid, P, f, cost)


def _build_cost(cfg: RunConfig, grid: StateGrid) -> CostSpec:
    c = cfg.raw["cost"]
    kind = c["type"]
    if kind == "constant":
        return constant_cost(grid, c["K0"])
    if kind == "proportional":
        return proportional_cost(grid, c["K0"], c["kappa1"])
    if kind == "separated":
        if c.get("d_builtin") == "default":
            return separated_default(grid)
        d = np.asarray(c["d"]) if "d" in c else vector_from_csv(_resolve(cfg, c["d_file"])) if "d_file" in c else None
        e = np.asarray(c["e"]) if "e" in c else vector_from_csv(_resolve(cfg, c["e_file"])) if "e_file" in c else None
        if d is None or e is None:
            raise ConfigError("separated cost needs d and e")
        if len(d) != grid.n or len(e) != len(grid.u_indices):
            raise ConfigError("separated cost: d needs n entries and e needs |U| entries")
        return separated_cost(grid, d, e)
    mat = matrix_from_csv(_resolve(cfg, c["file"]))
    return CostSpec(mat, grid.u_indices, grid.z_index)


def build_instance(cfg: RunConfig) -> Instance:
    try:
        return _build(cfg)
    except ConfigError:
        raise
    except (ErgImpError, ValueError, KeyError) as exc:
        raise ConfigError(f"{type(exc).__name__}: {exc}") from exc


def alpha_schedule(cfg: RunConfig, dt) -> list:
    a = cfg.raw.get("alpha_schedule")
    if isinstance(a, list):
        return [float(x) for x in a]
    a = a or {}
    return default_alpha_schedule(dt, a.get("n_terms", 12), a.get("ratio", 0.5), a.get("alpha0"))
