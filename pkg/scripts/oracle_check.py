"""Discounted and average-reward solvers against stationary-policy enumeration on small chains."""
from __future__ import annotations

import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from _common import parse_config, write_json  # noqa: E402
from ergimp.qvi_discounted import solve_discounted_qvi  # noqa: E402
from ergimp.qvi_ergodic import solve_ergodic_qvi_bisection  # noqa: E402
from oracles import best_average, best_discounted, random_instance  # noqa: E402


@dataclass
class OracleConfig:
    n_instances: int = 200
    n_max: int = 3
    u_max: int = 2
    seed: int = 1
    out: str = "results/oracle"


def run(cfg: OracleConfig):
    rng = np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    disc, erg = [], []
    for _ in range(cfg.n_instances):
        _, P, f, cost = random_instance(rng, cfg.n_max, cfg.u_max)
        a = float(rng.uniform(0.02, 1.0))
        v = solve_discounted_qvi(P, f, cost, a).v
        disc.append(float(np.max(np.abs(v - best_discounted(P.rows, P.dt, f.values, cost.c, cost.u_indices, a)))))
        lam = solve_ergodic_qvi_bisection(P, f, cost).lam
        erg.append(abs(lam - best_average(P.rows, P.dt, f.values, cost.c, cost.u_indices)))
    result = {"max_discounted_gap": max(disc), "max_average_gap": max(erg), "seconds": time.perf_counter() - t0}
    print(result)
    write_json(f"{cfg.out}/summary.json", {"config": asdict(cfg), "result": result})


if __name__ == "__main__":
    run(parse_config(OracleConfig, __doc__))
