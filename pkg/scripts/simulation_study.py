"""Monte Carlo J and J_hat for probe policies, with the Tauberian and dominance checks."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

from _common import parse_config, write_json, write_rows
from ergimp.models import builtin_instances
from ergimp.simulate import simulate_paths, tauberian_check
from ergimp.suite import probe_policies, solve_instance


@dataclass
class SimulationConfig:
    instances: list = field(default_factory=lambda: ["ts1", "ou_default", "ou_separated", "ou_constant"])
    horizon: float = 2000.0
    n_paths: int = 100
    seed: int = 20240611
    workers: int = 0
    out: str = "results/simulation"


def run(cfg: SimulationConfig):
    rows = []
    all_inst = builtin_instances()
    for name in cfg.instances:
        inst = all_inst[name]
        s = solve_instance(inst)
        lam = s.bisection.lam
        for pname, pol in probe_policies(inst, s.bisection).items():
            rep = simulate_paths(
                inst.P, pol, inst.f, inst.cost, cfg.horizon, cfg.n_paths, cfg.seed, inst.cost.z_index,
                workers=cfg.workers or None,
            )
            j, hw = rep.j_estimate
            jh, hwh = rep.j_hat_estimate if rep.j_hat_estimate is not None else (float("nan"), float("nan"))
            taub = tauberian_check(rep)["tauberian"]
            rate, _ = rep.impulse_rate
            rows.append([name, pname, lam, j, hw, jh, hwh, rate, taub.status, "PASS" if j <= lam + 3 * hw else "FAIL"])
            print(f"{name:13s} {pname:10s} lambda {lam:.5f} J {j:.5f}+/-{hw:.1e} tauberian {taub.status}")
    header = ["instance", "policy", "lambda", "J", "J_hw", "J_hat", "J_hat_hw", "impulse_rate", "tauberian", "dominance"]
    write_rows(f"{cfg.out}/probe_policies.csv", header, rows)
    write_json(f"{cfg.out}/config.json", asdict(cfg))


if __name__ == "__main__":
    run(parse_config(SimulationConfig, __doc__))
