"""alpha * v_alpha(z) and w_alpha along a discount schedule, against the bisection solution."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from _common import parse_config, write_json, write_rows
from ergimp.models import builtin_instances
from ergimp.potentials import default_alpha_schedule
from ergimp.qvi_ergodic import discounted_sweep, linear_extrapolate, solve_ergodic_qvi_bisection


@dataclass
class SweepConfig:
    instances: list = field(default_factory=lambda: ["ts1", "ou_default", "ou_separated"])
    n_terms: int = 16
    ratio: float = 0.5
    n_fit: int = 4
    out: str = "results/vanishing_discount"


def run(cfg: SweepConfig):
    summary = {}
    all_inst = builtin_instances()
    for name in cfg.instances:
        inst = all_inst[name]
        alphas = default_alpha_schedule(inst.P.dt, cfg.n_terms, cfg.ratio)
        sols = discounted_sweep(inst.P, inst.f, inst.cost, alphas)
        z = inst.cost.z_index
        bis = solve_ergodic_qvi_bisection(inst.P, inst.f, inst.cost)
        seq = [a * s.v[z] for a, s in zip(alphas, sols)]
        rows = []
        for k, (a, s) in enumerate(zip(alphas, sols)):
            lam_k = linear_extrapolate(alphas[: k + 1], seq[: k + 1], cfg.n_fit) if k + 1 >= cfg.n_fit else np.nan
            w_gap = float(np.max(np.abs(s.w - bis.w)))
            rows.append([a, seq[k], float(lam_k), abs(seq[k] - bis.lam), w_gap, int(s.impulse_mask.sum())])
        write_rows(
            f"{cfg.out}/{name}.csv",
            ["alpha", "alpha_v_z", "lambda_extrapolated", "gap_raw", "w_gap", "n_impulse_states"],
            rows,
        )
        summary[name] = {"lambda_bisection": bis.lam, "lambda_extrapolated": rows[-1][2], "raw_gap": rows[-1][3]}
        print(f"{name}: bisection {bis.lam:.10f} extrapolated {rows[-1][2]:.10f} raw gap {rows[-1][3]:.2e}")
    write_json(f"{cfg.out}/summary.json", {"config": asdict(cfg), "results": summary})


if __name__ == "__main__":
    run(parse_config(SweepConfig, __doc__))
