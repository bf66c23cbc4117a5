"""Truncated-reward values, Assumption (C) ratios and sandwich slacks along an N ladder."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from _common import parse_config, write_json
from ergimp.models import builtin_instances
from ergimp.truncation import default_N_ladder, truncation_study


@dataclass
class LadderConfig:
    instance: str = "ou_default"
    n_rungs: int = 8
    deltas: list = field(default_factory=lambda: [0.125, 0.25, 0.375])
    out: str = "results/truncation"


def run(cfg: LadderConfig):
    inst = builtin_instances()[cfg.instance]
    ladder = default_N_ladder(inst.grid, cfg.n_rungs)
    rep = truncation_study(inst.P, inst.grid, inst.f, inst.cost, ladder, cfg.deltas)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    Path(cfg.out, f"{cfg.instance}.csv").write_text(rep.csv())
    write_json(f"{cfg.out}/{cfg.instance}.json", {"config": asdict(cfg), "report": rep.to_dict()})
    ratios = rep.ladder("assumption_C_ratio")
    gaps = np.abs(np.array(rep.ladder("lambda_bar_Nc")) - rep.lambda_bar)
    for N, r, g in zip(ladder, ratios, gaps):
        print(f"N={N:6.3f} ratio_C={r:.3e} |lambda_N - lambda|={g:.2e}")
    print(f"min sandwich slack {min(min(r.sandwich) for r in rep.rows):.3e}")


if __name__ == "__main__":
    run(parse_config(LadderConfig, __doc__))
