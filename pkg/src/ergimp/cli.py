"""Command line: ergimp {solve,verify,simulate,truncate,report}.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numeric failure. Errors are echoed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, alpha_schedule, build_instance, load_config
from .errors import ConfigError, ErgImpError
from .io import dumps_json, kernel_to_csv, solution_from_csv, solution_to_csv, write_json, atomic_write, fmt
from .qvi_ergodic import ACTIVE
from .simulate import estimate_j_hat, impulse_count_check, simulate_paths, tauberian_check
from .strategy import ImpulsePolicy, export_policy_csv, extract_policy
from .suite import solution_from_values, solve_instance, verify_suite
from .truncation import truncation_study

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class _Ctx:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.quiet = args.quiet

    def say(self, text):
        if not self.quiet:
            print(text)


def _config(ctx) -> RunConfig:
    cfg = load_config(ctx.args.config)
    return cfg.with_seed(ctx.args.seed)


def _solve(cfg):
    inst = build_instance(cfg)
    tol = cfg.tolerances
    solved = solve_instance(inst, alpha_schedule(cfg, inst.P.dt), tol=tol.ergodic, tol_regime=tol.regime)
    return inst, solved


def _potentials_csv(solved) -> str:
    alphas = solved.table.alphas
    head = "state,q," + ",".join(f"q_alpha@{a!r}" for a in alphas)
    lines = [head]
    for i in range(len(solved.table.q)):
        cols = [fmt(solved.table.q[i])] + [fmt(solved.table.q_alpha[a][i]) for a in alphas]
        lines.append(f"{i}," + ",".join(cols))
    return "\n".join(lines) + "\n"


def cmd_solve(ctx) -> int:
    cfg = _config(ctx)
    inst, solved = _solve(cfg)
    sol = solved.bisection
    tgt = np.where(sol.impulse_mask, sol.target_states, -1)
    header = {
        "name": cfg.name,
        "lambda": sol.lam,
        "lambda_vanishing": solved.vanishing.lam,
        "mu_f": solved.mu_f,
        "method": sol.method,
        "regime": sol.regime,
        "residuals": {
            "bellman": sol.residual,
            "lambda_gap_vd": abs(sol.lam - solved.vanishing.lam),
            "w_gap_vd": float(np.max(np.abs(sol.w - solved.vanishing.w))),
        },
        "n_states": inst.P.n,
        "dt": inst.P.dt,
        "n_impulse_states": int(sol.impulse_mask.sum()),
    }
    files = {
        "solution.csv": solution_to_csv(sol.w, sol.Mw, sol.impulse_mask, tgt),
        "solution.json": dumps_json(header),
        "potentials.csv": _potentials_csv(solved),
        "kernel.csv": kernel_to_csv(inst.P),
    }
    if sol.regime == ACTIVE:
        files["policy.csv"] = export_policy_csv(extract_policy(sol))
    for name, text in files.items():
        atomic_write(ctx.out / name, text)
    ctx.say(f"lambda = {sol.lam:.10f} regime = {sol.regime}")
    return EXIT_OK


def _load_solution(ctx, inst, solved):
    csv_path, json_path = ctx.out / "solution.csv", ctx.out / "solution.json"
    if not (csv_path.exists() and json_path.exists()):
        return None
    try:
        w, _, mask, _ = solution_from_csv(csv_path.read_text())
        lam = float(json.loads(json_path.read_text())["lambda"])
    except (ValueError, KeyError, IndexError, json.JSONDecodeError) as exc:
        raise ConfigError(f"unreadable solution files: {exc}") from exc
    if len(w) != inst.P.n:
        raise ConfigError("stored solution does not match the configured state space")
    return solution_from_values(inst, w, lam, solved.mu_f, mask)


def cmd_verify(ctx) -> int:
    cfg = _config(ctx)
    inst, solved = _solve(cfg)
    sol = _load_solution(ctx, inst, solved)
    rep = verify_suite(
        inst,
        solved,
        sol,
        seed=cfg.seed,
        horizon=cfg.horizon,
        n_paths=cfg.n_paths,
        bound_tol=cfg.tolerances.bound,
        N_ladder=cfg.N_ladder,
        delta_ladder=cfg.delta_ladder,
        eta_level=cfg.eta_level,
    )
    for line in rep.lines():
        ctx.say(line)
    write_json(ctx.out / "verify.json", {"name": cfg.name, "ok": rep.ok, "checks": rep.to_dict()})
    return EXIT_OK if rep.ok else EXIT_VERIFY


def cmd_simulate(ctx) -> int:
    cfg = _config(ctx)
    inst, solved = _solve(cfg)
    sol = solved.bisection
    pol = extract_policy(sol) if sol.regime == ACTIVE else ImpulsePolicy.never(inst.P.n, inst.cost.u_indices)
    rep = simulate_paths(inst.P, pol, inst.f, inst.cost, cfg.horizon, cfg.n_paths, cfg.seed, inst.cost.z_index)
    out = rep.to_dict()
    out["lambda"] = sol.lam
    out["checks"] = tauberian_check(rep).to_dict()
    out["checks"].update(impulse_count_check(rep, inst.cost, inst.f).to_dict())
    if rep.j_hat_estimate is not None:
        out["j_hat_estimate"] = list(estimate_j_hat(rep))
    write_json(ctx.out / "simulation.json", out)
    atomic_write(ctx.out / "paths.csv", rep.path_csv())
    j, hw = rep.j_estimate
    ctx.say(f"j_estimate = {j:.6f} +/- {hw:.6f} lambda = {sol.lam:.6f}")
    return EXIT_OK


def cmd_truncate(ctx) -> int:
    cfg = _config(ctx)
    inst, solved = _solve(cfg)
    rep = truncation_study(
        inst.P,
        inst.grid,
        inst.f,
        inst.cost,
        cfg.N_ladder,
        cfg.delta_ladder,
        cfg.eta_level,
        lambda_bar=solved.bisection.lam,
        tol=cfg.tolerances.ergodic,
    )
    atomic_write(ctx.out / "truncation.csv", rep.csv())
    write_json(ctx.out / "truncation.json", rep.to_dict())
    for r in rep.rows:
        ctx.say(f"N={r.N:.4g} delta={r.delta:.4g} ratio_C={r.assumption_C_ratio:.3e} slacks=({r.slack_lo:.3e}, {r.slack_hi:.3e})")
    return EXIT_OK


def cmd_report(ctx) -> int:
    if not ctx.out.is_dir():
        raise ConfigError(f"output directory {ctx.out} does not exist")
    merged = {}
    for name in ("solution", "verify", "simulation", "truncation"):
        p = ctx.out / f"{name}.json"
        if p.exists():
            merged[name] = json.loads(p.read_text())
    if not merged:
        raise ConfigError("no result files to report on")
    write_json(ctx.out / "report.json", merged)
    if "solution" in merged:
        s = merged["solution"]
        ctx.say(f"lambda = {s['lambda']:.10f} regime = {s['regime']}")
    if "verify" in merged:
        ctx.say(f"verify ok = {merged['verify']['ok']}")
    if "simulation" in merged:
        ctx.say(f"j_estimate = {merged['simulation']['j_estimate']}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "truncate": cmd_truncate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergimp", description="Ergodic impulse control solver and checks.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", default=None, help="JSON config path, or builtin:NAME")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--quiet", action="store_true")
    return p


def _fail(code, exc):
    sys.stderr.write(
        json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}, sort_keys=True) + "\n"
    )
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    ctx = _Ctx(args)
    if args.command != "report" and args.config is None:
        return _fail(EXIT_CONFIG, ConfigError("--config is required"))
    try:
        return COMMANDS[args.command](ctx)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (ErgImpError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        return _fail(EXIT_NUMERIC, exc)


if __name__ == "__main__":
    sys.exit(main())
