"""Command-line runner.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .boundary import (
    BoundaryState,
    boundary_consistency,
    dtn,
    dtn_discrete,
    evolve_W,
    evolve_W_duhamel,
    evolve_W_loglaplace,
    harmonic_extension,
    mc_boundary_duality,
)
from .config import (
    ConfigError,
    build_f,
    build_grid,
    build_mechanism,
    build_mu0,
    build_problem,
    build_sim,
    load_config,
)
from .mechanism import check_admissible, steklov_gamma, steklov_gamma_exact
from .pde import InadmissibleMechanism, SolverError, evolve_cl, evolve_iteration
from .pdmp import mc_log_laplace
from .properties import run_property_suite
from .verification import json_safe, verify_boundary, verify_interior

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("neumann_superprocess")


class VerificationFailed(RuntimeError):
    pass


def build_id() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        rev = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+{rev}" if rev else __version__


def _emit(out_dir: Path, name: str, record: dict, cfg: dict) -> dict:
    record = json_safe({**record, "command": name, "build_id": build_id(),
                        "master_seed": cfg["simulation"]["master_seed"], "config": cfg})
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    (out_dir / "config.resolved.json").write_text(json.dumps(json_safe(cfg), indent=2, sort_keys=True))
    with (out_dir / "runs.jsonl").open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(json.dumps({k: v for k, v in record.items() if k != "config"}, sort_keys=True))
    return record


def cmd_solve(cfg: dict, out: Path) -> dict:
    p = build_problem(cfg)
    f = build_f(cfg, p.grid)
    t = float(cfg["t"])
    d = cfg["discretization"]
    cl = evolve_cl(p, f, t, int(d["n_steps"]))
    it = evolve_iteration(p, f, t, dt=float(d["dt"]))
    out.mkdir(parents=True, exist_ok=True)
    cl.to_files(out / "V_crandall_liggett.csv")
    it.to_files(out / "V_iteration.csv")
    gap = float(np.max(np.abs(cl.u.values - it.u.values)))
    return _emit(out, "solve", {"t": t, "scheme_gap_max": gap, "crandall_liggett": cl.sidecar(),
                                "iteration": it.sidecar(), "flags": list(cl.flags + it.flags)}, cfg)


def cmd_simulate(cfg: dict, out: Path) -> dict:
    p = build_problem(cfg)
    sim = build_sim(cfg)
    res = mc_log_laplace(p, build_mu0(cfg, p.grid), build_f(cfg, p.grid), sim.t_end, sim)
    out.mkdir(parents=True, exist_ok=True)
    res.append_csv(out / "runs.csv", sim.t_end)
    return _emit(out, "simulate", json.loads(res.to_json()), cfg)


def cmd_boundary(cfg: dict, out: Path, action: str) -> dict:
    pr = cfg["problem"]
    alpha = float(pr["alpha"])
    mech = build_mechanism(pr["mechanism"])
    op = dtn(alpha)
    f = np.array(cfg["input"]["f_boundary"], dtype=float)
    t = float(cfg["t"])
    if action == "dtn":
        disc = dtn_discrete(alpha, int(cfg["discretization"]["n_grid"]))
        rec = {"alpha": alpha, "closed_form": op.matrix, "discrete": disc.matrix,
               "max_difference": float(np.max(np.abs(op.matrix - disc.matrix)))}
    elif action == "evolve-w":
        n = int(cfg["discretization"]["n_steps"])
        dt = float(cfg["discretization"]["dt"])
        rec = {"t": t, "f": f, "exponential_formula": evolve_W(op, mech, f, t, n),
               "duhamel": evolve_W_duhamel(op, mech, f, t, dt),
               "log_laplace": evolve_W_loglaplace(op, mech, f, t, dt)}
    elif action == "superprocess":
        sim = build_sim(cfg)
        res = mc_boundary_duality(op, mech, BoundaryState(tuple(cfg["input"]["m0"])), f, sim.t_end, sim)
        out.mkdir(parents=True, exist_ok=True)
        res.append_csv(out / "runs.csv", sim.t_end)
        rec = json.loads(res.to_json())
    elif action == "consistency":
        p = build_problem(cfg)
        mu = build_mu0(cfg, p.grid)
        if mu.atoms:
            raise ConfigError("consistency needs input.mu0 = { density = \"...\" } or a density file")
        u = harmonic_extension(op, f, p.grid)
        rec = {"residual": boundary_consistency(p, u, mu), "f_boundary": f}
    else:
        raise ConfigError(f"unknown boundary action {action!r}")
    return _emit(out, f"boundary-{action}", rec, cfg)


def cmd_verify_duality(cfg: dict, out: Path) -> dict:
    p = build_problem(cfg)
    sim = build_sim(cfg)
    tol = cfg["tolerance"]
    n_steps = int(cfg["discretization"]["n_steps"])
    if cfg["experiment"] == "interior":
        rep = verify_interior(p, build_mu0(cfg, p.grid), build_f(cfg, p.grid), sim.t_end, n_steps,
                              sim, tol["rel_tol"], tol["abs_floor"])
    else:
        rep = verify_boundary(p, cfg["input"]["m0"], cfg["input"]["f_boundary"], sim.t_end,
                              n_steps, sim, tol["rel_tol"], tol["abs_floor_boundary"])
    rec = _emit(out, "verify-duality", rep.to_dict(), cfg)
    if not rep.passed:
        raise VerificationFailed(f"{rep.experiment} duality: |Δ| = {abs(rep.delta):.4g} "
                                 f"> {rep.allowance:.4g}")
    return rec


def cmd_property_suite(cfg: dict, out: Path, trials: int) -> dict:
    seed = int(cfg["simulation"]["master_seed"])
    results = run_property_suite(trials, seed)
    rec = _emit(out, "properties", {"trials": trials, "seed": seed,
                                    "results": {k: v.to_dict() for k, v in results.items()}}, cfg)
    failed = [k for k, v in results.items() if not v.passed]
    if failed:
        raise VerificationFailed(f"property violations in {failed}")
    return rec


def cmd_gamma(cfg: dict, out: Path, alpha: float | None) -> dict:
    a = float(cfg["problem"]["alpha"] if alpha is None else alpha)
    if not a > 0:
        raise ConfigError("gamma needs alpha > 0")
    return _emit(out, "gamma", {"alpha": a, "gamma": steklov_gamma(a),
                                "gamma_closed_form": steklov_gamma_exact(a)}, cfg)


def cmd_mechanism_info(cfg: dict, out: Path) -> dict:
    mech = build_mechanism(cfg["problem"]["mechanism"])
    alpha = float(cfg["problem"]["alpha"])
    rep = check_admissible(mech, alpha)
    u = np.array([0.0, 0.5, 1.0, 2.0, 4.0])
    return _emit(out, "mechanism-info", {
        "n_atoms": len(mech.atoms), "b": mech.b, "total_mass": mech.total_mass,
        "lipschitz": mech.lipschitz, "gamma": rep.gamma, "admissible": rep.admissible,
        "monotone_shift": rep.monotone, "message": rep.message(),
        "beta_samples": dict(zip(map(str, u), mech.beta(u).tolist()))}, cfg)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neumann-superprocess",
                                 description="Nonlinear Neumann problem solver and branching-process simulator")
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="master seed (overrides simulation.master_seed)")
    common.add_argument("--threads", type=int, help="worker processes for Monte Carlo paths")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="V_t f by both deterministic schemes")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo log-Laplace estimate")
    b = sub.add_parser("boundary", parents=[common], help="boundary operator and process")
    b.add_argument("action", choices=["dtn", "evolve-w", "superprocess", "consistency"])
    sub.add_parser("verify-duality", parents=[common], help="deterministic vs Monte Carlo check")
    pr = sub.add_parser("properties", parents=[common], help="randomized property batteries")
    pr.add_argument("--trials", type=int, default=500)
    g = sub.add_parser("gamma", parents=[common], help="Steklov constant")
    g.add_argument("--alpha", type=float)
    sub.add_parser("mechanism-info", parents=[common], help="mechanism summary and admissibility")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"simulation.master_seed": args.seed,
                                        "simulation.threads": args.threads,
                                        "output_dir": str(args.out) if args.out else None})
        out = Path(cfg["output_dir"])
        if args.command == "solve":
            cmd_solve(cfg, out)
        elif args.command == "simulate":
            cmd_simulate(cfg, out)
        elif args.command == "boundary":
            cmd_boundary(cfg, out, args.action)
        elif args.command == "verify-duality":
            cmd_verify_duality(cfg, out)
        elif args.command == "properties":
            cmd_property_suite(cfg, out, args.trials)
        elif args.command == "gamma":
            cmd_gamma(cfg, out, args.alpha)
        elif args.command == "mechanism-info":
            cmd_mechanism_info(cfg, out)
    except (ConfigError, InadmissibleMechanism) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
