"""Command-line orchestration.

    mfg <subcommand> --config <path> [--out <dir>] [--threads N]
                     [--seed S] [--force]

Subcommands: validate, solve-hje, solve-fpe, solve-mfg, mc-validate,
geometry, report. Exit codes: 0 success, 2 invariant or assumption
violation, 3 solver did not converge.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from . import __version__
from .cc_metric import CCMetricApprox, ball_volume_dimension, cc_distance
from .config import RunConfig, validate
from .coupling import eval_F, eval_G
from .errors import (AssumptionViolated, CflViolated, GrushinMfgError,
                     NegativeDensity, NotConverged, NotNormalized,
                     OrderViolated, PositivityLost, SolverDiverged)
from .fpe import solve_fpe
from .grid import dump_field_binary, dump_field_csv
from .hje import solve_hje_hopf
from .measures import MeasurePath, second_moment, time_holder_ratio, d1
from .mfg import psi_map, solve_mfg, uniqueness_certificate
from .particles import empirical_cost, simulate_sde
from .vector_fields import hormander_index

_INVARIANT_ERRORS = (AssumptionViolated, CflViolated, NegativeDensity,
                     NotNormalized, OrderViolated, PositivityLost)
_CONVERGENCE_ERRORS = (NotConverged, SolverDiverged)


def _apply_threads(n):
    if n is None:
        return
    os.environ.setdefault("OMP_NUM_THREADS", str(n))
    os.environ.setdefault("OPENBLAS_NUM_THREADS", str(n))
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        pass


def _out_dir(args, config):
    out = args.out or config.out_dir or os.environ.get("MFG_OUT_DIR", "mfg_out")
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(outdir, name, payload):
    path = os.path.join(outdir, name)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _report_skeleton(config):
    return {"config_hash": config.config_hash,
            "timestamp": datetime.datetime.now(datetime.timezone.utc)
            .isoformat(timespec="seconds"),
            "version": __version__}


def _dump_time_field(outdir, name, grid, values, formats):
    if "csv" in formats:
        dump_field_csv(os.path.join(outdir, f"{name}.csv"), grid, values)
    if "binary" in formats:
        dump_field_binary(os.path.join(outdir, f"{name}.bin"), grid, values)


def _validated(config, force):
    rep = validate(config)
    if not rep.ok:
        rep.raise_on_failure()
    if rep.warnings and not force:
        for w in rep.warnings:
            print(f"warning [{w['assumption']}]: {w['detail']}")
    return rep


def _frozen_coupling_fields(problem):
    """F, G evaluated on the initial measure held constant in time: the
    stand-alone solver subcommands run one map application."""
    grid = problem.grid
    dens = np.broadcast_to(problem.m0.weights,
                           (grid.nt + 1, grid.n1, grid.n2)).copy()
    mu = MeasurePath(grid, dens)
    F = np.stack([eval_F(problem.coupling, mu.slice(k))
                  for k in range(grid.nt + 1)])
    G = eval_G(problem.coupling, mu.slice(grid.nt))
    return F, G


def _cmd_validate(args, config):
    rep = validate(config)
    for e in rep.entries:
        extra = ", ".join(f"{k}={v}" for k, v in e["measured"].items())
        print(f"[{e['status']:4s}] {e['assumption']}: {e['detail']}"
              + (f"  ({extra})" if extra else ""))
    outdir = _out_dir(args, config)
    payload = _report_skeleton(config)
    payload["validation"] = rep.to_dict()
    _write_json(outdir, "validate.json", payload)
    return 0 if rep.ok else 2


def _cmd_solve_hje(args, config):
    _validated(config, args.force)
    problem = config.build_problem()
    F, G = _frozen_coupling_fields(problem)
    sol = solve_hje_hopf(problem.grid, problem.vf, F, G)
    outdir = _out_dir(args, config)
    for name, field in (("u", sol.u), ("w", sol.w),
                        ("alpha1", sol.alpha_star[0]),
                        ("alpha2", sol.alpha_star[1])):
        _dump_time_field(outdir, name, problem.grid, field, config.formats)
    payload = _report_skeleton(config)
    payload["hje"] = {"w_min": sol.diagnostics["w_min"],
                      "barrier": sol.diagnostics["barrier"],
                      "u_sup": sol.diagnostics["u_sup"],
                      "bound": sol.diagnostics["sup_bound"],
                      "positivity_margin": sol.diagnostics["positivity_margin"]}
    _write_json(outdir, "report.json", payload)
    print(f"u_sup={sol.diagnostics['u_sup']:.6g} "
          f"w_min={sol.diagnostics['w_min']:.6g}")
    return 0


def _cmd_solve_fpe(args, config):
    _validated(config, args.force)
    problem = config.build_problem()
    F, G = _frozen_coupling_fields(problem)
    hje = solve_hje_hopf(problem.grid, problem.vf, F, G)
    sol = solve_fpe(problem.grid, problem.vf, problem.m0, hje.grad_u,
                    eps=problem.eps)
    outdir = _out_dir(args, config)
    _dump_time_field(outdir, "m", problem.grid, sol.path.densities,
                     config.formats)
    moments = [second_moment(sol.path.slice(k))
               for k in range(problem.grid.nt + 1)]
    payload = _report_skeleton(config)
    payload["fpe"] = dict(sol.diagnostics)
    payload["measures"] = {
        "mass_error": sol.diagnostics["mass_error_max"],
        "second_moments": moments,
        "time_holder_ratio": time_holder_ratio(sol.path, mode="upper"),
        "time_holder_mode": "upper",
    }
    _write_json(outdir, "report.json", payload)
    print(f"mass_error={sol.diagnostics['mass_error_max']:.2e} "
          f"min_density={sol.diagnostics['min_density']:.2e}")
    return 0


def _cmd_solve_mfg(args, config):
    _validated(config, args.force)
    problem = config.build_problem()
    outdir = _out_dir(args, config)
    code = 0
    try:
        sol = solve_mfg(problem, raise_on_fail=True)
    except NotConverged as exc:
        sol = exc.solution
        code = 3
    moments = [second_moment(sol.m.slice(k)) for k in range(problem.grid.nt + 1)]
    payload = _report_skeleton(config)
    payload["mfg"] = {
        "converged": sol.converged,
        "iterations": sol.iterations,
        "gap_history": sol.diagnostics["gap_history"],
        "u_sup": sol.diagnostics["hje"]["u_sup"],
        "w_min_barrier_margin": sol.diagnostics["hje"]["positivity_margin"],
        "mass_error_max": sol.diagnostics["fpe"]["mass_error_max"],
        "holder_ratio": time_holder_ratio(sol.m, mode="upper"),
        "holder_mode": "upper",
        "second_moments": moments,
    }
    if args.uniqueness and sol.converged:
        alt = solve_mfg(problem, init="uniform")
        payload["mfg"]["uniqueness"] = uniqueness_certificate(sol, alt, problem)
    _dump_time_field(outdir, "u", problem.grid, sol.u, config.formats)
    _dump_time_field(outdir, "m", problem.grid, sol.m.densities, config.formats)
    _write_json(outdir, "report.json", payload)
    print(f"converged={sol.converged} iterations={sol.iterations}")
    return code


def _cmd_mc_validate(args, config):
    _validated(config, args.force)
    problem = config.build_problem()
    grid = problem.grid
    F, G = _frozen_coupling_fields(problem)
    hje = solve_hje_hopf(grid, problem.vf, F, G)
    pde = solve_fpe(grid, problem.vf, problem.m0, hje.grad_u, eps=problem.eps)
    run = simulate_sde(grid, problem.vf, problem.m0, hje.grad_u,
                       problem.n_particles, problem.seed, coupling_field=F)
    dump_idx = np.unique(np.linspace(0, grid.nt, 5, dtype=int))
    mode = "exact" if grid.n_cells <= 2500 else "entropic"
    gaps = [d1(run.measures[k], pde.path.slice(k), mode=mode)
            for k in dump_idx]
    scale = grid.L
    tol = 3.0 * max(max(grid.dx1, grid.dx2),
                    scale / np.sqrt(problem.n_particles))
    cost, stderr = empirical_cost(run, F, G, return_stderr=True)
    value = float(np.sum(hje.u[0] * problem.m0.weights) * grid.cell_area)
    outdir = _out_dir(args, config)
    with open(os.path.join(outdir, "trajectories.csv"), "w") as f:
        f.write("t,id,x1,x2\n")
        for k, t in enumerate(grid.times):
            for pid in range(run.trajectories.shape[1]):
                x = run.trajectories[k, pid]
                f.write(f"{t:.12g},{pid},{x[0]:.8g},{x[1]:.8g}\n")
    payload = _report_skeleton(config)
    payload["mc"] = {"N": problem.n_particles, "seed": problem.seed,
                     "d1_vs_pde": [float(g) for g in gaps],
                     "dump_times": [float(grid.times[k]) for k in dump_idx],
                     "tolerance": float(tol), "d1_mode": mode,
                     "empirical_cost": cost, "cost_stderr": stderr,
                     "value_at_m0": value}
    _write_json(outdir, "report.json", payload)
    worst = max(gaps)
    print(f"max d1(MC, PDE) = {worst:.4g} (tol {tol:.4g}); "
          f"cost {cost:.5g} vs value {value:.5g}")
    return 0 if worst <= tol else 2


def _cmd_geometry(args, config):
    _validated(config, args.force)
    grid = config.build_grid().spatial()
    vf = config.build_vf()
    metric = CCMetricApprox(grid, vf)
    L = grid.L
    payload = _report_skeleton(config)
    roots = []
    for r in vf.zero_set:
        gap = min((abs(o - r) for o in vf.zero_set if o != r), default=0.5)
        probe = min(0.25, 0.45 * gap)
        entry = {"root": float(r)}
        try:
            entry["hormander_index"] = hormander_index(vf, r, probe)
        except GrushinMfgError as exc:
            entry["hormander_index_error"] = str(exc)
        if abs(r) < 0.5 * L:
            radii = [0.1 * L, 0.2 * L, 0.4 * L]
            try:
                entry["ball_dimension_degenerate"] = ball_volume_dimension(
                    metric, (r, 0.0), radii)
            except GrushinMfgError as exc:
                entry["ball_dimension_error"] = str(exc)
            ladder = [0.01 * L, 0.04 * L, 0.16 * L]
            entry["cc_vertical_ladder"] = {
                "y2": ladder,
                "cc": [cc_distance(metric, (r, 0.0), (r, y)) for y in ladder]}
        roots.append(entry)
    payload["geometry"] = {"roots": roots}
    x_nd = 0.5 * L if not vf.zero_set else None
    for cand in np.linspace(-0.45 * L, 0.45 * L, 9):
        if all(abs(cand - r) > 0.2 * L for r in vf.zero_set):
            x_nd = float(cand)
            break
    if x_nd is not None:
        try:
            payload["geometry"]["ball_dimension_nondegenerate"] = \
                ball_volume_dimension(metric, (x_nd, 0.0),
                                      [0.05 * L, 0.1 * L, 0.2 * L])
            payload["geometry"]["nondegenerate_center"] = x_nd
        except GrushinMfgError as exc:
            payload["geometry"]["ball_dimension_error"] = str(exc)
    outdir = _out_dir(args, config)
    _write_json(outdir, "geometry.json", payload)
    print(json.dumps(payload["geometry"], indent=2))
    return 0


def _cmd_report(args, config):
    outdir = _out_dir(args, config)
    found = False
    for name in ("report.json", "validate.json", "geometry.json"):
        path = os.path.join(outdir, name)
        if os.path.exists(path):
            found = True
            with open(path) as f:
                doc = json.load(f)
            print(f"== {name} (config {doc.get('config_hash', '?')}, "
                  f"{doc.get('timestamp', '?')}) ==")
            for key, val in doc.items():
                if key in ("config_hash", "timestamp", "version"):
                    continue
                print(json.dumps({key: val}, indent=2, sort_keys=True))
    if not found:
        print(f"no reports under {outdir}", file=sys.stderr)
        return 1
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "solve-hje": _cmd_solve_hje,
    "solve-fpe": _cmd_solve_fpe,
    "solve-mfg": _cmd_solve_mfg,
    "mc-validate": _cmd_mc_validate,
    "geometry": _cmd_geometry,
    "report": _cmd_report,
}


def build_parser():
    p = argparse.ArgumentParser(
        prog="mfg",
        description="Degenerate mean field game solver suite")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None,
                        help="path to the JSON run configuration")
        sp.add_argument("--out", default=None, help="artifact directory")
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--force", action="store_true",
                        help="run despite validation warnings")
        if name == "solve-mfg":
            sp.add_argument("--uniqueness", action="store_true",
                            help="also solve from a uniform initialization "
                                 "and certify agreement")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_threads(args.threads)
    if args.command == "report" and args.config is None:
        config = RunConfig()
    else:
        if args.config is None:
            print("--config is required", file=sys.stderr)
            return 2
        try:
            config = RunConfig.load(args.config)
        except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
            print(f"cannot load config: {exc}", file=sys.stderr)
            return 2
    if args.seed is not None:
        config.seed = args.seed
    try:
        return _COMMANDS[args.command](args, config)
    except _INVARIANT_ERRORS as exc:
        print(f"invariant violation [{type(exc).__name__}]: {exc}",
              file=sys.stderr)
        return 2
    except _CONVERGENCE_ERRORS as exc:
        print(f"did not converge [{type(exc).__name__}]: {exc}",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
