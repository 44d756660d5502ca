"""``mmfg`` command line: validate, solve, simulate and run experiments.

Each run writes ``summary.json`` (keys ``config``, ``verdicts``, ``metrics``,
``timings``) and data CSVs into the output directory. Exit codes: 0 success,
2 config or model validation failure, 3 numerical failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import example6 as ex6
from .experiments import (DEFAULT_SCALES, DEFAULT_SHIFTS, Deviation, chaos_experiment,
                          empirical_measure_rate, monotone_violations, nash_envelope,
                          nash_gap_experiment)
from .io import COMMANDS, ConfigError, emit_csv, load_config, write_json
from .model import ModelValidationError, check, validate
from .noise import NoiseSource
from .numerics import TimeGrid
from .riccati import minor_drift_residual, offset_residual, riccati_residual, solve
from .sim import (estimate_costs, simulate_conditional_mean, simulate_finite_game,
                  simulate_limit_particles, trajectory_table)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
SLOPE_BOUND = -0.4 + 0.1
POW2 = [8, 16, 32, 64, 128, 256, 512, 1024]


def _grid(cfg):
    return TimeGrid(cfg.model.T, cfg.n_steps)


def _solution(cfg):
    return solve(cfg.model, _grid(cfg), method=cfg.experiment.get("method", "propagator"))


def _sizes(cfg, key, default):
    v = cfg.experiment.get(key, default)
    if not isinstance(v, list) or not v or not all(isinstance(n, int) and n >= 1 for n in v):
        raise ConfigError(f"experiment.{key} must be a nonempty list of positive integers")
    return v


def _slope_verdicts(rep, metrics):
    out = {}
    for m in metrics:
        fit = rep.fits.get(m)
        out[f"{m}_slope_ok"] = fit is not None and fit.slope <= SLOPE_BOUND
        out[f"{m}_monotone"] = not rep.verdicts.get(f"{m}_monotone_violations", [])
    return out


def cmd_validate(cfg, out):
    problems = validate(cfg.model)
    return {"valid": not problems}, {"violations": problems}


def cmd_solve(cfg, out):
    sol = _solution(cfg)
    m, g = cfg.model, sol.grid
    rr = riccati_residual(sol.system, sol.S)
    orr = offset_residual(sol.system, sol.S, sol.s)
    mdr = minor_drift_residual(sol)
    nx, ny = sol.system.nx, sol.system.ny
    header = ["t"] + [f"S_{i}_{j}" for i in range(ny) for j in range(nx)] \
        + [f"s_{i}" for i in range(ny)] + [f"K_{i}_{j}" for i in range(m.d) for j in range(m.d)] \
        + [f"Phi1_{i}_{j}" for i in range(m.d) for j in range(m.d0)] \
        + [f"Phi2_{i}_{j}" for i in range(m.d) for j in range(m.d)] \
        + [f"phi0_{i}" for i in range(m.d)]
    rows = [[t, *sol.S[n].ravel(), *sol.s[n].ravel(), *sol.K[n].ravel(), *sol.Phi1[n].ravel(),
             *sol.Phi2[n].ravel(), *sol.phi0[n].ravel()] for n, t in enumerate(g.nodes)]
    emit_csv(header, rows, os.path.join(out, "riccati.csv"))
    gap = sol.cross_check_gap
    blocks = {f"S{i + 1}{j + 1}": sol.block(i, j) for i in range(3) for j in range(2)}
    metrics = {"cross_check_gap": gap, "aprime": sol.aprime.to_dict(),
               "riccati_residual_max": float(rr.max()), "offset_residual_max": float(orr.max()),
               "minor_drift_residual_max": float(mdr.max()), "t": g.nodes,
               "S_blocks": blocks}
    bound = 10 * g.h ** 2
    verdicts = {"aprime_satisfied": sol.aprime.satisfied, "cross_check_ok": gap <= 1e-6,
                "riccati_residual_ok": float(rr.max()) <= bound,
                "offset_residual_ok": float(orr.max()) <= bound,
                "minor_drift_residual_ok": float(mdr.max()) <= 1e-6}
    return verdicts, metrics


def cmd_simulate(cfg, out):
    sol = _solution(cfg)
    e = cfg.experiment
    noise = NoiseSource(cfg.seed)
    system = e.get("system", "finite")
    N = int(e.get("N", 16))
    keep = int(e.get("keep_minors", 4))
    if system == "finite":
        b = simulate_finite_game(sol, N, noise, cfg.n_paths, keep_minors=keep)
    elif system == "limit":
        b = simulate_limit_particles(sol, N, noise, cfg.n_paths, keep_minors=keep)
    elif system == "conditional_mean":
        b = simulate_conditional_mean(sol, noise, cfg.n_paths)
    else:
        raise ConfigError("experiment.system must be finite, limit or conditional_mean, "
                          f"not {system!r}")
    emit_csv(*trajectory_table(b), os.path.join(out, "trajectories.csv"))
    costs = {k: v.to_dict() for k, v in estimate_costs(b, cfg.model).items()}
    for k in ("J0", "J_minor_mean"):
        if k in b.costs:
            costs[f"{k}_all"] = {"value": float(b.costs[k].mean())}
    return {"finite_paths": bool(np.all(np.isfinite(b.major)))}, {"costs": costs,
                                                                  "system": system}


def _report_csv(rep, out, name):
    emit_csv(*rep.table(), os.path.join(out, name))


def cmd_chaos(cfg, out):
    sol = _solution(cfg)
    rep = chaos_experiment(sol, _sizes(cfg, "N_list", POW2[:6]), cfg.n_paths, cfg.seed)
    _report_csv(rep, out, "chaos.csv")
    metrics = [m for m in ("major", "minor1", "w2sq") if m in rep.fits or rep.series(m)[0]]
    return _slope_verdicts(rep, metrics), rep.to_dict()


def cmd_measure_rate(cfg, out):
    sol = _solution(cfg)
    e = cfg.experiment
    rep = empirical_measure_rate(sol, _sizes(cfg, "N_list", POW2[:6]), cfg.n_paths, cfg.seed,
                                 ref_factor=int(e.get("ref_factor", 16)),
                                 reference=e.get("reference", "disjoint"))
    _report_csv(rep, out, "measure_rate.csv")
    rep.extra.pop("samples", None)
    fit = rep.fits.get("w2sq")
    return {"w2sq_slope_ok": fit is not None and fit.slope <= SLOPE_BOUND}, rep.to_dict()


def _deviations(e):
    players = e.get("players", ["major", "minor"])
    scales = e.get("scales", list(DEFAULT_SCALES))
    shifts = e.get("shifts", list(DEFAULT_SHIFTS))
    try:
        devs = [Deviation(p, "scale", float(s)) for p in players for s in scales] + \
               [Deviation(p, "shift", float(s)) for p in players for s in shifts]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad deviation family: {exc}") from exc
    if not devs:
        raise ConfigError("the deviation family is empty")
    return devs, players


def cmd_nash(cfg, out):
    sol = _solution(cfg)
    e = cfg.experiment
    devs, players = _deviations(e)
    N_list = _sizes(cfg, "N_list", [8, 16, 32, 64])
    reports = [nash_gap_experiment(sol, N, devs, cfg.n_paths, cfg.seed, e.get("kappa"))
               for N in N_list]
    rows = []
    for r in reports:
        for d in r.deviation_costs:
            rows.append([r.N, d["player"], d["label"], d["cost"], d["cost_stderr"], d["gain"],
                         d["gain_stderr"], d["moment"], d["admissible"]])
    emit_csv(["N", "player", "deviation", "cost", "cost_stderr", "gain", "gain_stderr",
              "moment", "admissible"], rows, os.path.join(out, "nash.csv"))
    verdicts, envelopes = {}, {}
    for p in players:
        best = [r.max_gain[p] for r in reports]
        if any(b is None for b in best):
            verdicts[f"{p}_envelope_ok"] = False
            continue
        env = nash_envelope(N_list, [b["value"] for b in best], [b["stderr"] for b in best])
        envelopes[p] = env
        verdicts[f"{p}_envelope_ok"] = env["ok"]
    return verdicts, {"reports": [r.to_dict() for r in reports], "envelopes": envelopes}


def cmd_example6(cfg, out):
    p = cfg.example
    grid = _grid(cfg)
    diff = ex6.scheme_difference(p, grid)
    emit_csv(*ex6.coefficient_table(diff), os.path.join(out, "coefficients.csv"))
    N_list = _sizes(cfg, "N_list", POW2)
    rep = ex6.verify_pnew(p, N_list, grid, NoiseSource(cfg.seed), cfg.n_paths)
    emit_csv(["N", "err_state", "err_control", "stderr"],
             [[r["N"], r["err_state"], r["err_control_new"], r["err_state_se"]]
              for r in rep["rows"]], os.path.join(out, "convergence.csv"))
    fit = rep["fit"]
    rows = rep["rows"]
    ctrl = [r["err_control_new"] for r in rows]
    ctrl_se = [r["err_control_new_se"] for r in rows]
    verdicts = {
        "pold_schemes_differ": diff["max_coeff_gap"] > 1e-6,
        "pnew_slope_ok": fit is not None and abs(fit.slope + 1) <= 0.15,
        "pnew_ratio_ok": all(r["ratio_ok_fraction"] == 1.0 for r in rows),
        "pnew_control_converges": not monotone_violations(ctrl, ctrl_se),
        "old_scheme_gap_persists": rows[-1]["err_control_old"] >= 0.5 * rows[0]["err_control_old"],
    }
    metrics = {"max_coeff_gap": diff["max_coeff_gap"], "gap_x0": diff["gap_x0"],
               "gap_xbar": diff["gap_xbar"], "schemes_coincide": diff["schemes_coincide"],
               "K_hat": rep["K_hat"], "gronwall_bound": rep["bound"], "rows": rows,
               "fit": fit.to_dict() if fit else None}
    return verdicts, metrics


HANDLERS = {"validate": cmd_validate, "solve": cmd_solve, "simulate": cmd_simulate,
            "chaos": cmd_chaos, "nash": cmd_nash, "measure-rate": cmd_measure_rate,
            "example6": cmd_example6}


def run(cfg, timings: bool = False) -> int:
    """Execute a resolved config; returns the exit code."""
    try:
        out = cfg.output_dir
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        print(f"mmfg: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_IO
    t0 = time.perf_counter()
    try:
        if cfg.command != "validate":
            check(cfg.model)
        verdicts, metrics = HANDLERS[cfg.command](cfg, out)
        code = EXIT_OK
        if cfg.command == "validate" and not verdicts["valid"]:
            for v in metrics["violations"]:
                print(f"mmfg: {v}", file=sys.stderr)
            code = EXIT_CONFIG
    except (ModelValidationError, ConfigError) as exc:
        print(f"mmfg: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"mmfg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"mmfg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summary = {"config": cfg.to_dict(), "verdicts": verdicts, "metrics": metrics,
               "timings": {"wall_seconds": time.perf_counter() - t0} if timings else None}
    try:
        write_json(summary, os.path.join(out, "summary.json"))
    except OSError as exc:
        print(f"mmfg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mmfg", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--seed", type=int, default=None, help="overrides mc.seed")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    ap.add_argument("--timings", action="store_true",
                    help="record wall time in summary.json (breaks byte-identical reruns)")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config, args.command, args.seed, args.out)
    except (ModelValidationError, ConfigError) as exc:
        print(f"mmfg: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, timings=args.timings)


if __name__ == "__main__":
    sys.exit(main())
