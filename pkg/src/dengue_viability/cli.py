"""Command-line front end: kernel, compare, fit, simulate, generate-synthetic."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import svg
from .config import ConfigError, RunConfig
from .dynamics import DomainError, IntegrationError, ModelParams
from .estimation import (CsvFormatError, FitError, FitProblem, PARAM_NAMES, fit_multistart,
                         incidence_to_prevalence, read_incidence_csv, simulate_prevalence,
                         synthetic_incidence, write_incidence_csv)
from .grid import SNAP_TOL, ValueGrid, write_value_grid_csv
from .robust_dp import (backward_sweep, compare_kernels, extract_kernel, kernel_boundary,
                        load_solution, save_solution)
from .strategy import FeedbackStrategy, monte_carlo, write_summary_json, write_trajectory_csv

log = logging.getLogger("dengue_viability")

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE, EXIT_ASSERT = 0, 2, 3, 4


class AssertionFailure(RuntimeError):
    pass


def _dump(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


@contextmanager
def _locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"output directory {out} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _solve(cfg: RunConfig, name, threads):
    return backward_sweep(cfg.state_grid(), cfg.control_grid(), cfg.uncertainty_set(name),
                          cfg.horizon(), cfg.mode, cfg.substeps, cfg.gamma, threads)


def _boundary_or_empty(k):
    return kernel_boundary(k) if k.mask.any() else np.empty((0, 2))


def cmd_kernel(cfg: RunConfig, out: Path, set_name=None, threads=1):
    """Solve one uncertainty set; write kernel, boundary, policy and plot files."""
    name = set_name or cfg.data["uncertainty"]["default_set"]
    cfg.uncertainty_set(name)
    t = time.perf_counter()
    sol = _solve(cfg, name, threads)
    kernel = extract_kernel(sol)
    sg = sol.state_grid
    write_value_grid_csv(out / f"kernel_{name}.csv", ValueGrid(kernel.mask), sg, column="viable")
    boundary = _boundary_or_empty(kernel)
    with open(out / f"boundary_{name}.csv", "w") as f:
        f.write("m,h_boundary\n")
        for m, h in boundary:
            f.write(f"{m:.17g},{h:.17g}\n")
    save_solution(out / f"dp_{name}.npz", sol)
    meta = {"set": name, **sol.metadata(), "kernel_size": len(kernel), "config": cfg.to_dict()}
    meta.pop("wall_time")
    _dump(out / f"kernel_{name}.json", meta)
    _dump(out / f"kernel_{name}.timing.json", {"wall_time": time.perf_counter() - t})
    if cfg.data["io"]["svg"]:
        svg.write(out / f"kernel_{name}.svg",
                  [{"x": boundary[:, 0], "y": boundary[:, 1], "label": name}],
                  (0, sg.m_max), (0, sg.h_cap), "M (infected mosquitoes)",
                  "H (infected humans)", f"Viability kernel boundary ({name})")
    log.info("kernel %s: %d of %d nodes viable", name, len(kernel), kernel.mask.size)
    return kernel


def _rect_subset(a, b):
    return (b.a_m_lo <= a.a_m_lo and a.a_m_hi <= b.a_m_hi
            and b.a_h_lo <= a.a_h_lo and a.a_h_hi <= b.a_h_hi)


def cmd_compare(cfg: RunConfig, out: Path, names, threads=1):
    """Kernels for several sets, with inclusion checks implied by set nesting."""
    if len(names) < 2:
        raise ConfigError("compare: need at least two set names")
    sets = {n: cfg.uncertainty_set(n) for n in names}
    kernels = {}
    for n in dict.fromkeys(names):
        kernels[n] = extract_kernel(_solve(cfg, n, threads))
    pairs = []
    ok = True
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            if i == j or (a == b and i > j):
                continue
            if _rect_subset(sets[b], sets[a]):
                # larger uncertainty set => smaller kernel
                rel, diff = compare_kernels(kernels[a], kernels[b])
                holds = rel in ("subset", "equal")
                ok &= holds
                pairs.append({"larger_set": a, "smaller_set": b, "relation": rel,
                              "symmetric_difference": diff, "inclusion_holds": holds})
    report = {"sets": {n: list(sets[n].bounds) for n in names},
              "kernel_sizes": {n: len(kernels[n]) for n in kernels},
              "inclusions": pairs, "passed": ok, "config": cfg.to_dict()}
    _dump(out / "compare.json", report)
    sg = cfg.state_grid()
    if cfg.data["io"]["svg"]:
        series = []
        for n, k in kernels.items():
            b = _boundary_or_empty(k)
            series.append({"x": b[:, 0], "y": b[:, 1], "label": n})
        svg.write(out / "compare.svg", series, (0, sg.m_max), (0, sg.h_cap),
                  "M (infected mosquitoes)", "H (infected humans)", "Robust viability kernels")
    if not ok:
        raise AssertionFailure("kernel inclusion violated; see compare.json")
    return report


def cmd_fit(cfg: RunConfig, out: Path, incidence_csv, threads=1):
    """Fit the model to an incidence CSV; write fit_report.json and fit.svg."""
    est = cfg.data["estimation"]
    inc = read_incidence_csv(incidence_csv, float(est["population"]))
    prev = incidence_to_prevalence(inc, int(est["infectious_days"]))
    problem = FitProblem(prev, ModelParams.from_vector(est["theta0"], cfg.gamma),
                         np.array(est["lower"]), np.array(est["upper"]), float(est["m0_ratio"]),
                         cfg.gamma, cfg.substeps, float(est["xtol"]), float(est["ftol"]),
                         int(est["max_iter"]))
    result = fit_multistart(problem, int(est["multistart"]), cfg.seed, threads)
    report = {**result.report(), "seed": cfg.seed, "multistart": int(est["multistart"]),
              "prevalence_conversion": f"sliding window sum over {int(est['infectious_days'])} days",
              "m0_ratio": float(est["m0_ratio"]), "observations": len(prev)}
    _dump(out / "fit_report.json", report)
    if cfg.data["io"]["svg"]:
        fitted = simulate_prevalence(result.theta_hat, problem.h0, problem.days, cfg.substeps,
                                     problem.m0_ratio, int(prev.days[0]))
        top = max(prev.values.max(), fitted.values.max())
        svg.write(out / "fit.svg",
                  [{"x": fitted.days, "y": fitted.values, "label": "fitted model"},
                   {"x": prev.days, "y": prev.values, "label": "prevalence data", "kind": "points"}],
                  (prev.days[0], prev.days[-1]), (0, top * 1.05 or 1.0), "day",
                  "fraction infected", "Calibration")
    return report


def _kernel_node(kernel, m, h):
    """True if (m, h) sits on a grid node that belongs to ``kernel``."""
    sg = kernel.state_grid
    xm, xh = m / sg.m_max * (sg.n_m - 1), h / sg.h_cap * (sg.n_h - 1)
    i, j = int(round(xm)), int(round(xh))
    if abs(xm - i) > SNAP_TOL or abs(xh - j) > SNAP_TOL:
        return False
    return 0 <= i < sg.n_m and 0 <= j < sg.n_h and bool(kernel.mask[i, j])


def cmd_simulate(cfg: RunConfig, out: Path, set_name=None, x0=None, n_scenarios=None):
    """Monte Carlo closed-loop runs using the stored policy for ``set_name``."""
    name = set_name or cfg.data["uncertainty"]["default_set"]
    path = out / f"dp_{name}.npz"
    if not path.exists():
        raise FileNotFoundError(f"no policy for set {name!r} in {out}; run 'kernel --set {name}' first")
    sol = load_solution(path)
    kernel = extract_kernel(sol)
    sg = sol.state_grid
    if x0 is None:
        starts = np.array([sg.node(i, j) for i, j in sorted(kernel.members)])
    else:
        starts = np.array([x0], dtype=float)
    sim = cfg.data["simulation"]
    n = int(n_scenarios if n_scenarios is not None else sim["n_scenarios"])
    strat = FeedbackStrategy(sol)
    summary, kept = monte_carlo(starts, strat, sol.uncertainty, sol.horizon, n, cfg.seed,
                                sim["scenario_mode"], sol.substeps, sol.gamma,
                                keep=int(sim["keep_trajectories"]))
    guaranteed = (all(_kernel_node(kernel, m, h) for m, h in starts)
                  and (sol.mode == "corners" or sim["scenario_mode"] == "extreme-switching"))
    summary.update({"set": name, "guarantee_applies": bool(guaranteed), "h_cap": sg.h_cap,
                    "starts": starts.tolist()})
    tdir = out / f"trajectories_{name}"
    tdir.mkdir(exist_ok=True)
    for k, traj in enumerate(kept):
        write_trajectory_csv(tdir / f"traj_{k:04d}.csv", traj)
    write_summary_json(out / f"simulate_{name}.json", summary)
    if guaranteed and summary["violations"]:
        raise AssertionFailure(f"{summary['violations']} cap violations from kernel starts")
    return summary


def cmd_generate_synthetic(cfg: RunConfig, out: Path, path=None):
    """Write a synthetic incidence CSV generated from the configured parameters."""
    est = cfg.data["estimation"]
    syn = est["synthetic"]
    theta = ModelParams.from_vector(syn["theta"], cfg.gamma)
    inc = synthetic_incidence(theta, float(syn["h0"]), int(syn["days"]), float(est["population"]),
                              int(est["infectious_days"]), cfg.substeps, float(est["m0_ratio"]),
                              cfg.seed, float(syn["noise"]))
    target = Path(path) if path else out / "synthetic_incidence.csv"
    write_incidence_csv(target, inc)
    _dump(out / "synthetic_incidence.json",
          {"theta": dict(zip(PARAM_NAMES, syn["theta"])), "h0": syn["h0"], "days": syn["days"],
           "population": est["population"], "noise": syn["noise"], "seed": cfg.seed})
    return target


def build_parser():
    p = argparse.ArgumentParser(prog="dengue-viability", description=__doc__)
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--out", help="output directory (overrides io.output_dir)")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--mode", choices=("full", "corners"), help="uncertainty enumeration mode")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    k = sub.add_parser("kernel", help="compute one robust viability kernel")
    k.add_argument("--set", dest="set_name")
    c = sub.add_parser("compare", help="compare kernels of several uncertainty sets")
    c.add_argument("sets", nargs="*", default=["low", "middle", "high"])
    f = sub.add_parser("fit", help="calibrate the model on an incidence CSV")
    f.add_argument("incidence_csv")
    s = sub.add_parser("simulate", help="closed-loop Monte Carlo from a stored policy")
    s.add_argument("--set", dest="set_name")
    s.add_argument("--x0", nargs=2, type=float, metavar=("M", "H"))
    s.add_argument("--n-scenarios", type=int)
    g = sub.add_parser("generate-synthetic", help="write a synthetic incidence CSV")
    g.add_argument("--output")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.mode is not None:
            overrides["uncertainty"] = {"mode": args.mode}
        if overrides:
            data = cfg.to_dict()
            data["seed"] = overrides.get("seed", data["seed"])
            if "uncertainty" in overrides:
                data["uncertainty"]["mode"] = args.mode
            cfg = RunConfig(data)
        out = Path(args.out or cfg.data["io"]["output_dir"])
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with _locked(out):
            if args.command == "kernel":
                cmd_kernel(cfg, out, args.set_name, args.threads)
            elif args.command == "compare":
                cmd_compare(cfg, out, args.sets, args.threads)
            elif args.command == "fit":
                cmd_fit(cfg, out, args.incidence_csv, args.threads)
            elif args.command == "simulate":
                cmd_simulate(cfg, out, args.set_name, args.x0, args.n_scenarios)
            else:
                print(cmd_generate_synthetic(cfg, out, args.output))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionFailure as err:
        print(f"assertion failed: {err}", file=sys.stderr)
        return EXIT_ASSERT
    except CsvFormatError as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_COMPUTE
    except (IntegrationError, DomainError, FitError, FileNotFoundError, RuntimeError,
            ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
