"""Command line entry points.

Subcommands: simulate (fine-scale run), cell (effective tensors),
homogenize (limit run from stored tensors), converge (epsilon study),
check (acceptance suite).  Exit code 0 only if every audit passes.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .io import Manifest, read_tensor_csv, write_tensor_csv, write_timeseries
from .operators import SolverFailure


def _add_common(sub):
    sub.add_argument("--config", required=True, help="path to a key = value config file")
    sub.add_argument("--out", default=None, help="override the configured output directory")
    sub.add_argument("--scenario", default=None, help="override the configured scenario")
    sub.add_argument("--workers", type=int, default=None, help="parallel epsilon runs")


def _load(args):
    cfg = load_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    if args.scenario:
        cfg.scenario = args.scenario
    if args.workers:
        cfg.workers = args.workers
    return cfg.validate()


def cmd_simulate(args):
    from .runs import simulate

    cfg = _load(args)
    manifest = Manifest(cfg.out_dir, cfg.content_hash())
    eps = cfg.eps_list[0]
    res = simulate(cfg, eps, manifest=manifest, tag="eps%g_" % eps, keep_fields=False)
    manifest.finalize()
    print("simulated eps=%g for %d steps in %.1fs -> %s"
          % (eps, res.grid.n_steps, res.runtime, cfg.out_dir))
    return 0


def cmd_cell(args):
    import numpy as np

    from .homogenization import EffectiveTensors
    from .runs import compute_cell_tensors

    cfg = _load(args)
    manifest = Manifest(cfg.out_dir, cfg.content_hash())
    spec, correctors, tensors = compute_cell_tensors(cfg)
    manifest.write("C0.csv", lambda p: write_tensor_csv(p, tensors.C0))
    if tensors.C1_seq is not None:
        manifest.write("C1.csv", lambda p: write_tensor_csv(p, tensors.C1_seq,
                                                            times=tensors.C1_times))
    dmax, umean, pmean = correctors.audits()
    wrap = tensors if isinstance(tensors, EffectiveTensors) else EffectiveTensors(tensors.C0)
    asym = wrap.asymmetry()
    rng = np.random.default_rng(0)
    coerc = min(wrap.quadratic(xi) - spec.alpha * float(np.sum(xi**2))
                for xi in rng.normal(size=(32, 2, 2)))
    manifest.finalize()
    print("cell problem at %d^2: corrector div %.2e, mean %.2e; "
          "C0 asymmetry %.2e, coercivity margin %.2e; tensors in %s"
          % (cfg.ny_cell, dmax, umean, asym, coerc, cfg.out_dir))
    if dmax > 1e-8 or umean > 1e-12 or asym > 1e-8 or coerc < -1e-10:
        print("error: effective-tensor audits failed", file=sys.stderr)
        return 1
    return 0


def cmd_homogenize(args):
    from .homogenization import EffectiveTensors
    from .runs import homogenize

    cfg = _load(args)
    manifest = Manifest(cfg.out_dir, cfg.content_hash())
    if args.tensors:
        C0 = read_tensor_csv(args.tensors + "/C0.csv")
        try:
            times, seq = read_tensor_csv(args.tensors + "/C1.csv")
            tensors = EffectiveTensors(C0, C1_times=times, C1_seq=seq)
        except FileNotFoundError:
            tensors = EffectiveTensors(C0)
    else:
        from .runs import compute_cell_tensors

        _, _, tensors = compute_cell_tensors(cfg)
    res = homogenize(cfg, tensors, manifest=manifest)
    rows = [[n * cfg.dt, f.l2()] for n, f in enumerate(res.fields)]
    manifest.write("hom_velocity_norm.csv", lambda p: write_timeseries(p, ["t", "l2"], rows))
    manifest.finalize()
    print("homogenized run: %d steps in %.1fs -> %s"
          % (res.grid.n_steps, res.runtime, cfg.out_dir))
    return 0


def cmd_converge(args):
    from .runs import run_convergence_study

    cfg = _load(args)
    manifest = Manifest(cfg.out_dir, cfg.content_hash())
    table = run_convergence_study(cfg, manifest=manifest)
    manifest.finalize()
    print("eps        err_u        err_rec      moment_gap   runtime")
    for row in table.rows:
        print("%-9g  %-11.4e  %-11.4e  %-11.4e  %.1fs" % tuple(row))
    return 0


def cmd_check(args):
    from .acceptance import ALL_CRITERIA, run_acceptance

    selected = set(args.criteria) if args.criteria else None
    results = run_acceptance(selected=selected, verbose=True)
    if not results:
        names = [f.__name__.replace("criterion_", "") for f in ALL_CRITERIA]
        print("no criteria matched; available: " + ", ".join(names))
        return 2
    failed = [r for r in results if not r.passed]
    print("%d/%d criteria passed" % (len(results) - len(failed), len(results)))
    return 1 if failed else 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="kinflow",
        description="Particle-laden nonlocal Stokes flow and its homogenized limit.")
    subs = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("simulate", cmd_simulate), ("cell", cmd_cell),
                     ("homogenize", cmd_homogenize), ("converge", cmd_converge)):
        sub = subs.add_parser(name)
        _add_common(sub)
        if name == "homogenize":
            sub.add_argument("--tensors", default=None,
                             help="directory with C0.csv / C1.csv from the cell subcommand")
        sub.set_defaults(func=fn)

    check = subs.add_parser("check", help="run the acceptance suite")
    check.add_argument("criteria", nargs="*", help="subset of criterion names")
    check.set_defaults(func=cmd_check)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SolverFailure) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
