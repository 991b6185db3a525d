"""
Command-line entry point.

Subcommands: ``solve`` and ``experiment`` run one configuration,
``gridsearch`` scans regularization weights, ``certify`` evaluates the
Lipschitz and tangential-cone constants of a stored network, and
``adjoint-check`` runs the randomized adjoint pairing suite.

Exit codes: 0 success, 1 configuration or input error, 2 solver abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .experiments import ConfigError, ExperimentConfig, grid_search, log_range, run_experiment
from .grid import Grid
from .solvers import SolverAbort

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
EXAMPLE_NET = Path(__file__).with_name("data") / "example_net.json"

log = logging.getLogger("aaolearn")


class UsageError(Exception):
    """Bad command-line input that is not a config-file problem."""


def _setup_logging() -> None:
    level = os.environ.get("AAO_LOG", "quiet").lower()
    if level not in LOG_LEVELS:
        level = "quiet"
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _grid_arg(text: str) -> tuple[int, int]:
    try:
        nx, nt = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NXxNT such as 21x20, got {text!r}")
    return nx, nt


def _box_arg(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI such as -2,2, got {text!r}")
    return lo, hi


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror or exc}")
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _print_errors(report) -> None:
    for name in ("nonlinearity_error", "state_error", "parameter_error", "pde_residual"):
        print(f"{name:20s} {getattr(report, name):.6e}")


# -- subcommands ------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _load_config(args)
    if args.command == "solve" and args.method is not None:
        cfg = cfg.replace(solver={"method": args.method})
    out = _out_dir(args, "run")
    result = run_experiment(cfg, out_dir=out, binary=True if args.binary else None)
    _print_errors(result.report)
    print(f"stop: {result.state.stop_reason} after {result.state.iteration} iterations; artifacts in {out}")
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    cfg = _load_config(args)
    names = args.weights.split(",")
    space = {n: log_range(args.lo, args.hi, args.points) for n in names}
    try:
        res = grid_search(cfg, space, metric=args.metric, jobs=args.jobs)
    except AttributeError as exc:
        raise UsageError(f"unknown metric {args.metric!r}") from exc
    except ValueError as exc:
        raise ConfigError(f"weights: {exc}") from exc
    out = _out_dir(args, "gridsearch")
    (out / "gridsearch.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    print(f"best {res['best']}")
    return EXIT_OK


def cmd_certify(args) -> int:
    from .neural import NetParams, nn_lipschitz_constants, tcc_radius, verify_lipschitz, verify_tcc

    lo, hi = args.box
    if not hi > lo:
        raise UsageError(f"empty box [{lo}, {hi}]")
    path = Path(args.theta_file)
    try:
        theta = NetParams.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read network file {path}: {exc.strerror or exc}")
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"{path}: {exc}")
    rep = nn_lipschitz_constants(theta, (lo, hi))
    rng = np.random.default_rng(args.seed)
    lip = verify_lipschitz(theta, rep, n_pairs=args.samples, rng=rng)
    nx, nt = args.grid
    tcc = verify_tcc(theta, Grid(nx=nx, nt=nt), (lo, hi), rng=rng)
    d = rep.to_dict()
    print(f"box                 [{lo:g}, {hi:g}]")
    print(f"s                   {np.array2string(rep.s, precision=6)}")
    print(f"weight norms        {np.array2string(rep.weight_norms, precision=6)}")
    print(f"C^z                 {np.array2string(rep.Cz, precision=6)}")
    for l, (cw, cb) in enumerate(zip(d["Cw"], d["Cb"]), start=1):
        print(f"C^w{l} / C^b{l}         {np.array2string(np.array(cw), precision=6)} / "
              f"{np.array2string(np.array(cb), precision=6)}")
    print(f"value Lipschitz     {rep.value_lip:.6e}")
    print(f"derivative Lip.     {rep.derivative_lip:.6e}")
    radius = tcc_radius(theta, tcc["embedding_constant"], report=rep)
    print(f"tcc radius          {'unbounded' if math.isinf(radius) else f'{radius:.6e}'}")
    print(f"sampled pairs       {lip['pairs']}  max ratios value {lip['value_ratio']:.4f} "
          f"derivative {lip['derivative_ratio']:.4f}")
    print(f"tcc sampled defect  {tcc['max_defect_ratio']:.4e} <= c_tc {tcc['c_tc']:.4e}")
    ok = lip["passed"] and tcc["passed"]
    print(f"verdict             {'PASS' if ok else 'FAIL'}")
    return EXIT_OK


def cmd_adjoint_check(args) -> int:
    from .checks import pairing_defects

    nx, nt = args.grid
    defects = pairing_defects(Grid(nx=nx, nt=nt), draws=args.draws, seed=0 if args.seed is None else args.seed)
    for name, v in defects.items():
        print(f"{name:12s} {v:.3e}")
    worst = max(defects.values())
    print(f"max pairing defect {worst:.3e} ({'PASS' if worst <= 1e-8 else 'FAIL'})")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aaolearn", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, metavar="PATH", help="JSON experiment configuration")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, metavar="N", help="override the configured seed")
        p.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes (default 1)")

    for name, helptext in (("solve", "solve one learning problem and write artifacts"),
                           ("experiment", "run one experiment (synthesis, solve, scoring) and write artifacts")):
        p = sub.add_parser(name, help=helptext, description=helptext)
        common(p)
        p.add_argument("--binary", action="store_true", help="write fields as raw little-endian float64")
        if name == "solve":
            p.add_argument("--method", choices=("adam", "landweber"), help="override solver.method")
        p.set_defaults(func=cmd_run)

    p = sub.add_parser("gridsearch", help="scan regularization weights on a log grid",
                       description="scan regularization weights on a log grid")
    common(p)
    p.add_argument("--weights", default="r_u", help="comma-separated weight names (default r_u)")
    p.add_argument("--lo", type=float, default=1e-8, help="smallest weight (default 1e-8)")
    p.add_argument("--hi", type=float, default=1e-2, help="largest weight (default 1e-2)")
    p.add_argument("--points", type=int, default=4, help="values per weight (default 4)")
    p.add_argument("--metric", default="nonlinearity_error", help="ErrorReport field to minimize")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("certify", help="Lipschitz constants and tangential-cone radius of a network",
                       description="Lipschitz constants and tangential-cone radius of a network")
    p.add_argument("theta_file", nargs="?", default=str(EXAMPLE_NET),
                   help="network JSON (default: the shipped example network)")
    p.add_argument("--box", type=_box_arg, default=(-2.0, 2.0), metavar="LO,HI", help="input box (default -2,2)")
    p.add_argument("--samples", type=int, default=100_000, help="sampled pairs (default 100000)")
    p.add_argument("--grid", type=_grid_arg, default=(21, 20), metavar="NXxNT",
                   help="grid for the cone check (default 21x20)")
    p.add_argument("--seed", type=int, default=0, metavar="N", help="sampling seed (default 0)")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("adjoint-check", help="randomized adjoint pairing suite",
                       description="randomized adjoint pairing suite")
    p.add_argument("--grid", type=_grid_arg, default=(21, 20), metavar="NXxNT", help="grid size (default 21x20)")
    p.add_argument("--seed", type=int, metavar="N", help="random seed (default 0)")
    p.add_argument("--draws", type=int, default=20, help="random draws (default 20)")
    p.set_defaults(func=cmd_adjoint_check)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverAbort as exc:
        print(f"solver aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
