"""
Command-line entry point.

    balpa gen    --config C [--seed N] [--out DIR]    write a generated instance
    balpa solve  --config C [...]                     one target, every solver
    balpa race   --config C [...]                     every target, summary table
    balpa dist   --config C [...]                     distributed run
    balpa slopes TRACE.csv [--x iter] [--y ergodic_gap] [--window LO HI]

Exit codes: 0 success, 2 config or input error, 3 a race or distributed run had a DNF.
"""

import argparse
import logging
import os
import sys

from balpa.bench.experiment import (ConfigError, load_config, run_dist_experiment,
                                    run_experiment, slope_fit)
from balpa.bench.generators import gen_lasso_eq, gen_qp
from balpa.opcore import save_matrix, save_vector
from balpa.solvers import read_trace_csv

log = logging.getLogger("balpa")

EXIT_OK, EXIT_CONFIG, EXIT_DNF = 0, 2, 3


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.tol is not None:
        cfg.tol = args.tol
    if args.max_epochs is not None:
        cfg.max_epochs = args.max_epochs
    return cfg


def cmd_gen(args):
    cfg = _load(args)
    os.makedirs(cfg.out, exist_ok=True)
    p = cfg.params
    for k, target in enumerate(cfg.targets, start=1):
        d = os.path.join(cfg.out, f"case_{k}")
        os.makedirs(d, exist_ok=True)
        if cfg.problem == "qp":
            inst = gen_qp(p.get("n", 50), p.get("p2", 10), seed=cfg.seed)
            save_matrix(os.path.join(d, "H.txt"), inst.H)
            save_vector(os.path.join(d, "c.txt"), inst.c)
        else:
            inst = gen_lasso_eq(p.get("n", 200), p.get("m", 10), p.get("p1", 20), p.get("p2", 20),
                                target, seed=cfg.seed, sigma=p.get("sigma", 1.0))
            for i, (A, a) in enumerate(zip(inst.A, inst.a)):
                save_matrix(os.path.join(d, f"A_{i}.txt"), A)
                save_vector(os.path.join(d, f"a_{i}.txt"), a)
            save_matrix(os.path.join(d, "B.txt"), inst.B)
        save_matrix(os.path.join(d, "D.txt"), inst.D)
        save_vector(os.path.join(d, "d.txt"), inst.d)
        print(f"wrote {d}")
    return EXIT_OK


def cmd_solve(args):
    cfg = _load(args)
    cfg.targets = cfg.targets[:1]
    outcomes = run_experiment(cfg, trace_every=args.trace_every, log=log.info)
    for o in outcomes:
        print(f"{o.solver}: {o.status} epochs={o.epochs}")
    return EXIT_OK


def cmd_race(args):
    cfg = _load(args)
    outcomes = run_experiment(cfg, trace_every=args.trace_every, log=log.info)
    with open(os.path.join(cfg.out, "summary.txt")) as fh:
        sys.stdout.write(fh.read())
    return EXIT_DNF if any(o.dnf for o in outcomes) else EXIT_OK


def cmd_dist(args):
    cfg = _load(args)
    if cfg.dist is None:
        raise ConfigError("dist needs a [distributed] section")
    outcome, net, _ = run_dist_experiment(cfg, trace_every=args.trace_every)
    print(f"{outcome.status} rounds={net.round} messages={net.messages_sent}")
    return EXIT_DNF if outcome.dnf else EXIT_OK


def cmd_slopes(args):
    trace = read_trace_csv(args.trace)
    window = tuple(args.window) if args.window else None
    print(f"{slope_fit(trace, args.x, args.y, window):.6f}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="balpa", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("gen", cmd_gen), ("solve", cmd_solve), ("race", cmd_race), ("dist", cmd_dist)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-epochs", type=float)
        p.add_argument("--trace-every", type=int, default=1)
        p.set_defaults(func=fn)
    p = sub.add_parser("slopes")
    p.add_argument("trace")
    p.add_argument("--x", default="iter")
    p.add_argument("--y", default="ergodic_gap")
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    p.set_defaults(func=cmd_slopes)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        # unreadable trace files and unusable slope windows
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
