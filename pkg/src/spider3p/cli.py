"""Command-line entry point: ``spider3p {generate,run,diagnose,plan}``.

Settings come from a JSON config (``--config``); the flags ``--seed`` and
``--out`` override the corresponding file values. Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 I/O error.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import harness
from .core import plan_complexity
from .exceptions import ConfigError, NumericalError
from .logistic import generate_synthetic, save_dataset, save_sidecar

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _common(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="concurrent replications")


def build_parser():
    parser = argparse.ArgumentParser(prog="spider3p", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset CSV and its sidecar")
    _common(g)
    g.add_argument("--n", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--sigma2", type=float)
    g.add_argument("--theta-norm", type=float)
    g.add_argument("--x-scale", type=float)
    g.add_argument("--name", default="dataset", help="file stem inside --out")

    r = sub.add_parser("run", help="run replications and write metrics")
    _common(r)

    d = sub.add_parser("diagnose", help="run the diagnostic checks")
    _common(d)
    d.add_argument("--reps", type=int, default=2000, help="Monte Carlo replications")
    d.add_argument("--theorem-runs", type=int, default=20)

    pl = sub.add_parser("plan", help="print the complexity plan for (n, epsilon)")
    _common(pl)
    pl.add_argument("n", type=int)
    pl.add_argument("epsilon", type=float)
    return parser


def _need_config(args):
    if not args.config:
        raise ConfigError("--config is required")
    return harness.load_config(args.config, {"seed": args.seed, "out": args.out})


def cmd_generate(args):
    spec = {"n": None, "d": None, "seed": 0, "theta_norm": 1.0, "x_scale": 1.0}
    sigma2 = 0.1
    out = args.out or "."
    if args.config:
        cfg = harness.load_config(args.config, {"out": args.out})
        syn = cfg["problem"]["synthetic"]
        if syn is None:
            raise ConfigError("generate needs a problem.synthetic block")
        spec.update(syn)
        sigma2 = cfg["problem"]["sigma2"]
        out = args.out or cfg["output"]["dir"]
    for key, val in (("n", args.n), ("d", args.d), ("seed", args.seed),
                     ("theta_norm", args.theta_norm), ("x_scale", args.x_scale)):
        if val is not None:
            spec[key] = val
    if args.sigma2 is not None:
        sigma2 = args.sigma2
    if spec["n"] is None or spec["d"] is None:
        raise ConfigError("generate needs n and d")
    if spec["n"] < 1 or spec["d"] < 1:
        raise ConfigError(f"n and d must be positive (got n={spec['n']}, d={spec['d']})")
    rng = np.random.default_rng(spec["seed"])
    dataset, theta_star = generate_synthetic(spec["n"], spec["d"], sigma2, rng,
                                             theta_norm=spec["theta_norm"],
                                             x_scale=spec["x_scale"])
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, args.name + ".csv")
    save_dataset(path, dataset)
    save_sidecar(os.path.join(out, args.name + ".json"), spec["seed"], theta_star,
                 {**spec, "sigma2": sigma2})
    print(path)


def cmd_run(args):
    cfg = _need_config(args)
    summary = harness.cli_run(cfg, threads=max(1, args.threads))
    print(json.dumps({k: summary[k] for k in ("algorithm", "runs", "final_counters",
                                              "delta_hat_at_stop_mean",
                                              "delta_hat_at_stop_se") if k in summary},
                     sort_keys=True))


def cmd_diagnose(args):
    cfg = _need_config(args)
    checks = harness.cli_diagnose(cfg, reps=args.reps, theorem_runs=args.theorem_runs)
    lines = [c.line() for c in checks]
    print("\n".join(lines))
    out = args.out
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "diagnostics.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_plan(args):
    p = plan_complexity(args.n, args.epsilon)
    print(f"b={p.b} k_in={p.k_in} k_out={p.k_out} m={p.m} "
          f"N_P={p.N_P} N_A={p.N_A} N_MC={p.N_MC}")


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "diagnose": cmd_diagnose,
            "plan": cmd_plan}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
