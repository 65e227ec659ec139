"""Command line entry point: ``statecap <task> --config path``."""
import argparse
import json
import logging
import sys

from . import io
from .errors import SchemaError, TaskError

EXIT_OK, EXIT_SCHEMA, EXIT_COMPUTE = 0, 2, 3

DESCRIPTIONS = {
    "first-order": (
        "eps-capacity and optimistic eps-capacity from the cdf of the "
        "state-averaged capacity C(T), with the strong converse verdict and "
        "the mean/covariance evidence.  Writes the report as JSON and the "
        "cdf of C(T) for every n of the grid as CSV."),
    "second-order": (
        "Second-order coding rate Lambda(eps, beta) by bisection on the K "
        "functional, compared with the closed forms for mixed, i.i.d., "
        "block i.i.d., Markov and alternating states.  Writes JSON and the "
        "per-n Lambda table (and the approximation audit with --audit) as CSV."),
    "bounds": (
        "Finite-n sandwich: Feinstein achievability against the information "
        "spectrum converse, plus the explicit Berry-Esseen direct bound.  "
        "Writes BoundReport JSON and a (logM, achievability_eps, "
        "converse_eps) CSV."),
    "audit": (
        "Sizes of the two Gaussian approximation steps for i.i.d., block "
        "i.i.d. and Markov states over a grid of n, with fitted log-log slopes."),
    "constants": (
        "Per-state capacity, dispersions and third moment, and the universal "
        "constants V+, L+, B and D1 (bits)."),
}


def _n_grid(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("n grid must be comma separated integers")


def _floats(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated numbers")
    return vals[0] if len(vals) == 1 else vals


def build_parser():
    parser = argparse.ArgumentParser(
        prog="statecap",
        description="Capacity, dispersion and finite-blocklength bounds for "
                    "channels with state known at both ends.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="task", required=True)
    for task in io.TASKS:
        p = sub.add_parser(task, help=DESCRIPTIONS[task].split(".  ")[0],
                           description=DESCRIPTIONS[task])
        p.add_argument("--config", required=True,
                       help="JSON config file (see the README for the schema)")
        p.add_argument("--seed", type=int, help="override parameters.seed")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        if task in ("first-order", "second-order", "audit"):
            p.add_argument("--n-grid", type=_n_grid, help="e.g. 64,128,256")
            p.add_argument("--mode", choices=["exact", "mc", "auto"])
            p.add_argument("--budget", type=int, help="Monte Carlo sample count")
        if task in ("first-order", "second-order", "bounds"):
            p.add_argument("--eps", type=_floats, help="one value or a comma list")
        if task == "second-order":
            p.add_argument("--beta", type=float)
            p.add_argument("--model", help="inline JSON state process replacing the config's")
            p.add_argument("--audit", action="store_true", default=None,
                           help="also write the approximation audit table")
        if task == "bounds":
            p.add_argument("--n", type=int)
            p.add_argument("--logM", type=_floats, help="logM sweep in bits")
            p.add_argument("--delta", type=float)
    return parser


def _overrides(args):
    out = {"task": args.task}
    names = {"seed": "seed", "n_grid": "n_grid", "mode": "mode", "budget": "budget",
             "eps": "eps", "beta": "beta", "audit": "audit", "n": "n",
             "logM": "logM", "delta": "delta"}
    for attr, key in names.items():
        val = getattr(args, attr, None)
        if val is not None:
            out[key] = val
    if args.task == "bounds" and "logM" in out and not isinstance(out["logM"], list):
        out["logM"] = [out["logM"]]
    if getattr(args, "model", None):
        try:
            out["process"] = json.loads(args.model)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"--model is not valid JSON: {exc}") from None
    if args.out:
        out["output_dir"] = args.out
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = io.load_config(args.config, _overrides(args))
        if args.task == "bounds" and "eps" in cfg.parameters and "logM" in cfg.parameters:
            raise SchemaError("give either eps or logM for bounds, not both")
        paths = io.run(cfg)
    except SchemaError as exc:
        print(f"statecap: config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except TaskError as exc:
        print(f"statecap: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
