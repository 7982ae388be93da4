"""Command-line front end.

Exit codes: 0 success, 2 malformed experiment, 3 numerical non-convergence
(at least one sweep point failed to converge; the others are still written).
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from .errors import AxisMismatch, SpecError, SwarmError
from .experiments import (
    RECIPES,
    Sweep,
    build_spec,
    compare,
    load_recipe,
    load_spec,
    recipe_text,
    run,
    write_csv,
)

EXIT_OK, EXIT_FAILED, EXIT_SPEC, EXIT_NOT_CONVERGED = 0, 1, 2, 3

_PARAM_FLAGS = {
    "blocks": "K",
    "peers": "N",
    "publisher_capacity": "U",
    "peer_rate": "mu",
    "endgame_rate": "mu_prime",
    "publisher_policy": "publisher_policy",
    "peer_policy": "peer_policy",
    "linger_rate": "gamma",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_SPEC, f"{self.prog}: error: {message}\n")


def _add_model_flags(p: argparse.ArgumentParser, sim: bool):
    g = p.add_argument_group("model")
    g.add_argument("--blocks", type=int, help="number of blocks K")
    g.add_argument("--peers", type=int, help="population N")
    g.add_argument("--publisher-capacity", type=float, help="publisher upload rate U")
    g.add_argument("--peer-rate", type=float, help="peer upload rate mu")
    g.add_argument("--endgame-rate", type=float, help="upload rate of peers holding K-1 blocks (default mu)")
    g.add_argument("--publisher-policy", choices=["RP_RUB", "RP_RFB", "MDP_RFB"])
    g.add_argument("--peer-policy", choices=["RP_RUB", "RUP_RUB"])
    g.add_argument("--shield-newcomers", action="store_true", help="tracker withholds a newcomer from other peers")
    g.add_argument("--linger-rate", type=float, help="seed departure rate gamma (default: no seeds)")
    g.add_argument("--sweep", help="axis:from:to:step with axis one of N, K, U, mu_prime_inverse, gamma")
    if sim:
        s = p.add_argument_group("simulation")
        s.add_argument("--replications", type=int, default=5)
        s.add_argument("--horizon", type=float, default=2000.0)
        s.add_argument("--warmup", type=float, default=200.0)
        s.add_argument("--rng-seed", type=int, default=0)
        s.add_argument("--metric", choices=["throughput", "entry_time", "exit_time"], default="throughput")
    p.add_argument("--J", type=int, default=1, help=argparse.SUPPRESS if sim else "top queues in the network")
    _add_run_flags(p)


def _add_run_flags(p):
    p.add_argument("--out", help="CSV path; a .manifest.json is written next to it (default: CSV to stdout)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="swarmcap", description="Throughput of closed peer-to-peer swarms.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in [
        ("markov", "exact stationary throughput"),
        ("queueing", "queueing-network fixed point"),
        ("bound", "throughput ceiling when the publisher serves only newcomers"),
    ]:
        _add_model_flags(sub.add_parser(name, help=helptext), sim=False)
    _add_model_flags(sub.add_parser("simulate", help="event-driven simulation"), sim=True)

    p = sub.add_parser("recipe", help="run a canned experiment")
    p.add_argument("name", nargs="?", choices=RECIPES)
    p.add_argument("--list", action="store_true", help="list recipe names")
    p.add_argument("--show", action="store_true", help="print the recipe file instead of running it")
    _add_run_flags(p)

    p = sub.add_parser("compare", help="join two experiments on their sweep axis")
    p.add_argument("first", help="experiment file, manifest or recipe name")
    p.add_argument("second", help="experiment file, manifest or recipe name (reference)")
    _add_run_flags(p)

    p = sub.add_parser("run", help="run an experiment file or re-run a manifest")
    p.add_argument("path")
    _add_run_flags(p)
    return parser


def _spec_from_flags(args):
    values = {}
    for flag, key in _PARAM_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    if args.shield_newcomers:
        values["shield_newcomers"] = True
    missing = [f"--{f.replace('_', '-')}" for f, k in _PARAM_FLAGS.items() if k in ("K", "U", "mu") and k not in values]
    sweep = Sweep.parse(args.sweep) if args.sweep else None
    if sweep and sweep.axis == "K":
        missing = [m for m in missing if m != "--blocks"]
        values.setdefault("K", int(sweep.start))
    if sweep and sweep.axis == "U":
        missing = [m for m in missing if m != "--publisher-capacity"]
        values.setdefault("U", sweep.start)
    if missing:
        raise SpecError("required", field=", ".join(missing))
    sim = {}
    if args.command == "simulate":
        sim = dict(horizon=args.horizon, warmup=args.warmup, replications=args.replications, seed=args.rng_seed, metric=args.metric)
        if args.metric != "throughput":
            sim["warmup"] = 0.0
    if sweep and sweep.axis == "gamma" and "gamma" not in values:
        values["gamma"] = sweep.start
    if sweep and sweep.axis == "mu_prime_inverse" and "mu_prime" not in values:
        values["mu_prime"] = 1.0 / sweep.start
    return build_spec(args.command, values, sweep=sweep, sim=sim, J=args.J, output_path=args.out)


def _resolve(ref: str):
    if ref in RECIPES and not Path(ref).exists():
        return load_recipe(ref)
    return load_spec(ref)


def _emit(result, out):
    if out:
        print(f"wrote {out}", file=sys.stderr)
    else:
        write_csv(result.rows, sys.stdout)
    for p in result.manifest.failed:
        print(f"point {p['index']} {p['status']}: {p['message']}", file=sys.stderr)
    if not result.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_FAILED if result.manifest.failed else EXIT_OK


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "recipe":
            if args.list or args.name is None:
                print("\n".join(RECIPES))
                return EXIT_OK
            if args.show:
                sys.stdout.write(recipe_text(args.name))
                return EXIT_OK
            spec = load_recipe(args.name, args.out)
        elif args.command == "run":
            spec = load_spec(args.path, args.out)
        elif args.command == "compare":
            rows = compare(_resolve(args.first), _resolve(args.second), out=args.out)
            if not args.out:
                keys = list(rows[0]) if rows else []
                write_csv(rows, sys.stdout, keys)
            worst = max((r["relative_error"] for r in rows if r["relative_error"] is not None), default=math.nan)
            print(f"compared {len(rows)} points, max relative error {worst:.4g}", file=sys.stderr)
            return EXIT_OK
        else:
            spec = _spec_from_flags(args)
        result = run(spec, jobs=args.jobs)
        return _emit(result, spec.output_path)
    except (SpecError, AxisMismatch, FileNotFoundError) as exc:
        print(f"swarmcap: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except SwarmError as exc:
        print(f"swarmcap: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
