"""Command line entry point: ``clicklab <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import harness, oracles
from .data import (generate_synthetic, parse_letor, read_log, read_ranker, serialize_letor,
                   train_linear_ranker, write_ranker)
from .errors import ClickLabError
from .interleaving import PIConfig
from .logopt import OptimizerConfig, optimize_logging_policy
from .policies import UniformPolicy, save_policy


def _out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def cmd_compare(args) -> int:
    text = ""
    if args.config:
        with open(args.config) as fh:
            text = fh.read()
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    config = harness.ExperimentConfig.from_text(text, overrides)
    out = _out_dir(args.out)
    rows = harness.run_experiment(config, threads=args.threads)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(config.to_text())
    with open(os.path.join(out, "results.csv"), "w") as fh:
        harness.write_results(rows, fh)
    with open(os.path.join(out, "timings.csv"), "w") as fh:
        harness.write_timings(rows, fh)
    with open(os.path.join(out, "pairs.csv"), "w") as fh:
        harness.write_pairs(harness.build_pairs(config), fh)
    _write_summary(rows, out, args.plot)
    print(f"{len(rows)} rows written to {out}")
    return 0


def _write_summary(rows, out, plot) -> None:
    summary = harness.summarize(rows)
    with open(os.path.join(out, "summary.csv"), "w") as fh, \
            open(os.path.join(out, "summary_bins.csv"), "w") as bins:
        harness.write_summary(summary, fh, bins)
    if plot:
        harness.plot_curves(summary, os.path.join(out, "curves.svg"))


def cmd_summarize(args) -> int:
    with open(args.results) as fh:
        rows = harness.read_results(fh)
    _write_summary(rows, _out_dir(args.out), args.plot)
    with open(os.path.join(args.out, "summary.csv")) as fh:
        sys.stdout.write(fh.read())
    return 0


def _load_data(path: str, args):
    if path == "synthetic":
        rng = np.random.default_rng([args.seed, 0])
        return generate_synthetic(args.queries, args.docs, args.features, rng)
    with open(path, "rb") as fh:
        return parse_letor(fh)


def cmd_gen_rankers(args) -> int:
    data = _load_data(args.data, args).rankable()
    out = _out_dir(args.out)
    if args.data == "synthetic":
        with open(os.path.join(out, "dataset.txt"), "w") as fh:
            fh.write(serialize_letor(data))
    rng = np.random.default_rng([args.seed, 1])
    for i in range(args.count):
        ranker = train_linear_ranker(data, args.train_queries, args.feature_fraction, rng)
        with open(os.path.join(out, f"ranker_{i}.txt"), "w") as fh:
            write_ranker(ranker, fh)
    print(f"{args.count} rankers written to {out}")
    return 0


def cmd_logopt(args) -> int:
    with open(args.data, "rb") as fh:
        data = parse_letor(fh)
    with open(args.log) as fh:
        interactions = read_log(fh)
    policies = []
    for path in (args.ranker1, args.ranker2):
        with open(path) as fh:
            policies.append(read_ranker(fh).policy(data.queries))
    config = OptimizerConfig(steps=args.steps, learning_rate=args.learning_rate,
                             epsilon=args.epsilon, M=args.m)
    rng = np.random.default_rng(args.seed)
    policy, trace = optimize_logging_policy(interactions, data.by_qid(), policies[0], policies[1],
                                            config, rng, logging_policy=UniformPolicy())
    out = _out_dir(args.out)
    with open(os.path.join(out, "policy.txt"), "w") as fh:
        save_policy(policy, fh)
    with open(os.path.join(out, "trace.csv"), "w") as fh:
        trace.write_csv(fh)
    print(f"trained {config.steps} steps; final estimated variance "
          f"{trace.variance[-1] if trace.variance else float('nan'):.6g}")
    return 0


FIXTURES = (
    ("tdi", (1.0, 0.9, 0.8), 0.1, 1.0),
    ("pi", (1.0, 0.9, 0.3), 0.5, 1.0),
    ("oi", (1.0, 0.9, 0.9), 0.5, 1.0),
    ("oi", (1.0, 0.31, 0.3), 0.1, 1.0),
)


def cmd_oracle(args) -> int:
    print("method  theta              zeta_a zeta_c  delta      expected   signs_agree")
    for method, theta, za, zc in FIXTURES:
        inst = oracles.SmallInstance.three_doc(theta, za, zc)
        e = oracles.enum_expected_outcome(method, inst, pi_config=PIConfig(args.tau))
        d = inst.delta
        print(f"{method:<7} {str(theta):<18} {za:<6} {zc:<6}  {d:+.6f}  {e:+.6f}  "
              f"{np.sign(d) == np.sign(e)}")
    if args.grid:
        methods = ("tdi", "pi", "oi", "ips") if args.method == "all" else (args.method,)
        rows = []
        for m in methods:
            found = oracles.find_sign_flip(m)
            print(f"{m}: {len(found)} sign-flip grid points")
            rows += found
        if args.out:
            path = os.path.join(_out_dir(args.out), "counterexamples.csv")
            with open(path, "w") as fh:
                oracles.write_counterexamples(rows, fh)
            print(f"written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clicklab", description="Compare rankers by expected CTR.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compare", help="run a ranker-pair comparison experiment")
    c.add_argument("--config", help="key = value config file")
    c.add_argument("--seed", type=int)
    c.add_argument("--out", default="out")
    c.add_argument("--threads", type=int, default=1)
    c.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    c.add_argument("--plot", action="store_true", help="also write curves.svg")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("summarize", help="aggregate a results.csv")
    s.add_argument("results")
    s.add_argument("--out", default="out")
    s.add_argument("--plot", action="store_true")
    s.set_defaults(func=cmd_summarize)

    g = sub.add_parser("gen-rankers", help="train linear rankers on a dataset")
    g.add_argument("--data", default="synthetic", help="LETOR file or 'synthetic'")
    g.add_argument("--count", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="rankers")
    g.add_argument("--train-queries", type=int, default=20)
    g.add_argument("--feature-fraction", type=float, default=0.5)
    g.add_argument("--queries", type=int, default=100)
    g.add_argument("--docs", type=int, default=10)
    g.add_argument("--features", type=int, default=16)
    g.set_defaults(func=cmd_gen_rankers)

    lo = sub.add_parser("logopt", help="train a logging policy from an interaction log")
    lo.add_argument("--log", required=True)
    lo.add_argument("--data", required=True)
    lo.add_argument("--ranker1", required=True)
    lo.add_argument("--ranker2", required=True)
    lo.add_argument("--out", default="logopt")
    lo.add_argument("--seed", type=int, default=0)
    lo.add_argument("--steps", type=int, default=2000)
    lo.add_argument("--learning-rate", type=float, default=1e-2)
    lo.add_argument("--epsilon", type=float, default=0.1)
    lo.add_argument("--m", type=int, default=32)
    lo.set_defaults(func=cmd_logopt)

    o = sub.add_parser("oracle", help="three-document bias fixtures and sign-flip grid search")
    o.add_argument("--grid", action="store_true")
    o.add_argument("--method", default="all", choices=("all", "tdi", "pi", "oi", "ips"))
    o.add_argument("--tau", type=float, default=4.0)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ClickLabError, OSError) as exc:
        print(f"clicklab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
