"""Command-line entry point: ``run``, ``oracle`` and ``diag``."""
import argparse
import logging
import os
import sys

import numpy as np

from .exceptions import ConfigError, DegenerateConstraintError, DomainError, EnumerationLimitError
from .fixtures import TOY_A, golden_prefixes, toy_a_lm, toy_a_linear_verifier
from .gibbs import GibbsSampler, convergence_trace, write_trace_csv
from .harness import ExperimentConfig, run_experiment
from .oracle import golden_battery, write_golden
from .toy_models import TabularJointLM

log = logging.getLogger("semantic_control")

DEFAULT_GOLDEN = os.path.join(os.path.dirname(__file__), "data", "golden_toy_a.json")


def cmd_run(args):
    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg.output_dir = args.out
    report, _, _ = run_experiment(cfg)
    m = report["metrics"]
    print(f"method={cfg.method} generations={report['n_generations']} average_score={m['average_score']:.2f} "
          f"constraint_probability={m['constraint_probability']:.2f} "
          f"expected_worst_score={m['expected_worst_score']:.2f} perplexity={m['perplexity']}")
    if cfg.output_dir:
        print(f"wrote {cfg.output_dir}")


def cmd_oracle(args):
    lm = toy_a_lm()
    verifier = toy_a_linear_verifier()
    prefixes = golden_prefixes(count=args.count, seed=args.seed)
    battery = golden_battery(
        lm, verifier, prefixes,
        lm_params=lm.to_dict(),
        verifier_params={"kind": "linear", "vocab_size": TOY_A["vocab_size"], "embed_dim": TOY_A["embed_dim"],
                         "weight_scale": verifier.weight_scale, "random_state": verifier.random_state},
    )
    battery["inputs"] = {"count": args.count, "seed": args.seed}
    write_golden(battery, args.out)
    print(f"wrote {len(battery['records'])} records to {args.out}")


def cmd_diag(args):
    lm = TabularJointLM(vocab_size=args.vocab_size, horizon=args.horizon, sigma=args.sigma,
                        random_state=args.lm_seed).fit()
    prefix = np.array(args.prefix, dtype=np.int64)
    sampler = GibbsSampler(n_iter=args.iterations, thinning=1, block_size=args.block_size)
    trace = convergence_trace(lm, prefix, sampler, args.seed, n_chains=args.chains)
    write_trace_csv(trace, args.out)
    print(f"final tv={trace[-1][1]:.4f} after {trace[-1][0]} updates; wrote {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="semantic-control", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a YAML config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides output_dir in the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="regenerate the golden oracle battery")
    p.add_argument("--out", default=DEFAULT_GOLDEN)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int, default=2024)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("diag", help="write a Gibbs convergence trace (TV to the exact law per update) as CSV")
    p.add_argument("--out", default="gibbs_trace.csv")
    p.add_argument("--vocab-size", type=int, default=TOY_A["vocab_size"])
    p.add_argument("--horizon", type=int, default=TOY_A["horizon"])
    p.add_argument("--sigma", type=float, default=TOY_A["sigma"])
    p.add_argument("--lm-seed", type=int, default=TOY_A["lm_seed"])
    p.add_argument("--prefix", type=int, nargs="*", default=[1, 2])
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--chains", type=int, default=200)
    p.add_argument("--block-size", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_diag)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except ConfigError as err:
        for problem in err.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except (DomainError, DegenerateConstraintError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except EnumerationLimitError as err:
        print(f"refused: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
