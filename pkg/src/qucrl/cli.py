"""Command-line entry point: ``qucrl run|sweep|verify|slope``.

Exit codes: 0 on success, 2 for configuration errors, 3 for runtime
failures (including failed verification checks).
"""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, QucrlError
from .harness import RunConfig, fit_slope, read_regret_csv, run_single, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qucrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def experiment_flags(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--agent", choices=("quantum", "classical"))
        p.add_argument("--out", help="output directory")
        p.add_argument("--horizon", type=int, help="number of steps (overrides the config)")

    p_run = sub.add_parser("run", help="run a single seed")
    experiment_flags(p_run)
    p_run.add_argument("--seed", type=int, help="seed (default: first seed in the config)")

    p_sweep = sub.add_parser("sweep", help="run every seed and aggregate")
    experiment_flags(p_sweep)
    p_sweep.add_argument("--seed", type=int, action="append",
                         help="restrict to these seeds (repeatable)")

    p_verify = sub.add_parser("verify", help="run the estimator and identity checks")
    p_verify.add_argument("--trials", type=int, default=2000)
    p_verify.add_argument("--triples", type=int, default=100)

    p_slope = sub.add_parser("slope", help="fit a log-log regret slope to a CSV")
    p_slope.add_argument("csv", help="per-run or aggregate CSV file")
    p_slope.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.replace(agent=args.agent, horizon=args.horizon, out=args.out)


def _cmd_run(args) -> int:
    cfg = _config(args)
    replica = run_single(cfg, args.seed)
    final = replica.series
    print(f"seed {replica.seed}: T={len(final)} epochs={len(replica.epochs)} "
          f"regret={final.regret[-1]:.6g} gamma_opt={final.gamma_opt:.6g}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.seed:
        cfg = cfg.replace(seeds=tuple(args.seed))
    result = run_sweep(cfg)
    agg = result.aggregate
    print(f"{len(result.replicas)} runs: final mean regret {agg.mean_regret[-1]:.6g} "
          f"(stderr {agg.stderr_regret[-1]:.3g})")
    for path in result.paths:
        print(path)
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import run_all

    checks = run_all(args.trials, args.triples)
    for check in checks:
        print(check.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_RUNTIME


def _cmd_slope(args) -> int:
    t, regret = read_regret_csv(args.csv)
    window = args.window or (t.min(), t.max())
    fit = fit_slope((t, regret), window)
    print(f"slope {fit.slope:.6g} intercept {fit.intercept:.6g} r2 {fit.r2:.6g}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "verify": _cmd_verify, "slope": _cmd_slope}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QucrlError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
