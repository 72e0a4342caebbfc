"""
Command-line entry point: one subcommand per experiment.

Usage:
    run_experiment.py simulate --config sim.toml --out runs/
    run_experiment.py invariance-test --config invariance.toml --workers 8
    run_experiment.py passage-bound --T 1.0 --beta-star 1.0 --n-max 6 --paths 100000

Each experiment writes its tables into <out>/<experiment>/ together with
verdicts.json. The exit code is 0 iff no verdict failed (see EXIT_CODES).
"""

import argparse
import logging
import os
import sys
import time
from typing import List, Optional

from . import __version__
from .artifacts import write_json
from .config import ENV_OUT, ENV_SEED, EXPERIMENTS, ExperimentConfig, parse_config, passage_config
from .errors import ConfigParseError, ConfigValidationError, LsmError
from .experiments import RUNNERS
from .verify import Verdict

logger = logging.getLogger(__name__)

EXIT_CODES = {
    "ok": 0,        # no verdict failed
    "fail": 1,      # at least one verdict failed
    "config": 2,    # unreadable or invalid experiment description
    "runtime": 3,   # numerical failure while running
    "io": 4,        # input/output failure
}

# passage-bound flag -> [passage] key
PASSAGE_FLAGS = {
    "T": "horizon", "beta_star": "beta_star", "y": "y", "v": "v", "n_min": "n_min",
    "n_max": "n_max", "paths": "paths", "dt": "dt", "scheme_tol": "scheme_tol",
}


def _configure_logging(level: int) -> None:
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)
    logging.captureWarnings(True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run_experiment.py",
        description="Confined Lagrangian stochastic particle experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")

    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=name != "passage-bound",
                       help="TOML experiment file (see docs/config.md)")
        p.add_argument("--out", help=f"output directory (overrides file and {ENV_OUT})")
        p.add_argument("--seed", type=int, help=f"master seed (overrides file and {ENV_SEED})")
        p.add_argument("--workers", type=int, help="worker threads for drift and path blocks")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        p.add_argument("-q", "--quiet", action="store_true", help="warnings only")
        if name == "passage-bound":
            p.add_argument("--T", type=float, help="horizon T (default 1.0)")
            p.add_argument("--beta-star", type=float, help="support margin beta* (default 1.0)")
            p.add_argument("--y", type=float, help="start position (default beta*)")
            p.add_argument("--v", type=float, help="start velocity (default 0.0)")
            p.add_argument("--n-min", type=int, help="smallest passage index (default 3)")
            p.add_argument("--n-max", type=int, help="largest passage index (default 6)")
            p.add_argument("--paths", type=int, help="Monte Carlo paths (default 100000)")
            p.add_argument("--dt", type=float, help="path time step (default 1e-4)")
            p.add_argument("--scheme-tol", type=float,
                           help="allowed gap between the two quadratures (default 1e-6)")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Experiment file (or passage-bound flags) with CLI overrides applied.

    Raises:
        ConfigParseError, ConfigValidationError, OSError
    """
    if args.config:
        config = parse_config(args.config)
        if config.experiment != args.experiment:
            raise ConfigValidationError(
                [("experiment", f"'{args.experiment}' (file describes '{config.experiment}')")])
    else:
        try:
            seed = int(os.environ.get(ENV_SEED, 0))
        except ValueError:
            raise ConfigValidationError([(ENV_SEED, "integer")]) from None
        config = passage_config({}, seed=seed, out=os.environ.get(ENV_OUT, "runs"))

    if args.experiment == "passage-bound":
        overrides = {key: getattr(args, flag) for flag, key in PASSAGE_FLAGS.items()
                     if getattr(args, flag) is not None}
        if overrides:
            source = config.source
            config = passage_config({**config.study, **overrides}, config.seed, config.out,
                                    config.workers)
            config.source = source
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigValidationError([("--seed", "integer in [0, 2**64)")])
        config.seed = args.seed
        if config.sim is not None:
            config.sim = config.sim.replace(seed=args.seed)
    if args.out is not None:
        config.out = args.out
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigValidationError([("--workers", "integer >= 1")])
        config.workers = args.workers
    return config


def dispatch(config: ExperimentConfig) -> List[Verdict]:
    """Run the named experiment and write its verdicts next to its tables."""
    out_dir = os.path.join(config.out, config.experiment)
    os.makedirs(out_dir, exist_ok=True)
    verdicts = RUNNERS[config.experiment](config, out_dir)
    write_json(os.path.join(out_dir, "verdicts.json"),
               {"verdicts": [v.to_dict() for v in verdicts]}, config.to_dict())
    return verdicts


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (ConfigParseError, ConfigValidationError)):
        return EXIT_CODES["config"]
    if isinstance(error, OSError):
        return EXIT_CODES["io"]
    if isinstance(error, LsmError) and isinstance(error, ValueError):
        return EXIT_CODES["config"]
    return EXIT_CODES["runtime"]


def _print_verdicts(verdicts: List[Verdict]):
    print("\n--- Verdicts ---")
    for v in verdicts:
        print(f"  [{v.status.upper():7s}] {v.name}  ({v.wall_time:.1f}s)")
        for issue in v.issues:
            print("  " + issue)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    _configure_logging(level)

    print("=" * 60)
    print(f"Experiment: {args.experiment}")
    print("=" * 60)

    try:
        config = load_config(args)
    except (LsmError, OSError) as exc:
        print(f"\n--- Configuration ---\n  ERROR: {exc}")
        return exit_code_for(exc)
    print(f"\n--- Configuration ---")
    print(f"  Source: {config.source}")
    print(f"  Seed: {config.seed}, workers: {config.workers}")
    if config.sim is not None:
        sim = config.sim
        print(f"  Domain: {sim.domain.describe()}, kernel: {sim.kernel.describe()}")
        print(f"  N={sim.n_particles}, eps={sim.epsilon:g}, dt={sim.dt:g}, "
              f"T={sim.horizon:g}, sigma={sim.sigma:g}")

    started = time.perf_counter()
    try:
        verdicts = dispatch(config)
    except Exception as exc:
        logger.exception("experiment %s aborted", config.experiment)
        print(f"\n  ERROR: {exc}")
        return exit_code_for(exc)

    _print_verdicts(verdicts)
    failed = [v for v in verdicts if v.failed]
    print("\n" + "=" * 60)
    print(f"Output: {os.path.join(config.out, config.experiment)}")
    print(f"Total time: {time.perf_counter() - started:.1f}s")
    if failed:
        print(f"FAILED ({len(failed)} failing verdict(s))")
        return EXIT_CODES["fail"]
    print("PASSED")
    return EXIT_CODES["ok"]


if __name__ == "__main__":
    sys.exit(main())
