"""Command-line entry point: ``lasalt <model> --config PATH [options]``."""

import argparse
import sys

from ..errors import ConfigError, NumericalFailure
from .config import MODELS, MODES, U64, load_config
from .runner import execute

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < U64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # route usage errors through the config-error exit code
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="lasalt", description="Run a mean-field stochastic transport experiment.")
    p.add_argument("model", choices=MODELS)
    p.add_argument("--config", required=True, metavar="PATH", help="TOML run configuration")
    p.add_argument("--seed", type=_u64, help="override the config seed")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    p.add_argument("--mode", choices=MODES, help="coupled or decoupled")
    p.add_argument("--members", type=_positive, metavar="M", help="ensemble size")
    p.add_argument("--workers", type=_positive, default=None,
                   help="member chunks per step; output does not depend on it")
    p.add_argument("--no-dumps", action="store_true", help="skip field dumps")
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, defaults={"model": args.model})
        if cfg.model != args.model:
            raise ConfigError(f"config is for model '{cfg.model}', not '{args.model}'",
                              key="model")
        cfg = cfg.with_overrides(seed=args.seed, output_dir=args.out, mode=args.mode,
                                 members=args.members, workers=args.workers)
        execute(cfg, dump_fields=not args.no_dumps)
    except ConfigError as exc:
        print(f"lasalt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"lasalt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"lasalt: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
