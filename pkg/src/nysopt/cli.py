"""Command-line entry point: ``nysopt run|diagnose|validate CONFIG``."""

import argparse
import logging
import sys

from . import bench
from .config import load_config
from .errors import NysoptError

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def build_parser():
    parser = argparse.ArgumentParser(prog="nysopt", description="Nystrom-SGD/SVRG experiment driver")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run the experiment grid and write traces + summary"),
        ("diagnose", "Hessian approximation quality sweep"),
        ("validate", "check a config and its dataset without running"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="flat TOML experiment config")
        p.add_argument("--workers", type=int, default=None, help="parallel runs (overrides config)")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    log = logging.getLogger("nysopt")
    try:
        config = load_config(args.config, {"workers": args.workers, "out": args.out, "seed": args.seed})
        if args.command == "validate":
            train, test = bench.validate_experiment(config)
            n_test = test.n if test is not None else 0
            print(f"ok: n={train.n} d={train.d} n_test={n_test} cells={len(bench.enumerate_cells(config))} "
                  f"config_hash={config.hash()}")
            return EXIT_OK
        if args.command == "diagnose":
            _, summary = bench.run_diagnostics(config)
            print(f"diagnostics written to {config.out} (config_hash={summary['config_hash']})")
            return EXIT_OK
        summary = bench.run_experiment(config)
    except NysoptError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    for lam, per_method in summary.best.items():
        for method, cell_id in per_method.items():
            print(f"lambda={lam} best {method}: {cell_id}")
    if summary.failures:
        for f in summary.failures:
            log.error("run %s rep %d %s: %s", f["cell_id"], f["rep"], f["status"], f["error"])
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
