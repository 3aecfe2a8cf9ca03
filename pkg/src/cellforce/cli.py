"""``cellforce run <config> [--seed N] [--out DIR] [--override key=value]...``

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import CellForceError, ConfigError
from .experiments import PhaseError, load_config, run

log = logging.getLogger("cellforce")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cellforce", description="Cell-force wound contraction experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one experiment from a config file")
    p.add_argument("config", help="INI experiment description")
    p.add_argument("--seed", type=int, default=None, help="override the random seed")
    p.add_argument("--out", default=None, help="output directory (default: the config's 'out')")
    p.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)"
    )
    return parser


def _summary(record) -> str:
    lines = []
    for row in record.rows:
        lines.append(
            f"{row.approach:>12} n={row.n_polygon:<3d} h={row.h:<8g} "
            f"cell={row.cell_area_red_pct:8.4f}%  omega_w={row.omega_w_area_red_pct:8.4f}%  "
            f"rate_l2={row.rate_l2:.4g} rate_energy={row.rate_energy:.4g} wall={row.wall_ms:.1f}ms"
        )
    for name, rows in record.study.items():
        for r in rows:
            lines.append(f"{name:>6} h={r.h:<8g} energy={r.energy:.6f} increment={r.seminorm_increment:.6f}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
        out = args.out if args.out is not None else cfg.out
        log.info("running %s into %s", cfg.kind.value, out)
        record = run(cfg, out_dir=out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PhaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc.cause, ConfigError) else EXIT_NUMERICAL
    except CellForceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(_summary(record))
    for name, path in sorted(record.artifacts.items()):
        log.info("wrote %s: %s", name, path)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
