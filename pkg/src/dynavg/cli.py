"""Command line entry point: ``dynavg {run,sweep,verify,gen-data}``.

Exit codes: 0 success, 1 configuration or input error, 2 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PRESETS, apply_overrides, load_config
from .errors import ConfigurationError, DataError
from .harness import SweepSpec, gen_data, regenerate_from_sidecar, run, sweep
from .protocols import PROTOCOL_KINDS
from .verify import SUITES, verify

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2


def _add_config_flags(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--config", required=True,
                   help=f"TOML config file or preset name ({', '.join(PRESETS)})")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help=out_help)
    p.add_argument("--protocol", choices=PROTOCOL_KINDS)
    p.add_argument("--delta", type=float, help="divergence threshold (dynamic protocols)")
    p.add_argument("--period", type=int, help="rounds between synchronizations or checks")
    p.add_argument("--fraction", type=float, help="FedAvg fraction C of learners per sync")
    p.add_argument("--learners", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--format", choices=("csv", "json"), dest="fmt")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynavg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration and export its ledger")
    _add_config_flags(p, "directory for the exported ledger")

    p = sub.add_parser("sweep", help="run the config's protocol variants over its sweep grid")
    _add_config_flags(p, "directory for cell ledgers and the sweep report")
    p.add_argument("--max-cells", type=int, help="refuse grids with more cells than this")

    p = sub.add_parser("verify", help="run randomized property suites")
    p.add_argument("suite", nargs="?", default="all", choices=("all",) + SUITES)
    p.add_argument("--seed", type=int, help="suite seed (default: fixed)")
    p.add_argument("--trials", type=int, help="override the number of instances per suite")
    p.add_argument("--format", choices=("text", "json"), default="text", dest="fmt")

    p = sub.add_parser("gen-data", help="write the stream a run would observe to CSV")
    p.add_argument("--config", help="TOML config file or preset name")
    p.add_argument("--from-sidecar", help="regenerate from a .meta.json sidecar instead")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--learners", type=int)
    p.add_argument("--rounds", type=int)
    return parser


def _load(args):
    cf = load_config(args.config)
    cfg = apply_overrides(cf.config, seed=args.seed, out=args.out, protocol=args.protocol,
                          delta=args.delta, period=args.period, fraction=args.fraction,
                          learners=args.learners, rounds=args.rounds, fmt=args.fmt)
    return cf, cfg


def cmd_run(args) -> int:
    _, cfg = _load(args)
    result = run(cfg, write=True, quiet=False)
    for path in result.paths:
        print(f"wrote {path}")
    return EXIT_OK


def _protocol_flags_given(args) -> bool:
    return any(v is not None for v in (args.protocol, args.delta, args.period, args.fraction))


def cmd_sweep(args) -> int:
    cf, cfg = _load(args)
    spec = SweepSpec.from_config_file(cf)
    if _protocol_flags_given(args):
        # explicit protocol flags select a single protocol instead of the file's variants
        spec.variants = [{"kind": cfg.protocol.kind, "period": cfg.protocol.period,
                          "delta": cfg.protocol.delta, "fraction": cfg.protocol.fraction}]
    if args.seed is not None:
        spec.axes.pop("seed", None)
    if args.max_cells is not None:
        spec.max_cells = args.max_cells
    result = sweep(cfg, spec, write=True)
    print(f"{'protocol':<28} {'seeds':>5} {'cum_loss/learner':>17} {'cum_bytes':>14}")
    for row in result.report["mean_over_seeds"]:
        extra = "".join(f" {k}={v}" for k, v in row["coords"].items())
        print(f"{row['protocol'] + extra:<28} {row['seeds']:>5} "
              f"{row['cum_loss_per_learner']:>17.6g} {row['cum_bytes']:>14.6g}")
    if cfg.out:
        print(f"wrote {Path(cfg.out) / (cfg.name + '-sweep.json')}")
    return EXIT_OK


def cmd_verify(args) -> int:
    reports = verify(args.suite, seed=args.seed, trials=args.trials)
    if args.fmt == "json":
        print(json.dumps([{**r.__dict__, "ok": r.ok} for r in reports], indent=1))
    else:
        for r in reports:
            print(r.line())
    return EXIT_OK if all(r.ok for r in reports) else EXIT_VERIFY


def cmd_gen_data(args) -> int:
    if args.from_sidecar:
        if args.config:
            raise ConfigurationError("gen-data: give --config or --from-sidecar, not both")
        paths = regenerate_from_sidecar(args.from_sidecar, args.out)
    else:
        if not args.config:
            raise ConfigurationError("gen-data: --config or --from-sidecar is required")
        cfg = apply_overrides(load_config(args.config).config, seed=args.seed,
                              learners=args.learners, rounds=args.rounds)
        paths = gen_data(cfg, args.out)
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "gen-data": cmd_gen_data}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; that code is reserved for verification
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
