"""Command-line entry point (``mdsttl`` or ``python -m mdsttl``).

Every config key is also a flag, spelled with dashes: ``--num-files 5``,
``--update-cost 0.1``. Flag values are parsed as JSON when possible, so
``--sweep-values "[0.05, 0.1]"`` and ``--zeta null`` work. Precedence is
preset < config file < flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from . import experiments as ex

VERBS = ("train-sarl", "train-marl", "evaluate", "oracle", "sweep", "report")


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _config_keys() -> list[str]:
    keys = set(ex.RUN_DEFAULTS) | ex._SCENARIO_KEYS | ex._DDPG_KEYS
    return sorted(keys - {"command"})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdsttl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS[:-1]:
        p = sub.add_parser(verb)
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--preset", choices=sorted(ex.PRESETS))
        p.add_argument("--out", required=True, help="result directory")
        if verb == "evaluate":
            p.add_argument("--checkpoint", action="append", default=[],
                           help="agent checkpoint (repeat once per SBS for MARL)")
        group = p.add_argument_group("config keys")
        for key in _config_keys():
            group.add_argument("--" + key.replace("_", "-"), dest=key, type=_value,
                               default=argparse.SUPPRESS, metavar="VALUE")
    p = sub.add_parser("report")
    p.add_argument("results", help="result directory to summarize")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verb == "report":
        return ex.report(args.results)

    reserved = {"verb", "verbose", "config", "preset", "out", "checkpoint"}
    flags = {k: v for k, v in vars(args).items() if k not in reserved}
    raw: dict = {}
    try:
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
            if not isinstance(raw, dict):
                raise ex.ConfigError("config file must hold a JSON object")
        raw.update(flags)
        raw["command"] = args.verb
        cfg = ex.resolve_config(raw, preset=args.preset or raw.get("preset"))
    except (ex.ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"mdsttl: error: {exc}", file=sys.stderr)
        return 2
    rows = ex.run_experiment(cfg, args.out, checkpoints=getattr(args, "checkpoint", None))
    for row in rows:
        print(f"{row['method']:>7} seed {row['seed']}: L/omega {float(row['L_over_omega']):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
