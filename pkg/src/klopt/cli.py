"""Command-line entry point: ``klopt <verb> [--config PATH] [--seed N] [--out DIR] [--quiet]``."""

from __future__ import annotations

import argparse
import io
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, parse_config
from .klcore import DomainError

VERB_KIND = {
    "dynamics": "dynamics",
    "tightness": "tightness",
    "optimize": "optimize",
    "finite-sum": "finite_sum",
    "rl": "rl",
    "verify": "verify",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="klopt", description=__doc__)
    p.add_argument("verb", choices=[*VERB_KIND, "accept"])
    p.add_argument("--config", type=Path, help="experiment config file")
    p.add_argument("--seed", type=int, action="append", default=[],
                   help="extra seed appended to the config's seeds (repeatable)")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--quiet", action="store_true", help="print only the final status")
    p.add_argument("--only", default=None,
                   help="accept: comma-separated criterion ids to run (empty runs none)")
    return p


def _run_verb(args: argparse.Namespace) -> int:
    from .experiments import run_experiment

    if args.config is None:
        if args.verb != "verify":
            raise ConfigError(f"'{args.verb}' needs --config")
        from .config import parse_config_text

        cfg = parse_config_text("[experiment]\nkind = verify\n", extra_seeds=tuple(args.seed))
    else:
        cfg = parse_config(args.config, extra_seeds=tuple(args.seed))
    if cfg.kind != VERB_KIND[args.verb]:
        raise ConfigError(f"{args.config}: kind is {cfg.kind!r} but the verb is '{args.verb}'")
    if not args.quiet:
        print(cfg.echo())
        print()
    results = run_experiment(cfg, args.out)
    for i, r in enumerate(results):
        if args.quiet:
            continue
        slope = "" if r.fitted_slope is None else (
            f" fitted {r.fitted_slope:.4f}" + (f" predicted {r.predicted_slope:.4f}"
                                               if r.predicted_slope is not None else ""))
        print(f"point {i}: {r.label}{slope} {'PASS' if r.passed else 'FAIL'} ({r.wall_time:.1f}s)")
    ok = all(r.passed for r in results)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "accept":
            from .acceptance import acceptance_suite

            only = None if args.only is None else [s.strip() for s in args.only.split(",") if s.strip()]
            stream = io.StringIO() if args.quiet else sys.stdout
            code, rows = acceptance_suite(only, stream=stream)
            if args.quiet:
                print("PASS" if code == 0 else "FAIL")
            return code
        return _run_verb(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
