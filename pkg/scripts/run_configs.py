"""Run every config under configs/ (or those matching --glob) and report pass/fail."""

import argparse
import sys
import time
from pathlib import Path

from klopt.cli import VERB_KIND, main as klopt_main
from klopt.config import parse_config

KIND_VERB = {v: k for k, v in VERB_KIND.items()}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", type=Path, default=Path(__file__).resolve().parent.parent / "configs")
    ap.add_argument("--glob", default="*.ini")
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    worst = 0
    for path in sorted(args.configs.glob(args.glob)):
        verb = KIND_VERB[parse_config(path).kind]
        t0 = time.perf_counter()
        code = klopt_main([verb, "--config", str(path), "--out", str(args.out), "--quiet"])
        print(f"{path.name:<28} {verb:<10} exit {code} ({time.perf_counter() - t0:.1f}s)", flush=True)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
