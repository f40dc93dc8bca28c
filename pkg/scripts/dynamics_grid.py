"""Fitted versus predicted exponents of the error recursion over a grid of (tau, alpha, beta)."""

import argparse
from pathlib import Path

from klopt import dynamics as dyn
from klopt.acceptance import DYNAMICS_GRID, RED_CURVE, dynamics_curve
from klopt.klcore import HSpec, PhiSpec


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--K", type=int, default=100_000)
    ap.add_argument("--traces", type=Path, default=None, help="directory for per-curve CSV traces")
    args = ap.parse_args()
    print(f"{'tau':>5} {'alpha':>6} {'beta':>7} {'branch':>7} {'zeta':>7} "
          f"{'predicted':>10} {'fitted':>8} {'time':>6}")
    for tau, alpha, beta, branch in [*DYNAMICS_GRID, RED_CURVE]:
        rate, fit, wall = dynamics_curve(tau, alpha, beta, branch, args.K)
        print(f"{tau:>5g} {alpha:>6g} {beta:>7.4f} {rate.branch:>7} {rate.zeta:>7.4f} "
              f"{-rate.predicted_slope:>10.4f} {fit.slope:>8.4f} {wall:>5.1f}s")
        if args.traces is not None:
            args.traces.mkdir(parents=True, exist_ok=True)
            params = dyn.DynamicsParams(1.0, 1.0, HSpec.power(beta), PhiSpec.power(alpha, 1.0), tau)
            sched = dyn.PolyDecay(0.5, rate.zeta)
            T = dyn.default_inner_length(params, sched, args.K, rate.predicted_slope)
            dyn.simulate(params, sched, args.K, T=T).to_csv(
                args.traces / f"tau{tau:g}_alpha{alpha:g}_beta{beta:.3f}.csv")


if __name__ == "__main__":
    main()
