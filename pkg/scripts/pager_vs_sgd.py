"""Seed-averaged gap against oracle cost for PAGER and SGD on Cosh1D, with an eta scan for PAGER."""

import argparse
from pathlib import Path

import numpy as np

from klopt import dynamics as dyn
from klopt.acceptance import pager_cosh_mean, sgd_cosh_mean
from klopt.klcore import cosh1d
from klopt.optimizers import ScheduleScale, build_pager_online_schedule, estimate_psi_bar0, run_pager
from klopt.oracle import AdditiveGaussian, GradOracle


def first_cost(gap, cost, eps):
    hit = np.nonzero(gap <= eps)[0]
    return float(cost[hit[0]]) if hit.size else float("inf")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=None, help="write both mean curves as CSV here")
    ap.add_argument("--scan", type=float, nargs="*", default=[],
                    help="extra PAGER eta multipliers to try (5 seeds each)")
    args = ap.parse_args()
    p_gap, p_cost, start = pager_cosh_mean()
    s_gap, s_cost = sgd_cosh_mean()
    print(f"PAGER slope vs cost {dyn.fit_loglog(p_cost, p_gap, start).slope:.4f} (fit from {start:.3g})")
    print(f"SGD   slope vs cost {dyn.fit_loglog(s_cost, s_gap, 1e3, 1e5).slope:.4f}")
    for eps in (1e-2, 1e-3, 1e-4):
        print(f"cost to gap {eps:g}: PAGER {first_cost(p_gap, p_cost, eps):.4g}  "
              f"SGD {first_cost(s_gap, s_cost, eps):.4g}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        dyn.write_csv(args.out / "pager.csv", ("cum_cost", "f_gap"), [p_cost, p_gap])
        dyn.write_csv(args.out / "sgd.csv", ("cum_cost", "f_gap"), [s_cost, s_gap])
    fn = cosh1d(5.0)
    psi = estimate_psi_bar0(fn, [1.0])
    for m in args.scan:
        stages = build_pager_online_schedule(1.0, fn.pl.mu, fn.lipschitz_L, 1.0, psi, 5,
                                             scale=ScheduleScale(eta=m))
        gaps, costs = [], []
        for s in range(5):
            r = run_pager(fn, GradOracle(fn, AdditiveGaussian(1.0), seed=s), stages, [1.0])
            gaps.append(r.f_gap)
            costs.append(r.cum_cost)
            first_end = r.stage_start[1]
        g, c = np.mean(gaps, axis=0), np.mean(costs, axis=0)
        slope = dyn.fit_loglog(c, g, c[first_end]).slope
        print(f"eta x{m:g}: slope {slope:.4f}, final gap {g[-1]:.3g} at cost {c[-1]:.3g}")


if __name__ == "__main__":
    main()
