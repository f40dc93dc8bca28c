"""Regenerate the bundled tabular MDP fixture.

Seeds are tried in order from --seed until the finite-horizon optimal policy
uses the same action at every step, so that a stationary softmax policy can
approach J*.
"""

import argparse

import numpy as np

from klopt.rlpg import fixture_path, optimal_values, random_mdp, save_mdp


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=20240)
    ap.add_argument("--out", default=str(fixture_path()))
    args = ap.parse_args()
    seed = args.seed
    while True:
        mdp = random_mdp(S=3, A=2, H=5, gamma=0.9, seed=seed)
        j_star, acts = optimal_values(mdp)
        if np.all(acts == acts[0]):
            break
        seed += 1
    save_mdp(mdp, args.out, comment=f"tabular MDP fixture, generator seed {seed}\n"
                                     f"J* = {j_star:.12g}, optimal actions {acts[0].tolist()}")
    print(f"seed {seed}: J* = {j_star:.6f}, actions {acts[0].tolist()} -> {args.out}")


if __name__ == "__main__":
    main()
