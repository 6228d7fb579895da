"""Evolutionary search against uniform random policies on the synthetic landscape.

A scaled-down version of the paired-seed comparison in the acceptance suite.

    python3 demos/search_vs_random.py [--seeds 3] [--budget 320]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gaugment import SearchConfig, random_policy_search, run_search
from gaugment.fitness import DISTORTION_NAMES, FitnessRequest, SyntheticLandscape


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--budget", type=int, default=320)
    parser.add_argument("--population", type=int, default=32)
    args = parser.parse_args()

    landscape = SyntheticLandscape.compact()
    print("target distortion:", dict(zip(DISTORTION_NAMES, landscape.target)))
    print(f"{'seed':>4}  {'evolution':>9}  {'random':>9}")
    for seed in range(args.seeds):
        start = time.perf_counter()
        config = SearchConfig(
            population_size=args.population, trial_budget=args.budget, n_ensemble=25, master_seed=seed
        )
        evolved = run_search(config, landscape)
        sampled = random_policy_search(args.budget, landscape, 25, seed)
        print(
            f"{seed:>4}  {evolved.best.fitness:9.4f}  {sampled.best.fitness:9.4f}"
            f"   ({time.perf_counter() - start:.0f}s)"
        )

    # what the last winner actually does to the probe set
    best = evolved.best
    mean, stderr = landscape.distortion(best.policy, best.seed)
    print(f"\nbest evolved policy (trial {best.trial_id}) reaches:")
    for name, m, s, t in zip(DISTORTION_NAMES, mean, stderr, landscape.target):
        print(f"  {name:<16} {m:.3f} +- {s:.3f}  (target {t})")
    rescored = landscape(FitnessRequest(best.policy, best.seed)).score
    print(f"rescored with the same seed: {rescored:.4f}")
    print("generations:", [round(row[1], 4) for row in evolved.summary])
    print("running best by generation:", np.round([row[3] for row in evolved.summary], 4).tolist())


if __name__ == "__main__":
    main()
