"""Walk through one policy graph: its paths, a sampled batch, and the effects.

    python3 demos/policy_walkthrough.py [--seed 0]
"""

from __future__ import annotations

import argparse
from collections import Counter

import numpy as np

from gaugment import EffectLog, apply_path, enumerate_paths, load_asset, sample_path
from gaugment.fitness import probe_batch
from gaugment.io_formats import policy_table


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    policy = load_asset("fig1").policy
    print("the three-node illustration graph:\n")
    print(policy_table(policy, inputs=True))

    # every input-to-output path with its exact probability
    paths = enumerate_paths(policy)
    print(f"{len(paths)} paths:")
    for path, prob in sorted(paths, key=lambda pair: -pair[1]):
        route = " -> ".join(f"{i}{side[0]}" for i, side in path.steps)
        augs = " then ".join(a.aug_type for a in path.edges)
        print(f"  p={prob:.3f}  {route:<14} {augs}")

    # sampling reproduces those probabilities
    rng = np.random.default_rng(args.seed)
    draws = Counter(sample_path(policy, rng).steps for _ in range(20_000))
    worst = max(abs(draws[p.steps] / 20_000 - prob) for p, prob in paths)
    print(f"\n20000 draws: largest gap to the exact probability {worst:.4f}")

    # apply sampled paths to synthetic utterances and look at what happened
    batch = probe_batch(n_utterances=4)
    print("\nper-utterance effects:")
    for i, item in enumerate(batch.items):
        log = EffectLog()
        path = sample_path(policy, rng)
        out = apply_path(path, item, rng, sources=batch.items, index=i, log=log)
        names = "+".join(a.aug_type for a in path.edges)
        masked, noise, length, blend = log.as_vector()
        print(
            f"  utterance {i}: {item.valid_length} frames -> {out.valid_length}, "
            f"{names:<14} masked {masked:.3f}, noise energy {noise:.3f}, padding zero: {out.padding_is_zero()}"
        )


if __name__ == "__main__":
    main()
