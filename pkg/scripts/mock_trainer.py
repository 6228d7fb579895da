#!/usr/bin/env python3
"""Stand-in for a real training job behind ``--fitness external``.

Decodes the policy file it is handed, re-encodes it to check the schema
round-trips, and reports the number of ensemble nodes as its "score".

    gaugment search --fitness external \\
        --command "python3 scripts/mock_trainer.py {policy}"

With ``--result PATH`` the score goes to that file instead of stdout
(pair with ``--result-file`` and ``{result}``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from gaugment.io_formats import PolicyDecodeError, decode_policy, encode_policy


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("policy", help="policy JSON file")
    parser.add_argument("--result", default=None, help="write the score here instead of stdout")
    args = parser.parse_args(argv)

    text = Path(args.policy).read_text()
    try:
        doc = decode_policy(text)
    except PolicyDecodeError as exc:
        print(f"mock_trainer: bad policy: {exc}", file=sys.stderr)
        return 2
    if json.loads(encode_policy(doc)) != json.loads(text):
        print("mock_trainer: policy did not round-trip", file=sys.stderr)
        return 3

    trial = os.environ.get("GAUG_TRIAL_ID", "?")
    seed = os.environ.get("GAUG_SEED", "?")
    print(f"trial {trial} seed {seed}: training on a {len(doc.policy.nodes)}-node policy", file=sys.stderr)
    score = f"{doc.policy.n_ensemble}\n"
    if args.result:
        Path(args.result).write_text(score)
    else:
        print("pretend training log line")
        sys.stdout.write(score)
    return 0


if __name__ == "__main__":
    sys.exit(main())
