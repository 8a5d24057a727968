#!/usr/bin/env python3
"""Standalone nearest-neighbor label-agreement oracle.

Computes, with zero package imports, the fraction of test-split cases
whose nearest library case (cosine over the hash-expansion embeddings,
ties by ascending case id) shares their category. The echo mock answers
every query with its top-1 neighbor's category, so a pipeline run on the
same corpus and store settings must report exactly this accuracy. Keeping
this implementation independent is the point: it cross-checks the
package, it must not reuse it.

Usage: nn_label_oracle.py CORPUS_JSONL [--dim 8] [--seed 0]
"""

import argparse
import json
import math
import sys
from pathlib import Path

MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def embed(payload: bytes, dim: int, seed: int) -> list[float]:
    """Hash-expansion embedding: splitmix64 stream over fnv1a64(payload)^seed."""
    state = (fnv1a64(payload) ^ seed) & MASK64
    values = []
    for _ in range(dim):
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        out = z ^ (z >> 31)
        values.append((out >> 11) * (2.0 ** -52) - 1.0)
    norm = math.sqrt(sum(v * v for v in values))
    return [v / norm for v in values]


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("corpus")
    parser.add_argument("--dim", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    corpus_path = Path(args.corpus)
    base_dir = corpus_path.parent
    library = []
    tests = []
    with corpus_path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            image = base_dir / rec["image"]
            vec = embed(image.read_bytes(), args.dim, args.seed)
            entry = (rec["id"], rec["category"], vec)
            if rec.get("split") == "library":
                library.append(entry)
            elif rec.get("split") == "test":
                tests.append(entry)
    if not library or not tests:
        print("corpus must carry library and test split tags", file=sys.stderr)
        return 1

    agreements = 0
    for test_id, category, qvec in sorted(tests):
        best = None
        for lib_id, lib_category, lvec in sorted(library):
            score = sum(a * b for a, b in zip(qvec, lvec))
            if best is None or score > best[0]:
                best = (score, lib_id, lib_category)
        if best[2] == category:
            agreements += 1
        print(f"{test_id}\t{best[1]}\t{best[0]:+.6f}\t{int(best[2] == category)}", file=sys.stderr)

    print(f"{agreements}/{len(tests)}")
    print(f"{agreements / len(tests):.10f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
