#!/usr/bin/env python3
"""Independent line-filter statistics for a dataset JSONL file.

Deliberately uses only the standard library and no code from the package, so
it serves as an independent oracle for the `stats` subcommand: counts per
(chain_length, split), unique category tuples per length, and mean
whitespace-word counts of instructions per length.

Usage: python3 scripts/fixture_stats.py <dataset.jsonl>
"""

import json
import sys
from collections import defaultdict


def main(path: str) -> None:
    counts = defaultdict(lambda: {"train": 0, "test": 0})
    tuples = defaultdict(set)
    words = defaultdict(list)
    total = 0
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            length = record["chain_length"]
            counts[length][record["split"]] += 1
            tuples[length].add(tuple(record["category_path"]))
            words[length].append(len(record["instruction"].split()))
            total += 1
    report = {
        "counts_by_length": {str(k): counts[k] for k in sorted(counts)},
        "unique_category_tuples": {str(k): len(tuples[k]) for k in sorted(tuples)},
        "mean_instruction_words": {
            str(k): round(sum(words[k]) / len(words[k]), 4) for k in sorted(words)
        },
        "total": total,
    }
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    print()


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit("usage: fixture_stats.py <dataset.jsonl>")
    main(sys.argv[1])
