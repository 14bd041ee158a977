"""Print corpus statistics and per-label counts, and diff them against the frozen reference tables.

    python scripts/reproduce_tables.py --data-dir $DIALOGRE_DIR
"""
import argparse
import json
import sys
from pathlib import Path

from hetdre.corpus import SPLITS, corpus_stats, format_labels, format_stats, label_distribution, load_split

REFERENCE = Path(__file__).resolve().parent.parent / "tests" / "data" / "reference_tables.json"


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-dir", required=True)
    args = p.parse_args(argv)
    ref = json.loads(REFERENCE.read_text())
    corpora = {s: load_split(args.data_dir, s) for s in SPLITS}
    reports = [corpus_stats(corpora[s]) for s in SPLITS]
    dists = [label_distribution(corpora[s], s) for s in SPLITS]
    print(format_stats(reports))
    print(format_labels(dists))
    diffs = []
    for i, (rep, dist) in enumerate(zip(reports, dists)):
        if (rep.conversations, rep.argument_pairs) != (ref["conversations"][i], ref["pairs"][i]):
            diffs.append(f"{rep.split}: {rep.conversations} conversations, {rep.argument_pairs} pairs")
        pct = dist.percentages()
        for row in ref["labels"]:
            got = (dist.counts[row["label"]], round(pct[row["label"]], 2))
            want = (row["counts"][i], row["percentages"][i])
            if got != want:
                diffs.append(f"{dist.split} {row['label']}: got {got}, reference {want}")
    print(f"{len(diffs)} differences from the reference tables")
    for d in diffs:
        print("  " + d)
    return 1 if diffs else 0


if __name__ == "__main__":
    sys.exit(main())
