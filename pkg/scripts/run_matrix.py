"""Run the ablation and meta-path matrices through ``hetdre experiment``.

    python scripts/run_matrix.py --data-dir $DIALOGRE_DIR [--vectors glove.840B.300d.txt] [--which meta_paths]

Extra arguments after ``--`` go to the CLI unchanged (e.g. ``-- --epochs 5``).
"""
import argparse
import sys
from pathlib import Path

from hetdre.cli import main as hetdre

MATRICES = Path(__file__).resolve().parent / "matrices"


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-dir", required=True)
    p.add_argument("--vectors", default="")
    p.add_argument("--out-dir", default="runs")
    p.add_argument("--which", nargs="+", default=["ablations", "meta_paths"],
                   choices=[m.stem for m in MATRICES.glob("*.json")])
    p.add_argument("rest", nargs=argparse.REMAINDER)
    args = p.parse_args(argv)
    rest = args.rest[1:] if args.rest[:1] == ["--"] else args.rest
    for name in args.which:
        argv = ["experiment", "--matrix", str(MATRICES / f"{name}.json"), "--data-dir", args.data_dir,
                "--out-dir", str(Path(args.out_dir) / name), *rest]
        if args.vectors:
            argv += ["--vectors", args.vectors]
        code = hetdre(argv)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
