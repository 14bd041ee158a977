"""Capacity check: fit a 20-dialogue training subset for 200 epochs at the default settings.

Uses ``--data-dir`` when given, else a synthetic corpus; prints the training macro F1.
"""
import argparse
import sys
import time

from hetdre.annotate import RuleAnnotator, annotate_dialogue
from hetdre.config import TrainConfig
from hetdre.corpus import load_split, parse_corpus
from hetdre.model import make_examples
from hetdre.toydata import make_records
from hetdre.traineval import evaluate_standard, train
from hetdre.vectors import WordVocab, embedding_matrix


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-dir")
    p.add_argument("--dialogues", type=int, default=20)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.90)
    args = p.parse_args(argv)
    if args.data_dir:
        dialogues = load_split(args.data_dir, "train")[:args.dialogues]
    else:
        dialogues = parse_corpus(make_records(args.dialogues, seed=args.seed))
    backend = RuleAnnotator()
    annotated = [annotate_dialogue(d, backend) for d in dialogues]
    vocab = WordVocab.from_annotated(annotated)
    cfg = TrainConfig(epochs=args.epochs, patience=args.epochs, seed=args.seed)
    t0 = time.perf_counter()

    def report(rec):
        if rec["epoch"] % 20 == 0:
            print(f"epoch {rec['epoch']:4d}  loss {rec['train_loss']:.5f}", flush=True)

    res = train(cfg, annotated, [], vocab, embedding_matrix(vocab, None, cfg.model.word_dim), backend=backend,
                dev_f1c=False, on_epoch=report)
    f1 = evaluate_standard(res.model, make_examples(annotated, vocab, cfg.model, backend)).f1_standard
    print(f"training macro F1 {f1:.4f} after {time.perf_counter() - t0:.0f}s")
    return 0 if f1 >= args.threshold else 1


if __name__ == "__main__":
    sys.exit(main())
