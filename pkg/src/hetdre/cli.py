"""Command line entry point: ``hetdre <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import torch

from . import annotate as ann
from .config import ConfigError, RunConfig, dump_config, flatten, load_config
from .corpus import SPLITS, VOCAB, CorpusError, corpus_stats, format_labels, format_stats, label_distribution, \
    load_split, parse_corpus
from .model import HGATModel, NumericError, count_parameters, load_checkpoint, make_example, make_examples
from .traineval import (evaluate_conversational, evaluate_standard, results_text, results_tsv,
                        run_experiment_matrix, train)
from .vectors import WordVocab, embedding_matrix, load_pretrained

log = logging.getLogger("hetdre")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class PathError(FileNotFoundError):
    def __init__(self, field_name: str, path):
        super().__init__(f"{field_name}: no such file or directory: {path}")


def _check_path(field_name: str, path, kind: str = "any"):
    p = Path(path)
    if not p.exists() or (kind == "dir" and not p.is_dir()) or (kind == "file" and not p.is_file()):
        raise PathError(field_name, path)
    return p


def _annotate_one(args):
    dialogue, backend_name = args
    return ann.annotate_dialogue(dialogue, ann.get_backend(backend_name))


def annotated_split(cfg: RunConfig, split: str, backend=None):
    """Annotated dialogues of a split, from the preprocess cache when it is current."""
    path = _check_path("data_dir", Path(cfg.data_dir) / f"{split}.json", "file")
    dialogues = load_split(cfg.data_dir, split)
    backend = backend or ann.get_backend(cfg.backend)
    key = ann.cache_key(path, backend)
    cache = Path(cfg.cache_dir) / f"{split}.{key}.annot"
    if cache.exists():
        return ann.read_cache(cache, dialogues, key)
    if cfg.workers > 1 and getattr(backend, "shareable", False):
        with ProcessPoolExecutor(cfg.workers) as pool:
            return list(pool.map(_annotate_one, [(d, cfg.backend) for d in dialogues], chunksize=16))
    return [ann.annotate_dialogue(d, backend) for d in dialogues]


def _run_dir(cfg: RunConfig, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    d = Path(cfg.out_dir) / f"{stamp}-seed{cfg.train.seed}-{command}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.txt").write_text(dump_config(cfg))
    return d


def _emit(obj: dict, text: str, fmt: str):
    print(json.dumps(obj, indent=2, sort_keys=True) if fmt == "json" else text)


# -- commands ------------------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig, args) -> int:
    backend = ann.get_backend(cfg.backend)
    Path(cfg.cache_dir).mkdir(parents=True, exist_ok=True)
    for split in args.splits:
        path = _check_path("data_dir", Path(cfg.data_dir) / f"{split}.json", "file")
        key = ann.cache_key(path, backend)
        out = Path(cfg.cache_dir) / f"{split}.{key}.annot"
        annotated = annotated_split(cfg, split, backend)
        ann.write_cache(out, annotated, backend, key)
        print(f"{split}: {len(annotated)} dialogues -> {out}")
    return EXIT_OK


def cmd_stats(cfg: RunConfig, args) -> int:
    splits = list(SPLITS) if args.split == "all" else [args.split]
    corpora = {s: load_split(_check_path("data_dir", cfg.data_dir, "dir"), s) for s in splits}
    if args.labels:
        dists = [label_distribution(corpora[s], s) for s in splits]
        obj = {d.split: {"counts": d.counts, "percentages": {k: round(v, 2) for k, v in d.percentages().items()}}
               for d in dists}
        _emit(obj, format_labels(dists), cfg.format)
    else:
        reports = [corpus_stats(corpora[s]) for s in splits]
        _emit({r.split: r.as_dict() for r in reports}, format_stats(reports), cfg.format)
    return EXIT_OK


def _load_all(cfg: RunConfig, splits):
    backend = ann.get_backend(cfg.backend)
    data = {s: annotated_split(cfg, s, backend) for s in splits}
    return data, backend


def _vocab_and_vectors(cfg: RunConfig, annotated_lists):
    vocab = WordVocab()
    for lst in annotated_lists:
        for ad in lst:
            for au in ad.utterances:
                for tok in au.tokens:
                    vocab.add(tok.norm)
    pretrained = None
    if cfg.vectors:
        pretrained = load_pretrained(_check_path("vectors", cfg.vectors, "file"), vocab, cfg.train.model.word_dim)
        log.info("pretrained vectors for %d/%d tokens", len(pretrained), len(vocab))
    return vocab, embedding_matrix(vocab, pretrained, cfg.train.model.word_dim)


def cmd_train(cfg: RunConfig, args) -> int:
    data, backend = _load_all(cfg, SPLITS)
    vocab, init = _vocab_and_vectors(cfg, data.values())
    run = _run_dir(cfg, "train")
    res = train(cfg.train, data["train"], data["dev"], vocab, init, run, backend, dev_f1c=not args.no_f1c,
                on_epoch=lambda r: print(json.dumps(r)), echo=flatten(cfg))
    summary = {"config": flatten(cfg), "best_epoch": res.best_epoch, "best_dev_f1": res.best_dev_f1,
               "checkpoint": str(res.checkpoint)}
    (run / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"best dev F1 {100 * res.best_dev_f1:.2f} at epoch {res.best_epoch}; checkpoint {res.checkpoint}")
    return EXIT_OK


def _checkpoint(cfg: RunConfig) -> HGATModel:
    if not cfg.checkpoint:
        raise PathError("checkpoint", "(unset)")
    model, _ = load_checkpoint(_check_path("checkpoint", cfg.checkpoint, "file"))
    model.eval()
    return model


def cmd_eval(cfg: RunConfig, args) -> int:
    model = _checkpoint(cfg)
    backend = ann.get_backend(cfg.backend)
    data = annotated_split(cfg, args.split, backend)
    if args.setting == "standard":
        rep = evaluate_standard(model, make_examples(data, model.vocab, model.cfg, backend), args.split)
        score = rep.f1_standard
    else:
        rep = evaluate_conversational(model, data, args.split, backend)
        score = rep.f1_conversational
    obj = {"config": flatten(cfg), "setting": args.setting, **rep.as_dict()}
    run = _run_dir(cfg, "eval")
    (run / f"eval_{args.split}_{args.setting}.json").write_text(json.dumps(obj, indent=2, sort_keys=True))
    label = "F1" if args.setting == "standard" else "F1c"
    _emit(obj, f"{args.split} {args.setting} macro {label}: {100 * score:.2f}", cfg.format)
    return EXIT_OK


def _read_dialogue_file(path: Path):
    raw = json.loads(path.read_text(encoding="utf-8"))
    # accepted shapes: list of turns, [turns, relations], or [[turns, relations], ...]
    while raw and isinstance(raw[0], list):
        raw = raw[0]
    if not raw or not all(isinstance(t, str) for t in raw):
        raise CorpusError(f"{path}: expected a list of 'Speaker k: text' turns")
    return raw


def cmd_predict(cfg: RunConfig, args) -> int:
    model = _checkpoint(cfg)
    backend = ann.get_backend(cfg.backend)
    turns = _read_dialogue_file(_check_path("dialogue", args.dialogue, "file"))
    record = [turns, [{"x": args.subject, "y": args.object, "r": ["unanswerable"], "t": [""],
                       "x_type": "", "y_type": ""}]]
    dialogue = parse_corpus([record], "test")[0]
    ad = ann.annotate_dialogue(dialogue, backend)
    ex = make_example(ad, dialogue.relation_instances[0], model.vocab, model.cfg, backend)
    pred = model.predict([ex])[0]
    probs = pred.probabilities.tolist()
    ranked = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    rows = [{"label": VOCAB.name(i), "probability": round(probs[i], 6), "predicted": i in pred.predicted_labels}
            for i in ranked]
    if args.graph_dump:
        Path(args.graph_dump).write_text(json.dumps(ex.graph.to_json(), indent=1, ensure_ascii=False))
    text = "\n".join(f"{'*' if r['predicted'] else ' '} {r['probability']:.4f}  {r['label']}" for r in rows[:args.top])
    _emit({"subject": args.subject, "object": args.object, "labels": rows}, text, cfg.format)
    return EXIT_OK


def cmd_params(cfg: RunConfig, args) -> int:
    vocab = WordVocab()
    if args.with_corpus:
        data, _ = _load_all(cfg, SPLITS)
        vocab, _ = _vocab_and_vectors(cfg, data.values())
    counts = count_parameters(HGATModel(cfg.train.model, vocab))
    lines = [f"{k:<24}{v:>12,}" for k, v in counts.items()]
    _emit({"config": flatten(cfg), **counts}, "\n".join(lines), cfg.format)
    return EXIT_OK


def cmd_experiment(cfg: RunConfig, args) -> int:
    matrix = json.loads(_check_path("matrix", args.matrix, "file").read_text())
    rows = matrix.get("rows", []) if isinstance(matrix, dict) else matrix
    data, backend = _load_all(cfg, SPLITS)
    vocab, init = _vocab_and_vectors(cfg, data.values())
    run = _run_dir(cfg, "experiment")
    results = run_experiment_matrix(cfg.train, rows, data["train"], data["dev"], data["test"], vocab, init, run,
                                    conversational=not args.no_f1c, backend=backend)
    header = "".join(f"# {line}\n" for line in dump_config(cfg).splitlines())
    (run / "results.tsv").write_text(header + results_tsv(results))
    (run / "results.txt").write_text(header + results_text(results))
    print(results_text(results))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    for flag in ("data-dir", "vectors", "cache-dir", "out-dir", "checkpoint", "backend", "schedule"):
        common.add_argument(f"--{flag}")
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--format", choices=("text", "json"))
    common.add_argument("--json", dest="format", action="store_const", const="json")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hetdre", description="Heterogeneous graph attention for dialogue RE")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", parents=[common], help="annotate splits into the cache")
    s.add_argument("--splits", nargs="+", default=list(SPLITS), choices=SPLITS)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("stats", parents=[common], help="dataset statistics")
    s.add_argument("--split", default="all", choices=SPLITS + ("all",))
    s.add_argument("--labels", action="store_true", help="per-label counts and percentages")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("train", parents=[common], help="train and keep the best-dev checkpoint")
    s.add_argument("--no-f1c", action="store_true", help="skip dev F1c in the epoch log")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--split", default="dev", choices=("dev", "test", "train"))
    s.add_argument("--setting", default="standard", choices=("standard", "conversational"))
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", parents=[common], help="rank relation labels for one pair")
    s.add_argument("--dialogue", required=True)
    s.add_argument("--subject", required=True)
    s.add_argument("--object", required=True)
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--graph-dump", metavar="PATH", help="write the pair's graph as JSON")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("params", parents=[common], help="trainable parameter counts")
    s.add_argument("--with-corpus", action="store_true", help="include the corpus word table")
    s.set_defaults(func=cmd_params)

    s = sub.add_parser("experiment", parents=[common], help="ablation / meta-path matrix")
    s.add_argument("--matrix", required=True)
    s.add_argument("--no-f1c", action="store_true")
    s.set_defaults(func=cmd_experiment)
    return p


def _overrides(args) -> dict[str, str]:
    items = {}
    for kv in args.set:
        k, sep, v = kv.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {kv!r}")
        items[k.strip()] = v.strip()
    for name in ("data_dir", "vectors", "cache_dir", "out_dir", "checkpoint", "backend", "schedule", "seed",
                 "epochs", "workers", "format"):
        v = getattr(args, name, None)
        if v is not None:
            items[name] = str(v)
    return items


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.config:
            _check_path("config", args.config, "file")
        cfg = load_config(args.config, _overrides(args))
    except (ConfigError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PathError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    torch.manual_seed(cfg.train.seed)
    try:
        return args.func(cfg, args)
    except NumericError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, ann.AnnotationError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
