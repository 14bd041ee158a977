"""Training loop, macro-F1 evaluation (standard and conversational), experiment matrix."""
from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .annotate import AnnotatedDialogue, Annotator, RuleAnnotator
from .config import ABLATIONS, TrainConfig
from .corpus import VOCAB, Dialogue, RelationInstance
from .model import (Example, HGATModel, NumericError, decide, loss_from_logits, make_example, make_examples,
                    multi_hot, save_checkpoint)
from .vectors import WordVocab

log = logging.getLogger(__name__)


class DivergenceError(NumericError):
    pass


# -- metrics --------------------------------------------------------------------

@dataclass
class LabelCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


def label_counts(pairs: Iterable[tuple[Iterable[int], Iterable[int]]]) -> dict[int, LabelCounts]:
    """Per-label TP/FP/FN from ``(predicted, gold)`` label-set pairs."""
    counts: dict[int, LabelCounts] = {}
    for pred, gold in pairs:
        pred, gold = set(pred), set(gold)
        for r in pred | gold:
            c = counts.setdefault(r, LabelCounts())
            if r in pred and r in gold:
                c.tp += 1
            elif r in pred:
                c.fp += 1
            else:
                c.fn += 1
    return counts


def macro_f1(counts: dict[int, LabelCounts]) -> tuple[float, dict[int, float]]:
    """Unweighted mean of per-label F1 over labels seen in gold or predictions."""
    per = {r: c.f1 for r, c in sorted(counts.items())}
    return (sum(per.values()) / len(per) if per else 0.0), per


@dataclass
class EvalReport:
    split: str
    f1_standard: float | None = None
    f1_conversational: float | None = None
    per_label_f1: dict[str, float] = field(default_factory=dict)
    n_pairs: int = 0
    n_prefix_instances: int = 0

    def as_dict(self) -> dict:
        r = lambda v: None if v is None else round(v, 6)  # noqa: E731
        return {"split": self.split, "f1": r(self.f1_standard), "f1c": r(self.f1_conversational),
                "n_pairs": self.n_pairs, "n_prefix_instances": self.n_prefix_instances,
                "per_label_f1": {k: round(v, 6) for k, v in self.per_label_f1.items()}}


def conversational_prefixes(dialogue: Dialogue, instance: RelationInstance) -> list[tuple[int, frozenset[int]]]:
    """Prefixes on which a pair is scored in the conversational setting.

    Follows the DialogRE F1c definition: a pair is scored on every prefix of
    ``i`` turns (1 <= i <= N) once both argument strings have occurred
    (case-insensitive substring of a raw turn, speaker prefix included). On a
    prefix, a gold label with an annotated trigger only becomes *evaluable*
    once its trigger has occurred as well; gold labels without a trigger and
    all non-gold labels are evaluable as soon as the arguments are. At the
    final turn everything is evaluable. Returns ``(i, evaluable gold labels)``;
    non-gold labels are implicitly evaluable on each returned prefix.
    """
    x, y = instance.subject_text.casefold().strip(), instance.object_text.casefold().strip()
    triggers = {r: instance.trigger_for(r).casefold().strip() for r in instance.relation_labels}
    seen = {r: not t for r, t in triggers.items()}
    ex = ey = False
    out = []
    n = dialogue.n_turns
    for k, u in enumerate(dialogue.utterances):
        raw = u.raw.casefold()
        ex = ex or x in raw
        ey = ey or y in raw
        for r, t in triggers.items():
            if t and t in raw:
                seen[r] = True
        if k == n - 1:
            ex = ey = True
            seen = {r: True for r in seen}
        if ex and ey:
            out.append((k + 1, frozenset(r for r, s in seen.items() if s)))
    return out


def conversational_pair(pred: frozenset[int], gold: frozenset[int], evaluable_gold: frozenset[int]):
    """Restrict a prefix prediction to the evaluable label space."""
    hidden = gold - evaluable_gold
    return pred - hidden, gold - hidden


def _batches(items: Sequence, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def predict_labels(model: HGATModel, examples: Sequence[Example], batch_size: int = 32) -> list[frozenset[int]]:
    model.eval()
    preds = []
    with torch.no_grad():
        for batch in _batches(examples, batch_size):
            probs = torch.sigmoid(model(batch))
            if not torch.isfinite(probs).all():
                raise NumericError("non-finite predictions")
            preds.extend(decide(p) for p in probs)
    return preds


def evaluate_standard(model: HGATModel, examples: Sequence[Example], split: str = "",
                      batch_size: int = 32) -> EvalReport:
    preds = predict_labels(model, examples, batch_size)
    f1, per = macro_f1(label_counts(zip(preds, (ex.gold for ex in examples))))
    names = model.labels
    return EvalReport(split, f1_standard=f1, per_label_f1={names.name(r): v for r, v in per.items()},
                      n_pairs=len(examples))


def conversational_examples(annotated: Sequence[AnnotatedDialogue], vocab: WordVocab, model: HGATModel,
                            backend: Annotator | None = None) -> list[tuple[Example, frozenset[int]]]:
    out = []
    for ad in annotated:
        for inst in ad.dialogue.relation_instances:
            for n_turns, evaluable in conversational_prefixes(ad.dialogue, inst):
                ex = make_example(ad, inst, vocab, model.cfg, backend, n_turns=n_turns)
                out.append((ex, evaluable))
    return out


def evaluate_conversational(model: HGATModel, annotated: Sequence[AnnotatedDialogue], split: str = "",
                            backend: Annotator | None = None, batch_size: int = 32,
                            prepared: list | None = None) -> EvalReport:
    items = prepared if prepared is not None else conversational_examples(annotated, model.vocab, model, backend)
    preds = predict_labels(model, [ex for ex, _ in items], batch_size)
    pairs = [conversational_pair(p, ex.gold, ev) for p, (ex, ev) in zip(preds, items)]
    f1, per = macro_f1(label_counts(pairs))
    n_pairs = sum(len(ad.dialogue.relation_instances) for ad in annotated)
    return EvalReport(split, f1_conversational=f1, per_label_f1={model.labels.name(r): v for r, v in per.items()},
                      n_pairs=n_pairs, n_prefix_instances=len(items))


# -- training -----------------------------------------------------------------------

@dataclass
class TrainResult:
    model: HGATModel
    best_epoch: int
    best_dev_f1: float
    log: list[dict]
    checkpoint: Path | None = None


def seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def train(cfg: TrainConfig, train_data: Sequence[AnnotatedDialogue], dev_data: Sequence[AnnotatedDialogue],
          vocab: WordVocab, word_init: np.ndarray | None = None, out_dir: str | Path | None = None,
          backend: Annotator | None = None, dev_f1c: bool = True,
          on_epoch: Callable[[dict], None] | None = None, echo: dict | None = None) -> TrainResult:
    """Adam on mean per-label BCE; keeps the best-dev-F1 weights, early-stops on patience."""
    backend = backend or RuleAnnotator()
    rng = seed_everything(cfg.seed)
    model = HGATModel(cfg.model, vocab, word_init)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    train_ex = make_examples(train_data, vocab, cfg.model, backend)
    dev_ex = make_examples(dev_data, vocab, cfg.model, backend) if dev_data else []
    dev_conv = conversational_examples(dev_data, vocab, model, backend) if dev_data and dev_f1c else None
    out_dir = Path(out_dir) if out_dir else None
    log_fh = open(out_dir / "train_log.jsonl", "w") if out_dir else None

    best_f1, best_epoch, best_state, stale = -1.0, 0, None, 0
    history = []
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            model.train()
            order = rng.permutation(len(train_ex))
            total, n = 0.0, 0
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                batch = [train_ex[i] for i in order[start:start + cfg.batch_size]]
                gold = torch.stack([multi_hot(ex.gold, len(model.labels)) for ex in batch])
                loss = loss_from_logits(model(batch), gold)
                if not torch.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b} "
                                          f"(dialogues {sorted({ex.key[1] for ex in batch})})")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(batch)
                n += len(batch)
            rec = {"epoch": epoch, "train_loss": total / max(n, 1), "dev_f1": None, "dev_f1c": None,
                   "lr": cfg.learning_rate}
            if dev_ex:
                rec["dev_f1"] = evaluate_standard(model, dev_ex, "dev").f1_standard
            if dev_conv is not None:
                rec["dev_f1c"] = evaluate_conversational(model, dev_data, "dev", prepared=dev_conv).f1_conversational
            rec["wall_seconds"] = round(time.perf_counter() - t0, 3)
            history.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            if on_epoch:
                on_epoch(rec)
            log.info("epoch %d loss %.5f dev_f1 %s", epoch, rec["train_loss"], rec["dev_f1"])
            score = rec["dev_f1"] if rec["dev_f1"] is not None else -rec["train_loss"]
            if score > best_f1:
                best_f1, best_epoch, stale = score, epoch, 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
    if best_state is not None:
        model.load_state_dict(best_state)
    ckpt = None
    if out_dir:
        ckpt = out_dir / "model.pt"
        save_checkpoint(ckpt, model, {"best_epoch": best_epoch, "best_dev_f1": best_f1, "config": echo or {}})
    return TrainResult(model, best_epoch, best_f1, history, ckpt)


# -- experiment matrix ----------------------------------------------------------------

ROW_LABELS = {
    "no_local_lstm": "w/o Local BiLSTM",
    "no_global_lstm": "w/o Global BiLSTM",
    "no_argument_nodes": "w/o Argument nodes",
    "no_pos_embedding": "w/o POS embedding",
    "no_ner_embedding": "w/o NER embedding",
    "no_pos_edge_features": "w/o POS edge weights",
}
SCHEDULE_LABELS = {"ABCDA": "Full model (L=5)", "A": "Strategy1 (L=1)", "ABCDADA": "Strategy2 (L=7)",
                   "ABCDABCDA": "Strategy3 (L=9)"}


def row_label(row: dict) -> str:
    if row.get("label"):
        return row["label"]
    flags = [ROW_LABELS[k] for k in ABLATIONS if row.get(k)]
    if flags:
        return ", ".join(flags)
    sched = row.get("schedule", "ABCDA")
    return SCHEDULE_LABELS.get(sched, f"schedule {sched} (L={len(sched)})")


def config_for_row(base: TrainConfig, row: dict) -> TrainConfig:
    model_kw = {k: v for k, v in row.items() if k in ABLATIONS or k == "schedule"}
    train_kw = {k: v for k, v in row.items() if k in ("seed", "epochs", "learning_rate", "batch_size", "patience")}
    return replace(base, model=replace(base.model, **model_kw), **train_kw)


def run_experiment_matrix(base: TrainConfig, rows: Sequence[dict], train_data, dev_data, test_data, vocab,
                          word_init=None, out_dir: str | Path | None = None, conversational: bool = True,
                          backend: Annotator | None = None) -> list[dict]:
    rows = list(rows) or [{}]
    results = []
    for i, row in enumerate(rows):
        label = row_label(row)
        rec = {"row": label, "status": "ok"}
        try:
            cfg = config_for_row(base, row)
            sub = Path(out_dir) / f"row{i:02d}" if out_dir else None
            if sub:
                sub.mkdir(parents=True, exist_ok=True)
            res = train(cfg, train_data, dev_data, vocab, word_init, sub, backend, dev_f1c=False)
            for split, data in (("dev", dev_data), ("test", test_data)):
                if not data:
                    continue
                exs = make_examples(data, vocab, cfg.model, backend)
                rec[f"{split}_f1"] = evaluate_standard(res.model, exs, split).f1_standard
                if conversational:
                    rec[f"{split}_f1c"] = evaluate_conversational(res.model, data, split, backend).f1_conversational
        except Exception as exc:  # a failed row must not stop the matrix
            log.exception("row %s failed", label)
            rec["status"] = f"error: {exc}"
        results.append(rec)
    return results


METRIC_COLUMNS = ("dev_f1", "dev_f1c", "test_f1", "test_f1c")


def results_tsv(rows: Sequence[dict]) -> str:
    lines = ["\t".join(("row",) + METRIC_COLUMNS + ("status",))]
    for r in rows:
        vals = [_pct(r.get(c)) for c in METRIC_COLUMNS]
        lines.append("\t".join([r["row"], *vals, r["status"]]))
    return "\n".join(lines) + "\n"


def results_text(rows: Sequence[dict]) -> str:
    w = max(len("row"), *(len(r["row"]) for r in rows))
    head = "row".ljust(w) + "".join(f"{c:>10}" for c in METRIC_COLUMNS)
    out = [head]
    for r in rows:
        line = r["row"].ljust(w) + "".join(f"{_pct(r.get(c)):>10}" for c in METRIC_COLUMNS)
        if r["status"] != "ok":
            line += "  " + r["status"]
        out.append(line)
    return "\n".join(out) + "\n"


def _pct(v) -> str:
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{100 * v:.1f}"


