"""End-to-end model: encoder -> graph -> scheduled GAT -> pair pooling -> sigmoid classifier."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .annotate import NER_INDEX, AnnotatedDialogue, Annotator, RuleAnnotator, locate_arguments
from .config import ModelConfig, model_config_from_dict
from .corpus import VOCAB, RelationInstance, RelationVocabulary
from .encoder import DialogueIds, EmbeddingTables, UtteranceEncoder
from .gat import STEPS, GatLayer, MetaPathSchedule, NodeStates, run_schedule
from .hetgraph import N_EDGE_FEATURES, HeteroGraph, build_graph
from .vectors import WordVocab


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required (training divergence)."""


@dataclass
class Example:
    """One argument pair in one (possibly truncated) dialogue, ready for the model."""

    key: tuple
    annotated: AnnotatedDialogue
    instance: RelationInstance
    graph: HeteroGraph
    ids: DialogueIds
    word_ids: torch.Tensor
    speaker_slots: torch.Tensor
    type_ids: torch.Tensor
    gold: frozenset[int]


def make_example(ad: AnnotatedDialogue, instance: RelationInstance, vocab: WordVocab, cfg: ModelConfig,
                 backend: Annotator | None = None, n_turns: int | None = None,
                 ids: DialogueIds | None = None) -> Example:
    full = ad
    if n_turns is not None and n_turns < len(ad.utterances):
        ad = ad.prefix(n_turns)
    subj, obj = locate_arguments(full, instance, backend or RuleAnnotator())
    graph = build_graph(ad, subj, obj, instance, argument_nodes=not cfg.no_argument_nodes,
                        pos_edge_features=not cfg.no_pos_edge_features)
    if ids is None or n_turns is not None:
        ids = DialogueIds.build(ad, vocab)
    key = (ad.dialogue.split, ad.dialogue.doc_id, len(ad.utterances))
    return Example(
        key=key,
        annotated=ad,
        instance=instance,
        graph=graph,
        ids=ids,
        word_ids=torch.tensor([vocab.get(w) for w in graph.words], dtype=torch.long),
        speaker_slots=torch.tensor([min(s, cfg.max_speakers - 1) for s in graph.speakers], dtype=torch.long),
        type_ids=torch.tensor([NER_INDEX[t] for t in graph.types], dtype=torch.long),
        gold=instance.relation_labels,
    )


def make_examples(annotated: Sequence[AnnotatedDialogue], vocab: WordVocab, cfg: ModelConfig,
                  backend: Annotator | None = None) -> list[Example]:
    out = []
    for ad in annotated:
        ids = DialogueIds.build(ad, vocab)
        for inst in ad.dialogue.relation_instances:
            out.append(make_example(ad, inst, vocab, cfg, backend, ids=ids))
    return out


@dataclass
class Prediction:
    probabilities: torch.Tensor
    predicted_labels: frozenset[int]


def classify(features: torch.Tensor, W_e: torch.Tensor, b_e: torch.Tensor, threshold: float = 0.5) -> Prediction:
    """sigmoid(W_e e' + b_e); labels with p >= threshold, else the single argmax."""
    logits = features @ W_e.T + b_e
    if not torch.isfinite(logits).all():
        raise NumericError("non-finite classifier logits")
    probs = torch.sigmoid(logits)
    return Prediction(probs, decide(probs, threshold))


def decide(probs: torch.Tensor, threshold: float = 0.5) -> frozenset[int]:
    chosen = frozenset(torch.nonzero(probs >= threshold).flatten().tolist())
    return chosen or frozenset([int(torch.argmax(probs))])


def multi_hot(labels: frozenset[int] | Sequence[int], n: int, dtype=torch.float32) -> torch.Tensor:
    v = torch.zeros(n, dtype=dtype)
    v[list(labels)] = 1.0
    return v


def bce_loss(probs: torch.Tensor, gold: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Mean per-label binary cross-entropy of probabilities against a multi-hot target."""
    # xlogy keeps 0 * log(0) at 0, so exact 0/1 probabilities on matching gold give zero loss
    pos = torch.xlogy(gold, probs.clamp_min(eps))
    neg = torch.xlogy(1 - gold, (1 - probs).clamp_min(eps))
    return -(pos + neg).mean()


class HGATModel(nn.Module):
    def __init__(self, cfg: ModelConfig, vocab: WordVocab, word_init: np.ndarray | None = None,
                 labels: RelationVocabulary = VOCAB):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.labels = labels
        self.schedule = MetaPathSchedule.parse(cfg.schedule)
        d = cfg.model_dim
        self.tables = EmbeddingTables(cfg, len(vocab), word_init)
        self.encoder = UtteranceEncoder(cfg, self.tables)
        self.utt_proj = nn.Linear(self.encoder.out_width, d)
        self.word_proj = nn.Linear(cfg.word_dim, d)
        self.layers = nn.ModuleList(
            GatLayer(d, cfg.heads, cfg.edge_dim, N_EDGE_FEATURES, cfg.ffn_mult, cfg.leaky_slope, cfg.activation)
            for _ in self.schedule.steps
        )
        self.pair_width = (2 if cfg.no_argument_nodes else 4) * d
        self.classifier = nn.Linear(self.pair_width, len(labels))

    # -- graph states -------------------------------------------------------------

    def initial_states(self, ex: Example, utterance_states: torch.Tensor) -> NodeStates:
        g = ex.graph
        parts = [self.word_proj(self.tables.word(ex.word_ids)), self.tables.speaker(ex.speaker_slots)]
        if g.arguments:
            parts.append(self.tables.argument.weight)
        return NodeStates(self.utt_proj(utterance_states), torch.cat(parts), self.tables.type_node(ex.type_ids))

    def pool_pair(self, H_b: torch.Tensor, g: HeteroGraph) -> torch.Tensor:
        """``[max(tau_x); max(e_x); max(tau_y); max(e_y)]`` (argument nodes dropped when ablated)."""
        feats = []
        for slot in (0, 1):
            if g.arguments:
                feats.append(H_b[g.argument_offset + slot])
            if g.argument_speaker[slot] is not None:
                rows = [g.speaker_offset + g.argument_speaker[slot]]
            else:
                rows = list(g.argument_words[slot])
            if rows:
                feats.append(H_b[rows].max(dim=0).values)
            else:
                feats.append(H_b.new_zeros(H_b.shape[1]))
        return torch.cat(feats)

    def pair_features(self, examples: Sequence[Example]) -> torch.Tensor:
        encoded = {}
        for ex in examples:
            if ex.key not in encoded:
                encoded[ex.key] = self.encoder(ex.ids).global_state
        inits = [self.initial_states(ex, encoded[ex.key]) for ex in examples]
        states, dirs, offsets = collate(inits, [ex.graph for ex in examples])
        final = run_schedule(dirs, states, self.schedule, self.layers)
        out = []
        for ex, (_, ob, _) in zip(examples, offsets):
            H_b = final.H_b[ob:ob + ex.graph.n_basic]
            out.append(self.pool_pair(H_b, ex.graph))
        return torch.stack(out)

    def forward(self, examples: Sequence[Example]) -> torch.Tensor:
        """Logits, one row per example."""
        return self.classifier(self.pair_features(examples))

    def predict(self, examples: Sequence[Example], threshold: float = 0.5) -> list[Prediction]:
        with torch.no_grad():
            feats = self.pair_features(examples)
        W, b = self.classifier.weight, self.classifier.bias
        return [classify(f, W.detach(), b.detach(), threshold) for f in feats]


def collate(states: Sequence[NodeStates], graphs: Sequence[HeteroGraph]):
    """Disjoint union of several graphs; returns states, direction tensors and row offsets."""
    offsets = []
    ou = ob = ot = 0
    for s in states:
        offsets.append((ou, ob, ot))
        ou += s.H_u.shape[0]
        ob += s.H_b.shape[0]
        ot += s.H_t.shape[0]
    fam_off = {"utterance": 0, "basic": 1, "type": 2}
    dirs = {}
    for step, (src_fam, dst_fam) in STEPS.items():
        srcs, dsts, feats = [], [], []
        for g, off in zip(graphs, offsets):
            s, d, f = g.directions()[step]
            srcs.append(s + off[fam_off[src_fam]])
            dsts.append(d + off[fam_off[dst_fam]])
            feats.append(f)
        dirs[step] = (torch.cat(srcs), torch.cat(dsts), torch.cat(feats))
    merged = NodeStates(torch.cat([s.H_u for s in states]), torch.cat([s.H_b for s in states]),
                        torch.cat([s.H_t for s in states]))
    return merged, dirs, offsets


def count_parameters(model: HGATModel) -> dict[str, int]:
    """Trainable parameter counts by component. ``total_excl_word_table`` leaves out the
    corpus-vocabulary lookup table, whose size depends on the data rather than the settings."""
    groups: dict[str, int] = {}
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        if name.startswith("tables.word"):
            g = "word_table"
        elif name.startswith("encoder.local"):
            g = "local_bilstm"
        elif name.startswith("encoder.glob"):
            g = "global_bilstm"
        elif name.startswith("layers."):
            g = "gat_layers"
        elif name.startswith("classifier"):
            g = "classifier"
        elif name.startswith(("utt_proj", "word_proj")):
            g = "projections"
        else:
            g = "other_embeddings"
        groups[g] = groups.get(g, 0) + p.numel()
    groups["total"] = sum(groups.values())
    groups["total_excl_word_table"] = groups["total"] - groups.get("word_table", 0)
    return groups


def save_checkpoint(path: str | Path, model: HGATModel, extra: dict | None = None) -> None:
    torch.save({
        "state_dict": model.state_dict(),
        "model_config": dataclasses.asdict(model.cfg),
        "vocab": model.vocab.tokens,
        "labels": list(model.labels.labels),
        "extra": extra or {},
    }, path)


def load_checkpoint(path: str | Path, labels: RelationVocabulary = VOCAB) -> tuple[HGATModel, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if tuple(blob["labels"]) != labels.labels:
        raise ValueError("checkpoint relation labels do not match the corpus label space")
    cfg = model_config_from_dict(blob["model_config"])
    vocab = WordVocab(blob["vocab"][2:])
    model = HGATModel(cfg, vocab, labels=labels)
    own = model.state_dict()
    for k, v in blob["state_dict"].items():
        if k not in own or own[k].shape != v.shape:
            raise ValueError(f"checkpoint tensor {k} has incompatible shape")
    model.load_state_dict(blob["state_dict"])
    return model, blob.get("extra", {})


def loss_from_logits(logits: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
    """Same objective as :func:`bce_loss`, computed stably from logits."""
    return F.binary_cross_entropy_with_logits(logits, gold)

