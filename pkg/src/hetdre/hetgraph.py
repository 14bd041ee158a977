"""Per-dialogue heterogeneous graph: utterance, word, speaker, argument and type nodes.

Edges are undirected and bipartite between families. Each edge carries an
integer feature id into a per-layer edge embedding table: utterance-word edges
use the POS id of the word's first occurrence in that utterance, every other
family a single learned id.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import torch

from .annotate import (CORPUS_TYPE_MAP, NER_INDEX, NER_TYPES, POS_INDEX, POS_TAGS,
                       AnnotatedDialogue, ArgumentSpans)
from .corpus import RelationInstance

EDGE_FAMILIES = ("utterance-word", "utterance-argument", "utterance-speaker", "type-word", "type-argument")
# ids >= len(POS_TAGS) are the per-family learned features
FAMILY_FEATURE = {fam: len(POS_TAGS) + i for i, fam in enumerate(EDGE_FAMILIES)}
N_EDGE_FEATURES = len(POS_TAGS) + len(EDGE_FAMILIES)


def edge_feature_id(family: str, pos: str | None = None, use_pos: bool = True) -> int:
    if family not in FAMILY_FEATURE:
        raise ValueError(f"unknown edge family {family!r}")
    if family == "utterance-word" and use_pos:
        return POS_INDEX[pos]
    return FAMILY_FEATURE[family]


@dataclass(frozen=True)
class EdgeTable:
    family: str
    pairs: tuple[tuple[int, int], ...]  # (utterance|type index, other-family index)
    feature_ids: tuple[int, ...]


@dataclass(frozen=True)
class HeteroGraph:
    utterances: tuple[int, ...]
    words: tuple[str, ...]
    speakers: tuple[int, ...]
    arguments: tuple[str, ...]
    types: tuple[str, ...]
    edges: dict[str, EdgeTable]
    # word-node indices matched by each argument, and speaker node for speaker-valued ones
    argument_words: tuple[tuple[int, ...], tuple[int, ...]] = ((), ())
    argument_speaker: tuple[int | None, int | None] = (None, None)
    _tensors: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def basic_index(self) -> list[tuple[str, object]]:
        return ([("word", w) for w in self.words] + [("speaker", s) for s in self.speakers]
                + [("argument", a) for a in self.arguments])

    @property
    def n_basic(self) -> int:
        return len(self.words) + len(self.speakers) + len(self.arguments)

    @property
    def speaker_offset(self) -> int:
        return len(self.words)

    @property
    def argument_offset(self) -> int:
        return len(self.words) + len(self.speakers)

    def family_keys(self, family: str) -> tuple:
        return {"utterance": self.utterances, "word": self.words, "speaker": self.speakers,
                "argument": self.arguments, "type": self.types}[family]

    def to_json(self) -> dict:
        ends = {"utterance-word": ("utterance", "word"), "utterance-argument": ("utterance", "argument"),
                "utterance-speaker": ("utterance", "speaker"), "type-word": ("type", "word"),
                "type-argument": ("type", "argument")}
        edges = {}
        for fam, table in self.edges.items():
            a, b = ends[fam]
            ka, kb = self.family_keys(a), self.family_keys(b)
            edges[fam] = {"pairs": [[ka[i], kb[j]] for i, j in table.pairs],
                          "feature_ids": list(table.feature_ids)}
        return {
            "nodes": {"utterance": list(self.utterances), "word": list(self.words),
                      "speaker": list(self.speakers), "argument": list(self.arguments),
                      "type": list(self.types)},
            "edges": edges,
            "basic_index": [[f, k] for f, k in self.basic_index],
            "argument_words": [[self.words[i] for i in ws] for ws in self.argument_words],
            "argument_speaker": list(self.argument_speaker),
        }

    def canonical(self) -> str:
        """Key-free serialization: equal for graphs that differ only by node renaming."""
        body = {
            "sizes": [len(self.utterances), len(self.words), len(self.speakers), len(self.arguments),
                      len(self.types)],
            "edges": {f: sorted(zip(t.pairs, t.feature_ids)) for f, t in self.edges.items()},
            "argument_words": [list(w) for w in self.argument_words],
            "argument_speaker": list(self.argument_speaker),
        }
        return json.dumps(body, sort_keys=True)

    def directions(self) -> dict[str, tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
        """``(src, dst, feature)`` index tensors for the four propagation steps.

        A: utterance -> basic, B: basic -> type, C: type -> basic, D: basic -> utterance.
        Basic-node indices follow ``basic_index`` (words, speakers, arguments).
        """
        if self._tensors:
            return self._tensors
        offsets = {"word": 0, "speaker": self.speaker_offset, "argument": self.argument_offset}
        ub_src, ub_dst, ub_f, tb_t, tb_b, tb_f = [], [], [], [], [], []
        for fam, table in self.edges.items():
            left, right = fam.split("-")
            for (i, j), f in zip(table.pairs, table.feature_ids):
                if left == "utterance":
                    ub_src.append(i)
                    ub_dst.append(offsets[right] + j)
                    ub_f.append(f)
                else:
                    tb_t.append(i)
                    tb_b.append(offsets[right] + j)
                    tb_f.append(f)
        t = lambda xs: torch.tensor(xs, dtype=torch.long)  # noqa: E731
        self._tensors.update({
            "A": (t(ub_src), t(ub_dst), t(ub_f)),
            "D": (t(ub_dst), t(ub_src), t(ub_f)),
            "B": (t(tb_b), t(tb_t), t(tb_f)),
            "C": (t(tb_t), t(tb_b), t(tb_f)),
        })
        return self._tensors


def _argument_types(ad: AnnotatedDialogue, spans: ArgumentSpans, fallback: str) -> list[str]:
    types = []
    for sp in spans.spans:
        toks = ad.utterances[sp.utterance_index].tokens
        for tok in toks[sp.token_range[0]:sp.token_range[1]]:
            if tok.ner not in types:
                types.append(tok.ner)
    if not types:
        mapped = CORPUS_TYPE_MAP.get(fallback.upper(), fallback.upper())
        types.append(mapped if mapped in NER_INDEX else "NONE")
    return types


def build_graph(ad: AnnotatedDialogue, subject: ArgumentSpans, obj: ArgumentSpans,
                instance: RelationInstance | None = None, *, argument_nodes: bool = True,
                pos_edge_features: bool = True) -> HeteroGraph:
    n_turns = len(ad.utterances)
    # spans beyond a truncated prefix do not exist in the graph
    subject = ArgumentSpans(subject.slot, tuple(s for s in subject.spans if s.utterance_index < n_turns),
                            subject.speaker)
    obj = ArgumentSpans(obj.slot, tuple(s for s in obj.spans if s.utterance_index < n_turns), obj.speaker)

    words: dict[str, int] = {}
    uw: dict[tuple[int, int], int] = {}
    word_types: dict[int, list[str]] = {}
    for u, au in enumerate(ad.utterances):
        for tok in au.tokens:
            w = words.setdefault(tok.norm, len(words))
            if (u, w) not in uw:
                uw[(u, w)] = edge_feature_id("utterance-word", tok.pos, pos_edge_features)
            wt = word_types.setdefault(w, [])
            if tok.ner not in wt:
                wt.append(tok.ner)

    present_speakers = sorted({s for ids in ad.speakers.turn_speakers[:n_turns] for s in ids})
    speaker_node = {s: i for i, s in enumerate(present_speakers)}

    arg_types: list[list[str]] = []
    if argument_nodes:
        arguments = ("subject", "object")
        fallbacks = (instance.subject_type, instance.object_type) if instance else ("", "")
        arg_types = [_argument_types(ad, sp, fb) for sp, fb in zip((subject, obj), fallbacks)]
    else:
        arguments = ()

    used_types = {t for ts in word_types.values() for t in ts} | {t for ts in arg_types for t in ts}
    types = tuple(t for t in NER_TYPES if t in used_types)
    type_node = {t: i for i, t in enumerate(types)}

    edges = {}
    pairs = sorted(uw)
    edges["utterance-word"] = EdgeTable("utterance-word", tuple(pairs), tuple(uw[p] for p in pairs))
    us = sorted((u, speaker_node[s]) for u, ids in enumerate(ad.speakers.turn_speakers[:n_turns]) for s in ids)
    edges["utterance-speaker"] = EdgeTable("utterance-speaker", tuple(us),
                                           (FAMILY_FEATURE["utterance-speaker"],) * len(us))
    tw = sorted((type_node[t], w) for w, ts in word_types.items() for t in ts)
    edges["type-word"] = EdgeTable("type-word", tuple(tw), (FAMILY_FEATURE["type-word"],) * len(tw))
    if argument_nodes:
        ua = sorted({(sp.utterance_index, a) for a, spans in enumerate((subject, obj)) for sp in spans.spans})
        edges["utterance-argument"] = EdgeTable("utterance-argument", tuple(ua),
                                                (FAMILY_FEATURE["utterance-argument"],) * len(ua))
        ta = sorted({(type_node[t], a) for a, ts in enumerate(arg_types) for t in ts})
        edges["type-argument"] = EdgeTable("type-argument", tuple(ta), (FAMILY_FEATURE["type-argument"],) * len(ta))

    arg_words = []
    arg_speaker = []
    for spans in (subject, obj):
        ws = []
        for sp in spans.spans:
            toks = ad.utterances[sp.utterance_index].tokens
            for tok in toks[sp.token_range[0]:sp.token_range[1]]:
                if words[tok.norm] not in ws:
                    ws.append(words[tok.norm])
        arg_words.append(tuple(sorted(ws)))
        arg_speaker.append(speaker_node.get(spans.speaker) if spans.speaker is not None else None)

    return HeteroGraph(
        utterances=tuple(range(n_turns)),
        words=tuple(words),
        speakers=tuple(present_speakers),
        arguments=arguments,
        types=types,
        edges=edges,
        argument_words=(arg_words[0], arg_words[1]),
        argument_speaker=(arg_speaker[0], arg_speaker[1]),
    )
