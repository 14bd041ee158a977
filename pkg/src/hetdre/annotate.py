"""Tokenization, POS/NER tagging, speaker resolution and argument grounding.

Backends implement :class:`Annotator`. ``RuleAnnotator`` is a deterministic,
dependency-free fallback used by the test suite; ``SpacyAnnotator`` adapts a
spaCy pipeline when one is installed.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .corpus import Dialogue, RelationInstance, Utterance, speaker_names

# Universal POS tags (+ SPACE, which spaCy emits for whitespace tokens).
POS_TAGS = (
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART",
    "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X", "SPACE",
)
# OntoNotes entity types, the corpus' own STRING/VALUE argument types, NONE.
NER_TYPES = (
    "PERSON", "NORP", "FAC", "ORG", "GPE", "LOC", "PRODUCT", "EVENT",
    "WORK_OF_ART", "LAW", "LANGUAGE", "DATE", "TIME", "PERCENT", "MONEY",
    "QUANTITY", "ORDINAL", "CARDINAL", "STRING", "VALUE", "NONE",
)
POS_INDEX = {t: i for i, t in enumerate(POS_TAGS)}
NER_INDEX = {t: i for i, t in enumerate(NER_TYPES)}

# corpus x_type/y_type -> entity type
CORPUS_TYPE_MAP = {"PER": "PERSON", "GPE": "GPE", "ORG": "ORG", "STRING": "STRING", "VALUE": "VALUE"}


class AnnotationError(RuntimeError):
    def __init__(self, msg: str, turn: int | None = None):
        super().__init__(msg if turn is None else f"turn {turn}: {msg}")
        self.turn = turn


@dataclass(frozen=True)
class TokenAnnotation:
    surface: str
    norm: str
    pos: str
    ner: str
    start: int = 0

    def __post_init__(self):
        if self.pos not in POS_INDEX:
            raise AnnotationError(f"POS tag {self.pos!r} not in vocabulary")
        if self.ner not in NER_INDEX:
            raise AnnotationError(f"entity type {self.ner!r} not in vocabulary")

    @property
    def pos_id(self) -> int:
        return POS_INDEX[self.pos]

    @property
    def ner_id(self) -> int:
        return NER_INDEX[self.ner]


@dataclass(frozen=True)
class AnnotatedUtterance:
    utterance: Utterance
    tokens: tuple[TokenAnnotation, ...]
    speaker_ids: frozenset[int]
    # (token_start, token_end, speaker_id) for in-text mentions like "Speaker 2"
    speaker_mentions: tuple[tuple[int, int, int], ...] = ()


@dataclass(frozen=True)
class SpeakerMap:
    names: tuple[str, ...]
    turn_speakers: tuple[frozenset[int], ...]

    def id(self, name: str) -> int | None:
        key = _canon_speaker(name)
        for i, n in enumerate(self.names):
            if _canon_speaker(n) == key:
                return i
        return None

    def turns_of(self, speaker: int) -> list[int]:
        return [t for t, ids in enumerate(self.turn_speakers) if speaker in ids]


@dataclass(frozen=True)
class AnnotatedDialogue:
    dialogue: Dialogue
    utterances: tuple[AnnotatedUtterance, ...]
    speakers: SpeakerMap

    def prefix(self, n_turns: int) -> "AnnotatedDialogue":
        speakers = SpeakerMap(self.speakers.names, self.speakers.turn_speakers[:n_turns])
        return AnnotatedDialogue(self.dialogue.prefix(n_turns), self.utterances[:n_turns], speakers)


@dataclass(frozen=True)
class MentionSpan:
    utterance_index: int
    token_range: tuple[int, int]
    argument_slot: str  # "subject" | "object"


@dataclass(frozen=True)
class ArgumentSpans:
    slot: str
    spans: tuple[MentionSpan, ...]
    speaker: int | None = None  # set when the argument names a speaker

    @property
    def unlocated(self) -> bool:
        return not self.spans


class Annotator(Protocol):
    name: str
    version: str
    shareable: bool

    def annotate(self, text: str) -> list[TokenAnnotation]:
        ...


# -- rule-based fallback ---------------------------------------------------------

_TOKEN_RE = re.compile(
    r"[A-Za-z]+(?=n't\b)|n't\b|'(?:s|m|re|ve|ll|d)\b"
    r"|\d+(?:[.,:]\d+)*|\w+(?:-\w+)*|\.\.\.|[^\w\s]",
    re.IGNORECASE,
)

_CLOSED = {
    "DET": "a an the this that these those every each some any no another either neither all both".split(),
    "PRON": ("i me my mine myself you your yours yourself yourselves he him his himself she her hers herself "
             "it its itself we us our ours ourselves they them their theirs themselves who whom whose what "
             "which something anything nothing everything someone anyone everyone nobody somebody anybody "
             "everybody").split(),
    "ADP": ("in on at by for with about against between into through during before after above below to "
            "from up down of off over under again near like without within across behind beyond upon").split(),
    "CCONJ": "and or but nor yet".split(),
    "SCONJ": "if because while although though since unless until whether than once".split(),
    "AUX": ("am is are was were be been being have has had do does did will would shall should can could "
            "may might must 'm 're 's 've 'll 'd").split(),
    "PART": "not n't to 's".split(),
    "INTJ": ("oh hey hi hello wow yeah yes no okay ok um uh hmm ah huh whoa ooh ugh well bye please thanks "
             "yep nope").split(),
    "ADV": ("very really just so too also now then here there where when why how always never ever still "
            "already maybe again soon actually probably totally even only back away ago").split(),
    "NUM": ("one two three four five six seven eight nine ten eleven twelve twenty thirty hundred "
            "thousand million").split(),
}
_CLOSED_LOOKUP: dict[str, str] = {}
for _tag in ("INTJ", "ADV", "NUM", "SCONJ", "CCONJ", "ADP", "PRON", "DET", "PART", "AUX"):
    for _w in _CLOSED[_tag]:
        _CLOSED_LOOKUP[_w] = _tag

_PERSONS = set(
    ("ross rachel monica chandler joey phoebe emma ben carol susan janice mike richard frank alice jack judy "
     "mindy barry paolo gunther emily tag julie kathy charlie joshua pete david mona erica estelle ursula gavin "
     "elizabeth paul tim bonnie jill amy eddie kip mark joanna sophie rick marcel leslie ryan elaine nora helen "
     "bob chloe jane tom john mary james sarah anna lisa peter kate dave steve").split())
_GPES = set(
    ("london paris chicago boston italy china japan minsk greece vermont montreal barbados tulsa vegas "
     "america england france germany russia canada mexico brooklyn manhattan queens jersey texas "
     "california florida yemen poughkeepsie").split())
_ORGS = set("nyu bloomingdale bloomingdales fortunata ralph lauren gap starbucks ibm".split())
_MULTI = {("new", "york"): "GPE", ("las", "vegas"): "GPE", ("central", "perk"): "ORG",
          ("ralph", "lauren"): "ORG", ("long", "island"): "GPE"}


def _rule_pos(tok: str, lower: str, first: bool) -> str:
    if re.fullmatch(r"[^\w\s]+", tok):
        return "SYM" if tok in "$%&+=<>#@*/" else "PUNCT"
    if re.fullmatch(r"\d+(?:[.,:]\d+)*", tok):
        return "NUM"
    if lower in _PERSONS or lower in _GPES or lower in _ORGS:
        return "PROPN"
    if lower in _CLOSED_LOOKUP:
        return _CLOSED_LOOKUP[lower]
    if tok[0].isupper() and not first and tok != "I":
        return "PROPN"
    if lower.endswith("ly") and len(lower) > 4:
        return "ADV"
    if lower.endswith(("ing", "ed")) and len(lower) > 4:
        return "VERB"
    if lower.endswith(("ful", "ous", "ive", "able", "ible", "ish", "less", "est")) and len(lower) > 4:
        return "ADJ"
    return "NOUN"


def _rule_ner(toks: list[str], lowers: list[str], pos: list[str]) -> list[str]:
    ner = ["NONE"] * len(toks)
    i = 0
    while i < len(toks):
        pair = tuple(lowers[i:i + 2])
        if pair in _MULTI:
            ner[i] = ner[i + 1] = _MULTI[pair]
            i += 2
            continue
        if lowers[i] == "speaker" and i + 1 < len(toks) and toks[i + 1].isdigit():
            ner[i] = ner[i + 1] = "PERSON"
            i += 2
            continue
        low = lowers[i]
        if low in _PERSONS:
            ner[i] = "PERSON"
        elif low in _GPES:
            ner[i] = "GPE"
        elif low in _ORGS:
            ner[i] = "ORG"
        elif pos[i] == "NUM":
            ner[i] = "VALUE"
        elif pos[i] == "PROPN":
            ner[i] = "STRING"
        i += 1
    return ner


@dataclass
class RuleAnnotator:
    """Regex tokenizer, suffix/closed-class POS heuristics and gazetteer NER."""

    name: str = "rule"
    version: str = "1"
    shareable: bool = True

    def tokenize(self, text: str) -> list[tuple[str, int]]:
        return [(m.group(0), m.start()) for m in _TOKEN_RE.finditer(text)]

    def annotate(self, text: str) -> list[TokenAnnotation]:
        toks = self.tokenize(text)
        if not toks:
            return []
        surfaces = [t for t, _ in toks]
        lowers = [t.casefold() for t in surfaces]
        sentence_start = True
        pos = []
        for tok, low in zip(surfaces, lowers):
            pos.append(_rule_pos(tok, low, sentence_start))
            sentence_start = tok in (".", "!", "?", "...")
        ner = _rule_ner(surfaces, lowers, pos)
        return [TokenAnnotation(s, l, p, n, start)
                for (s, start), l, p, n in zip(toks, lowers, pos, ner)]


@dataclass
class SpacyAnnotator:
    """Adapter over a spaCy pipeline (tokenizer + tagger + NER)."""

    model: str = "en_core_web_sm"
    shareable: bool = False
    name: str = field(init=False)
    version: str = field(init=False)

    def __post_init__(self):
        import spacy  # optional dependency

        self._nlp = spacy.load(self.model)
        self.name = f"spacy:{self.model}"
        self.version = f"{spacy.__version__}/{self._nlp.meta.get('version', '?')}"

    def annotate(self, text: str) -> list[TokenAnnotation]:
        out = []
        for tok in self._nlp(text):
            pos = tok.pos_ if tok.pos_ in POS_INDEX else "X"
            ner = tok.ent_type_ if tok.ent_type_ in NER_INDEX else "NONE"
            out.append(TokenAnnotation(tok.text, tok.text.casefold(), pos, ner, tok.idx))
        return out


def get_backend(name: str) -> Annotator:
    if name == "rule":
        return RuleAnnotator()
    if name.startswith("spacy"):
        _, _, model = name.partition(":")
        return SpacyAnnotator(model or "en_core_web_sm")
    raise ValueError(f"unknown annotation backend {name!r}")


# -- speakers ----------------------------------------------------------------------

def _canon_speaker(name: str) -> str:
    return " ".join(name.casefold().split())


def resolve_speakers(dialogue: Dialogue) -> SpeakerMap:
    """Assign one id per distinct speaker, in order of first appearance."""
    names: list[str] = []
    keys: dict[str, int] = {}
    turn_speakers = []
    for u in dialogue.utterances:
        ids = set()
        for name in speaker_names(u.speaker_label):
            key = _canon_speaker(name)
            if key not in keys:
                keys[key] = len(names)
                names.append(name)
            ids.add(keys[key])
        turn_speakers.append(frozenset(ids))
    return SpeakerMap(tuple(names), tuple(turn_speakers))


def _speaker_mentions(tokens: Sequence[TokenAnnotation], speakers: SpeakerMap) -> tuple:
    found = []
    norms = [t.norm for t in tokens]
    for sid, name in enumerate(speakers.names):
        pattern = [t.casefold() for t in re.findall(r"\w+", name)]
        if not pattern:
            continue
        for s in _find_subsequence(norms, pattern):
            found.append((s, s + len(pattern), sid))
    return tuple(sorted(found))


def _find_subsequence(seq: Sequence[str], pattern: Sequence[str]) -> list[int]:
    n = len(pattern)
    if n == 0:
        return []
    return [i for i in range(len(seq) - n + 1) if list(seq[i:i + n]) == list(pattern)]


def annotate_dialogue(dialogue: Dialogue, backend: Annotator) -> AnnotatedDialogue:
    speakers = resolve_speakers(dialogue)
    out = []
    for u in dialogue.utterances:
        try:
            tokens = tuple(backend.annotate(u.text))
        except AnnotationError as exc:
            raise AnnotationError(str(exc), u.index) from exc
        except Exception as exc:
            raise AnnotationError(f"backend {backend.name} failed: {exc}", u.index) from exc
        out.append(AnnotatedUtterance(u, tokens, speakers.turn_speakers[u.index],
                                      _speaker_mentions(tokens, speakers)))
    return AnnotatedDialogue(dialogue, tuple(out), speakers)


# -- argument grounding ------------------------------------------------------------

def _argument_norms(text: str, backend: Annotator) -> list[str]:
    return [t.norm for t in backend.annotate(text)]


def locate_arguments(annotated: AnnotatedDialogue, instance: RelationInstance,
                     backend: Annotator | None = None) -> tuple[ArgumentSpans, ArgumentSpans]:
    """Ground subject and object strings in the dialogue.

    Speaker-valued arguments map to every turn of that speaker, with an empty
    token range. Other arguments use exact, case-insensitive token-sequence
    matching; no hit leaves the slot unlocated.
    """
    backend = backend or RuleAnnotator()
    result = []
    for slot, text in (("subject", instance.subject_text), ("object", instance.object_text)):
        sid = annotated.speakers.id(text)
        if sid is not None:
            spans = tuple(MentionSpan(t, (0, 0), slot) for t in annotated.speakers.turns_of(sid))
            result.append(ArgumentSpans(slot, spans, sid))
            continue
        pattern = _argument_norms(text, backend)
        spans = []
        for au in annotated.utterances:
            norms = [t.norm for t in au.tokens]
            for s in _find_subsequence(norms, pattern):
                spans.append(MentionSpan(au.utterance.index, (s, s + len(pattern)), slot))
        result.append(ArgumentSpans(slot, tuple(spans)))
    return result[0], result[1]


# -- preprocess cache ----------------------------------------------------------

CACHE_SCHEMA = 1


def cache_key(corpus_path: str | Path, backend: Annotator) -> str:
    h = hashlib.sha256()
    h.update(Path(corpus_path).read_bytes())
    h.update(f"|{backend.name}|{backend.version}|{CACHE_SCHEMA}".encode())
    return h.hexdigest()[:16]


def _utt_record(au: AnnotatedUtterance) -> dict:
    return {
        "index": au.utterance.index,
        "speaker_ids": sorted(au.speaker_ids),
        "tokens": [[t.surface, t.pos, t.ner, t.start] for t in au.tokens],
        "speaker_mentions": [list(m) for m in au.speaker_mentions],
    }


def _write_record(fh, obj) -> None:
    data = json.dumps(obj, ensure_ascii=False, sort_keys=True).encode("utf-8")
    fh.write(f"{len(data)}\n".encode("ascii"))
    fh.write(data)
    fh.write(b"\n")


def _read_records(fh):
    while True:
        head = fh.readline()
        if not head:
            return
        n = int(head.strip())
        data = fh.read(n)
        fh.readline()
        yield json.loads(data.decode("utf-8"))


def write_cache(path: str | Path, annotated: Iterable[AnnotatedDialogue], backend: Annotator, key: str) -> None:
    """Length-prefixed JSON lines: header record, then one record per dialogue.

    Each record is ``<byte length>\\n<json>\\n``. Dialogue records hold
    ``doc_id``, ``speakers`` (names) and ``utterances`` with tokens as
    ``[surface, pos, ner, char_start]``.
    """
    with open(path, "wb") as fh:
        _write_record(fh, {"schema": CACHE_SCHEMA, "backend": backend.name,
                           "backend_version": backend.version, "key": key})
        for ad in annotated:
            _write_record(fh, {
                "doc_id": ad.dialogue.doc_id,
                "speakers": list(ad.speakers.names),
                "utterances": [_utt_record(au) for au in ad.utterances],
            })


def read_cache(path: str | Path, dialogues: Sequence[Dialogue], key: str | None = None) -> list[AnnotatedDialogue]:
    by_id = {d.doc_id: d for d in dialogues}
    out = []
    with open(path, "rb") as fh:
        records = _read_records(fh)
        header = next(records)
        if header.get("schema") != CACHE_SCHEMA or (key is not None and header.get("key") != key):
            raise AnnotationError(f"stale annotation cache {path}")
        for rec in records:
            d = by_id[rec["doc_id"]]
            utts = []
            for u, r in zip(d.utterances, rec["utterances"]):
                toks = tuple(TokenAnnotation(s, s.casefold(), p, n, st) for s, p, n, st in r["tokens"])
                utts.append(AnnotatedUtterance(u, toks, frozenset(r["speaker_ids"]),
                                               tuple(tuple(m) for m in r["speaker_mentions"])))
            turn_speakers = tuple(au.speaker_ids for au in utts)
            out.append(AnnotatedDialogue(d, tuple(utts), SpeakerMap(tuple(rec["speakers"]), turn_speakers)))
    return out


def annotation_as_dict(ad: AnnotatedDialogue) -> dict:
    return {"speakers": list(ad.speakers.names), "utterances": [_utt_record(au) for au in ad.utterances]}

