"""DialogRE corpus: data model, loader/serializer, relation vocabulary, statistics."""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

SPLITS = ("train", "dev", "test")

# Ordered by train-split frequency. The corpus defines 37 labels overall;
# two of them (gpe:birth_in_place, per:place_of_birth) occur only in dev.
RELATION_LABELS = (
    "per:alternate_names",
    "unanswerable",
    "per:girl/boyfriend",
    "per:positive_impression",
    "per:friends",
    "per:title",
    "per:spouse",
    "per:siblings",
    "per:children",
    "per:parents",
    "per:negative_impression",
    "per:roommate",
    "per:alumni",
    "per:other_family",
    "per:works",
    "per:age",
    "per:client",
    "per:place_of_residence",
    "gpe:residents_of_place",
    "per:boss",
    "per:subordinate",
    "per:visited_place",
    "gpe:visitors_of_place",
    "per:employee_or_member_of",
    "org:employees_or_members",
    "per:neighbor",
    "per:place_of_work",
    "per:pet",
    "per:acquaintance",
    "per:origin",
    "per:dates",
    "per:schools_attended",
    "org:students",
    "per:major",
    "per:date_of_birth",
    "gpe:birth_in_place",
    "per:place_of_birth",
)

# Spelling variants seen in released copies of the data.
_LABEL_ALIASES = {"gpe:births_in_place": "gpe:birth_in_place"}

UNANSWERABLE = "unanswerable"


class CorpusError(ValueError):
    """Malformed corpus file or record."""


class VocabularyError(CorpusError):
    """Relation label outside the closed relation vocabulary."""


@dataclass(frozen=True)
class RelationVocabulary:
    labels: tuple[str, ...] = RELATION_LABELS
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise VocabularyError("duplicate relation labels")
        object.__setattr__(self, "index", {name: i for i, name in enumerate(self.labels)})

    def __len__(self):
        return len(self.labels)

    def id(self, name: str) -> int:
        name = _LABEL_ALIASES.get(name, name)
        try:
            return self.index[name]
        except KeyError:
            raise VocabularyError(f"unknown relation label {name!r}") from None

    def name(self, idx: int) -> str:
        return self.labels[idx]


VOCAB = RelationVocabulary()


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker_label: str
    text: str

    @property
    def raw(self) -> str:
        return f"{self.speaker_label}: {self.text}"


@dataclass(frozen=True)
class RelationInstance:
    subject_text: str
    object_text: str
    relation_labels: frozenset[int]
    subject_type: str = ""
    object_type: str = ""
    trigger_texts: tuple[str, ...] = ()

    def trigger_for(self, label: int, vocab: RelationVocabulary = VOCAB) -> str:
        """Trigger string attached to ``label`` ('' when none was annotated)."""
        names = self.label_names(vocab)
        if label not in self.relation_labels:
            return ""
        pos = names.index(vocab.name(label))
        return self.trigger_texts[pos] if pos < len(self.trigger_texts) else ""

    def label_names(self, vocab: RelationVocabulary = VOCAB) -> list[str]:
        # trigger_texts are aligned with this order (ascending label id)
        return [vocab.name(i) for i in sorted(self.relation_labels)]


@dataclass(frozen=True)
class Dialogue:
    utterances: tuple[Utterance, ...]
    relation_instances: tuple[RelationInstance, ...]
    split: str = "train"
    doc_id: int = 0

    @property
    def n_turns(self) -> int:
        return len(self.utterances)

    def prefix(self, n_turns: int) -> "Dialogue":
        """The dialogue truncated to its first ``n_turns`` turns."""
        return Dialogue(self.utterances[:n_turns], self.relation_instances, self.split, self.doc_id)


def split_turn(raw: str) -> tuple[str, str]:
    """Split a raw turn ``"Speaker k: text"`` on its first colon."""
    label, sep, text = raw.partition(":")
    if not sep or not label.strip():
        raise CorpusError(f"turn without speaker prefix: {raw[:60]!r}")
    return label.strip(), text.strip()


_SPEAKER_RE = re.compile(r"speaker\s*(\d+)", re.IGNORECASE)


def speaker_names(label: str) -> list[str]:
    """Individual speaker names in a (possibly multi-speaker) turn label.

    ``"Speaker 1 and Speaker 2"`` and ``"Speaker 1, Speaker 2"`` both give
    ``["Speaker 1", "Speaker 2"]``. Non-anonymized labels are split on commas
    and ``and``.
    """
    found = [f"Speaker {m.group(1)}" for m in _SPEAKER_RE.finditer(label)]
    if not found:
        found = [p.strip() for p in re.split(r",|\band\b|&", label) if p.strip()]
    out = []
    for name in found:
        if name not in out:
            out.append(name)
    return out


def _parse_instance(obj: dict, where: str, vocab: RelationVocabulary) -> RelationInstance:
    try:
        x, y, r = obj["x"], obj["y"], obj["r"]
    except (KeyError, TypeError):
        raise CorpusError(f"{where}: relation record needs x, y, r") from None
    if not isinstance(r, list) or not r:
        raise CorpusError(f"{where}: r must be a non-empty list")
    ids = [vocab.id(name) for name in r]
    triggers = obj.get("t", [""] * len(r))
    if len(triggers) != len(r):
        raise CorpusError(f"{where}: t and r differ in length")
    # re-align triggers to ascending label id
    aligned = dict(zip(ids, triggers))
    return RelationInstance(
        subject_text=str(x),
        object_text=str(y),
        relation_labels=frozenset(ids),
        subject_type=str(obj.get("x_type", "")),
        object_type=str(obj.get("y_type", "")),
        trigger_texts=tuple(str(aligned[i]) for i in sorted(aligned)),
    )


def parse_corpus(records, split: str = "train", vocab: RelationVocabulary = VOCAB) -> list[Dialogue]:
    """Validate an already-decoded DialogRE JSON list."""
    if split not in SPLITS:
        raise CorpusError(f"unknown split {split!r}")
    if not isinstance(records, list):
        raise CorpusError("top level must be a list")
    dialogues = []
    for n, rec in enumerate(records):
        where = f"record {n}"
        if not isinstance(rec, (list, tuple)) or len(rec) != 2:
            raise CorpusError(f"{where}: expected [turns, relations]")
        turns, rels = rec
        if not isinstance(turns, list) or not turns:
            raise CorpusError(f"{where}: no turns")
        if not isinstance(rels, list) or not rels:
            raise CorpusError(f"{where}: no relation instances")
        utts = []
        for i, raw in enumerate(turns):
            try:
                label, text = split_turn(str(raw))
            except CorpusError as exc:
                raise CorpusError(f"{where}, turn {i}: {exc}") from None
            utts.append(Utterance(i, label, text))
        insts = tuple(_parse_instance(obj, f"{where}, relation {j}", vocab) for j, obj in enumerate(rels))
        dialogues.append(Dialogue(tuple(utts), insts, split, n))
    return dialogues


def load_corpus(path: str | Path, split: str | None = None, vocab: RelationVocabulary = VOCAB) -> list[Dialogue]:
    path = Path(path)
    if split is None:
        split = path.stem if path.stem in SPLITS else "train"
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid JSON at line {exc.lineno} col {exc.colno}: {exc.msg}") from None
    return parse_corpus(records, split, vocab)


def load_split(data_dir: str | Path, split: str) -> list[Dialogue]:
    return load_corpus(Path(data_dir) / f"{split}.json", split)


def to_records(dialogues: Iterable[Dialogue], vocab: RelationVocabulary = VOCAB) -> list:
    records = []
    for d in dialogues:
        rels = []
        for inst in d.relation_instances:
            ids = sorted(inst.relation_labels)
            rels.append({
                "x": inst.subject_text,
                "y": inst.object_text,
                "rid": [i + 1 for i in ids],
                "r": [vocab.name(i) for i in ids],
                "t": list(inst.trigger_texts) or [""] * len(ids),
                "x_type": inst.subject_type,
                "y_type": inst.object_type,
            })
        records.append([[u.raw for u in d.utterances], rels])
    return records


def save_corpus(dialogues: Iterable[Dialogue], path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_records(dialogues), ensure_ascii=False, indent=1), encoding="utf-8")


# -- statistics ---------------------------------------------------------------

@dataclass
class StatsReport:
    split: str
    conversations: int
    argument_pairs: int
    avg_length: float
    avg_turns: float
    avg_speakers: float

    def as_dict(self) -> dict:
        return {
            "split": self.split,
            "conversations": self.conversations,
            "argument_pairs": self.argument_pairs,
            "avg_length": round(self.avg_length, 4),
            "avg_turns": round(self.avg_turns, 4),
            "avg_speakers": round(self.avg_speakers, 4),
        }


def _whitespace_tokens(text: str) -> list[str]:
    return text.split()


def corpus_stats(dialogues: Sequence[Dialogue],
                 tokenize: Callable[[str], list[str]] = _whitespace_tokens) -> StatsReport:
    """Per-split counts and averages; dialogue length counts whitespace tokens of the raw turns."""
    if not dialogues:
        raise CorpusError("corpus_stats needs at least one dialogue")
    n = len(dialogues)
    pairs = sum(len(d.relation_instances) for d in dialogues)
    length = sum(len(tokenize(u.raw)) for d in dialogues for u in d.utterances)
    turns = sum(d.n_turns for d in dialogues)
    speakers = sum(
        len({name for u in d.utterances for name in speaker_names(u.speaker_label)})
        for d in dialogues
    )
    return StatsReport(dialogues[0].split, n, pairs, length / n, turns / n, speakers / n)


@dataclass
class LabelDistribution:
    split: str
    counts: dict[str, int]
    pairs: int

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def percentages(self) -> dict[str, float]:
        """Share of argument pairs carrying each label; multi-label pairs make these sum past 100."""
        return {k: (100.0 * v / self.pairs if self.pairs else 0.0) for k, v in self.counts.items()}


def label_distribution(dialogues: Sequence[Dialogue], split: str | None = None,
                       vocab: RelationVocabulary = VOCAB) -> LabelDistribution:
    """Count relation-label occurrences (a multi-label pair counts once per label)."""
    c = Counter(i for d in dialogues for inst in d.relation_instances for i in inst.relation_labels)
    if split is None:
        split = dialogues[0].split if dialogues else ""
    pairs = sum(len(d.relation_instances) for d in dialogues)
    return LabelDistribution(split, {name: c.get(i, 0) for i, name in enumerate(vocab.labels)}, pairs)


def format_stats(reports: Sequence[StatsReport]) -> str:
    rows = [
        ("#Conversations", [str(r.conversations) for r in reports]),
        ("#Argument Pairs", [str(r.argument_pairs) for r in reports]),
        ("Average dialogue length", [f"{r.avg_length:.1f}" for r in reports]),
        ("Average # of turns", [f"{r.avg_turns:.1f}" for r in reports]),
        ("Average # of speakers", [f"{r.avg_speakers:.1f}" for r in reports]),
    ]
    head = ["DialogRE"] + [r.split.capitalize() for r in reports]
    w0 = max(len(head[0]), *(len(name) for name, _ in rows))
    widths = [max(len(head[i + 1]), *(len(v[i]) for _, v in rows)) for i in range(len(reports))]
    lines = [head[0].ljust(w0) + "  " + "  ".join(h.rjust(w) for h, w in zip(head[1:], widths))]
    for name, vals in rows:
        lines.append(name.ljust(w0) + "  " + "  ".join(v.rjust(w) for v, w in zip(vals, widths)))
    return "\n".join(lines)


def format_labels(dists: Sequence[LabelDistribution], vocab: RelationVocabulary = VOCAB) -> str:
    w0 = max(len(n) for n in vocab.labels)
    head = "Relation Type".ljust(w0) + "".join(f"{d.split:>8}" for d in dists) + "".join(
        f"{d.split + '%':>9}" for d in dists)
    lines = [head]
    pcts = [d.percentages() for d in dists]
    for name in vocab.labels:
        line = name.ljust(w0) + "".join(f"{d.counts[name]:>8}" for d in dists)
        line += "".join(f"{p[name]:>9.2f}" for p in pcts)
        lines.append(line)
    return "\n".join(lines)
