"""Small synthetic corpora in the DialogRE JSON layout.

Used by tests, smoke runs and demos when the real corpus is not at hand. Each
dialogue states a few relations through fixed trigger phrases, padded with
filler turns; every record is valid input for :func:`hetdre.corpus.parse_corpus`.
"""
from __future__ import annotations

import random

NAMES = ["Emma", "Ross", "Rachel", "Monica", "Joey", "Phoebe", "Carol", "Mike", "Janice", "Frank",
         "Alice", "Richard", "Mindy", "Barry", "Julie", "Pete", "Kathy", "Tim", "Bonnie", "Gavin"]
TITLES = ["doctor", "chef", "paleontologist", "masseuse", "actor", "waitress", "lawyer", "teacher"]
FILLER = [
    "Oh my God.", "I can't believe this!", "Okay, okay, calm down.", "What are you talking about?",
    "Could this be any more awkward?", "We were on a break!", "Sure, whatever you say.",
    "Did anyone see my keys?", "I need coffee.", "That is so not true.", "Hey guys!", "Yeah, right.",
]

# (label, subject role, template, trigger); {n} is the named entity, {t} a title.
TEMPLATES = [
    ("per:children", "speaker", "{n} is my baby daughter.", "baby daughter"),
    ("per:friends", "speaker", "{n} is my best friend, you know.", "best friend"),
    ("per:siblings", "speaker", "My sister {n} is coming over tonight.", "sister"),
    ("per:spouse", "speaker", "I married {n} last year.", "married"),
    ("per:girl/boyfriend", "speaker", "{n} and I are dating now.", "dating"),
    ("per:roommate", "speaker", "{n} is my roommate.", "roommate"),
    ("per:positive_impression", "speaker", "I really love {n}.", "love"),
    ("per:negative_impression", "speaker", "I can't stand {n}.", "can't stand"),
    ("per:boss", "speaker", "{n} is my boss at work.", "boss"),
    ("per:title", "name", "{n} is a {t}.", ""),
]


def make_dialogue(rng: random.Random, max_turns: int = 8) -> list:
    n_speakers = rng.randint(2, 3)
    speakers = [f"Speaker {i + 1}" for i in range(n_speakers)]
    names = rng.sample(NAMES, 3)
    turns, rels = [], []
    n_rel = rng.randint(1, 3)
    chosen = rng.sample(TEMPLATES, n_rel)
    n_turns = rng.randint(max(n_rel + 1, 3), max(max_turns, n_rel + 1))
    rel_turns = sorted(rng.sample(range(n_turns), n_rel))
    for t in range(n_turns):
        spk = speakers[t % n_speakers] if rng.random() < 0.8 else rng.choice(speakers)
        if t in rel_turns:
            label, role, template, trigger = chosen[rel_turns.index(t)]
            name = names[rel_turns.index(t)]
            title = rng.choice(TITLES)
            turns.append(f"{spk}: {template.format(n=name, t=title)}")
            if role == "speaker":
                rels.append({"x": spk, "y": name, "r": [label], "t": [trigger], "x_type": "PER", "y_type": "PER"})
            else:
                rels.append({"x": name, "y": title, "r": [label], "t": [trigger], "x_type": "PER",
                             "y_type": "STRING"})
        else:
            turns.append(f"{spk}: {rng.choice(FILLER)}")
    # one pair with no stated relation
    rels.append({"x": speakers[-1], "y": names[-1], "r": ["unanswerable"], "t": [""], "x_type": "PER",
                 "y_type": "PER"})
    turns.append(f"{speakers[-1]}: Ask {names[-1]}, not me.")
    return [turns, rels]


def make_records(n_dialogues: int, seed: int = 0, max_turns: int = 8) -> list:
    rng = random.Random(seed)
    return [make_dialogue(rng, max_turns) for _ in range(n_dialogues)]
