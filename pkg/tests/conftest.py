import os
from pathlib import Path

import hypothesis
import pytest
import torch

from hetdre.annotate import RuleAnnotator, annotate_dialogue
from hetdre.corpus import parse_corpus
from hetdre.toydata import make_records
from hetdre.vectors import WordVocab

hypothesis.settings.register_profile("default", deadline=None, max_examples=60)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=10)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def toy_records():
    return make_records(12, seed=3)


@pytest.fixture(scope="session")
def toy_dialogues(toy_records):
    return parse_corpus(toy_records, "train")


@pytest.fixture(scope="session")
def backend():
    return RuleAnnotator()


@pytest.fixture(scope="session")
def toy_annotated(toy_dialogues, backend):
    return [annotate_dialogue(d, backend) for d in toy_dialogues]


@pytest.fixture(scope="session")
def toy_vocab(toy_annotated):
    return WordVocab.from_annotated(toy_annotated)


@pytest.fixture
def emma_dialogue():
    rec = [["Speaker 1: Emma is my baby daughter.", "Speaker 2: Wow!"],
           [{"x": "Speaker 1", "y": "Emma", "r": ["per:children"], "rid": [9], "t": ["baby daughter"],
             "x_type": "PER", "y_type": "PER"}]]
    return parse_corpus([rec], "dev")[0]


@pytest.fixture
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


# -- acceptance summary: one line per criterion ----------------------------------

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    cid, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        reason = ""
        if rep.outcome == "failed" and call.excinfo is not None:
            reason = str(call.excinfo.value).strip().splitlines()[0][:110] if str(call.excinfo.value).strip() else ""
        _ACCEPTANCE[cid] = (title, status, reason)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_ACCEPTANCE, key=lambda c: int(c[1:])):
        title, status, reason = _ACCEPTANCE[cid]
        line = f"{cid:<4}{title:<40}{status}"
        if reason:
            line += f"  ({reason})"
        terminalreporter.write_line(line)
