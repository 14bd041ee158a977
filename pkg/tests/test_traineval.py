import json

import pytest
import torch
from hypothesis import given, strategies as st

from hetdre.annotate import annotate_dialogue
from hetdre.config import ModelConfig, TrainConfig
from hetdre.corpus import VOCAB, parse_corpus
from hetdre.model import make_examples
from hetdre.toydata import make_records
from hetdre.traineval import (
    EvalReport, config_for_row, conversational_examples, conversational_pair, conversational_prefixes,
    evaluate_conversational, evaluate_standard, label_counts, macro_f1, results_text, results_tsv, row_label,
    run_experiment_matrix, train,
)
from hetdre.vectors import WordVocab

import oracles
import scenarios

SMALL = ModelConfig(**scenarios.SMALL)


def test_two_label_toy_macro():
    macro, per = scenarios.toy_macro_f1()
    assert macro == pytest.approx(2 / 3, abs=1e-12)
    assert per == pytest.approx({1: 2 / 3, 2: 2 / 3})


def test_perfect_and_disjoint_predictions():
    gold = [{0}, {1, 2}, {3}]
    assert macro_f1(label_counts(zip(gold, gold)))[0] == 1.0
    assert macro_f1(label_counts(zip([{4}, {5}, {6}], gold)))[0] == 0.0


def test_labels_absent_everywhere_are_excluded():
    _, per = macro_f1(label_counts([({1}, {1}), ({2}, {1})]))
    assert set(per) == {1, 2}


def test_empty_input_scores_zero():
    assert macro_f1(label_counts([])) == (0.0, {})


label_sets = st.frozensets(st.integers(0, 5), max_size=3)


@given(st.lists(st.tuples(label_sets, label_sets), max_size=12))
def test_macro_matches_brute_force(pairs):
    got, _ = macro_f1(label_counts(pairs))
    want = oracles.macro_f1([p for p, _ in pairs], [g for _, g in pairs])
    assert got == pytest.approx(want, abs=1e-12)


@given(st.lists(st.tuples(label_sets, label_sets), min_size=1, max_size=10), st.randoms())
def test_macro_ignores_pair_order(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    assert macro_f1(label_counts(pairs))[0] == pytest.approx(macro_f1(label_counts(shuffled))[0], abs=1e-12)


def _dialogue(turns, x, y, labels=("per:friends",), triggers=("",)):
    rec = [turns, [{"x": x, "y": y, "r": list(labels), "t": list(triggers)}]]
    return parse_corpus([rec])[0]


def test_arguments_in_final_turn_give_one_prefix():
    d = _dialogue(["Speaker 1: hi", "Speaker 2: hey", "Speaker 1: Ross and Joey are here"], "Ross", "Joey")
    prefixes = conversational_prefixes(d, d.relation_instances[0])
    assert [i for i, _ in prefixes] == [3]


def test_prefixes_start_once_both_arguments_appear():
    d = _dialogue(["Speaker 1: Ross!", "Speaker 2: Joey?", "Speaker 1: ok", "Speaker 2: fine"], "Ross", "Joey")
    assert [i for i, _ in conversational_prefixes(d, d.relation_instances[0])] == [2, 3, 4]


def test_trigger_gates_gold_label():
    turns = ["Speaker 1: Emma is here.", "Speaker 2: Who?", "Speaker 1: my baby daughter", "Speaker 2: Oh."]
    d = _dialogue(turns, "Speaker 1", "Emma", ("per:children", "per:positive_impression"), ("baby daughter", ""))
    inst = d.relation_instances[0]
    children, impression = VOCAB.id("per:children"), VOCAB.id("per:positive_impression")
    prefixes = dict(conversational_prefixes(d, inst))
    assert prefixes[1] == {impression} and prefixes[2] == {impression}
    assert prefixes[3] == {children, impression}
    # before the trigger, predicting the hidden label is neither rewarded nor penalised
    pred, gold = conversational_pair(frozenset({children}), inst.relation_labels, prefixes[1])
    assert children not in pred and children not in gold


def test_final_prefix_evaluates_every_label():
    d = _dialogue(["Speaker 1: Emma", "Speaker 2: ok"], "Speaker 1", "Emma", ("per:children",), ("never said",))
    prefixes = conversational_prefixes(d, d.relation_instances[0])
    assert prefixes[-1] == (2, frozenset({VOCAB.id("per:children")}))


@pytest.fixture(scope="module")
def trained(toy_annotated, toy_vocab, backend, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = TrainConfig(epochs=3, batch_size=8, patience=5, seed=7, model=SMALL)
    res = train(cfg, toy_annotated[:8], toy_annotated[8:], toy_vocab, out_dir=out, backend=backend)
    return cfg, res, out


def test_train_log_fields(trained):
    _, res, out = trained
    lines = [json.loads(x) for x in (out / "train_log.jsonl").read_text().splitlines()]
    assert lines == res.log
    assert [r["epoch"] for r in lines] == [1, 2, 3]
    for r in lines:
        assert {"epoch", "train_loss", "dev_f1", "dev_f1c", "lr", "wall_seconds"} <= set(r)
        assert 0 <= r["dev_f1"] <= 1 and 0 <= r["dev_f1c"] <= 1
    assert (out / "model.pt").exists()


def test_training_is_deterministic(trained, toy_annotated, toy_vocab, backend):
    cfg, res, _ = trained
    again = train(cfg, toy_annotated[:8], toy_annotated[8:], toy_vocab, backend=backend)
    assert [r["train_loss"] for r in again.log] == [r["train_loss"] for r in res.log]
    assert [r["dev_f1"] for r in again.log] == [r["dev_f1"] for r in res.log]


def test_reloaded_best_weights_match_log(trained, toy_annotated, toy_vocab, backend):
    _, res, _ = trained
    best = max(res.log, key=lambda r: r["dev_f1"])
    assert res.best_dev_f1 == best["dev_f1"]
    dev = make_examples(toy_annotated[8:], toy_vocab, SMALL, backend)
    assert evaluate_standard(res.model, dev, "dev").f1_standard == pytest.approx(res.best_dev_f1, abs=1e-12)


def test_conversational_report(trained, toy_annotated, backend):
    _, res, _ = trained
    dev = toy_annotated[8:]
    rep = evaluate_conversational(res.model, dev, "dev", backend)
    assert rep.n_pairs == sum(len(ad.dialogue.relation_instances) for ad in dev)
    assert rep.n_prefix_instances >= rep.n_pairs
    assert 0.0 <= rep.f1_conversational <= 1.0
    assert set(rep.as_dict()) >= {"split", "f1", "f1c", "n_pairs", "n_prefix_instances", "per_label_f1"}


def test_perfect_predictions_score_one_in_both_settings(trained, toy_annotated, backend, monkeypatch):
    _, res, _ = trained
    import hetdre.traineval as te

    dev = toy_annotated[8:]
    items = conversational_examples(dev, res.model.vocab, res.model, backend)
    monkeypatch.setattr(te, "predict_labels", lambda model, exs, bs=32: [ex.gold for ex in exs])
    assert te.evaluate_conversational(res.model, dev, prepared=items).f1_conversational == 1.0
    exs = make_examples(dev, res.model.vocab, SMALL, backend)
    assert te.evaluate_standard(res.model, exs).f1_standard == 1.0


def test_row_labels():
    assert row_label({}) == "Full model (L=5)"
    assert row_label({"schedule": "A"}) == "Strategy1 (L=1)"
    assert row_label({"no_pos_embedding": True}) == "w/o POS embedding"
    assert row_label({"schedule": "ABAB"}) == "schedule ABAB (L=4)"
    assert row_label({"label": "mine", "schedule": "A"}) == "mine"


def test_config_for_row_overrides_only_named_fields():
    base = TrainConfig(model=SMALL)
    cfg = config_for_row(base, {"schedule": "ABCDABCDA", "no_ner_embedding": True, "seed": 3})
    assert cfg.model.schedule == "ABCDABCDA" and cfg.model.no_ner_embedding and cfg.seed == 3
    assert cfg.model.word_dim == SMALL.word_dim and base.model.schedule == "ABCDA"


def test_matrix_empty_axes_and_failed_rows(toy_annotated, toy_vocab, backend):
    base = TrainConfig(epochs=1, batch_size=8, model=SMALL)
    data = toy_annotated[:4], toy_annotated[4:6], toy_annotated[6:8]
    rows = run_experiment_matrix(base, [], *data, toy_vocab, conversational=False, backend=backend)
    assert [r["row"] for r in rows] == ["Full model (L=5)"] and rows[0]["status"] == "ok"
    assert {"dev_f1", "test_f1"} <= set(rows[0])
    rows = run_experiment_matrix(base, [{"schedule": "XYZ"}, {"schedule": "A"}], *data, toy_vocab,
                                 conversational=False, backend=backend)
    assert rows[0]["status"].startswith("error") and rows[1]["status"] == "ok"
    text, tsv = results_text(rows), results_tsv(rows)
    assert "Strategy1 (L=1)" in text and "error" in text
    assert tsv.splitlines()[0].split("\t") == ["row", "dev_f1", "dev_f1c", "test_f1", "test_f1c", "status"]


def test_report_rounding():
    rep = EvalReport("dev", f1_standard=0.123456789, per_label_f1={"per:boss": 1 / 3})
    assert rep.as_dict()["f1"] == 0.123457 and rep.as_dict()["f1c"] is None


def test_divergence_is_reported(toy_annotated, toy_vocab, backend, monkeypatch):
    import hetdre.traineval as te

    monkeypatch.setattr(te, "loss_from_logits", lambda logits, gold: torch.tensor(float("nan")))
    with pytest.raises(te.DivergenceError, match="epoch 1"):
        train(TrainConfig(epochs=1, model=SMALL), toy_annotated[:2], [], toy_vocab, backend=backend)


def test_synthetic_capacity(backend):
    # reduced-width stand-in for the corpus capacity check; seeds 0-2 all reach 0.95+
    ads = [annotate_dialogue(d, backend) for d in parse_corpus(make_records(20, 0))]
    vocab = WordVocab.from_annotated(ads)
    m = ModelConfig(word_dim=32, pos_dim=8, ner_dim=8, local_hidden=32, global_hidden=16, heads=4, model_dim=32,
                    edge_dim=8, lstm_dropout=0.0)
    cfg = TrainConfig(epochs=80, patience=1000, learning_rate=0.005, seed=0, model=m)
    res = train(cfg, ads, [], vocab, dev_f1c=False, backend=backend)
    assert evaluate_standard(res.model, make_examples(ads, vocab, m, backend)).f1_standard >= 0.90
