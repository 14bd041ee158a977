import logging

import pytest
import torch
from hypothesis import given, strategies as st
from torch import nn

from hetdre.gat import GatLayer, MetaPathSchedule, NodeStates, attention_scores, gat_update, run_schedule, \
    segment_softmax

import oracles
import scenarios
from scenarios import DT, random_layer


def test_single_neighbor_gets_full_weight():
    layer = random_layer(6, 3, 2, 4, seed=1)
    alpha = attention_scores(layer, torch.randn(6, dtype=DT), torch.randn(1, 6, dtype=DT), torch.tensor([2]))
    assert torch.equal(alpha, torch.ones(1, 3, dtype=DT))


def test_identical_neighbors_split_evenly():
    layer = random_layer(6, 3, 2, 4, seed=2)
    h = torch.randn(6, dtype=DT)
    alpha = attention_scores(layer, torch.randn(6, dtype=DT), torch.stack([h, h]), torch.tensor([1, 1]))
    assert torch.allclose(alpha, torch.full((2, 3), 0.5, dtype=DT), atol=1e-15)


def test_attention_scores_need_neighbors():
    with pytest.raises(ValueError):
        attention_scores(random_layer(), torch.zeros(4, dtype=DT), torch.zeros(0, 4, dtype=DT),
                         torch.zeros(0, dtype=torch.long))


def test_attention_matches_scalar_oracle():
    assert scenarios.attention_error() <= 1e-10


def test_gat_update_matches_scalar_oracle():
    assert scenarios.gat_update_error() <= 1e-8


def test_run_schedule_matches_scalar_oracle():
    assert scenarios.schedule_error() <= 1e-8


def test_hand_case_value():
    # by hand: W_i h_i = (-0.3, -2.55); raw scores 1.41 + 0.18 + 0.02 = 1.61 and
    # 1.41 - 0.7035 - 1.32 = -0.6135 -> leaky -0.1227; alpha_1 = sigmoid(1.7327)
    layer = scenarios.hand_layer()
    alpha = attention_scores(layer, torch.tensor([0.3, -1.2], dtype=DT),
                             torch.tensor([[1.0, 0.5], [-0.7, 0.2]], dtype=DT), torch.tensor([0, 2]))
    assert alpha[:, 0].tolist() == pytest.approx([0.8497575, 0.1502425], abs=1e-7)


def _identity_ffn(layer):
    d = layer.dim
    eye = torch.eye(d, dtype=DT)
    with torch.no_grad():
        layer.ffn[0].weight.copy_(torch.cat([eye, -eye]))
        layer.ffn[0].bias.zero_()
        layer.ffn[2].weight.copy_(torch.cat([eye, -eye], dim=1))
        layer.ffn[2].bias.zero_()


def test_zero_values_and_identity_ffn_pass_through():
    layer = random_layer(4, 2, 3, 5, seed=3)
    _identity_ffn(layer)
    with torch.no_grad():
        layer.W_q.weight.zero_()
    states = NodeStates(torch.randn(2, 4, dtype=DT), torch.randn(3, 4, dtype=DT), torch.randn(1, 4, dtype=DT))
    edges = (torch.tensor([0, 1, 1]), torch.tensor([0, 1, 2]), torch.tensor([0, 1, 2]))
    out = gat_update(states, "A", edges, layer)
    assert torch.allclose(out.H_b, states.H_b, atol=1e-15)


def test_isolated_node_unchanged():
    layer = random_layer(4, 2, 3, 5, seed=4)
    states = NodeStates(torch.randn(1, 4, dtype=DT), torch.randn(3, 4, dtype=DT), torch.randn(1, 4, dtype=DT))
    out = gat_update(states, "A", (torch.tensor([0, 0]), torch.tensor([0, 2]), torch.tensor([1, 1])), layer)
    assert torch.equal(out.H_b[1], states.H_b[1])
    assert not torch.equal(out.H_b[0], states.H_b[0])


def test_update_is_local():
    layer = random_layer(4, 2, 3, 5, seed=5)
    states = NodeStates(torch.randn(2, 4, dtype=DT), torch.randn(3, 4, dtype=DT), torch.randn(2, 4, dtype=DT))
    out = gat_update(states, "B", (torch.tensor([0, 2]), torch.tensor([1, 0]), torch.tensor([4, 4])), layer)
    assert out.H_u is states.H_u and out.H_b is states.H_b
    assert out.version == {"utterance": 0, "basic": 0, "type": 1}


@given(st.permutations(list(range(6))), st.integers(0, 50))
def test_neighbor_permutation_invariance(perm, seed):
    layer = random_layer(4, 2, 3, 5, seed=seed)
    g = torch.Generator().manual_seed(seed)
    H_u, H_b = torch.randn(3, 4, generator=g, dtype=DT), torch.randn(2, 4, generator=g, dtype=DT)
    src = torch.tensor([0, 1, 2, 0, 1, 2])
    dst = torch.tensor([0, 0, 0, 1, 1, 1])
    feat = torch.tensor([0, 1, 2, 3, 4, 0])
    p = torch.tensor(perm)
    states = NodeStates(H_u, H_b, torch.zeros(0, 4, dtype=DT))
    a = gat_update(states, "A", (src, dst, feat), layer).H_b
    b = gat_update(states, "A", (src[p], dst[p], feat[p]), layer).H_b
    assert torch.equal(a, b)


@given(st.lists(st.integers(0, 4), min_size=1, max_size=12), st.integers(0, 100))
def test_attention_normalizes_per_target_and_head(dsts, seed):
    layer = random_layer(6, 3, 2, 4, seed=seed % 10, scale=2.0)
    g = torch.Generator().manual_seed(seed)
    n = len(dsts)
    dst = torch.tensor(dsts)
    src = torch.arange(n)
    alpha = layer.attention(torch.randn(5, 6, generator=g, dtype=DT), torch.randn(n, 6, generator=g, dtype=DT),
                            src, dst, torch.randint(0, 4, (n,), generator=g))
    sums = torch.zeros(5, 3, dtype=DT).index_add(0, dst, alpha)
    for t in set(dsts):
        assert torch.allclose(sums[t], torch.ones(3, dtype=DT), atol=1e-6)


def test_segment_softmax_survives_large_scores():
    s = torch.tensor([[1000.0], [999.0], [-1000.0]], dtype=DT)
    out = segment_softmax(s, torch.tensor([0, 0, 1]), 2)
    assert torch.isfinite(out).all()
    assert out[2, 0] == 1.0


def test_schedule_chain_order():
    """ABCDA follows the documented update chain exactly."""
    edges, init, sched, layers = scenarios.schedule_case(4)
    dirs = {k: scenarios._tensors(v) for k, v in edges.items()}
    out = run_schedule(dirs, init, sched, layers)
    s = init
    H_b1 = layers[0](s.H_b, s.H_u, *dirs["A"])
    H_t1 = layers[1](s.H_t, H_b1, *dirs["B"])
    H_b2 = layers[2](H_b1, H_t1, *dirs["C"])
    H_u1 = layers[3](s.H_u, H_b2, *dirs["D"])
    H_b3 = layers[4](H_b2, H_u1, *dirs["A"])
    assert torch.equal(out.H_b, H_b3) and torch.equal(out.H_u, H_u1) and torch.equal(out.H_t, H_t1)


def test_empty_edges_are_noops(caplog):
    empty = torch.zeros(0, dtype=torch.long)
    dirs = {k: (empty, empty, empty) for k in "ABCD"}
    init = NodeStates(torch.randn(2, 4, dtype=DT), torch.randn(3, 4, dtype=DT), torch.randn(1, 4, dtype=DT))
    layers = nn.ModuleList(random_layer(seed=i) for i in range(5))
    with caplog.at_level(logging.WARNING, logger="hetdre.gat"):
        out = run_schedule(dirs, init, MetaPathSchedule.parse("ABCDA"), layers)
    assert torch.equal(out.H_u, init.H_u) and torch.equal(out.H_b, init.H_b) and torch.equal(out.H_t, init.H_t)
    assert sum("no edges" in r.message for r in caplog.records) == 5


@pytest.mark.parametrize("text, steps", [("A", ("A",)), ("ABCDADA", tuple("ABCDADA")), ("a-b-c-d-a", tuple("ABCDA"))])
def test_schedule_parse(text, steps):
    assert MetaPathSchedule.parse(text).steps == steps


@pytest.mark.parametrize("text", ["", "ABE", "X"])
def test_schedule_rejects(text):
    with pytest.raises(ValueError):
        MetaPathSchedule.parse(text)


def test_schedule_needs_one_layer_per_step():
    with pytest.raises(ValueError):
        run_schedule({}, None, MetaPathSchedule.parse("AB"), [random_layer()])


def test_width_must_split_into_heads():
    with pytest.raises(ValueError):
        GatLayer(10, 3, 4, 5)


def test_gat_gradient_check():
    errs = scenarios.gat_gradcheck()
    assert len(errs) == 5 * 9
    bad = {k: v for k, v in errs.items() if v > 1e-4}
    assert not bad


def test_oracle_sees_every_parameter():
    # the scalar oracle must read each trainable tensor, else it could agree vacuously
    layer = random_layer()
    assert set(n.split(".")[0] for n, _ in layer.named_parameters()) == {"W_i", "W_j", "W_q", "a", "E", "ffn"}
    assert set(oracles.layer_params(layer)) >= {"W_i", "W_j", "W_q", "a", "E", "W1", "b1", "W2", "b2"}
