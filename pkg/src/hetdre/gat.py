"""Edge-featured multi-head graph attention and meta-path scheduling.

One layer updates a *target* node family from a *source* family along the
edges between them::

    score_ij^k = LeakyReLU(a_k . [W_i^k h_i ; W_j^k h_j ; E[f_ij]])
    alpha_ij^k = softmax_j(score_ij^k)          (over in-neighbors of i)
    h'_i       = ||_k  sigma(sum_j alpha_ij^k W_q^k h_j)
    h_new_i    = FFN(h'_i + h_i)

Targets without in-edges keep their state untouched.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

log = logging.getLogger(__name__)

STEPS = {
    "A": ("utterance", "basic"),
    "B": ("basic", "type"),
    "C": ("type", "basic"),
    "D": ("basic", "utterance"),
}


@dataclass(frozen=True)
class MetaPathSchedule:
    steps: tuple[str, ...]

    def __post_init__(self):
        if not self.steps:
            raise ValueError("empty meta-path schedule")
        bad = [s for s in self.steps if s not in STEPS]
        if bad:
            raise ValueError(f"invalid schedule steps {bad}; allowed: A, B, C, D")

    @classmethod
    def parse(cls, text: str) -> "MetaPathSchedule":
        return cls(tuple(c for c in text.upper() if c not in " -,"))

    def __str__(self):
        return "".join(self.steps)

    def __len__(self):
        return len(self.steps)


@dataclass
class NodeStates:
    H_u: torch.Tensor
    H_b: torch.Tensor
    H_t: torch.Tensor
    version: dict[str, int] = field(default_factory=lambda: {"utterance": 0, "basic": 0, "type": 0})

    _attr = {"utterance": "H_u", "basic": "H_b", "type": "H_t"}

    def get(self, family: str) -> torch.Tensor:
        return getattr(self, self._attr[family])

    def replace(self, family: str, value: torch.Tensor) -> "NodeStates":
        version = dict(self.version)
        version[family] += 1
        kw = {"H_u": self.H_u, "H_b": self.H_b, "H_t": self.H_t, "version": version}
        kw[self._attr[family]] = value
        return NodeStates(**kw)


def segment_softmax(scores: torch.Tensor, index: torch.Tensor, n_segments: int) -> torch.Tensor:
    """Softmax of ``scores`` (edges x heads) within groups sharing ``index``."""
    idx = index.unsqueeze(-1).expand_as(scores)
    seg_max = scores.new_full((n_segments, scores.shape[1]), float("-inf"))
    seg_max = seg_max.scatter_reduce(0, idx, scores, reduce="amax", include_self=True)
    ex = torch.exp(scores - seg_max[index])
    denom = scores.new_zeros((n_segments, scores.shape[1])).index_add(0, index, ex)
    return ex / denom[index]


_ACTIVATIONS = {"elu": F.elu, "relu": F.relu, "identity": lambda x: x, "tanh": torch.tanh}


class GatLayer(nn.Module):
    """Parameters for one propagation step (one letter of the schedule)."""

    def __init__(self, dim: int, heads: int, edge_dim: int, n_edge_features: int,
                 ffn_mult: int = 2, slope: float = 0.2, activation: str = "elu"):
        super().__init__()
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.head_dim = dim, heads, dim // heads
        self.slope = slope
        self.activation = activation
        self.act = _ACTIVATIONS[activation]
        self.W_i = nn.Linear(dim, dim, bias=False)
        self.W_j = nn.Linear(dim, dim, bias=False)
        self.W_q = nn.Linear(dim, dim, bias=False)
        self.a = nn.Parameter(torch.empty(heads, 2 * self.head_dim + edge_dim))
        self.E = nn.Embedding(n_edge_features, edge_dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_mult * dim), nn.ReLU(), nn.Linear(ffn_mult * dim, dim))
        nn.init.xavier_uniform_(self.a)

    def scores(self, h_dst, h_src, src, dst, feat) -> torch.Tensor:
        """Unnormalized per-edge, per-head attention logits (edges x heads)."""
        K, dh = self.heads, self.head_dim
        q = self.W_i(h_dst).view(-1, K, dh)
        k = self.W_j(h_src).view(-1, K, dh)
        a_i, a_j, a_e = self.a[:, :dh], self.a[:, dh:2 * dh], self.a[:, 2 * dh:]
        e = self.E(feat)
        raw = (q[dst] * a_i).sum(-1) + (k[src] * a_j).sum(-1) + e @ a_e.T
        return F.leaky_relu(raw, self.slope)

    def attention(self, h_dst, h_src, src, dst, feat) -> torch.Tensor:
        return segment_softmax(self.scores(h_dst, h_src, src, dst, feat), dst, h_dst.shape[0])

    def forward(self, h_dst, h_src, src, dst, feat) -> torch.Tensor:
        if src.numel() == 0:
            return h_dst
        # fixed summation order: edges sorted by (target, source)
        order = torch.argsort(dst * (h_src.shape[0] + 1) + src, stable=True)
        src, dst, feat = src[order], dst[order], feat[order]
        alpha = self.attention(h_dst, h_src, src, dst, feat)
        v = self.W_q(h_src).view(-1, self.heads, self.head_dim)
        agg = h_dst.new_zeros((h_dst.shape[0], self.heads, self.head_dim))
        agg = agg.index_add(0, dst, alpha.unsqueeze(-1) * v[src])
        h_prime = self.act(agg).reshape(h_dst.shape[0], self.dim)
        out = self.ffn(h_prime + h_dst)
        has_in = torch.zeros(h_dst.shape[0], dtype=torch.bool, device=h_dst.device)
        has_in[dst] = True
        return torch.where(has_in.unsqueeze(-1), out, h_dst)


def attention_scores(layer: GatLayer, h_i: torch.Tensor, h_js: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
    """Normalized weights (neighbors x heads) for a single target ``h_i``."""
    n = h_js.shape[0]
    if n == 0:
        raise ValueError("target has no neighbors")
    src = torch.arange(n)
    dst = torch.zeros(n, dtype=torch.long)
    return layer.attention(h_i.unsqueeze(0), h_js, src, dst, feats)


def gat_update(states: NodeStates, step: str, edges, layer: GatLayer) -> NodeStates:
    """Apply one schedule step; only the target family changes."""
    source, target = STEPS[step]
    src, dst, feat = edges
    if src.numel() == 0:
        log.warning("meta-path step %s has no edges; skipping", step)
        return states
    new = layer(states.get(target), states.get(source), src, dst, feat)
    return states.replace(target, new)


def run_schedule(directions: dict, init: NodeStates, schedule: MetaPathSchedule,
                 layers: list[GatLayer] | nn.ModuleList) -> NodeStates:
    if len(layers) != len(schedule):
        raise ValueError(f"{len(layers)} layer parameter sets for a {len(schedule)}-step schedule")
    states = init
    for step, layer in zip(schedule.steps, layers):
        states = gat_update(states, step, directions[step], layer)
    return states
