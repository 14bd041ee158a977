"""Token embeddings and the two-level (local / global) BiLSTM utterance encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .annotate import NER_TYPES, POS_TAGS, AnnotatedDialogue, AnnotatedUtterance
from .config import ModelConfig
from .vectors import WordVocab


class EmbeddingTables(nn.Module):
    """Lookup tables for tokens (word/POS/NER) and for graph node initialization."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, word_init: np.ndarray | None = None):
        super().__init__()
        self.cfg = cfg
        self.word = nn.Embedding(vocab_size, cfg.word_dim, padding_idx=0)
        if word_init is not None:
            self.word.weight.data.copy_(torch.as_tensor(word_init))
        self.pos = None if cfg.no_pos_embedding else nn.Embedding(len(POS_TAGS), cfg.pos_dim)
        self.ner = None if cfg.no_ner_embedding else nn.Embedding(len(NER_TYPES), cfg.ner_dim)
        self.pad = nn.Parameter(torch.randn(1, cfg.token_dim) * 0.1)
        # node tables live at the common model width
        self.speaker = nn.Embedding(cfg.max_speakers, cfg.model_dim)
        self.argument = nn.Embedding(2, cfg.model_dim)
        self.type_node = nn.Embedding(len(NER_TYPES), cfg.model_dim)


def embed_tokens(word_ids: torch.Tensor, pos_ids: torch.Tensor, ner_ids: torch.Tensor,
                 tables: EmbeddingTables) -> torch.Tensor:
    """``[e_w; e_p; e_t]`` per token (dropping ablated parts)."""
    if (pos_ids < 0).any() or (pos_ids >= len(POS_TAGS)).any():
        raise IndexError("POS id outside the tag vocabulary")
    if (ner_ids < 0).any() or (ner_ids >= len(NER_TYPES)).any():
        raise IndexError("entity-type id outside the type vocabulary")
    parts = [tables.word(word_ids)]
    if tables.pos is not None:
        parts.append(tables.pos(pos_ids))
    if tables.ner is not None:
        parts.append(tables.ner(ner_ids))
    return torch.cat(parts, dim=-1)


@dataclass
class DialogueIds:
    """Integer views of an annotated dialogue, one entry per turn."""

    word: list[torch.Tensor]
    pos: list[torch.Tensor]
    ner: list[torch.Tensor]

    @classmethod
    def build(cls, ad: AnnotatedDialogue, vocab: WordVocab) -> "DialogueIds":
        w, p, n = [], [], []
        for au in ad.utterances:
            w.append(torch.tensor([vocab.get(t.norm) for t in au.tokens], dtype=torch.long))
            p.append(torch.tensor([t.pos_id for t in au.tokens], dtype=torch.long))
            n.append(torch.tensor([t.ner_id for t in au.tokens], dtype=torch.long))
        return cls(w, p, n)


@dataclass
class UtteranceEncoding:
    token_states: list[torch.Tensor]
    pooled: torch.Tensor
    global_state: torch.Tensor


class UtteranceEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, tables: EmbeddingTables):
        super().__init__()
        self.cfg = cfg
        self.tables = tables
        drop = cfg.lstm_dropout
        local_out = cfg.token_dim
        if not cfg.no_local_lstm:
            self.local = nn.LSTM(cfg.token_dim, cfg.local_hidden, cfg.local_layers, batch_first=True,
                                 bidirectional=True, dropout=drop if cfg.local_layers > 1 else 0.0)
            local_out = 2 * cfg.local_hidden
        else:
            self.local = None
        self.local_width = local_out
        if not cfg.no_global_lstm:
            self.glob = nn.LSTM(local_out, cfg.global_hidden, cfg.global_layers, batch_first=True,
                                bidirectional=True, dropout=drop if cfg.global_layers > 1 else 0.0)
            self.out_width = 2 * cfg.global_hidden
        else:
            self.glob = None
            self.out_width = local_out

    def embed(self, ids: DialogueIds) -> list[torch.Tensor]:
        seqs = []
        for w, p, n in zip(ids.word, ids.pos, ids.ner):
            if len(w) == 0:
                seqs.append(self.tables.pad)
            else:
                seqs.append(embed_tokens(w, p, n, self.tables))
        return seqs

    def encode_local(self, seqs: list[torch.Tensor]) -> tuple[list[torch.Tensor], torch.Tensor]:
        """Contextual token states per turn and their coordinatewise max."""
        if self.local is None:
            return seqs, torch.stack([s.max(dim=0).values for s in seqs])
        lengths = torch.tensor([len(s) for s in seqs])
        padded = nn.utils.rnn.pad_sequence(seqs, batch_first=True)
        packed = pack_padded_sequence(padded, lengths, batch_first=True, enforce_sorted=False)
        out, _ = self.local(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=padded.shape[1])
        states = [out[i, :n] for i, n in enumerate(lengths.tolist())]
        pooled = torch.stack([s.max(dim=0).values for s in states])
        return states, pooled

    def encode_global(self, pooled: torch.Tensor) -> torch.Tensor:
        if self.glob is None:
            return pooled
        out, _ = self.glob(pooled.unsqueeze(0))
        return out.squeeze(0)

    def forward(self, ids: DialogueIds) -> UtteranceEncoding:
        states, pooled = self.encode_local(self.embed(ids))
        return UtteranceEncoding(states, pooled, self.encode_global(pooled))


def encode_utterance_tokens(au: AnnotatedUtterance, vocab: WordVocab, tables: EmbeddingTables) -> torch.Tensor:
    w = torch.tensor([vocab.get(t.norm) for t in au.tokens], dtype=torch.long)
    p = torch.tensor([t.pos_id for t in au.tokens], dtype=torch.long)
    n = torch.tensor([t.ner_id for t in au.tokens], dtype=torch.long)
    return embed_tokens(w, p, n, tables)
