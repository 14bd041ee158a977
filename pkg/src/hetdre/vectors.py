"""Word vocabulary and pretrained text-format vectors (GloVe layout)."""
from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterable

import numpy as np

PAD, UNK = "<pad>", "<unk>"


class WordVocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = [PAD, UNK]
        self.index: dict[str, int] = {PAD: 0, UNK: 1}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def get(self, token: str) -> int:
        return self.index.get(token, 1)

    @classmethod
    def from_annotated(cls, annotated) -> "WordVocab":
        """Vocabulary over the norm forms of every token, in first-seen order."""
        vocab = cls()
        for ad in annotated:
            for au in ad.utterances:
                for tok in au.tokens:
                    vocab.add(tok.norm)
        return vocab


def iter_vectors(path: str | Path, dim: int = 300):
    """Stream ``token v1 ... v_dim`` lines. Tokens may contain spaces."""
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parts = line.rstrip().split(" ")
            if len(parts) < dim + 1:
                continue
            token = " ".join(parts[:-dim])
            yield token, np.asarray(parts[-dim:], dtype=np.float32)


def load_pretrained(path: str | Path, vocab: WordVocab, dim: int = 300) -> dict[str, np.ndarray]:
    """Keep only vectors for tokens in ``vocab``; the file is never held in memory."""
    found = {}
    for token, vec in iter_vectors(path, dim):
        if token in vocab and token not in found:
            found[token] = vec
    return found


def oov_vector(token: str, dim: int, scale: float = 0.05) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(seed).uniform(-scale, scale, dim).astype(np.float32)


def embedding_matrix(vocab: WordVocab, pretrained: dict[str, np.ndarray] | None, dim: int = 300) -> np.ndarray:
    pretrained = pretrained or {}
    mat = np.zeros((len(vocab), dim), dtype=np.float32)
    for i, tok in enumerate(vocab.tokens):
        if i == 0:
            continue
        vec = pretrained.get(tok)
        mat[i] = vec if vec is not None else oov_vector(tok, dim)
    return mat
