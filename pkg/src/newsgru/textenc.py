"""Tokenization, word-vector file loading, and mean-of-words sentence vectors."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "EmbeddingTable",
    "SentenceEmbedding",
    "default_stopwords",
    "embed_sentence",
    "load_embeddings",
    "load_stopwords",
    "tokenize",
]

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")

DEFAULT_MAX_TOKENS = 100


@dataclass
class EmbeddingTable:
    """Token to vector map with a fixed dimension; tokens are lowercased."""

    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def get(self, token: str) -> np.ndarray | None:
        return self.entries.get(token.lower())

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.entries

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class SentenceEmbedding:
    """Mean of the in-vocabulary token vectors of one headline."""

    vec: np.ndarray
    oov_count: int
    token_count: int


def default_stopwords() -> set[str]:
    """The bundled English stopword list."""
    text = resources.files("newsgru").joinpath("data/stopwords.txt").read_text("utf-8")
    return {line.strip().lower() for line in text.splitlines() if line.strip()}


def load_stopwords(path: str | Path) -> set[str]:
    """Stopword file: one word per line, UTF-8."""
    with open(path, encoding="utf-8") as fh:
        return {line.strip().lower() for line in fh if line.strip()}


def tokenize(text: str, stopwords: set[str] | None = None,
             max_len: int = DEFAULT_MAX_TOKENS) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop stopwords, truncate.

    Truncation to max_len happens after stopword removal, matching the fixed
    sentence length used when headlines are embedded.
    """
    if stopwords is None:
        stopwords = ()
    tokens = [t for t in _TOKEN_RE.findall(text.lower()) if t not in stopwords]
    return tokens[:max_len]


def embed_sentence(tokens: list[str], table: EmbeddingTable) -> SentenceEmbedding:
    """Mean of the vectors of in-vocabulary tokens; OOV tokens are skipped.

    A headline with no tokens, or with every token out of vocabulary, maps to
    the zero vector so the day matrix stays well defined.
    """
    hits = []
    oov = 0
    for tok in tokens:
        vec = table.get(tok)
        if vec is None:
            oov += 1
        else:
            hits.append(vec)
    if hits:
        vec = np.mean(hits, axis=0)
    else:
        vec = np.zeros(table.dim, dtype=np.float64)
    return SentenceEmbedding(vec=vec, oov_count=oov, token_count=len(tokens))


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Read a text word-vector file: token then dim floats per line.

    The dimension is inferred from the first line; any line with a different
    arity is a hard error naming the line number. Duplicate tokens keep the
    last occurrence and emit a warning.
    """
    entries: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token = parts[0].lower()
            if dim is None:
                dim = len(parts) - 1
                if dim < 1:
                    raise ValueError(
                        f"{path}: line {lineno}: expected a token and at least one value"
                    )
            if len(parts) - 1 != dim:
                raise ValueError(
                    f"{path}: line {lineno}: expected {dim} values, got {len(parts) - 1}"
                )
            try:
                vec = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            if token in entries:
                log.warning("duplicate token %r at line %d, keeping the last", token, lineno)
            entries[token] = vec
    if dim is None:
        raise ValueError(f"{path}: empty embedding file")
    return EmbeddingTable(dim=dim, entries=entries)
