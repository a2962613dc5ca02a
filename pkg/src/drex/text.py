"""Review normalisation and token embedding providers."""

from __future__ import annotations

import logging
import re
from importlib import resources
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MAX_TOKENS = 512
HASH_TABLE_SIZE = 2 ** 15

_SPLIT = re.compile(r"[^0-9a-z]+")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


class EmbeddingFormatError(ValueError):
    pass


def load_stopwords(path=None) -> frozenset:
    if path is None:
        text = resources.files("drex.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


STOPWORDS = load_stopwords()


def lemmatize(token: str) -> str:
    """Apply the ordered suffix rules until none fires.

    Rules (first match wins on each pass): ``ies->y``, ``sses->ss``,
    trailing ``s`` when longer than 3 (not after another ``s``), ``ing`` when
    longer than 5, ``ed`` when longer than 4.
    """
    while True:
        if token.endswith("ies"):
            new = token[:-3] + "y"
        elif token.endswith("sses"):
            new = token[:-2]
        elif token.endswith("s") and not token.endswith("ss") and len(token) > 3:
            new = token[:-1]
        elif token.endswith("ing") and len(token) > 5:
            new = token[:-3]
        elif token.endswith("ed") and len(token) > 4:
            new = token[:-2]
        else:
            return token
        token = new


def normalize(text: str, stopwords=STOPWORDS, lemma=lemmatize, max_tokens=MAX_TOKENS) -> list[str]:
    out = []
    for raw in _SPLIT.split(text.lower()):
        if not raw or raw in stopwords:
            continue
        tok = lemma(raw)
        if len(tok) < 2 or tok in stopwords:
            continue
        out.append(tok)
        if len(out) == max_tokens:
            break
    return out


class Vocab:
    def __init__(self, tokens=()):
        self.index: dict[str, int] = {}
        self.tokens: list[str] = []
        self.frozen = False
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        idx = self.index.get(token)
        if idx is None:
            if self.frozen:
                raise KeyError(f"vocabulary is frozen; cannot add {token!r}")
            idx = self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return idx

    def encode(self, tokens) -> list[int]:
        return [self.add(t) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens


def fnv1a_64(token: str) -> int:
    h = FNV_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class EmbeddingProvider:
    """Token -> b-dimensional vector lookup.

    Both kinds keep a dense ``table``; ``rows(tokens)`` gives the table row of
    each token. For ``file_table`` the last row is all zeros and receives
    every out-of-vocabulary token. For ``hashed_trainable`` the table is a
    model parameter and the row is ``fnv1a_64(token) % table_size``.
    """

    def __init__(self, kind: str, table: np.ndarray, words: dict[str, int] | None = None):
        if kind not in ("file_table", "hashed_trainable"):
            raise ValueError(f"unknown embedding provider kind {kind!r}")
        self.kind = kind
        self.table = np.ascontiguousarray(table, dtype=np.float64)
        self.words = words or {}
        if kind == "file_table":
            self.table.setflags(write=False)

    @classmethod
    def hashed(cls, b=768, table_size=HASH_TABLE_SIZE, seed=0):
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(b)
        return cls("hashed_trainable", rng.uniform(-bound, bound, size=(table_size, b)))

    @classmethod
    def from_mapping(cls, mapping: dict[str, np.ndarray]):
        b = len(next(iter(mapping.values()))) if mapping else 0
        table = np.zeros((len(mapping) + 1, b))
        words = {}
        for j, (tok, vec) in enumerate(mapping.items()):
            table[j] = vec
            words[tok] = j
        return cls("file_table", table, words)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def trainable(self) -> bool:
        return self.kind == "hashed_trainable"

    def row(self, token: str) -> int:
        if self.kind == "file_table":
            return self.words.get(token, self.table.shape[0] - 1)
        return fnv1a_64(token) % self.table.shape[0]

    def rows(self, tokens) -> np.ndarray:
        return np.fromiter((self.row(t) for t in tokens), dtype=np.int64, count=len(tokens))

    def embed(self, tokens) -> np.ndarray:
        return self.table[self.rows(tokens)]


def embed(tokens, provider: EmbeddingProvider) -> np.ndarray:
    return provider.embed(tokens)


def load_embedding_file(path) -> EmbeddingProvider:
    """Read ``<count> <b>`` then one ``<token> <f1> ... <fb>`` line per token."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingFormatError(f"{path}: header must be '<vocab_count> <b>'")
        try:
            count, b = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingFormatError(f"{path}: non-integer header {header}") from None
        mapping: dict[str, np.ndarray] = {}
        n_rows = 0
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != b + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {b} values, found {len(parts) - 1}")
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric field") from None
            if parts[0] in mapping:
                log.warning("%s:%d: duplicate token %r, keeping the last row", path, lineno, parts[0])
                del mapping[parts[0]]
            mapping[parts[0]] = vec
            n_rows += 1
    if n_rows != count:
        raise EmbeddingFormatError(f"{path}: header declares {count} tokens, found {n_rows}")
    provider = EmbeddingProvider.from_mapping(mapping)
    if not mapping:
        provider = EmbeddingProvider("file_table", np.zeros((1, b)), {})
    return provider


def write_embedding_file(path, provider: EmbeddingProvider) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(provider.words)} {provider.dim}\n")
        for tok, j in provider.words.items():
            fh.write(tok + " " + " ".join(repr(float(x)) for x in provider.table[j]) + "\n")
