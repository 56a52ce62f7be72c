"""Skip-gram token embeddings and two-level averaging for blocks/snapshots.

Two separate tables are trained: 60-dim over instruction tokens and 30-dim
over memory-state value tokens.  Training is skip-gram with negative
sampling (unigram^0.75 noise), single-threaded and seed-deterministic.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .graphs import CctNode, value_tokens
from .isa import BasicBlock, Dialect, tokenize_instruction
from .nn import kernels

UNK = "<unk>"
UNK_ID = 0


class EmptyCorpus(Exception):
    pass


@dataclass
class Vocab:
    token_to_id: dict[str, int]
    id_to_token: list[str]
    counts: np.ndarray  # per id, UNK aggregates pruned tokens
    min_count: int

    def __len__(self):
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens: list[str]) -> np.ndarray:
        return np.array([self.lookup(t) for t in tokens], dtype=np.int64)


def build_vocab(corpus: list[list[str]], min_count: int = 2) -> Vocab:
    """Kept tokens are those seen at least min_count times, ordered by first
    occurrence; everything else maps to the reserved UNK id 0."""
    totals: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    pos = 0
    for sentence in corpus:
        for tok in sentence:
            totals[tok] = totals.get(tok, 0) + 1
            if tok not in first_seen:
                first_seen[tok] = pos
            pos += 1
    if pos == 0:
        raise EmptyCorpus("no tokens in corpus")
    kept = [t for t in sorted(first_seen, key=first_seen.get) if totals[t] >= min_count]
    id_to_token = [UNK] + kept
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    counts = np.zeros(len(id_to_token), dtype=np.int64)
    for tok, cnt in totals.items():
        counts[token_to_id.get(tok, UNK_ID)] += cnt
    return Vocab(token_to_id, id_to_token, counts, min_count)


@dataclass
class EmbeddingTable:
    vocab: Vocab
    dim: int
    vectors: np.ndarray  # |V| x dim, float32

    def __post_init__(self):
        if self.vectors.shape != (len(self.vocab), self.dim):
            raise ValueError(
                f"vectors shape {self.vectors.shape} != ({len(self.vocab)}, {self.dim})"
            )

    def vector(self, token: str) -> np.ndarray:
        return self.vectors[self.vocab.lookup(token)]


def _negative_table(counts: np.ndarray, size: int = 1 << 17) -> np.ndarray:
    """Integer sampling table over the unigram^0.75 noise distribution: each
    token occupies a share of slots proportional to its weight."""
    weights = np.power(counts.astype(np.float64), 0.75)
    if weights.sum() == 0:
        weights = np.ones_like(weights)
    cdf = np.cumsum(weights / weights.sum())
    positions = (np.arange(size) + 0.5) / size
    return np.searchsorted(cdf, positions).clip(0, len(weights) - 1).astype(np.int64)


def _training_pairs(ids: list[np.ndarray], window: int) -> np.ndarray:
    pairs: list[tuple[int, int]] = []
    for sent in ids:
        n = len(sent)
        for i in range(n):
            lo = max(0, i - window)
            hi = min(n, i + window + 1)
            for j in range(lo, hi):
                if j != i:
                    pairs.append((sent[i], sent[j]))
    if not pairs:
        raise EmptyCorpus("no training pairs (sentences too short?)")
    return np.array(pairs, dtype=np.int64)


def train_word2vec(
    corpus: list[list[str]],
    dim: int,
    window: int = 2,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    min_count: int = 2,
    seed: int = 0,
    vocab: Vocab | None = None,
) -> EmbeddingTable:
    """Train skip-gram with negative sampling and return the input vectors."""
    if dim < 1 or window < 1 or negatives < 1:
        raise ValueError("dim, window, and negatives must all be >= 1")
    if vocab is None:
        vocab = build_vocab(corpus, min_count)
    ids = [vocab.encode(s) for s in corpus if s]
    if not ids:
        raise EmptyCorpus("no sentences")
    pairs = _training_pairs(ids, window)
    rng = np.random.default_rng(seed)
    vsize = len(vocab)
    w_in = ((rng.random((vsize, dim)) - 0.5) / dim).astype(np.float32)
    w_out = np.zeros((vsize, dim), dtype=np.float32)
    table = _negative_table(vocab.counts)
    kernels.sgns_train(pairs, w_in, w_out, table, negatives, lr, lr * 1e-3, epochs, seed + 1)
    if not np.all(np.isfinite(w_in)):
        raise FloatingPointError("non-finite embedding after training")
    return EmbeddingTable(vocab, dim, w_in)


# ---------------------------------------------------------------------------
# Two-level averaging.
# ---------------------------------------------------------------------------


def embed_block(block: BasicBlock, table: EmbeddingTable, dialect: Dialect) -> np.ndarray:
    """Mean token vector per instruction, then mean over instructions."""
    per_instruction = []
    for ins in block.instructions:
        ids = table.vocab.encode([t.text for t in tokenize_instruction(ins, dialect)])
        per_instruction.append(table.vectors[ids].mean(axis=0))
    return np.stack(per_instruction).mean(axis=0)


def embed_snapshots(node: CctNode, table: EmbeddingTable) -> np.ndarray:
    """Flat mean over all value tokens of all snapshots; zero vector when the
    node has no snapshots."""
    tokens: list[str] = []
    for snap in node.snapshots:
        tokens.extend(value_tokens(snap))
    if not tokens:
        return np.zeros(table.dim, dtype=table.vectors.dtype)
    ids = table.vocab.encode(tokens)
    return table.vectors[ids].mean(axis=0)


def block_token_weights(token_counts: list[int]) -> np.ndarray:
    """Per-token weights realizing the two-level average for one block: each
    token of instruction j weighs 1/(m * n_j)."""
    m = len(token_counts)
    weights = np.concatenate(
        [np.full(n, 1.0 / (m * n), dtype=np.float64) for n in token_counts]
    )
    return weights


# ---------------------------------------------------------------------------
# Binary persistence: magic "GSEMB", version, vocab, float32 rows.
# ---------------------------------------------------------------------------

_MAGIC = b"GSEMB"
_VERSION = 1


def save_table(path: str, table: EmbeddingTable) -> None:
    parts = [
        _MAGIC,
        struct.pack("<I", _VERSION),
        struct.pack("<I", len(table.vocab)),
        struct.pack("<I", table.dim),
    ]
    for tok in table.vocab.id_to_token:
        raw = tok.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(table.vectors, dtype="<f4").tobytes())
    blob = b"".join(parts)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_table(path: str) -> EmbeddingTable:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not an embedding table file")
    pos = len(_MAGIC)

    def u32() -> int:
        nonlocal pos
        val = struct.unpack_from("<I", buf, pos)[0]
        pos += 4
        return val

    version = u32()
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported table version {version}")
    vocab_size = u32()
    dim = u32()
    tokens: list[str] = []
    for _ in range(vocab_size):
        n = u32()
        tokens.append(buf[pos : pos + n].decode("utf-8"))
        pos += n
    vectors = np.frombuffer(buf, dtype="<f4", count=vocab_size * dim, offset=pos)
    vectors = vectors.reshape(vocab_size, dim).astype(np.float32)
    vocab = Vocab({t: i for i, t in enumerate(tokens)}, tokens, np.zeros(vocab_size, dtype=np.int64), 0)
    return EmbeddingTable(vocab, dim, vectors)
