"""Shared byte-pair-style subword vocabulary and thread encoding.

Text is whitespace-normalised and split into pieces, with every word except
the first of a string carrying its leading space (``"a b" -> ["a", " b"]``).
Merges never cross piece boundaries, so decoding a run of tokens is plain
string concatenation.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
N_SPECIAL = len(SPECIAL_TOKENS)
VOCAB_MAGIC = "#xrumour-vocab v1"


class SepStyle(str, Enum):
    SINGLE = "single"
    DOUBLE = "double"


def pieces(text: str) -> list[str]:
    words = text.split()
    return [w if i == 0 else " " + w for i, w in enumerate(words)]


def reaction_string(thread) -> str:
    return " ".join(r.text for r in thread.reactions)


@dataclass
class Vocabulary:
    merges: list[tuple[str, str]]
    tokens: list[str]

    def __post_init__(self):
        if tuple(self.tokens[:N_SPECIAL]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate token strings in vocabulary")
        self._ranks = {}
        for rank, (a, b) in enumerate(self.merges):
            pair = (self.token_to_id[a], self.token_to_id[b])
            self._ranks.setdefault(pair, (rank, self.token_to_id[a + b]))
        self._cache: dict[str, list[int]] = {}

    @property
    def special(self) -> dict[str, int]:
        return {"CLS": CLS, "SEP": SEP, "PAD": PAD, "MASK": MASK, "UNK": UNK}

    def __len__(self):
        return len(self.tokens)

    def _encode_piece(self, piece: str) -> list[int]:
        hit = self._cache.get(piece)
        if hit is not None:
            return hit
        ids = [self.token_to_id.get(ch, UNK) for ch in piece]
        while len(ids) > 1:
            best = None
            for pair in zip(ids, ids[1:]):
                r = self._ranks.get(pair)
                if r is not None and (best is None or r[0] < best[1][0]):
                    best = (pair, r)
            if best is None:
                break
            (a, b), (_, new) = best
            ids = kernels.merge_pair(ids, a, b, new).tolist()
        self._cache[piece] = ids
        return ids

    def encode_text(self, text: str) -> list[int]:
        out: list[int] = []
        for p in pieces(text):
            out.extend(self._encode_piece(p))
        return out

    def decode(self, ids) -> str:
        return "".join(self.tokens[i] for i in ids if i >= N_SPECIAL)

    # -- serialisation: header, one merge per line, then the id table

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(VOCAB_MAGIC + "\n")
            fh.write(f"#merges {len(self.merges)}\n")
            for a, b in self.merges:
                fh.write(json.dumps(a, ensure_ascii=False) + "\t" + json.dumps(b, ensure_ascii=False) + "\n")
            fh.write(f"#tokens {len(self.tokens)}\n")
            for i, t in enumerate(self.tokens):
                fh.write(f"{i}\t{json.dumps(t, ensure_ascii=False)}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if not lines or lines[0] != VOCAB_MAGIC:
            raise ValueError(f"{path}: not a vocabulary file")
        n_merges = int(lines[1].split()[1])
        merges = []
        for line in lines[2 : 2 + n_merges]:
            a, b = line.split("\t")
            merges.append((json.loads(a), json.loads(b)))
        head = lines[2 + n_merges]
        n_tokens = int(head.split()[1])
        tokens = []
        for i, line in enumerate(lines[3 + n_merges : 3 + n_merges + n_tokens]):
            idx, tok = line.split("\t", 1)
            if int(idx) != i:
                raise ValueError(f"{path}: token ids must be dense and ordered")
            tokens.append(json.loads(tok))
        return cls(merges, tokens)


def _thread_texts(corpora):
    for threads in corpora:
        for t in threads:
            yield t.source_text
            yield reaction_string(t)


def train_subwords(corpora, vocab_size: int, seed: int = 0) -> Vocabulary:
    """Greedy pair-merge training on the concatenated text of all corpora.

    Ties in pair frequency go to the lexicographically smallest
    (left, right) string pair, so the result does not depend on ``seed``;
    the argument is kept for interface symmetry with the other trainers.
    """
    counts: Counter[str] = Counter()
    for text in _thread_texts(corpora):
        counts.update(pieces(text))
    if not counts:
        raise ValueError("cannot train a vocabulary on empty corpora")
    alphabet = sorted({ch for p in counts for ch in p})
    if vocab_size <= len(alphabet) + N_SPECIAL:
        raise ValueError(
            f"vocab_size={vocab_size} must exceed {len(alphabet)} characters + {N_SPECIAL} specials"
        )
    tokens = list(SPECIAL_TOKENS) + alphabet
    token_to_id = {t: i for i, t in enumerate(tokens)}

    words = sorted(counts)
    freqs = np.array([counts[w] for w in words], dtype=np.float64)
    flat = []
    for w in words:
        flat.append(-1)
        flat.extend(token_to_id[ch] for ch in w)
    symbols = np.array(flat, dtype=np.int32)
    width = np.int64(vocab_size)

    merges: list[tuple[str, str]] = []
    banned: set[int] = set()
    while len(tokens) < vocab_size:
        left, right = symbols[:-1].astype(np.int64), symbols[1:].astype(np.int64)
        valid = (left >= 0) & (right >= 0)
        if not valid.any():
            break
        owner = np.cumsum(symbols < 0)[:-1] - 1
        keys, inverse = np.unique((left * width + right)[valid], return_inverse=True)
        totals = np.bincount(inverse, weights=freqs[owner[valid]])
        if banned:
            totals[np.isin(keys, list(banned))] = -1.0
        if totals.max() < 0:
            break
        top = keys[totals == totals.max()]
        a, b = min(((int(k // width), int(k % width)) for k in top), key=lambda p: (tokens[p[0]], tokens[p[1]]))
        merged = tokens[a] + tokens[b]
        if merged in SPECIAL_TOKENS:
            # specials are never produced by merges
            banned.add(a * int(width) + b)
            continue
        new = token_to_id.get(merged)
        if new is None:
            new = len(tokens)
            tokens.append(merged)
            token_to_id[merged] = new
        merges.append((tokens[a], tokens[b]))
        symbols = kernels.merge_pair(symbols, a, b, new)
    return Vocabulary(merges, tokens)


@dataclass(frozen=True, eq=False)
class TokenSequence:
    ids: np.ndarray
    attention_len: int
    segment_boundaries: tuple[int, ...]

    def __len__(self):
        return len(self.ids)

    def same_as(self, other: "TokenSequence") -> bool:
        return np.array_equal(self.ids, other.ids) and self.attention_len == other.attention_len


def _make_sequence(body: list[int], max_seq_len: int) -> TokenSequence:
    ids = np.full(max_seq_len, PAD, dtype=np.int64)
    ids[: len(body)] = body
    ids.setflags(write=False)
    seps = tuple(i for i, t in enumerate(body) if t == SEP)
    return TokenSequence(ids, len(body), seps)


def encode_thread(thread, vocab: Vocabulary, max_seq_len: int = 384, sep_style=SepStyle.SINGLE) -> TokenSequence:
    """[CLS] source [SEP] reactions [SEP], PAD-filled to max_seq_len.

    Reactions are concatenated in timestamp order; whatever does not fit is
    dropped from the end. DOUBLE puts two [SEP] between source and reactions.
    """
    if max_seq_len < 8:
        raise ValueError("max_seq_len must be at least 8")
    n_mid = 2 if SepStyle(sep_style) is SepStyle.DOUBLE else 1
    src = vocab.encode_text(thread.source_text)
    react = vocab.encode_text(reaction_string(thread))
    room = max_seq_len - 2 - n_mid
    src = src[:room]
    react = react[: room - len(src)]
    body = [CLS] + src + [SEP] * n_mid + react + [SEP]
    return _make_sequence(body, max_seq_len)


def mask_tokens(seq: TokenSequence, mask_prob: float = 0.15, seed: int = 0):
    """Replace a random subset of ordinary tokens by [MASK].

    Returns ``(corrupted, targets)`` with targets a list of
    ``(position, original_id)``.
    """
    if not 0.0 < mask_prob < 1.0:
        raise ValueError(f"mask_prob must be in (0, 1), got {mask_prob}")
    draws = np.random.default_rng(seed).random(len(seq.ids))
    eligible = seq.ids >= N_SPECIAL
    chosen = np.flatnonzero(eligible & (draws < mask_prob))
    ids = seq.ids.copy()
    ids[chosen] = MASK
    ids.setflags(write=False)
    targets = [(int(i), int(seq.ids[i])) for i in chosen]
    return TokenSequence(ids, seq.attention_len, seq.segment_boundaries), targets


def stack(seqs) -> tuple[np.ndarray, np.ndarray]:
    """Batch sequences as (ids trimmed to the longest attention span, lengths)."""
    lengths = np.array([s.attention_len for s in seqs], dtype=np.int64)
    width = max(1, int(lengths.max())) if len(seqs) else 1
    ids = np.zeros((len(seqs), width), dtype=np.int64)
    for r, s in enumerate(seqs):
        ids[r] = s.ids[:width]
    return ids, lengths
