"""Thread datasets: JSON Lines I/O, splitting, summary statistics and a
synthetic bilingual generator for desk-scale experiments."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


class Label(IntEnum):
    NON_RUMOUR = 0
    RUMOUR = 1

    @classmethod
    def parse(cls, text: str) -> "Label":
        key = text.strip().lower().replace("_", "-")
        if key == "rumour":
            return cls.RUMOUR
        if key in ("non-rumour", "nonrumour"):
            return cls.NON_RUMOUR
        raise ValueError(f"unknown label {text!r}")

    def to_str(self) -> str:
        return "rumour" if self is Label.RUMOUR else "non-rumour"


@dataclass(frozen=True)
class Reaction:
    text: str
    timestamp: int


@dataclass(frozen=True)
class Thread:
    id: str
    source_text: str
    reactions: tuple[Reaction, ...]
    label: Label | None
    language: str
    group: str | None = None

    def __post_init__(self):
        if not self.id:
            raise DataError("thread id must be nonempty")
        if not self.source_text.strip():
            raise DataError(f"thread {self.id}: source_text must be nonempty")
        ordered = tuple(sorted(self.reactions, key=lambda r: (r.timestamp, r.text)))
        if ordered != tuple(self.reactions):
            object.__setattr__(self, "reactions", ordered)

    def unlabeled(self) -> "Thread":
        return Thread(self.id, self.source_text, self.reactions, None, self.language, self.group)

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "source_text": self.source_text,
            "reactions": [{"text": r.text, "timestamp": r.timestamp} for r in self.reactions],
        }
        if self.label is not None:
            rec["label"] = self.label.to_str()
        rec["language"] = self.language
        if self.group is not None:
            rec["group"] = self.group
        return rec


@dataclass(frozen=True)
class DatasetSplit:
    train: list[Thread]
    validation: list[Thread]
    test: list[Thread]
    seed: int


@dataclass(frozen=True)
class StatsTable:
    n_threads: int
    n_rumours: int
    n_non_rumours: int
    n_unlabeled: int
    n_posts: int
    total_reactions: int
    avg_reactions: float
    max_reactions: int
    min_reactions: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# ---------------------------------------------------------------- I/O

def _record_to_thread(rec, lineno: int) -> Thread:
    if not isinstance(rec, dict):
        raise DataError(f"line {lineno}: record must be a JSON object")

    def need(name, kind):
        if name not in rec:
            raise DataError(f"line {lineno}: missing field '{name}'")
        if not isinstance(rec[name], kind):
            raise DataError(f"line {lineno}: field '{name}' has wrong type")
        return rec[name]

    tid = need("id", str)
    if not tid:
        raise DataError(f"line {lineno}: field 'id' is empty")
    source_text = need("source_text", str)
    if not source_text.strip():
        raise DataError(f"line {lineno}: field 'source_text' is empty")
    language = need("language", str)
    raw_reactions = need("reactions", list)
    reactions = []
    for k, r in enumerate(raw_reactions):
        if (
            not isinstance(r, dict)
            or not isinstance(r.get("text"), str)
            or not isinstance(r.get("timestamp"), int)
            or isinstance(r.get("timestamp"), bool)
        ):
            raise DataError(f"line {lineno}: field 'reactions[{k}]' needs text (string) and timestamp (integer)")
        reactions.append(Reaction(r["text"], r["timestamp"]))
    label = None
    if rec.get("label") is not None:
        if not isinstance(rec["label"], str):
            raise DataError(f"line {lineno}: field 'label' has wrong type")
        try:
            label = Label.parse(rec["label"])
        except ValueError:
            raise DataError(f"line {lineno}: field 'label' has unknown value {rec['label']!r}") from None
    group = rec.get("group")
    if group is not None and not isinstance(group, str):
        raise DataError(f"line {lineno}: field 'group' has wrong type")
    return Thread(tid, source_text, tuple(reactions), label, language, group)


def load_jsonl(path) -> list[Thread]:
    """Read and validate a thread dataset, one JSON object per line."""
    threads = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            t = _record_to_thread(rec, lineno)
            if t.id in seen:
                raise DataError(f"duplicate id {t.id!r} (lines {seen[t.id]} and {lineno})")
            seen[t.id] = lineno
            threads.append(t)
    return threads


def save_jsonl(threads, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in threads:
            fh.write(json.dumps(t.to_record(), ensure_ascii=False, sort_keys=False) + "\n")


# ---------------------------------------------------------------- splitting

def split_sizes(n: int) -> tuple[int, int, int]:
    """Return (train, validation, test) sizes for n threads."""
    n_test = round_half_up(0.2 * n)
    rest = n - n_test
    n_val = round_half_up(rest / 5)
    return rest - n_val, n_val, n_test


def split_dataset(threads, seed: int) -> DatasetSplit:
    threads = list(threads)
    if len(threads) < 10:
        raise DataError(f"need at least 10 threads to split, got {len(threads)}")
    n_train, n_val, n_test = split_sizes(len(threads))
    perm = np.random.default_rng(seed).permutation(len(threads))
    test = [threads[i] for i in perm[:n_test]]
    val = [threads[i] for i in perm[n_test : n_test + n_val]]
    train = [threads[i] for i in perm[n_test + n_val :]]
    return DatasetSplit(train, val, test, seed)


def kfold_splits(threads, k: int = 5, seed: int = 0) -> list[DatasetSplit]:
    """k folds used in turn as test; the remainder is split 4:1 train/validation.

    Threads carrying a ``group`` (e.g. an event id) are folded group-disjointly;
    otherwise folds are stratified by label.
    """
    threads = list(threads)
    if len(threads) < k:
        raise DataError(f"need at least {k} threads for {k} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(threads), dtype=np.int64)
    if all(t.group is not None for t in threads):
        groups = sorted({t.group for t in threads})
        if len(groups) < k:
            raise DataError(f"need at least {k} groups for group-disjoint folds, got {len(groups)}")
        order = rng.permutation(len(groups))
        gfold = {groups[g]: i % k for i, g in enumerate(order)}
        for i, t in enumerate(threads):
            fold_of[i] = gfold[t.group]
    else:
        keys = sorted({-1 if t.label is None else int(t.label) for t in threads})
        offset = 0
        for key in keys:
            idx = [i for i, t in enumerate(threads) if (-1 if t.label is None else int(t.label)) == key]
            idx = [idx[j] for j in rng.permutation(len(idx))]
            for j, i in enumerate(idx):
                fold_of[i] = (j + offset) % k
            offset += len(idx)
    out = []
    for f in range(k):
        test = [t for i, t in enumerate(threads) if fold_of[i] == f]
        rest = [t for i, t in enumerate(threads) if fold_of[i] != f]
        n_val = round_half_up(len(rest) / 5)
        perm = rng.permutation(len(rest))
        val = [rest[i] for i in perm[:n_val]]
        train = [rest[i] for i in perm[n_val:]]
        out.append(DatasetSplit(train, val, test, seed))
    return out


# ---------------------------------------------------------------- stats

def dataset_stats(threads) -> StatsTable:
    threads = list(threads)
    if not threads:
        raise DataError("cannot summarise an empty dataset")
    counts = [len(t.reactions) for t in threads]
    total = sum(counts)
    return StatsTable(
        n_threads=len(threads),
        n_rumours=sum(t.label is Label.RUMOUR for t in threads),
        n_non_rumours=sum(t.label is Label.NON_RUMOUR for t in threads),
        n_unlabeled=sum(t.label is None for t in threads),
        n_posts=len(threads) + total,
        total_reactions=total,
        avg_reactions=total / len(threads),
        max_reactions=max(counts),
        min_reactions=min(counts),
    )


# ---------------------------------------------------------------- synthesis

SOURCE_ALPHABET = "abcdefghijklmnopqrstuvwxyz"
TARGET_ALPHABET = "абвгдежзиклмнопрстуфхцчшщэюя"


@dataclass(frozen=True)
class SynthConfig:
    n_per_language: int = 2000
    vocab_size_per_language: int = 240
    lexical_overlap: float = 0.3
    label_signal_strength: float = 0.85
    reaction_count_range: tuple[int, int] = (2, 6)
    seed: int = 0
    # generator shape; not part of the task definition proper
    post_length_range: tuple[int, int] = (6, 12)
    reaction_length_range: tuple[int, int] = (3, 8)
    cue_rate: float = 0.15
    cue_fraction: float = 0.3
    n_topics: int = 1
    zipf_exponent: float = 0.5
    languages: tuple[str, str] = ("synthA", "synthB")

    def validate(self) -> None:
        if not 0.0 <= self.lexical_overlap <= 1.0:
            raise ValueError(f"lexical_overlap must be in [0, 1], got {self.lexical_overlap}")
        if not 0.0 < self.label_signal_strength <= 1.0:
            raise ValueError(f"label_signal_strength must be in (0, 1], got {self.label_signal_strength}")
        if self.n_per_language < 2:
            raise ValueError("n_per_language must be at least 2")
        if self.vocab_size_per_language < 10:
            raise ValueError("vocab_size_per_language must be at least 10")
        lo, hi = self.reaction_count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad reaction_count_range {self.reaction_count_range}")
        if not 0.0 < self.cue_rate < 1.0 or not 0.0 < self.cue_fraction < 1.0:
            raise ValueError("cue_rate and cue_fraction must be in (0, 1)")
        if self.n_topics < 1:
            raise ValueError("n_topics must be at least 1")


@dataclass
class SynthCorpus:
    source: list[Thread]
    target: list[Thread]
    source_vocab: list[str]
    target_vocab: list[str]
    shared: list[str] = field(default_factory=list)


def _make_words(rng, alphabet: str, n: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < n:
        length = int(rng.integers(3, 7))
        w = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=length))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _zipf(n: int, a: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** a
    return w / w.sum()


class _LatentTask:
    """Concept-level generative process shared by both synthetic languages."""

    def __init__(self, cfg: SynthConfig, rng):
        k = cfg.vocab_size_per_language
        n_cue = max(2, int(round(cfg.cue_fraction * k)) // 2 * 2)
        perm = rng.permutation(k)
        self.cues = [perm[: n_cue // 2], perm[n_cue // 2 : n_cue]]
        neutral = perm[n_cue:]
        self.topics = [neutral[i :: cfg.n_topics] for i in range(cfg.n_topics)]
        self.cue_p = [_zipf(len(c), cfg.zipf_exponent) for c in self.cues]
        self.topic_p = [_zipf(len(t), cfg.zipf_exponent) for t in self.topics]
        self.cfg = cfg

    def sample_concepts(self, rng, n: int, label: int, topic: int, lead_cue: bool = False) -> np.ndarray:
        cfg = self.cfg
        own = (1.0 + cfg.label_signal_strength) / 2.0
        is_cue = rng.random(n) < cfg.cue_rate
        if lead_cue and n:
            # every source post carries at least one cue, so full signal strength
            # leaves no thread without label evidence
            is_cue[0] = True
        side = np.where(rng.random(n) < own, label, 1 - label)
        picks = [self.cues[s][rng.choice(len(self.cues[s]), size=n, p=self.cue_p[s])] for s in (0, 1)]
        cue = np.where(side == 0, picks[0], picks[1])
        bg = self.topics[topic][rng.choice(len(self.topics[topic]), size=n, p=self.topic_p[topic])]
        return np.where(is_cue, cue, bg)


def _synth_language(task: _LatentTask, words: list[str], lang: str, rng) -> list[Thread]:
    cfg = task.cfg
    n = cfg.n_per_language
    labels = np.array([i % 2 for i in range(n)])
    labels = labels[rng.permutation(n)]
    threads = []
    for i in range(n):
        y = int(labels[i])
        topic = int(rng.integers(0, cfg.n_topics))

        def text(lo_hi, lead_cue=False):
            m = int(rng.integers(lo_hi[0], lo_hi[1] + 1))
            return " ".join(words[c] for c in task.sample_concepts(rng, m, y, topic, lead_cue))

        src = text(cfg.post_length_range, lead_cue=True)
        n_react = int(rng.integers(cfg.reaction_count_range[0], cfg.reaction_count_range[1] + 1))
        ts = 1_600_000_000 + int(rng.integers(0, 10**6))
        reactions = []
        for _ in range(n_react):
            ts += int(rng.integers(0, 3600))
            reactions.append(Reaction(text(cfg.reaction_length_range), ts))
        threads.append(Thread(f"{lang}-{i:05d}", src, tuple(reactions), Label(y), lang))
    return threads


def synth_bilingual(cfg: SynthConfig) -> SynthCorpus:
    """Two synthetic languages expressing one latent rumour task.

    Concepts map to surface words through a fixed bijection per language;
    exactly round(lexical_overlap * vocab_size) concepts share their surface
    string across the two languages.
    """
    cfg.validate()
    k = cfg.vocab_size_per_language
    root = np.random.default_rng(cfg.seed)
    vocab_rng, task_rng, src_rng, tgt_rng = root.spawn(4)
    n_shared = round_half_up(cfg.lexical_overlap * k)
    taken: set[str] = set()
    source_words = _make_words(vocab_rng, SOURCE_ALPHABET, k, taken)
    target_words = _make_words(vocab_rng, TARGET_ALPHABET, k, taken)
    shared_idx = np.sort(vocab_rng.permutation(k)[:n_shared])
    for c in shared_idx:
        target_words[c] = source_words[c]
    task = _LatentTask(cfg, task_rng)
    src_lang, tgt_lang = cfg.languages
    return SynthCorpus(
        source=_synth_language(task, source_words, src_lang, src_rng),
        target=_synth_language(task, target_words, tgt_lang, tgt_rng),
        source_vocab=source_words,
        target_vocab=target_words,
        shared=[source_words[c] for c in shared_idx],
    )
