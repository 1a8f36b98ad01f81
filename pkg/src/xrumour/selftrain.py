"""Teacher/student cross-lingual transfer with silver labels.

A teacher is fine-tuned on gold source-language threads, optionally after
masked-token adaptive pretraining. Each self-training iteration then

1. predicts every unlabeled target thread with the current teacher,
2. keeps predictions whose confidence reaches ``p``,
3. balances the survivors to equal rumour / non-rumour counts,
4. trains a student initialised from the teacher on the silver set (plus the
   source gold set when ``use_gold_labels``),

and the student becomes the next teacher.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .corpus import DataError, DatasetSplit, Label, Thread
from .model import (
    ClassifierParams,
    FreezePolicy,
    TrainConfig,
    adaptive_pretrain,
    hash_seed,
    predict,
    train_supervised,
)
from .tokenizer import SepStyle, TokenSequence, Vocabulary, encode_thread

DEFAULT_P = 0.95
P_SEARCH_RANGE = (0.94, 0.96)


@dataclass(frozen=True)
class Example:
    thread_id: str
    seq: TokenSequence
    label: Label


@dataclass(frozen=True)
class UnlabeledExample:
    """A target thread as seen by training code: no label field at all."""

    thread_id: str
    seq: TokenSequence


@dataclass(frozen=True)
class SilverExample:
    thread_id: str
    seq: TokenSequence
    label: Label
    confidence: float
    iteration: int


@dataclass(frozen=True)
class TransferConfig:
    p: float = DEFAULT_P
    max_iterations: int = 7
    use_gold_labels: bool = False
    freeze_initial_teacher: bool = True
    adaptive_pretrain: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=8, epochs=3))
    seed: int = 0
    gold_weight: float = 1.0
    p_decay: bool = False

    def __post_init__(self):
        if not 0.5 < self.p < 1.0:
            raise ValueError(f"threshold p must be in (0.5, 1), got {self.p}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("train", "pretrain")}
        d["train"] = self.train.to_dict()
        d["pretrain"] = self.pretrain.to_dict()
        return d


@dataclass
class IterationRecord:
    iteration: int
    silver_count_before_filter: int = 0
    silver_count_after_filter: int = 0
    silver_count_after_balance: int = 0
    target_val_accuracy: float = float("nan")
    source_val_accuracy: float | None = None
    target_test_accuracy: float | None = None
    source_test_accuracy: float | None = None
    p: float | None = None
    degenerate: bool = False
    gold_count: int = 0
    teacher_digest: str = ""
    student_digest: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TransferData:
    """Encoded inputs for one transfer direction.

    Target training threads are held as :class:`UnlabeledExample`; gold
    target labels only reach training through ``target_gold`` (the
    semi-supervised setting).
    """

    source_train: list[Example]
    source_val: list[Example]
    source_test: list[Example]
    target_train: list[UnlabeledExample]
    target_val: list[Example]
    target_test: list[Example]
    target_gold: list[Example] = field(default_factory=list)

    def pretrain_corpus(self) -> list[TokenSequence]:
        return [e.seq for e in self.source_train] + [e.seq for e in self.target_gold] + [
            e.seq for e in self.target_train
        ]


def _labeled(threads, vocab, max_seq_len, sep_style) -> list[Example]:
    out = []
    for t in threads:
        if t.label is None:
            raise DataError(f"thread {t.id} needs a gold label here")
        out.append(Example(t.id, encode_thread(t, vocab, max_seq_len, sep_style), t.label))
    return out


def _unlabeled(threads, vocab, max_seq_len, sep_style) -> list[UnlabeledExample]:
    return [UnlabeledExample(t.id, encode_thread(t.unlabeled(), vocab, max_seq_len, sep_style)) for t in threads]


def prepare_transfer_data(source: DatasetSplit, target: DatasetSplit, vocab: Vocabulary,
                          max_seq_len: int = 384, sep_style=SepStyle.SINGLE,
                          target_gold_fraction: float = 0.0, seed: int = 0) -> TransferData:
    gold, unlabeled = semi_supervised_mix(target_gold_fraction, target, seed)
    return TransferData(
        source_train=_labeled(source.train, vocab, max_seq_len, sep_style),
        source_val=_labeled(source.validation, vocab, max_seq_len, sep_style),
        source_test=_labeled(source.test, vocab, max_seq_len, sep_style),
        target_train=_unlabeled(unlabeled, vocab, max_seq_len, sep_style),
        target_val=_labeled(target.validation, vocab, max_seq_len, sep_style),
        target_test=_labeled(target.test, vocab, max_seq_len, sep_style),
        target_gold=_labeled(gold, vocab, max_seq_len, sep_style),
    )


def semi_supervised_mix(fraction: float, target: DatasetSplit, seed: int = 0) -> tuple[list[Thread], list[Thread]]:
    """Reveal a seeded subset of target training labels.

    Returns ``(gold, unlabeled)`` partitioning ``target.train``; the unlabeled
    part has its labels stripped. Subsets are nested across fractions for a
    fixed seed.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"gold fraction must be in [0, 1], got {fraction}")
    n = len(target.train)
    n_gold = int(np.floor(fraction * n + 0.5))
    order = np.random.default_rng(hash_seed(seed, 6151)).permutation(n)
    revealed = set(order[:n_gold].tolist())
    gold = [t for i, t in enumerate(target.train) if i in revealed]
    rest = [t.unlabeled() for i, t in enumerate(target.train) if i not in revealed]
    return gold, rest


# ---------------------------------------------------------------- loop pieces

def filter_by_confidence(preds, p: float):
    """Keep ``(thread_id, Prediction)`` pairs with confidence >= p, in order."""
    if not 0.5 < p < 1.0:
        raise ValueError(f"threshold p must be in (0.5, 1), got {p}")
    return [(tid, pr) for tid, pr in preds if pr.confidence >= p]


def balance_classes(filtered, iteration: int = 0, seqs: dict | None = None) -> list[SilverExample]:
    """Equalise classes by keeping the m most confident of each.

    m is the size of the smaller class; confidence ties go to the
    lexicographically smaller thread id. ``seqs`` maps thread id to its
    encoded sequence when the caller wants it attached.
    """
    by_class = {Label.RUMOUR: [], Label.NON_RUMOUR: []}
    for tid, pr in filtered:
        by_class[pr.label].append((tid, pr))
    m = min(len(v) for v in by_class.values())
    out = []
    for label in (Label.NON_RUMOUR, Label.RUMOUR):
        ranked = sorted(by_class[label], key=lambda x: (-x[1].confidence, x[0]))[:m]
        for tid, pr in ranked:
            seq = seqs[tid] if seqs is not None else None
            out.append(SilverExample(tid, seq, pr.label, pr.confidence, iteration))
    return out


def fit_teacher(init: ClassifierParams, source_train, cfg: TransferConfig,
                pretrain_corpus=None) -> ClassifierParams:
    """Adaptive pretraining (if enabled) then gold fine-tuning on the source."""
    source_train = list(source_train)
    if not source_train:
        raise ValueError("fit_teacher needs gold source examples")
    params = init
    if cfg.adaptive_pretrain:
        if not pretrain_corpus:
            raise ValueError("adaptive pretraining is enabled but no unlabeled corpus was given")
        params = adaptive_pretrain(params, pretrain_corpus, replace(cfg.pretrain, seed=hash_seed(cfg.seed, 1)))
    freeze = FreezePolicy.embeddings_only() if cfg.freeze_initial_teacher else cfg.train.freeze
    tcfg = replace(cfg.train, freeze=freeze, seed=hash_seed(cfg.seed, 2))
    return train_supervised(params, [(e.seq, e.label) for e in source_train], tcfg)


def self_train_step(teacher: ClassifierParams, target_unlabeled, source_gold, cfg: TransferConfig,
                    iteration: int, target_gold=(), p: float | None = None):
    """One predict -> filter -> balance -> train round. Returns (student, record)."""
    target_unlabeled = list(target_unlabeled)
    target_gold = list(target_gold)
    p = cfg.p if p is None else p
    record = IterationRecord(iteration=iteration, p=p, teacher_digest=teacher.digest())
    seqs = {u.thread_id: u.seq for u in target_unlabeled}
    preds = predict(teacher, [u.seq for u in target_unlabeled]) if target_unlabeled else []
    pairs = [(u.thread_id, pr) for u, pr in zip(target_unlabeled, preds)]
    filtered = filter_by_confidence(pairs, p)
    silver = balance_classes(filtered, iteration, seqs)
    record.silver_count_before_filter = len(pairs)
    record.silver_count_after_filter = len(filtered)
    record.silver_count_after_balance = len(silver)

    if not silver and not target_gold:
        record.degenerate = True
        student = teacher.copy()
        record.student_digest = student.digest()
        return student, record

    data = [(s.seq, s.label) for s in silver] + [(e.seq, e.label) for e in target_gold]
    weights = [1.0] * len(data)
    if cfg.use_gold_labels and source_gold:
        gold = [(e.seq, e.label) for e in source_gold]
        data += gold
        weights += [cfg.gold_weight] * len(gold)
        record.gold_count = len(gold)
    scfg = replace(cfg.train, freeze=FreezePolicy.none(), seed=hash_seed(cfg.seed, 100 + iteration))
    # one shuffled stream: train_supervised permutes the concatenation each epoch
    student = train_supervised(teacher.copy(), data, scfg, weights=weights)
    record.student_digest = student.digest()
    return student, record


def _acc(params, examples) -> float | None:
    if not examples:
        return None
    preds = predict(params, [e.seq for e in examples])
    return float(np.mean([pr.label == e.label for pr, e in zip(preds, examples)]))


@dataclass
class TransferResult:
    final: ClassifierParams
    trajectory: list[IterationRecord]
    best_iteration: int
    teacher: ClassifierParams


def run_transfer(init: ClassifierParams, data: TransferData, cfg: TransferConfig, on_record=None) -> TransferResult:
    """Fit the teacher, run ``max_iterations`` self-training rounds, and keep
    the iterate with the best target validation accuracy (earliest on ties).

    ``on_record`` receives each :class:`IterationRecord` as it is produced.
    """
    teacher = fit_teacher(init, data.source_train, cfg, data.pretrain_corpus())

    def score(params, rec):
        rec.target_val_accuracy = _acc(params, data.target_val)
        rec.target_test_accuracy = _acc(params, data.target_test)
        rec.source_val_accuracy = _acc(params, data.source_val)
        rec.source_test_accuracy = _acc(params, data.source_test)
        if on_record is not None:
            on_record(rec)

    rec0 = IterationRecord(iteration=0, p=cfg.p, teacher_digest=teacher.digest(), student_digest=teacher.digest())
    score(teacher, rec0)
    trajectory = [rec0]
    best, best_params = 0, teacher
    current = teacher
    p = cfg.p
    for it in range(1, cfg.max_iterations + 1):
        student, rec = self_train_step(current, data.target_train, data.source_train, cfg, it, data.target_gold, p)
        score(student, rec)
        trajectory.append(rec)
        if rec.target_val_accuracy > trajectory[best].target_val_accuracy:
            best, best_params = it, student
        if rec.degenerate and cfg.p_decay:
            p = max(0.5 + 1e-9, p - 0.01)
        current = student
    return TransferResult(best_params, trajectory, best, teacher)
