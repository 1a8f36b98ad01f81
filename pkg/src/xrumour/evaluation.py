"""Metrics and experiment harnesses: variant matrices, the freeze/pretrain
ablation grid, and the gold-fraction sweep.

Every harness expands into independent runs keyed by (direction, variant,
seed, cell). Runs can be fanned out over worker processes; results are
always reported in key order, so output files do not depend on scheduling.
"""
from __future__ import annotations

import csv
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from .corpus import DatasetSplit, SynthConfig, split_dataset, synth_bilingual
from .model import (
    FreezePolicy,
    Prediction,
    adaptive_pretrain,
    hash_seed,
    init_params,
    predict,
    train_supervised,
)
from .selftrain import TransferConfig, TransferData, fit_teacher, prepare_transfer_data, run_transfer
from .tokenizer import SepStyle, Vocabulary, train_subwords

CLASS_NAMES = ("non-rumour", "rumour")


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class Metrics:
    accuracy: float
    per_class: dict
    n: int
    seed: int = 0

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "per_class": self.per_class, "n": self.n, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(d["accuracy"], d["per_class"], d["n"], d.get("seed", 0))


def _as_label(x) -> int:
    if isinstance(x, Prediction):
        return int(x.label)
    return int(x)


def compute_metrics(preds, gold, seed: int = 0) -> Metrics:
    """Accuracy plus per-class precision, recall and F1.

    ``preds`` may hold :class:`Prediction` objects or plain labels. A ratio
    with an empty denominator is reported as 0.
    """
    pred = np.array([_as_label(p) for p in preds], dtype=np.int64)
    true = np.array([int(g) for g in gold], dtype=np.int64)
    if len(pred) != len(true):
        raise ValueError(f"got {len(pred)} predictions for {len(true)} gold labels")
    if len(true) == 0:
        raise ValueError("compute_metrics needs at least one example")
    per_class = {}
    for c, name in enumerate(CLASS_NAMES):
        tp = int(np.sum((pred == c) & (true == c)))
        n_pred = int(np.sum(pred == c))
        n_true = int(np.sum(true == c))
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_true if n_true else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[name] = {"precision": precision, "recall": recall, "f1": f1}
    correct = int(np.sum(pred == true))
    return Metrics(correct / len(true), per_class, len(true), seed)


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation (divide by n).

    ``statistics`` works in exact arithmetic, so identical values give a
    spread of exactly zero.
    """
    values = [float(v) for v in values]
    if not values:
        return float("nan"), float("nan")
    return statistics.fmean(values), statistics.pstdev(values)


# ---------------------------------------------------------------- experiment setup

class Variant(str, Enum):
    ZERO_SHOT = "ZeroShot"
    ST = "ST"
    ST_GL = "ST_GL"
    SUPERVISED_SOURCE = "SupervisedSource"
    SUPERVISED_TARGET = "SupervisedTarget"
    SUPERVISED_BOTH = "SupervisedBoth"


@dataclass(frozen=True)
class ModelSpec:
    d: int = 64
    n_layers: int = 2
    vocab_size: int = 3000
    max_seq_len: int = 384
    sep_style: str = "single"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Direction:
    """A labelled source split and a target split for one transfer direction.

    Target training labels are only read by the supervised baselines and by
    the gold-fraction sweep.
    """

    source_name: str
    target_name: str
    source: DatasetSplit
    target: DatasetSplit
    vocab: Vocabulary | None = None

    @property
    def name(self) -> str:
        return f"{self.source_name}->{self.target_name}"

    def for_seed(self, seed: int) -> "Direction":
        return self

    def ensure_vocab(self, spec: ModelSpec) -> Vocabulary:
        if self.vocab is None:
            unlabeled_target = [t.unlabeled() for t in self.target.train]
            self.vocab = train_subwords([self.source.train, unlabeled_target], spec.vocab_size)
        return self.vocab


def synthetic_direction(cfg: SynthConfig | None = None) -> Direction:
    """Generate a bilingual corpus and split each side (seeded by ``cfg.seed``)."""
    cfg = cfg or SynthConfig()
    corpus = synth_bilingual(cfg)
    src_name, tgt_name = cfg.languages
    return Direction(src_name, tgt_name, split_dataset(corpus.source, cfg.seed),
                     split_dataset(corpus.target, cfg.seed + 1))


@dataclass
class SyntheticDirection:
    """A synthetic direction whose data is regenerated for every run seed.

    Seed ``s`` drives the corpus, the splits and the vocabulary as well as
    model initialisation, so the spread across seeds covers data variation.
    All replicates share one name and therefore aggregate into one row.
    """

    cfg: SynthConfig = field(default_factory=SynthConfig)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def name(self) -> str:
        return "{}->{}".format(*self.cfg.languages)

    def for_seed(self, seed: int) -> Direction:
        if seed not in self._cache:
            self._cache[seed] = synthetic_direction(replace(self.cfg, seed=seed))
        return self._cache[seed]


@dataclass
class RunRecord:
    direction: str
    variant: str
    seed: int
    cell: dict = field(default_factory=dict)
    target_metrics: Metrics | None = None
    source_metrics: Metrics | None = None
    best_iteration: int | None = None
    trajectory: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "variant": self.variant,
            "seed": self.seed,
            "cell": self.cell,
            "target_metrics": None if self.target_metrics is None else self.target_metrics.to_dict(),
            "source_metrics": None if self.source_metrics is None else self.source_metrics.to_dict(),
            "best_iteration": self.best_iteration,
            "trajectory": self.trajectory,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        tm, sm = d.get("target_metrics"), d.get("source_metrics")
        return cls(
            d["direction"], d["variant"], d["seed"], d.get("cell", {}),
            None if tm is None else Metrics.from_dict(tm),
            None if sm is None else Metrics.from_dict(sm),
            d.get("best_iteration"), d.get("trajectory", []), d.get("error"),
        )


@dataclass
class ExperimentResult:
    """All seeds of one (direction, variant, cell) combination."""

    direction: str
    variant: str
    runs: list[RunRecord]
    cell: dict = field(default_factory=dict)

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.runs]

    @property
    def failed(self) -> int:
        return sum(not r.ok for r in self.runs)

    def _acc(self, which: str) -> tuple[float, float]:
        # a failed seed poisons the mean instead of silently shrinking n
        if self.failed:
            return float("nan"), float("nan")
        vals = [getattr(r, which).accuracy for r in self.runs if getattr(r, which) is not None]
        if len(vals) != len(self.runs):
            return float("nan"), float("nan")
        return mean_std(vals)

    @property
    def target_accuracy(self) -> tuple[float, float]:
        return self._acc("target_metrics")

    @property
    def source_accuracy(self) -> tuple[float, float]:
        return self._acc("source_metrics")

    def to_row(self) -> dict:
        tm, ts = self.target_accuracy
        sm, ss = self.source_accuracy
        return {
            "direction": self.direction,
            "variant": self.variant,
            "cell": self.cell,
            "seeds": self.seeds,
            "target_accuracy_mean": tm,
            "target_accuracy_std": ts,
            "source_accuracy_mean": sm,
            "source_accuracy_std": ss,
            "failed": self.failed,
        }


def aggregate(records) -> list[ExperimentResult]:
    """Group run records by (direction, variant, cell), keeping first-seen order."""
    groups: dict = {}
    for r in records:
        key = (r.direction, r.variant, json.dumps(r.cell, sort_keys=True))
        groups.setdefault(key, []).append(r)
    return [ExperimentResult(d, v, sorted(runs, key=lambda r: r.seed), json.loads(c))
            for (d, v, c), runs in groups.items()]


# ---------------------------------------------------------------- single runs

@dataclass(frozen=True)
class RunSpec:
    """Everything one worker needs to execute a run."""

    direction: Direction
    variant: Variant
    seed: int
    model: ModelSpec
    transfer: TransferConfig
    gold_fraction: float = 0.0
    cell: tuple = ()


def _evaluate(params, examples, seed) -> Metrics | None:
    if not examples:
        return None
    preds = predict(params, [e.seq for e in examples])
    return compute_metrics(preds, [e.label for e in examples], seed)


def _pretrained(init, data: TransferData, cfg: TransferConfig):
    # same seed derivation as fit_teacher, so supervised baselines and the
    # transfer teacher share one pretrained starting point
    if not cfg.adaptive_pretrain:
        return init
    return adaptive_pretrain(init, data.pretrain_corpus(), replace(cfg.pretrain, seed=hash_seed(cfg.seed, 1)))


def _supervised(init, examples, data, cfg: TransferConfig):
    params = _pretrained(init, data, cfg)
    tcfg = replace(cfg.train, freeze=FreezePolicy.none(), seed=hash_seed(cfg.seed, 2))
    return train_supervised(params, [(e.seq, e.label) for e in examples], tcfg)


def execute_run(spec: RunSpec) -> RunRecord:
    """Run one (direction, variant, seed) job. Failures come back as records."""
    rec = RunRecord(spec.direction.name, spec.variant.value, spec.seed, dict(spec.cell))
    try:
        _execute(spec, rec)
    except Exception as exc:  # recorded, not dropped
        rec.error = f"{type(exc).__name__}: {exc}"
        rec.target_metrics = rec.source_metrics = None
    return rec


def _execute(spec: RunSpec, rec: RunRecord) -> None:
    m = spec.model
    direction = spec.direction.for_seed(spec.seed)
    vocab = direction.ensure_vocab(m)
    cfg = replace(spec.transfer, seed=spec.seed)
    variant = spec.variant
    fraction = spec.gold_fraction
    if variant is Variant.SUPERVISED_TARGET:
        fraction = 1.0
    data = prepare_transfer_data(direction.source, direction.target, vocab, m.max_seq_len,
                                 SepStyle(m.sep_style), fraction, spec.seed)
    init = init_params(len(vocab), m.d, m.n_layers, seed=hash_seed(spec.seed, 11),
                       dropout_rate=cfg.train.dropout)

    if variant is Variant.ZERO_SHOT:
        final = fit_teacher(init, data.source_train, cfg, data.pretrain_corpus())
    elif variant in (Variant.ST, Variant.ST_GL):
        cfg = replace(cfg, use_gold_labels=variant is Variant.ST_GL)
        result = run_transfer(init, data, cfg)
        final = result.final
        rec.best_iteration = result.best_iteration
        rec.trajectory = [asdict(r) for r in result.trajectory]
    elif variant is Variant.SUPERVISED_SOURCE:
        final = _supervised(init, data.source_train, data, cfg)
    elif variant is Variant.SUPERVISED_TARGET:
        final = _supervised(init, data.target_gold, data, cfg)
    elif variant is Variant.SUPERVISED_BOTH:
        final = _supervised(init, data.source_train + data.target_gold, data, cfg)
    else:
        raise ValueError(f"unknown variant {variant}")
    rec.target_metrics = _evaluate(final, data.target_test, spec.seed)
    rec.source_metrics = _evaluate(final, data.source_test, spec.seed)


def _run_all(specs, workers: int = 1) -> list[RunRecord]:
    specs = list(specs)
    for s in specs:
        # train shared vocabularies before forking so workers agree on them
        s.direction.for_seed(s.seed).ensure_vocab(s.model)
    if workers <= 1 or len(specs) <= 1:
        return [execute_run(s) for s in specs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(execute_run, specs))


def _check_seeds(seeds) -> list[int]:
    seeds = [int(s) for s in seeds]
    if len(seeds) < 3:
        raise ValueError(f"need at least 3 seeds for mean/stddev reporting, got {len(seeds)}")
    return seeds


# ---------------------------------------------------------------- harnesses

def run_matrix(directions, variants, seeds, model: ModelSpec | None = None,
               transfer: TransferConfig | None = None, workers: int = 1) -> list[ExperimentResult]:
    """Every (direction, variant, seed) combination, aggregated per row."""
    directions = list(directions)
    if not directions:
        raise ValueError("run_matrix needs at least one direction")
    seeds = _check_seeds(seeds)
    model = model or ModelSpec()
    transfer = transfer or TransferConfig()
    specs = [RunSpec(d, Variant(v), s, model, transfer)
             for d in directions for v in variants for s in seeds]
    return aggregate(_run_all(specs, workers))


ABLATION_FREEZES = (FreezePolicy.none(), FreezePolicy.embeddings_only(), FreezePolicy.first_k_layers(3))


def _ablation_run(args) -> list[RunRecord]:
    shared, seed, model, transfer, freezes = args
    m = model
    direction = shared.for_seed(seed)
    vocab = direction.ensure_vocab(m)
    data = prepare_transfer_data(direction.source, direction.target, vocab, m.max_seq_len,
                                 SepStyle(m.sep_style), 0.0, seed)
    init = init_params(len(vocab), m.d, m.n_layers, seed=hash_seed(seed, 11), dropout_rate=transfer.train.dropout)
    base = replace(transfer, seed=seed, freeze_initial_teacher=False)
    out = []
    for pretrain in (False, True):
        cfg = replace(base, adaptive_pretrain=pretrain)
        start = _pretrained(init, data, cfg)
        for fr in freezes:
            rec = RunRecord(direction.name, Variant.ZERO_SHOT.value, seed,
                            {"pretrain": pretrain, "freeze": fr.label()})
            try:
                tcfg = replace(cfg, adaptive_pretrain=False, train=replace(cfg.train, freeze=fr))
                teacher = fit_teacher(start, data.source_train, tcfg)
                rec.target_metrics = _evaluate(teacher, data.target_test, seed)
                rec.source_metrics = _evaluate(teacher, data.source_test, seed)
            except Exception as exc:
                rec.error = f"{type(exc).__name__}: {exc}"
            out.append(rec)
    return out


def run_ablation(directions, seeds, model: ModelSpec | None = None, transfer: TransferConfig | None = None,
                 freezes=ABLATION_FREEZES, workers: int = 1) -> list[ExperimentResult]:
    """Zero-shot teacher accuracy over freeze policy x adaptive pretraining.

    One pretraining pass per (direction, seed) is shared by the three freeze
    cells that use it.
    """
    directions = list(directions)
    if not directions:
        raise ValueError("run_ablation needs at least one direction")
    seeds = _check_seeds(seeds)
    model = model or ModelSpec()
    transfer = transfer or TransferConfig()
    jobs = []
    for d in directions:
        for s in seeds:
            d.for_seed(s).ensure_vocab(model)
        jobs += [(d, s, model, transfer, tuple(freezes)) for s in seeds]
    if workers <= 1:
        nested = [_ablation_run(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = list(pool.map(_ablation_run, jobs))
    records = [r for group in nested for r in group]
    # order cells as pretrain-off block then pretrain-on block, seeds inside
    records.sort(key=lambda r: (r.direction, r.cell["pretrain"],
                                [f.label() for f in freezes].index(r.cell["freeze"]), r.seed))
    return aggregate(records)


@dataclass
class SweepRow:
    fraction: float
    supervised: ExperimentResult | None
    zero_shot: ExperimentResult | None

    def to_row(self) -> dict:
        def cols(res):
            if res is None:
                return None, None
            return res.target_accuracy
        sm, ss = cols(self.supervised)
        zm, zs = cols(self.zero_shot)
        return {"fraction": self.fraction, "supervised_mean": sm, "supervised_std": ss,
                "zero_shot_mean": zm, "zero_shot_std": zs}


def run_semi_supervised_sweep(fractions, direction: Direction, seeds, model: ModelSpec | None = None,
                              transfer: TransferConfig | None = None, workers: int = 1):
    """Gold-fraction sweep: self-training with gold injection against a
    supervised model trained on the source plus the same target fraction.

    The supervised column is empty at fraction 0 and the self-training
    column at fraction 1 (no unlabeled target data is left).
    Returns ``(rows, records)``.
    """
    fractions = [float(f) for f in fractions]
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValueError("fractions must lie in [0, 1]")
    if fractions != sorted(fractions):
        raise ValueError("fractions must be sorted ascending")
    seeds = _check_seeds(seeds)
    model = model or ModelSpec()
    transfer = transfer or TransferConfig()
    specs = []
    for f in fractions:
        cell = (("fraction", f),)
        if f < 1.0:
            specs += [RunSpec(direction, Variant.ST_GL, s, model, transfer, f, cell) for s in seeds]
        if f > 0.0:
            specs += [RunSpec(direction, Variant.SUPERVISED_BOTH, s, model, transfer, f, cell) for s in seeds]
    records = _run_all(specs, workers)
    by_key = {(r.variant, r.cell["fraction"]): r for r in aggregate(records)}
    rows = [SweepRow(f, by_key.get((Variant.SUPERVISED_BOTH.value, f)), by_key.get((Variant.ST_GL.value, f)))
            for f in fractions]
    return rows, records


# ---------------------------------------------------------------- outputs

def write_records_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_records_jsonl(path) -> list[RunRecord]:
    with open(path, encoding="utf-8") as fh:
        return [RunRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def _pct(mean, std) -> str:
    if mean is None:
        return "---"
    if math.isnan(mean):
        return "ERR"
    return f"{100 * mean:.1f}±{100 * std:.1f}"


def render_table(results) -> str:
    """Plain-text table: one row per (direction, variant, cell)."""
    header = ["direction", "variant", "cell", "target acc", "source acc", "seeds"]
    rows = []
    for res in results:
        cell = ",".join(f"{k}={v}" for k, v in res.cell.items()) or "-"
        status = "" if not res.failed else f" [{res.failed} failed]"
        rows.append([res.direction, res.variant, cell, _pct(*res.target_accuracy) + status,
                     _pct(*res.source_accuracy), ",".join(map(str, res.seeds))])
    return _format(header, rows)


def render_ablation(results) -> str:
    """Freeze policy rows against pretraining columns, per direction."""
    out = []
    for direction in dict.fromkeys(r.direction for r in results):
        cells = {(r.cell["freeze"], r.cell["pretrain"]): r for r in results if r.direction == direction}
        freezes = list(dict.fromkeys(f for f, _ in cells))
        rows = [[f, _pct(*cells[(f, False)].target_accuracy), _pct(*cells[(f, True)].target_accuracy)]
                for f in freezes]
        out.append(f"{direction}\n" + _format(["freeze", "pretrain=off", "pretrain=on"], rows))
    return "\n".join(out)


def render_sweep(rows) -> str:
    body = []
    for row in rows:
        d = row.to_row()
        body.append([f"{100 * row.fraction:g}%", _pct(d["supervised_mean"], d["supervised_std"]),
                     _pct(d["zero_shot_mean"], d["zero_shot_std"])])
    return _format(["gold target", "supervised", "zero-shot"], body)


def _format(header, rows) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


TRAJECTORY_FIELDS = (
    "direction", "variant", "seed", "iteration", "silver_count_before_filter", "silver_count_after_filter",
    "silver_count_after_balance", "p", "degenerate", "gold_count", "target_val_accuracy",
    "target_test_accuracy", "source_val_accuracy", "source_test_accuracy",
)


def write_trajectory_csv(records, path) -> None:
    """Per-iteration rows for every run that has a self-training trajectory."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRAJECTORY_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in records:
            for it in r.trajectory:
                row = {k: it.get(k) for k in TRAJECTORY_FIELDS[3:]}
                row.update(direction=r.direction, variant=r.variant, seed=r.seed)
                w.writerow(row)


def mean_trajectory(records, key: str = "target_val_accuracy") -> list[float]:
    """Iteration-wise mean of ``key`` across runs (all must share a length)."""
    curves = [[it[key] for it in r.trajectory] for r in records if r.ok]
    if not curves:
        return []
    if len({len(c) for c in curves}) != 1:
        raise ValueError("trajectories have different lengths")
    return np.mean(np.asarray(curves, dtype=np.float64), axis=0).tolist()


def moving_average(values, window: int = 3) -> list[float]:
    """Trailing moving average; the first entries average what is available."""
    values = list(values)
    return [float(np.mean(values[max(0, i - window + 1) : i + 1])) for i in range(len(values))]


__all__ = [
    "ABLATION_FREEZES", "Direction", "ExperimentResult", "Metrics", "ModelSpec", "RunRecord", "RunSpec",
    "SweepRow", "SyntheticDirection", "Variant", "aggregate", "compute_metrics", "execute_run", "mean_std", "mean_trajectory",
    "moving_average", "read_records_jsonl", "render_ablation", "render_sweep", "render_table",
    "run_ablation", "run_matrix", "run_semi_supervised_sweep", "synthetic_direction", "write_records_jsonl",
    "write_trajectory_csv",
]
