"""Command-line front end.

    xrumour synth    --out DIR [--overlap 0.3 --n 2000 --seed 0]
    xrumour transfer --source S.jsonl --target T.jsonl --out DIR [--gl --p 0.95 --iters 7]
    xrumour eval     --checkpoint C --vocab V --data D.jsonl [--split test]
    xrumour matrix   --source S.jsonl --target T.jsonl --out DIR [--variants ...]
    xrumour ablate   --source S.jsonl --target T.jsonl --out DIR
    xrumour sweep    --source S.jsonl --target T.jsonl --out DIR [--fractions 0,0.2,...]

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
Every command that writes a directory starts by writing ``config.json`` with
all resolved settings; the output directory itself is not recorded, so
re-running with the same inputs elsewhere gives byte-identical files.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

from . import __version__
from .corpus import DataError, SynthConfig, dataset_stats, load_jsonl, save_jsonl, split_dataset, synth_bilingual
from .evaluation import (
    Direction,
    ModelSpec,
    Variant,
    compute_metrics,
    render_ablation,
    render_sweep,
    render_table,
    run_ablation,
    run_matrix,
    run_semi_supervised_sweep,
    write_records_jsonl,
    write_trajectory_csv,
)
from .model import ClassifierParams, FreezePolicy, TrainConfig, TrainingError, init_params, hash_seed, predict
from .selftrain import DEFAULT_P, TransferConfig, prepare_transfer_data, run_transfer
from .tokenizer import SepStyle, Vocabulary, encode_thread, train_subwords

log = logging.getLogger("xrumour")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, code: int, message: str):
        super().__init__(message)
        self.stage, self.code = stage, code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- argument types

def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def _threshold(text: str) -> float:
    v = float(text)
    if not 0.5 < v < 1.0:
        raise argparse.ArgumentTypeError(f"p must be in (0.5, 1), got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _freeze(text: str) -> FreezePolicy:
    try:
        return FreezePolicy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# ---------------------------------------------------------------- shared option groups

def _add_data_args(p):
    p.add_argument("--source", required=True, help="labelled source-language threads (JSON Lines)")
    p.add_argument("--target", required=True, help="target-language threads (JSON Lines); labels used for evaluation only")
    p.add_argument("--split-seed", type=int, default=0, help="seed for the 64/16/20 train/val/test split")


def _add_model_args(p):
    d = ModelSpec()
    p.add_argument("--vocab-size", type=_positive, default=d.vocab_size)
    p.add_argument("--max-seq-len", type=_positive, default=d.max_seq_len)
    p.add_argument("--sep-style", choices=[s.value for s in SepStyle], default=d.sep_style)
    p.add_argument("--dim", type=_positive, default=d.d, help="embedding width")
    p.add_argument("--layers", type=_positive, default=d.n_layers, help="residual encoder layers")


def _add_train_args(p):
    t, pt, tc = TrainConfig(), TransferConfig().pretrain, TransferConfig()
    p.add_argument("--lr", type=float, default=t.learning_rate)
    p.add_argument("--epochs", type=_positive, default=t.epochs)
    p.add_argument("--batch-size", type=_positive, default=t.batch_size)
    p.add_argument("--dropout", type=float, default=t.dropout)
    p.add_argument("--pretrain-lr", type=float, default=pt.learning_rate)
    p.add_argument("--pretrain-epochs", type=_positive, default=pt.epochs)
    p.add_argument("--pretrain-batch-size", type=_positive, default=pt.batch_size)
    p.add_argument("--mask-prob", type=float, default=pt.mask_prob)
    p.add_argument("--p", type=_threshold, default=DEFAULT_P, help="silver-label confidence threshold")
    p.add_argument("--iters", type=_positive, default=tc.max_iterations, help="self-training iterations")
    p.add_argument("--gl", action="store_true", help="mix source gold labels into student training")
    p.add_argument("--freeze", type=_freeze, default=FreezePolicy.embeddings_only(),
                   help="initial teacher freezing: embeddings (default), none, or firstK")
    p.add_argument("--adaptive-pretrain", action=argparse.BooleanOptionalAction, default=tc.adaptive_pretrain,
                   help="masked-token pretraining on all training text before fine-tuning")
    p.add_argument("--p-decay", action="store_true", help="lower p by 0.01 after an iteration with no silver labels")


def _add_harness_args(p):
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2], help="comma-separated run seeds (at least 3)")
    p.add_argument("--parallel", type=_positive, default=1, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xrumour", description="Cross-lingual self-training for rumour detection.")
    parser.add_argument("--version", action="version", version=f"xrumour {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic bilingual dataset pair")
    d = SynthConfig()
    s.add_argument("--out", required=True)
    s.add_argument("--overlap", type=_fraction, default=d.lexical_overlap, help="shared surface vocabulary fraction")
    s.add_argument("--n", type=_positive, default=d.n_per_language, help="threads per language")
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--signal", type=float, default=d.label_signal_strength, help="label signal strength in (0, 1]")
    s.add_argument("--words", type=_positive, default=d.vocab_size_per_language, help="word types per language")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("transfer", help="teacher fit plus self-training for one seed")
    _add_data_args(t)
    _add_model_args(t)
    _add_train_args(t)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--gold-fraction", type=_fraction, default=0.0,
                   help="fraction of target training labels revealed to training")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_transfer)

    e = sub.add_parser("eval", help="score a checkpoint on labelled threads")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--vocab", required=True)
    e.add_argument("--data", required=True, help="labelled threads (JSON Lines)")
    e.add_argument("--split", choices=["all", "train", "validation", "test"], default="all")
    e.add_argument("--split-seed", type=int, default=0)
    e.add_argument("--max-seq-len", type=_positive, default=ModelSpec().max_seq_len)
    e.add_argument("--sep-style", choices=[s.value for s in SepStyle], default=ModelSpec().sep_style)
    e.add_argument("--out", help="write metrics JSON here instead of stdout")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("matrix", help="variants x seeds table for one direction")
    _add_data_args(m)
    _add_model_args(m)
    _add_train_args(m)
    _add_harness_args(m)
    m.add_argument("--variants", default="ZeroShot,ST,ST_GL,SupervisedSource,SupervisedTarget,SupervisedBoth")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_matrix)

    a = sub.add_parser("ablate", help="freeze policy x adaptive pretraining grid")
    _add_data_args(a)
    _add_model_args(a)
    _add_train_args(a)
    _add_harness_args(a)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    w = sub.add_parser("sweep", help="gold target fraction sweep")
    _add_data_args(w)
    _add_model_args(w)
    _add_train_args(w)
    _add_harness_args(w)
    w.add_argument("--fractions", type=_float_list, default=[0.0, 0.2, 0.4, 0.6, 0.8])
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)
    return parser


# ---------------------------------------------------------------- resolution helpers

def _model_spec(args) -> ModelSpec:
    return ModelSpec(d=args.dim, n_layers=args.layers, vocab_size=args.vocab_size,
                     max_seq_len=args.max_seq_len, sep_style=args.sep_style)


def _transfer_config(args, seed: int = 0) -> TransferConfig:
    freeze: FreezePolicy = args.freeze
    initial_frozen = freeze == FreezePolicy.embeddings_only()
    train = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                        dropout=args.dropout, freeze=FreezePolicy.none() if initial_frozen else freeze)
    pretrain = TrainConfig(learning_rate=args.pretrain_lr, epochs=args.pretrain_epochs,
                           batch_size=args.pretrain_batch_size, dropout=args.dropout, mask_prob=args.mask_prob)
    try:
        return TransferConfig(p=args.p, max_iterations=args.iters, use_gold_labels=args.gl,
                              freeze_initial_teacher=initial_frozen, adaptive_pretrain=args.adaptive_pretrain,
                              train=train, pretrain=pretrain, seed=seed, p_decay=args.p_decay)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load(path: str, stage: str):
    try:
        return load_jsonl(path)
    except FileNotFoundError:
        raise StageError(stage, EXIT_DATA, f"no such file: {path}") from None
    except (DataError, ValueError) as exc:
        raise StageError(stage, EXIT_DATA, str(exc)) from None


def _direction(args) -> Direction:
    source = _load(args.source, "load-source")
    target = _load(args.target, "load-target")
    if any(t.label is None for t in source):
        raise StageError("load-source", EXIT_DATA, f"{args.source}: every source thread needs a label")
    try:
        src_split = split_dataset(source, args.split_seed)
        tgt_split = split_dataset(target, args.split_seed + 1)
    except (DataError, ValueError) as exc:
        raise StageError("split", EXIT_DATA, str(exc)) from None
    src_lang = source[0].language if source else "source"
    tgt_lang = target[0].language if target else "target"
    return Direction(src_lang, tgt_lang, src_split, tgt_split)


def _outdir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise StageError("output", EXIT_DATA, f"cannot create output directory {path}: {exc}") from None
    return path


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _resolved(args, **extra) -> dict:
    """All argument values (output path excluded) plus derived settings."""
    flags = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "out", "verbose"):
            continue
        flags[k] = v.label() if isinstance(v, FreezePolicy) else v
    return {"xrumour_version": __version__, "command": args.command, "flags": flags, **extra}


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    cfg = SynthConfig(n_per_language=args.n, vocab_size_per_language=args.words, lexical_overlap=args.overlap,
                      label_signal_strength=args.signal, seed=args.seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    corpus = synth_bilingual(cfg)
    out = _outdir(args.out)
    save_jsonl(corpus.source, os.path.join(out, "source.jsonl"))
    save_jsonl(corpus.target, os.path.join(out, "target.jsonl"))
    manifest = {
        "generator": asdict(cfg),
        "files": {"source": "source.jsonl", "target": "target.jsonl"},
        "shared_words": len(corpus.shared),
        "stats": {
            "source": dataset_stats(corpus.source).as_dict(),
            "target": dataset_stats(corpus.target).as_dict(),
        },
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    log.info("wrote %d + %d threads to %s", len(corpus.source), len(corpus.target), out)
    return EXIT_OK


def cmd_transfer(args) -> int:
    spec = _model_spec(args)
    cfg = _transfer_config(args, args.seed)
    out = _outdir(args.out)
    _write_json(os.path.join(out, "config.json"),
                _resolved(args, model=spec.to_dict(), transfer=cfg.to_dict()))
    direction = _direction(args)
    try:
        vocab = train_subwords([direction.source.train, [t.unlabeled() for t in direction.target.train]],
                               spec.vocab_size)
        data = prepare_transfer_data(direction.source, direction.target, vocab, spec.max_seq_len,
                                     SepStyle(spec.sep_style), args.gold_fraction, args.seed)
    except (DataError, ValueError) as exc:
        raise StageError("tokenize", EXIT_DATA, str(exc)) from None
    vocab.save(os.path.join(out, "vocab.txt"))
    init = init_params(len(vocab), spec.d, spec.n_layers, seed=hash_seed(args.seed, 11), dropout_rate=args.dropout)

    traj_path = os.path.join(out, "trajectory.jsonl")
    with open(traj_path, "w", encoding="utf-8", newline="\n") as traj:
        def on_record(rec):
            traj.write(rec.to_json() + "\n")
            traj.flush()
            log.info("iteration %d: target val %.3f, silver %d", rec.iteration, rec.target_val_accuracy,
                     rec.silver_count_after_balance)
        try:
            result = run_transfer(init, data, cfg, on_record=on_record)
        except TrainingError as exc:
            raise StageError("transfer", EXIT_TRAIN, str(exc)) from None

    result.final.save(os.path.join(out, "checkpoint.bin"))
    metrics = {
        "best_iteration": result.best_iteration,
        "target_test": _metrics(result.final, data.target_test),
        "source_test": _metrics(result.final, data.source_test),
        "zero_shot_target_test": _metrics(result.teacher, data.target_test),
        "checkpoint_sha256": result.final.digest(),
    }
    _write_json(os.path.join(out, "metrics.json"), metrics)
    print(f"best iteration {result.best_iteration}: target test accuracy "
          f"{metrics['target_test']['accuracy']:.4f}, source test accuracy {metrics['source_test']['accuracy']:.4f}")
    return EXIT_OK


def _metrics(params, examples) -> dict | None:
    if not examples:
        return None
    preds = predict(params, [e.seq for e in examples])
    return compute_metrics(preds, [e.label for e in examples]).to_dict()


def cmd_eval(args) -> int:
    for path in (args.checkpoint, args.vocab):
        if not os.path.exists(path):
            raise StageError("load-model", EXIT_DATA, f"no such file: {path}")
    try:
        params = ClassifierParams.load(args.checkpoint)
        vocab = Vocabulary.load(args.vocab)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise StageError("load-model", EXIT_DATA, f"{args.checkpoint}: {exc}") from None
    if params.dims[0] != len(vocab):
        raise StageError("load-model", EXIT_DATA,
                         f"checkpoint expects {params.dims[0]} tokens but {args.vocab} has {len(vocab)}")
    threads = _load(args.data, "load-data")
    if args.split != "all":
        try:
            threads = getattr(split_dataset(threads, args.split_seed), args.split)
        except (DataError, ValueError) as exc:
            raise StageError("split", EXIT_DATA, str(exc)) from None
    unlabeled = [t.id for t in threads if t.label is None]
    if unlabeled:
        raise StageError("load-data", EXIT_DATA, f"{args.data}: thread {unlabeled[0]} has no label")
    seqs = [encode_thread(t, vocab, args.max_seq_len, SepStyle(args.sep_style)) for t in threads]
    metrics = compute_metrics(predict(params, seqs), [t.label for t in threads]).to_dict()
    text = json.dumps(metrics, sort_keys=True, indent=2) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _harness_setup(args):
    if len(args.seeds) < 3:
        raise UsageError(f"--seeds needs at least 3 values, got {args.seeds}")
    spec = _model_spec(args)
    cfg = _transfer_config(args)
    out = _outdir(args.out)
    return spec, cfg, out


def _finish_harness(out, records, table: str) -> int:
    write_records_jsonl(records, os.path.join(out, "results.jsonl"))
    write_trajectory_csv(records, os.path.join(out, "trajectory.csv"))
    _write_text(os.path.join(out, "table.txt"), table)
    sys.stdout.write(table)
    failed = [r for r in records if not r.ok]
    for r in failed:
        log.error("run %s %s seed %d failed: %s", r.variant, r.cell, r.seed, r.error)
    return EXIT_TRAIN if failed else EXIT_OK


def cmd_matrix(args) -> int:
    try:
        variants = [Variant(v.strip()) for v in args.variants.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    spec, cfg, out = _harness_setup(args)
    _write_json(os.path.join(out, "config.json"), _resolved(args, model=spec.to_dict(), transfer=cfg.to_dict()))
    direction = _direction(args)
    results = run_matrix([direction], variants, args.seeds, spec, cfg, workers=args.parallel)
    records = [r for res in results for r in res.runs]
    return _finish_harness(out, records, render_table(results))


def cmd_ablate(args) -> int:
    spec, cfg, out = _harness_setup(args)
    _write_json(os.path.join(out, "config.json"), _resolved(args, model=spec.to_dict(), transfer=cfg.to_dict()))
    direction = _direction(args)
    results = run_ablation([direction], args.seeds, spec, cfg, workers=args.parallel)
    records = [r for res in results for r in res.runs]
    return _finish_harness(out, records, render_ablation(results))


def cmd_sweep(args) -> int:
    fr = args.fractions
    if not fr or fr != sorted(fr) or any(not 0.0 <= f <= 1.0 for f in fr):
        raise UsageError(f"--fractions must be sorted values in [0, 1], got {fr}")
    spec, cfg, out = _harness_setup(args)
    _write_json(os.path.join(out, "config.json"), _resolved(args, model=spec.to_dict(), transfer=cfg.to_dict()))
    direction = _direction(args)
    rows, records = run_semi_supervised_sweep(fr, direction, args.seeds, spec, cfg, workers=args.parallel)
    return _finish_harness(out, records, render_sweep(rows))


# ---------------------------------------------------------------- entry point

def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return exc.code
    except TrainingError as exc:
        print(f"error [training]: {exc}", file=sys.stderr)
        return EXIT_TRAIN


if __name__ == "__main__":
    sys.exit(main())
