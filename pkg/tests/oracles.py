"""Independent reference implementations used by several test modules."""
import itertools
from fractions import Fraction


def exhaustive_balance(preds):
    """Best balanced subset by brute force: max exact total confidence per
    class, ties to the lexicographically smallest sorted id list.

    ``preds`` holds ``(thread_id, Prediction)`` pairs; returns a set of
    ``(thread_id, label)``.
    """
    by = {0: [], 1: []}
    for tid, pr in preds:
        by[int(pr.label)].append((tid, pr.confidence))
    m = min(len(by[0]), len(by[1]))
    chosen = set()
    for c in (0, 1):
        best = None
        for combo in itertools.combinations(by[c], m):
            key = (-sum(Fraction(conf) for _, conf in combo), sorted(t for t, _ in combo))
            if best is None or key < best:
                best = key
        chosen |= {(t, c) for t in best[1]}
    return chosen


def naive_filter(preds, p):
    out = []
    for tid, pr in preds:
        if pr.confidence >= p:
            out.append((tid, pr))
    return out


def confusion_oracle(preds, gold):
    """Accuracy and per-class (precision, recall, f1) from explicit counts."""
    correct = 0
    for p, g in zip(preds, gold):
        if p == g:
            correct += 1
    out = {}
    for c in (0, 1):
        tp = fp = fn = 0
        for p, g in zip(preds, gold):
            if p == c and g == c:
                tp += 1
            elif p == c:
                fp += 1
            elif g == c:
                fn += 1
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        out[c] = (prec, rec, 2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return correct / len(gold), out
