"""A small bag-of-subwords classifier with a tied masked-token head.

Architecture: mean of the non-PAD token embeddings, then ``L`` residual
``x + tanh(A x + c)`` layers, giving the pooled representation ``h`` that
plays the role of the [CLS] vector. The classification head is
``softmax(W h + b)`` over (non-rumour, rumour). The masked-token head scores
every vocabulary entry as ``E h`` with ``E`` the embedding table itself.

Everything is float64 numpy; gradients are written out by hand and checked
against central differences by :func:`grad_check`.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels
from .corpus import Label
from .tokenizer import mask_tokens, stack

N_CLASSES = 2
PROB_FLOOR = 1e-12
# fine-tuning rates for large pretrained encoders; far too small for this model from scratch
REFERENCE_LR_GRID = (1e-5, 2e-5, 5e-5)
CHECKPOINT_MAGIC = b"XRUMOUR-CKPT 1\n"
GROUPS = ("embeddings", "enc_w", "enc_b", "cls_w", "cls_b")


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------- parameters

@dataclass
class ClassifierParams:
    embeddings: np.ndarray  # (V, d)
    enc_w: np.ndarray  # (L, d, d)
    enc_b: np.ndarray  # (L, d)
    cls_w: np.ndarray  # (2, d)
    cls_b: np.ndarray  # (2,)
    dropout_rate: float = 0.1

    @property
    def mlm_head(self) -> np.ndarray:
        # tied: same storage as the embedding table
        return self.embeddings

    @property
    def dims(self) -> tuple[int, int, int]:
        V, d = self.embeddings.shape
        return V, d, self.enc_w.shape[0]

    def groups(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in GROUPS}

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(*(getattr(self, g).copy() for g in GROUPS), dropout_rate=self.dropout_rate)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.groups().values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for g in GROUPS:
            h.update(np.ascontiguousarray(getattr(self, g)).tobytes())
        return h.hexdigest()

    def equals(self, other: "ClassifierParams") -> bool:
        return all(np.array_equal(getattr(self, g), getattr(other, g)) for g in GROUPS)

    # -- checkpoint: magic line, JSON header line, raw little-endian float64
    #    arrays in GROUPS order

    def to_bytes(self) -> bytes:
        V, d, L = self.dims
        header = {
            "dims": {"V": V, "d": d, "L": L},
            "dropout_rate": self.dropout_rate,
            "groups": [[g, list(getattr(self, g).shape)] for g in GROUPS],
        }
        parts = [CHECKPOINT_MAGIC, json.dumps(header, sort_keys=True).encode() + b"\n"]
        parts += [np.ascontiguousarray(getattr(self, g), dtype="<f8").tobytes() for g in GROUPS]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ClassifierParams":
        if not blob.startswith(CHECKPOINT_MAGIC):
            raise ValueError("not an xrumour checkpoint")
        rest = blob[len(CHECKPOINT_MAGIC) :]
        line, _, payload = rest.partition(b"\n")
        header = json.loads(line)
        arrays = {}
        offset = 0
        for name, shape in header["groups"]:
            n = int(np.prod(shape)) * 8
            chunk = payload[offset : offset + n]
            if len(chunk) != n:
                raise ValueError("truncated checkpoint")
            arrays[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
            offset += n
        if offset != len(payload):
            raise ValueError("trailing bytes in checkpoint")
        return cls(**arrays, dropout_rate=header["dropout_rate"])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ClassifierParams":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def init_params(V: int, d: int, L: int, seed: int = 0, dropout_rate: float = 0.1) -> ClassifierParams:
    if min(V, d, L) < 1:
        raise ValueError("V, d and L must all be at least 1")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)
    return ClassifierParams(
        embeddings=rng.uniform(-bound, bound, size=(V, d)),
        enc_w=rng.uniform(-bound, bound, size=(L, d, d)),
        enc_b=np.zeros((L, d)),
        cls_w=rng.uniform(-bound, bound, size=(N_CLASSES, d)),
        cls_b=np.zeros(N_CLASSES),
        dropout_rate=dropout_rate,
    )


# ---------------------------------------------------------------- freezing

class FreezeKind(str, Enum):
    NONE = "none"
    EMBEDDINGS_ONLY = "embeddings"
    FIRST_K_LAYERS = "first-k"


@dataclass(frozen=True)
class FreezePolicy:
    kind: FreezeKind = FreezeKind.NONE
    k: int = 0

    @classmethod
    def none(cls):
        return cls(FreezeKind.NONE)

    @classmethod
    def embeddings_only(cls):
        return cls(FreezeKind.EMBEDDINGS_ONLY)

    @classmethod
    def first_k_layers(cls, k: int = 3):
        if k < 1:
            raise ValueError("FirstKLayers needs k >= 1")
        return cls(FreezeKind.FIRST_K_LAYERS, k)

    @classmethod
    def parse(cls, text: str) -> "FreezePolicy":
        text = text.strip().lower()
        if text in ("none", "off", "0"):
            return cls.none()
        if text in ("embeddings", "emb", "embeddings-only"):
            return cls.embeddings_only()
        if text.startswith("first"):
            digits = text[len("first") :].lstrip("-:") or "3"
            return cls.first_k_layers(int(digits))
        raise ValueError(f"unknown freeze policy {text!r}")

    def label(self) -> str:
        return f"first{self.k}" if self.kind is FreezeKind.FIRST_K_LAYERS else self.kind.value

    def frozen_layers(self, L: int) -> int:
        if self.kind is not FreezeKind.FIRST_K_LAYERS:
            return 0
        return min(self.k, L)

    def freezes_embeddings(self) -> bool:
        return self.kind is not FreezeKind.NONE


def _apply_freeze(grads: dict, policy: FreezePolicy, L: int) -> None:
    if policy.freezes_embeddings():
        grads["embeddings"][...] = 0.0
    k = policy.frozen_layers(L)
    if k:
        grads["enc_w"][:k] = 0.0
        grads["enc_b"][:k] = 0.0


# ---------------------------------------------------------------- forward / backward

@dataclass
class ForwardTrace:
    h_cls: np.ndarray
    probs: np.ndarray


@dataclass
class _Cache:
    ids: np.ndarray
    lengths: np.ndarray
    xs: list  # encoder inputs x_0 .. x_L
    ts: list  # tanh outputs per layer
    h: np.ndarray
    drop_mask: np.ndarray | None
    probs: np.ndarray | None = None


def _check_ids(params: ClassifierParams, ids: np.ndarray) -> None:
    V = params.embeddings.shape[0]
    if ids.size and (ids.max() >= V or ids.min() < 0):
        raise ValueError(f"token id {int(ids.max())} out of range for vocabulary size {V}")


def _encode(params, ids, lengths, train_mode=False, rng=None) -> _Cache:
    _check_ids(params, ids)
    x = kernels.pool_mean(ids, lengths, params.embeddings)
    xs, ts = [x], []
    for l in range(params.enc_w.shape[0]):
        t = np.tanh(x @ params.enc_w[l].T + params.enc_b[l])
        x = x + t
        xs.append(x)
        ts.append(t)
    drop_mask = None
    h = x
    if train_mode and params.dropout_rate > 0.0:
        keep = 1.0 - params.dropout_rate
        drop_mask = (rng.random(x.shape) < keep) / keep
        h = x * drop_mask
    return _Cache(ids, lengths, xs, ts, h, drop_mask)


def _encoder_backward(params, cache: _Cache, dh: np.ndarray, grads: dict) -> None:
    if cache.drop_mask is not None:
        dh = dh * cache.drop_mask
    dx = dh
    for l in reversed(range(params.enc_w.shape[0])):
        dz = dx * (1.0 - cache.ts[l] ** 2)
        grads["enc_w"][l] += dz.T @ cache.xs[l]
        grads["enc_b"][l] += dz.sum(axis=0)
        dx = dx + dz @ params.enc_w[l]
    kernels.pool_scatter(cache.ids, cache.lengths, dx, grads["embeddings"])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _zero_grads(params) -> dict:
    return {g: np.zeros_like(getattr(params, g)) for g in GROUPS}


def forward_batch(params, seqs, train_mode=False, seed=0) -> list[ForwardTrace]:
    ids, lengths = stack(seqs)
    cache = _encode(params, ids, lengths, train_mode, np.random.default_rng(seed))
    probs = _softmax(cache.h @ params.cls_w.T + params.cls_b)
    return [ForwardTrace(cache.h[i].copy(), probs[i].copy()) for i in range(len(seqs))]


def forward(params, seq, train_mode: bool = False, seed: int = 0) -> ForwardTrace:
    return forward_batch(params, [seq], train_mode, seed)[0]


def loss_bce(probs, label) -> float:
    """Negative log-likelihood of the gold class (binary cross-entropy)."""
    return float(-np.log(max(float(probs[int(label)]), PROB_FLOOR)))


def _cls_loss_and_grads(params, ids, lengths, labels, weights, train_mode, rng):
    cache = _encode(params, ids, lengths, train_mode, rng)
    probs = _softmax(cache.h @ params.cls_w.T + params.cls_b)
    rows = np.arange(len(labels))
    wsum = weights.sum()
    losses = -np.log(np.maximum(probs[rows, labels], PROB_FLOOR))
    loss = float((weights * losses).sum() / wsum)
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits *= (weights / wsum)[:, None]
    grads = _zero_grads(params)
    grads["cls_w"] += dlogits.T @ cache.h
    grads["cls_b"] += dlogits.sum(axis=0)
    _encoder_backward(params, cache, dlogits @ params.cls_w, grads)
    return loss, grads


def _mlm_loss_and_grads(params, ids, lengths, target_lists):
    """Masked-token loss: the pooled corrupted sequence predicts each target."""
    cache = _encode(params, ids, lengths)
    E = params.embeddings
    probs = _softmax(cache.h @ E.T)
    n_targets = sum(len(t) for t in target_lists)
    counts = np.zeros_like(probs)
    for r, targets in enumerate(target_lists):
        for _, orig in targets:
            counts[r, orig] += 1.0
    per_row = counts.sum(axis=1)
    loss = float(-(counts * np.log(np.maximum(probs, PROB_FLOOR))).sum() / n_targets)
    dlogits = (probs * per_row[:, None] - counts) / n_targets
    grads = _zero_grads(params)
    grads["embeddings"] += dlogits.T @ cache.h
    _encoder_backward(params, cache, dlogits @ E, grads)
    return loss, grads


def loss_mlm(params, corrupted, targets) -> float:
    if not targets:
        raise ValueError("loss_mlm needs at least one masked target")
    ids, lengths = stack([corrupted])
    loss, _ = _mlm_loss_and_grads(params, ids, lengths, [targets])
    return loss


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-3
    epochs: int = 4
    batch_size: int = 16
    dropout: float = 0.1
    seed: int = 0
    freeze: FreezePolicy = field(default_factory=FreezePolicy.none)
    mask_prob: float = 0.15

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "dropout": self.dropout,
            "seed": self.seed,
            "freeze": self.freeze.label(),
            "mask_prob": self.mask_prob,
        }


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = _zero_grads(params)
        self.v = _zero_grads(params)
        self.t = 0

    def step(self, params, grads, skip=()):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for g in GROUPS:
            if g in skip:
                continue
            m, v = self.m[g], self.v[g]
            m *= self.beta1
            m += (1.0 - self.beta1) * grads[g]
            v *= self.beta2
            v += (1.0 - self.beta2) * grads[g] ** 2
            getattr(params, g)[...] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _skip_groups(policy: FreezePolicy, L: int, extra=()) -> set:
    skip = set(extra)
    if policy.freezes_embeddings():
        skip.add("embeddings")
    if policy.frozen_layers(L) >= L:
        skip.update(("enc_w", "enc_b"))
    return skip


def train_supervised(params, data, cfg: TrainConfig, weights=None, on_step=None) -> ClassifierParams:
    """Mini-batch Adam on the classification loss; returns updated copy.

    ``data`` is a sequence of ``(TokenSequence, label)``. Frozen parameter
    groups are left bit-identical. ``on_step(batch_index, loss)`` is called
    after every update.
    """
    data = list(data)
    if not data:
        raise ValueError("train_supervised needs at least one example")
    out = params.copy()
    out.dropout_rate = cfg.dropout
    L = out.dims[2]
    w_all = np.ones(len(data)) if weights is None else np.asarray(weights, dtype=np.float64)
    labels_all = np.array([int(y) for _, y in data], dtype=np.int64)
    seqs = [s for s, _ in data]
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(out, cfg.learning_rate)
    skip = _skip_groups(cfg.freeze, L)
    batch_idx = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            ids, lengths = stack([seqs[i] for i in sel])
            loss, grads = _cls_loss_and_grads(out, ids, lengths, labels_all[sel], w_all[sel], True, rng)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at batch {batch_idx}")
            _apply_freeze(grads, cfg.freeze, L)
            opt.step(out, grads, skip)
            if on_step is not None:
                on_step(batch_idx, loss)
            batch_idx += 1
    if not out.is_finite():
        raise TrainingError("parameters became non-finite during training")
    return out


def adaptive_pretrain(params, unlabeled, cfg: TrainConfig, on_step=None) -> ClassifierParams:
    """Continue training the embeddings and encoder with the masked-token loss.

    The classification head is not touched. Masks are redrawn every epoch.
    ``on_step(batch_index, loss)`` is called after every update.
    """
    unlabeled = list(unlabeled)
    if not unlabeled:
        raise ValueError("adaptive_pretrain needs unlabeled sequences")
    out = params.copy()
    L = out.dims[2]
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(out, cfg.learning_rate)
    skip = _skip_groups(cfg.freeze, L, extra=("cls_w", "cls_b"))
    batch_idx = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(unlabeled))
        for start in range(0, len(unlabeled), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            masked = [
                mask_tokens(unlabeled[i], cfg.mask_prob, seed=hash_seed(cfg.seed, epoch, int(i)))
                for i in sel
            ]
            if not any(t for _, t in masked):
                continue
            ids, lengths = stack([c for c, _ in masked])
            loss, grads = _mlm_loss_and_grads(out, ids, lengths, [t for _, t in masked])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at batch {batch_idx}")
            _apply_freeze(grads, cfg.freeze, L)
            opt.step(out, grads, skip)
            if on_step is not None:
                on_step(batch_idx, loss)
            batch_idx += 1
    if not out.is_finite():
        raise TrainingError("parameters became non-finite during pretraining")
    return out


def hash_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def mlm_eval_loss(params, seqs, mask_prob=0.15, seed=0) -> float:
    """Mean masked-token loss over a fixed masking of ``seqs``."""
    total, n = 0.0, 0
    for i, s in enumerate(seqs):
        corrupted, targets = mask_tokens(s, mask_prob, seed=hash_seed(seed, i))
        if targets:
            total += loss_mlm(params, corrupted, targets) * len(targets)
            n += len(targets)
    return total / max(n, 1)


# ---------------------------------------------------------------- inference

@dataclass(frozen=True)
class Prediction:
    probs: tuple[float, float]
    label: Label
    confidence: float


def prediction_from_probs(probs) -> Prediction:
    p = (float(probs[0]), float(probs[1]))
    # ties go to class 0 (non-rumour)
    label = Label.RUMOUR if p[1] > p[0] else Label.NON_RUMOUR
    return Prediction(p, label, max(p))


def predict(params, seqs, batch_size: int = 256) -> list[Prediction]:
    seqs = list(seqs)
    out = []
    for start in range(0, len(seqs), batch_size):
        for tr in forward_batch(params, seqs[start : start + batch_size], train_mode=False):
            out.append(prediction_from_probs(tr.probs))
    return out


def accuracy(params, data) -> float:
    data = list(data)
    preds = predict(params, [s for s, _ in data])
    return float(np.mean([p.label == int(y) for p, (_, y) in zip(preds, data)]))


# ---------------------------------------------------------------- gradient check

def analytic_grads(params, example, freeze: FreezePolicy | None = None) -> dict:
    seq, label = example
    ids, lengths = stack([seq])
    _, grads = _cls_loss_and_grads(params, ids, lengths, np.array([int(label)]), np.ones(1), False, None)
    if freeze is not None:
        _apply_freeze(grads, freeze, params.dims[2])
    return grads


def _loss_at(params, example) -> float:
    seq, label = example
    return loss_bce(forward(params, seq).probs, label)


def _frozen_coord(policy: FreezePolicy | None, group: str, index: tuple, L: int) -> bool:
    if policy is None:
        return False
    if group == "embeddings":
        return policy.freezes_embeddings()
    if group in ("enc_w", "enc_b"):
        return index[0] < policy.frozen_layers(L)
    return False


def grad_check(params, example, freeze: FreezePolicy | None = None, n_coords: int = 240,
               seed: int = 0, h: float = 1e-5) -> float:
    """Max relative error of the analytic gradient against central differences.

    Coordinates are drawn from every parameter group; embedding draws favour
    rows that occur in the example (other rows have an exactly zero gradient).
    Frozen coordinates must have analytic gradient 0; their error is |grad|.
    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``.
    """
    work = params.copy()
    work.dropout_rate = 0.0
    grads = analytic_grads(work, example, freeze)
    rng = np.random.default_rng(seed)
    L = work.dims[2]
    seq, _ = example
    present = np.unique(seq.ids[: seq.attention_len])
    per_group = max(1, n_coords // len(GROUPS))
    worst = 0.0
    for g in GROUPS:
        arr = getattr(work, g)
        for j in range(per_group):
            if g == "embeddings" and j % 2 == 0:
                idx = (int(rng.choice(present)), int(rng.integers(arr.shape[1])))
            else:
                idx = tuple(int(rng.integers(n)) for n in arr.shape)
            a = float(grads[g][idx])
            if _frozen_coord(freeze, g, idx, L):
                worst = max(worst, abs(a))
                continue
            old = arr[idx]
            arr[idx] = old + h
            fp = _loss_at(work, example)
            arr[idx] = old - h
            fm = _loss_at(work, example)
            arr[idx] = old
            num = (fp - fm) / (2 * h)
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-6))
    return worst


__all__ = [
    "Adam", "ClassifierParams", "ForwardTrace", "FreezeKind", "FreezePolicy", "REFERENCE_LR_GRID",
    "Prediction", "TrainConfig", "TrainingError", "accuracy", "adaptive_pretrain", "analytic_grads",
    "forward", "forward_batch", "grad_check", "init_params", "loss_bce", "loss_mlm", "mlm_eval_loss",
    "predict", "prediction_from_probs", "train_supervised",
]
