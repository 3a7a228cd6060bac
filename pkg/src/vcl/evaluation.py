"""Evaluation protocols: linear probing and low-shot fine-tuning.

The linear probe freezes the encoder, computes embeddings once, and
trains an affine head with a stable binary cross-entropy
(softplus(x) - x y) under AdamW for a fixed budget. Low-shot keeps a
cloned encoder trainable, draws a label-stratified subsample of the
training split, and fine-tunes end to end. Both report per-attribute
and mean accuracies at the 0.5 threshold.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from vcl.autograd import Tensor, add, matmul, mul, softplus, sub, tmean
from vcl.datasets import LabeledDataset
from vcl.model import encode, params_fingerprint
from vcl.trainer import adamw_step, init_optim_state


@dataclass(frozen=True)
class ProbeConfig:
    steps: int = 2000
    lr: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass(frozen=True)
class FinetuneConfig:
    steps: int = 300
    lr: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass(frozen=True)
class ProbeResult:
    protocol: str
    fraction: float | None
    seed: int
    per_attribute: list
    mean_accuracy: float
    train_size: int
    test_size: int
    subsample_size: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def mean_attribute_accuracy(pred, labels) -> tuple[list, float]:
    """Accuracy of thresholded predictions, per attribute and averaged.

    ``pred`` holds probabilities or scores compared against 0.5;
    ``labels`` holds binary targets.
    """
    p = np.asarray(pred)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 2:
        raise ValueError(
            f"pred {p.shape} and labels {y.shape} must be equal (M, A) shapes")
    hits = (p > 0.5) == (y == 1)
    per_attr = [float(a) for a in hits.mean(axis=0)]
    return per_attr, float(hits.mean())


def _expit(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _glorot_head(rng: np.random.Generator, d: int, a: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (d + a))
    return rng.uniform(-bound, bound, size=(d, a)).astype(np.float32)


def _bce(logits: Tensor, targets: Tensor) -> Tensor:
    # softplus(x) - x*y: the numerically safe form of -log p(y | x)
    return tmean(sub(softplus(logits), mul(logits, targets)))


def _check_split(train_ds: LabeledDataset, test_ds: LabeledDataset) -> None:
    if train_ds.labels.shape[1] != test_ds.labels.shape[1]:
        raise ValueError("train and test attribute counts differ")
    if train_ds.inputs.shape[1:] != test_ds.inputs.shape[1:]:
        raise ValueError("train and test input shapes differ")


def train_test_split(ds: LabeledDataset, test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic row split into (train, test) by a seeded permutation."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(
            f"test_fraction must be in (0, 1), got {test_fraction}")
    m = len(ds)
    n_test = max(1, int(round(m * test_fraction)))
    if n_test >= m:
        raise ValueError(f"test fraction {test_fraction} leaves no train rows")
    # stream id 5; ids 0..4 belong to shuffling, augmentation, noise,
    # epoch seeding and outlier injection
    perm = np.random.default_rng([seed, 5]).permutation(m)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])

    def take(idx):
        return LabeledDataset(inputs=ds.inputs[idx], labels=ds.labels[idx],
                              outlier_mask=ds.outlier_mask[idx])
    return take(train_idx), take(test_idx)


def linear_probe(params: dict[str, Tensor], train_ds: LabeledDataset,
                 test_ds: LabeledDataset,
                 cfg: ProbeConfig = ProbeConfig()) -> ProbeResult:
    """Frozen-encoder linear evaluation.

    Embeddings are computed once and detached; only the affine head
    trains. The encoder parameter bytes are fingerprinted before and
    after as a hard guarantee that probing cannot leak into the model.
    """
    _check_split(train_ds, test_ds)
    before = params_fingerprint(params)
    feats_train = encode(params, train_ds.inputs).data.copy()
    feats_test = encode(params, test_ds.inputs).data.copy()

    rng = np.random.default_rng(cfg.seed)
    a = train_ds.labels.shape[1]
    d = feats_train.shape[1]
    head = {
        "probe.w": Tensor(_glorot_head(rng, d, a), requires_grad=True),
        "probe.b": Tensor(np.zeros(a, dtype=np.float32), requires_grad=True),
    }
    state = init_optim_state(head, lr=cfg.lr, weight_decay=cfg.weight_decay)
    feats = Tensor(feats_train)
    targets = Tensor(train_ds.labels.astype(np.float32))
    for _ in range(cfg.steps):
        logits = add(matmul(feats, head["probe.w"]), head["probe.b"])
        loss = _bce(logits, targets)
        loss.backward()
        grads = {k: p.grad for k, p in head.items()}
        head, state = adamw_step(head, grads, state)

    if params_fingerprint(params) != before:
        raise RuntimeError("probe training mutated the frozen encoder")
    test_logits = feats_test @ head["probe.w"].data + head["probe.b"].data
    per_attr, mean_acc = mean_attribute_accuracy(_expit(test_logits),
                                                 test_ds.labels)
    return ProbeResult(protocol="linear", fraction=None, seed=cfg.seed,
                       per_attribute=per_attr, mean_accuracy=mean_acc,
                       train_size=len(train_ds), test_size=len(test_ds))


def stratified_subsample(labels: np.ndarray, fraction: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Indices of a floor(fraction * M)-sized subsample.

    Rows are grouped by their full label combination; each group
    contributes floor(fraction * group size) draws, and any remaining
    quota is filled uniformly from the leftovers, so rare combinations
    cannot be silently dropped to zero when the quota allows them.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    m = labels.shape[0]
    target = int(math.floor(fraction * m))
    if target < 1:
        raise ValueError(
            f"fraction {fraction} of {m} rows yields an empty subsample")
    if target >= m:
        return np.arange(m, dtype=np.int64)
    groups: dict[bytes, list] = {}
    for i in range(m):
        groups.setdefault(labels[i].tobytes(), []).append(i)
    chosen: list[int] = []
    for key in sorted(groups):
        members = groups[key]
        take = int(math.floor(fraction * len(members)))
        take = min(take, target - len(chosen))
        if take > 0:
            picks = rng.choice(len(members), size=take, replace=False)
            chosen.extend(members[j] for j in picks)
    if len(chosen) < target:
        pool = np.setdiff1d(np.arange(m, dtype=np.int64),
                            np.asarray(chosen, dtype=np.int64))
        fill = rng.choice(pool.size, size=target - len(chosen), replace=False)
        chosen.extend(int(pool[j]) for j in fill)
    return np.sort(np.asarray(chosen, dtype=np.int64))


def low_shot_finetune(params: dict[str, Tensor], fraction: float,
                      train_ds: LabeledDataset, test_ds: LabeledDataset,
                      cfg: FinetuneConfig = FinetuneConfig()) -> ProbeResult:
    """Fine-tune a cloned encoder plus a fresh head on a label fraction.

    The caller's params are never touched; training happens on copies.
    fraction = 1.0 is the sanity upper bound, fine-tuning on the full
    training split.
    """
    _check_split(train_ds, test_ds)
    rng = np.random.default_rng(cfg.seed)
    idx = stratified_subsample(train_ds.labels, fraction, rng)
    sub_inputs = train_ds.inputs[idx]
    sub_targets = Tensor(train_ds.labels[idx].astype(np.float32))

    trainable = {k: Tensor(params[k].data.copy(), requires_grad=True)
                 for k in params if k.startswith("enc")}
    a = train_ds.labels.shape[1]
    d = params["enc_out.w"].data.shape[1]
    trainable["probe.w"] = Tensor(_glorot_head(rng, d, a), requires_grad=True)
    trainable["probe.b"] = Tensor(np.zeros(a, dtype=np.float32),
                                  requires_grad=True)
    state = init_optim_state(trainable, lr=cfg.lr,
                             weight_decay=cfg.weight_decay)
    for _ in range(cfg.steps):
        h = encode(trainable, sub_inputs)
        logits = add(matmul(h, trainable["probe.w"]), trainable["probe.b"])
        loss = _bce(logits, sub_targets)
        loss.backward()
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for k, p in trainable.items()}
        trainable, state = adamw_step(trainable, grads, state)

    h_test = encode(trainable, test_ds.inputs).data
    test_logits = (h_test @ trainable["probe.w"].data
                   + trainable["probe.b"].data)
    per_attr, mean_acc = mean_attribute_accuracy(_expit(test_logits),
                                                 test_ds.labels)
    return ProbeResult(protocol="low_shot", fraction=float(fraction),
                       seed=cfg.seed, per_attribute=per_attr,
                       mean_accuracy=mean_acc, train_size=len(train_ds),
                       test_size=len(test_ds), subsample_size=int(idx.size))
