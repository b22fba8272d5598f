"""Optimization and evaluation pipeline.

Focal loss with L2 regularization minimized by Adam, per-utterance passes
with gradient accumulation over a logical batch, a stratified test split
plus k-fold plan, and confusion-matrix metrics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .errors import ContractError, DatasetError, LabelError, NumericalError

log = logging.getLogger(__name__)


@dataclass
class LossConfig:
    gamma: float = 2.0
    class_alpha: np.ndarray | None = None  # None: inverse frequency, mean 1
    lam: float = 1e-4

    def alphas(self, n_classes):
        if self.class_alpha is None:
            return np.ones(n_classes)
        alpha = np.asarray(self.class_alpha, dtype=np.float64)
        if alpha.shape != (n_classes,):
            raise LabelError(f"class_alpha must have {n_classes} entries")
        return alpha


def inverse_frequency_alphas(labels, n_classes):
    """Per-class balancing factors proportional to 1/frequency, mean 1."""
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        raise DatasetError(f"class {missing} has no samples")
    inv = 1.0 / counts
    return inv * (n_classes / inv.sum())


def focal_loss(log_probs, targets, cfg):
    """Mean over the batch of -alpha_t (1 - p_t)^gamma log(p_t).

    ``log_probs`` is (batch, classes) of log probabilities; ``targets`` are
    class indices.  With gamma 0 and unit alphas this is exactly the mean
    negative log likelihood.
    """
    batch, n_classes = log_probs.data.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (batch,):
        raise LabelError(f"expected {batch} targets, got {targets.shape}")
    if targets.min() < 0 or targets.max() >= n_classes:
        raise LabelError(
            f"target out of range for {n_classes} classes: {targets.tolist()}"
        )
    onehot = np.zeros((batch, n_classes))
    onehot[np.arange(batch), targets] = 1.0
    lp_t = ad.reduce_sum(ad.mul(log_probs, Tensor(onehot)), axis=1)
    p_t = ad.exp(lp_t)
    focus = ad.pow_const(ad.sub(Tensor(1.0), p_t), cfg.gamma)
    alpha_t = Tensor(cfg.alphas(n_classes)[targets])
    return ad.neg(ad.reduce_mean(ad.mul(alpha_t, ad.mul(focus, lp_t))))


def regularized_objective(task_loss, params, lam):
    """task_loss + lam * sum of squared entries over all parameters."""
    if lam < 0:
        raise ContractError("lambda must be nonnegative")
    if lam == 0 or not params:
        return task_loss
    penalty = None
    for p in params:
        term = ad.reduce_sum(ad.mul(p, p))
        penalty = term if penalty is None else ad.add(penalty, term)
    return ad.add(task_loss, ad.mul(Tensor(float(lam)), penalty))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    """One bias-corrected Adam update over {name: Tensor} parameters."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    scale = state.lr * np.sqrt(1.0 - b2**state.t) / (1.0 - b1**state.t)
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - scale * m / (np.sqrt(v) + state.eps)


def zero_grads(params):
    for p in params.values():
        p.grad = None


@dataclass
class SplitPlan:
    test_indices: np.ndarray
    folds: list  # (train_indices, validation_indices) pairs
    seed: int


def stratified_split(labels, seed, test_frac=0.1, n_folds=10):
    """Stratified held-out test split plus k disjoint validation folds.

    Every subset preserves per-class proportions to within one sample.  When
    the smallest class cannot fill ``n_folds`` validation slices the fold
    count is reduced with a warning.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DatasetError("cannot split an empty dataset")
    n_classes = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes)
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        raise DatasetError(f"class {missing} has no samples")
    rng = np.random.default_rng(seed)
    per_class = [rng.permutation(np.flatnonzero(labels == c)) for c in range(n_classes)]

    n_test = int(round(test_frac * labels.size))
    quota = np.floor(counts * test_frac).astype(np.int64)
    remainders = counts * test_frac - quota
    for c in np.argsort(-remainders)[: n_test - quota.sum()]:
        quota[c] += 1

    test_parts, rest_parts = [], []
    for c in range(n_classes):
        test_parts.append(per_class[c][: quota[c]])
        rest_parts.append(per_class[c][quota[c] :])
    test_indices = np.sort(np.concatenate(test_parts))

    min_rest = min(len(r) for r in rest_parts)
    folds_used = min(n_folds, max(1, min_rest))
    if folds_used < n_folds:
        log.warning(
            "reducing folds from %d to %d: smallest class has %d train/val samples",
            n_folds, folds_used, min_rest,
        )
    slices = [[] for _ in range(folds_used)]
    for rest in rest_parts:
        chunks = np.array_split(rest, folds_used)
        for k in range(folds_used):
            slices[k].append(chunks[k])
    folds = []
    for k in range(folds_used):
        val = np.sort(np.concatenate(slices[k]))
        train = np.sort(
            np.concatenate([np.concatenate(slices[j]) for j in range(folds_used) if j != k])
        ) if folds_used > 1 else np.array([], dtype=np.int64)
        folds.append((train, val))
    return SplitPlan(test_indices=test_indices, folds=folds, seed=seed)


@dataclass
class MetricsReport:
    confusion: np.ndarray  # rows: true class, columns: predicted class
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    support: np.ndarray

    def to_dict(self):
        return {
            "confusion": self.confusion.astype(int).tolist(),
            "per_class": {
                "precision": self.precision.tolist(),
                "recall": self.recall.tolist(),
                "f1": self.f1.tolist(),
                "support": self.support.astype(int).tolist(),
            },
            "accuracy": self.accuracy,
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
            },
        }


def _safe_div(num, den):
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, 0.0)


def metrics_from_pairs(true_labels, predicted, n_classes):
    """Confusion matrix and derived scores; zero denominators score 0."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if true_labels.size == 0:
        raise DatasetError("cannot compute metrics on an empty subset")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (true_labels, predicted), 1)
    tp = np.diag(confusion).astype(np.float64)
    support = confusion.sum(axis=1).astype(np.float64)
    predicted_count = confusion.sum(axis=0).astype(np.float64)
    precision = _safe_div(tp, predicted_count)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    total = float(true_labels.size)
    return MetricsReport(
        confusion=confusion,
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=float(tp.sum() / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        weighted_precision=float((precision * support).sum() / total),
        weighted_recall=float((recall * support).sum() / total),
        weighted_f1=float((f1 * support).sum() / total),
        support=support,
    )


def _check_finite(value, params, context):
    if np.isfinite(value):
        return
    offenders = [
        name
        for name, p in params.items()
        if not np.all(np.isfinite(p.data))
        or (p.grad is not None and not np.all(np.isfinite(p.grad)))
    ]
    detail = f"; non-finite parameter blocks: {offenders}" if offenders else ""
    raise NumericalError(f"non-finite loss during {context}{detail}")


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float


def train_model(model, clips, labels, loss_cfg, adam, epochs, seed,
                batch_size=16, val_clips=None, val_labels=None,
                dropout_training=True, stop_fn=None):
    """Per-utterance training with gradient accumulation.

    ``model`` follows the interface of ``model.Network`` (``forward`` and
    ``parameters``).  Returns per-epoch records; mutates the model parameters
    in place.  ``stop_fn(epoch, records)`` may end training early.
    """
    params = model.parameters()
    n = len(clips)
    if n == 0:
        raise DatasetError("training set is empty")
    order_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0FFEE)))
    records = []
    for epoch in range(1, epochs + 1):
        order = order_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        pending = 0
        for row, idx in enumerate(order):
            drop_seed = np.random.SeedSequence((seed, epoch, int(idx)))
            batch_n = min(batch_size, n - (row - row % batch_size))
            with Tape():
                log_probs = model.forward(
                    clips[idx], training=dropout_training,
                    dropout_seed=np.random.default_rng(drop_seed),
                )
                loss = focal_loss(log_probs, [labels[idx]], loss_cfg)
                backward(ad.mul(Tensor(1.0 / batch_n), loss))
            value = float(loss.data)
            _check_finite(value, params, f"epoch {epoch}")
            total_loss += value
            correct += int(np.argmax(log_probs.data[0]) == labels[idx])
            pending += 1
            if pending == batch_n:
                _apply_l2_and_step(params, loss_cfg.lam, adam)
                pending = 0
        if pending:
            _apply_l2_and_step(params, loss_cfg.lam, adam)
        records.append(
            EpochRecord(epoch, "train", total_loss / n, correct / n)
        )
        if val_clips:
            val_loss, val_acc = _validate(model, val_clips, val_labels, loss_cfg)
            records.append(EpochRecord(epoch, "val", val_loss, val_acc))
        if stop_fn is not None and stop_fn(epoch, records):
            break
    return records


def _apply_l2_and_step(params, lam, adam):
    if lam > 0:
        # one tiny tape per optimizer step pushes 2 * lam * w into the grads
        with Tape():
            penalty = regularized_objective(Tensor(0.0), list(params.values()), lam)
            backward(penalty)
    adam_step(params, adam)
    zero_grads(params)


def _validate(model, clips, labels, loss_cfg):
    total = 0.0
    correct = 0
    for clip, label in zip(clips, labels):
        log_probs = model.forward(clip, training=False)
        loss = focal_loss(log_probs, [label], loss_cfg)
        total += float(loss.data)
        correct += int(np.argmax(log_probs.data[0]) == label)
    return total / len(clips), correct / len(clips)


def predict(model, clips, workers=1):
    """Argmax class and log probabilities per clip, order-stable.

    Forward passes are independent reads of the parameters, so they may fan
    out over a thread pool; results are reassembled by index.
    """
    results = [None] * len(clips)

    def run(i):
        log_probs = model.forward(clips[i], training=False)
        results[i] = log_probs.data[0].copy()

    if workers > 1 and len(clips) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(clips))))
    else:
        for i in range(len(clips)):
            run(i)
    log_probs = np.stack(results)
    return np.argmax(log_probs, axis=1), log_probs


def evaluate(model, clips, labels, n_classes, workers=1):
    """MetricsReport for a subset; empty subsets are dataset errors."""
    if len(clips) == 0:
        raise DatasetError("cannot evaluate an empty subset")
    predicted, _ = predict(model, clips, workers=workers)
    return metrics_from_pairs(labels, predicted, n_classes)
