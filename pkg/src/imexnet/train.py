"""Weighted cross-entropy training with plain SGD, and segmentation metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .layers import NetworkSpec, check_params, forward, init_params
from .qtips import CLASS_NAMES, Dataset, class_frequencies
from .rng import Rng
from .tensor import NumericFailure

log = logging.getLogger(__name__)

OBJECT_CLASSES = (1, 2, 3)


def class_weights(ds: Dataset) -> np.ndarray:
    """Inverse pixel frequencies, normalized so the weights average to one."""
    f = class_frequencies(ds)
    absent = [CLASS_NAMES[c] if c < len(CLASS_NAMES) else str(c) for c in np.flatnonzero(f == 0)]
    if absent:
        raise ValueError(f"class(es) absent from dataset: {', '.join(absent)}")
    return weights_from_frequencies(f)


def weights_from_frequencies(f) -> np.ndarray:
    inv = 1.0 / np.asarray(f, dtype=np.float64)
    return inv / inv.sum() * len(inv)


def weighted_cross_entropy(logits: np.ndarray, labels: np.ndarray, weights) -> float:
    for w in np.ravel(weights):
        if not w > 0:
            raise ValueError("class weights must be positive")
    if len(np.ravel(weights)) != logits.shape[1]:
        raise ValueError(f"{len(np.ravel(weights))} weights for {logits.shape[1]} classes")
    return float(ad.weighted_cross_entropy(np.asarray(logits, dtype=np.float64), labels, weights))


def predict(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax; ties go to the smallest class id."""
    return np.argmax(logits, axis=1).astype(np.uint8)


def iou(pred: np.ndarray, true: np.ndarray, class_id: int) -> float:
    """Intersection over union for one class; 1.0 when the class is absent from both."""
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    p = pred == class_id
    t = true == class_id
    union = np.count_nonzero(p | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & t) / union


def mean_iou(pred: np.ndarray, true: np.ndarray, classes=OBJECT_CLASSES) -> float:
    """Mean over samples and object classes of the per-sample IOU.

    ``pred`` and ``true`` are ``(n, h, w)`` label maps (a single ``(h, w)``
    map is treated as one sample).
    """
    if pred.ndim == 2:
        pred, true = pred[None], true[None]
    return float(np.mean([[iou(p, t, c) for c in classes] for p, t in zip(pred, true)]))


def per_class_iou(pred: np.ndarray, true: np.ndarray, classes=OBJECT_CLASSES) -> list:
    if pred.ndim == 2:
        pred, true = pred[None], true[None]
    return [float(np.mean([iou(p, t, c) for p, t in zip(pred, true)])) for c in classes]


def pixel_accuracy(pred: np.ndarray, true: np.ndarray) -> float:
    """Percentage of pixels labelled correctly, background included."""
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    return 100.0 * np.count_nonzero(pred == true) / pred.size


@dataclass
class Metrics:
    loss: float
    miou: float
    accuracy: float
    per_class: list


def _batches(n: int, batch: int, order) -> list:
    return [order[i:i + batch] for i in range(0, n, batch)]


def evaluate(net: NetworkSpec, params: dict, ds: Dataset, weights, batch: int = 8) -> Metrics:
    """Loss (weighted mean over all pixels of ``ds``), mean IOU and pixel accuracy."""
    weights = np.asarray(weights, dtype=np.float64)
    num = den = 0.0
    preds = []
    for idx in _batches(len(ds), batch, list(range(len(ds)))):
        X = ds.images(idx)
        y = ds.labels(idx)
        logits = forward(net, params, X.astype(_dtype(params)))
        wpix = weights[y]
        num += float(ad.weighted_cross_entropy(logits.astype(np.float64), y, weights)) * wpix.sum()
        den += wpix.sum()
        preds.append(predict(logits))
    pred = np.concatenate(preds)
    true = ds.labels()
    return Metrics(float(num / den), mean_iou(pred, true), pixel_accuracy(pred, true),
                   per_class_iou(pred, true))


def _dtype(params: dict):
    return np.asarray(next(iter(params.values()))).dtype


def loss_and_grads(net: NetworkSpec, params: dict, X: np.ndarray, labels: np.ndarray, weights):
    """Weighted cross-entropy of one batch and its gradient for every parameter."""
    tape = ad.Tape()
    leaves = {k: tape.leaf(v) for k, v in params.items()}
    logits = forward(net, leaves, X)
    loss = ad.weighted_cross_entropy(logits, labels, weights)
    grads = tape.backward(loss)
    out = {k: grads.get(v, np.zeros_like(v.value)) for k, v in leaves.items()}
    tape.clear()
    return float(loss.value), out, logits.value


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    return {k: (v - lr * grads[k]).astype(v.dtype, copy=False) for k, v in params.items()}


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    miou: float
    accuracy: float


def train(net: NetworkSpec, ds_train: Dataset, ds_val: Optional[Dataset], epochs: int, lr: float,
          batch: int, seed: int, params: Optional[dict] = None, weights=None,
          eval_initial: bool = True, callback: Optional[Callable] = None):
    """Plain SGD on the weighted cross-entropy.

    Each epoch reshuffles the training set with ``Rng(seed)``; a trailing
    partial batch is used as-is.  Returns ``(params, history)`` where
    ``history`` is a list of :class:`EpochRecord`.  Train rows report the
    mean batch loss and the metrics of the predictions made during the
    epoch; val rows evaluate the end-of-epoch parameters.
    """
    if not lr >= 0:
        raise ValueError("learning rate must be non-negative")
    if batch < 1 or batch > len(ds_train):
        raise ValueError(f"batch size must be in [1, {len(ds_train)}]")
    params = init_params(net) if params is None else dict(params)
    check_params(net, params)
    weights = class_weights(ds_train) if weights is None else np.asarray(weights, np.float64)
    dtype = _dtype(params)
    rng = Rng(seed)
    history = []

    def record(rec):
        history.append(rec)
        if callback is not None:
            callback(rec)

    if eval_initial:
        m = evaluate(net, params, ds_train, weights, batch)
        record(EpochRecord(0, "train", m.loss, m.miou, m.accuracy))
        if ds_val is not None:
            m = evaluate(net, params, ds_val, weights, batch)
            record(EpochRecord(0, "val", m.loss, m.miou, m.accuracy))

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(ds_train))
        losses, preds, trues = [], [], []
        for bi, idx in enumerate(_batches(len(ds_train), batch, order)):
            X = ds_train.images(idx).astype(dtype)
            y = ds_train.labels(idx)
            try:
                loss, grads, logits = loss_and_grads(net, params, X, y, weights)
            except NumericFailure as exc:
                raise NumericFailure(f"epoch {epoch}, batch {bi}: {exc}") from exc
            if not np.isfinite(loss):
                raise NumericFailure(f"epoch {epoch}, batch {bi}: loss is {loss}")
            params = sgd_step(params, grads, lr)
            losses.append(loss * len(idx))
            preds.append(predict(logits))
            trues.append(y)
        pred, true = np.concatenate(preds), np.concatenate(trues)
        record(EpochRecord(epoch, "train", sum(losses) / len(ds_train), mean_iou(pred, true),
                           pixel_accuracy(pred, true)))
        if ds_val is not None:
            m = evaluate(net, params, ds_val, weights, batch)
            record(EpochRecord(epoch, "val", m.loss, m.miou, m.accuracy))
        log.info("epoch %d: %s", epoch, history[-1])
    return params, history
