"""Mini-batch training loop and inference helpers."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyDataset, ShapeMismatch
from . import functional as F
from .model import Network
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    accuracy: float
    val_loss: float | None = None
    val_accuracy: float | None = None


@dataclass
class TrainResult:
    model: Network
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def checksum(self) -> str:
        return self.model.checksum()


def one_hot(labels: np.ndarray, k: int, dtype=np.float64) -> np.ndarray:
    out = np.zeros((len(labels), k), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def _batches(n: int, batch: int, order: np.ndarray) -> list[np.ndarray]:
    idx = [order[i : i + batch] for i in range(0, n, batch)]
    # batch norm cannot normalise a single sample
    if len(idx) > 1 and len(idx[-1]) < 2:
        idx.pop()
    return idx


def evaluate(model: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 64) -> tuple[float, float]:
    """Mean cross-entropy and accuracy in inference mode."""
    probs = model.predict_proba(x, batch_size)
    loss = F.cross_entropy(probs, one_hot(y, model.num_classes, probs.dtype))
    return loss, float(np.mean(np.argmax(probs, axis=1) == y))


def train(model: Network, x: np.ndarray, y: np.ndarray, *, epochs: int = 20,
          batch_size: int = 32, lr: float = 1e-3, seed: int = 0,
          val: tuple[np.ndarray, np.ndarray] | None = None,
          target_val_accuracy: float | None = None, patience: int | None = None,
          ) -> TrainResult:
    """Train ``model`` in place with Adam and softmax cross-entropy.

    Shuffling is driven by ``seed`` only, so identical inputs, seed and
    initial weights always yield identical weights.  When ``val`` is given the
    weights of the best validation epoch (highest accuracy, then lowest loss,
    earliest on ties) are restored before returning.  Training may stop early
    once validation accuracy reaches ``target_val_accuracy`` or fails to
    improve for ``patience`` epochs.
    """
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0 or len(x) != len(y):
        raise EmptyDataset(f"need a non-empty dataset with matching labels ({len(x)} vs {len(y)})")
    if len(x) < 2:
        raise EmptyDataset("at least one batch of two samples is required")
    if x.ndim != 4:
        raise ShapeMismatch(f"training inputs must be NHWC, got {x.shape}")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise ShapeMismatch(f"labels outside [0, {model.num_classes})")

    rng = np.random.default_rng(seed)
    state = AdamState(lr=lr)
    params = model.parameters()
    result = TrainResult(model)
    best_key, best_snapshot, stale = None, None, 0

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(x))
        losses, correct, seen = [], 0, 0
        for idx in _batches(len(x), batch_size, order):
            xb = x[idx].astype(model.dtype, copy=False)
            target = one_hot(y[idx], model.num_classes, model.dtype)
            loss, probs = model.loss_and_backward(xb, target)
            adam_step(params, model.gradients(), state)
            losses.append(loss * len(idx))
            correct += int(np.sum(np.argmax(probs, axis=1) == y[idx]))
            seen += len(idx)
        entry = EpochLog(epoch, float(np.sum(losses) / seen), correct / seen)

        if val is not None:
            entry.val_loss, entry.val_accuracy = evaluate(model, *val)
            key = (entry.val_accuracy, -entry.val_loss)
            if best_key is None or key > best_key:
                best_key, stale = key, 0
                best_snapshot = [a.copy() for _, _, a in model.named_tensors()]
                result.best_epoch = epoch
            else:
                stale += 1
        else:
            result.best_epoch = epoch
        result.log.append(entry)
        log.info("epoch %d loss %.4f acc %.4f val_acc %s", epoch, entry.loss,
                 entry.accuracy, entry.val_accuracy)

        if val is not None:
            if target_val_accuracy is not None and entry.val_accuracy >= target_val_accuracy:
                break
            if patience is not None and stale >= patience:
                break

    if best_snapshot is not None:
        for (_, _, arr), saved in zip(model.named_tensors(), best_snapshot):
            arr[...] = saved
    return result


def predict(model: Network, x: np.ndarray) -> tuple[int, np.ndarray] | tuple[np.ndarray, np.ndarray]:
    """Argmax class (lowest index wins ties) and softmax probabilities.

    A single ``(H, W, C)`` input returns ``(int, (K,))``; a batch returns
    ``((N,), (N, K))``.
    """
    single = x.ndim == 3
    batch = x[None] if single else x
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(model.input_shape):
        raise ShapeMismatch(f"input {x.shape} does not match model input {model.input_shape}")
    probs = model.predict_proba(batch)
    classes = np.argmax(probs, axis=1)
    if single:
        return int(classes[0]), probs[0]
    return classes, probs
