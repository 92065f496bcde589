"""CNN pattern classifier over encoded candlestick windows.

Architecture (input W x W x 4, channels-last):
conv 16@3x3 + relu -> conv 32@3x3 + relu -> 2x2 max-pool -> flatten ->
dense 64 + relu -> dense 9. The softmax lives in prediction; training works
on logits with a cross-entropy loss.

Training is deterministic for a fixed seed: seeded initialization, a seeded
stratified 80/20 split, and seeded epoch shuffles. Early stopping keeps the
best validation-accuracy parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gaftrader import neural
from gaftrader.neural import Network, NumericsError
from gaftrader.patterns import N_CLASSES, PatternClass

logger = logging.getLogger(__name__)


class CorpusError(ValueError):
    """Corpus unusable for training (missing class, too small)."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class ClassifierConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.2
    patience: int = 5
    max_grad_norm: float = 5.0


@dataclass
class ClassifierModel:
    """Trained network plus the input contract it was trained for."""

    network: Network
    window: int
    n_classes: int = N_CLASSES
    metadata: dict = field(default_factory=dict)

    def predict_batch(self, tensors: np.ndarray) -> np.ndarray:
        return predict_batch(self, tensors)


def build_network(window: int, rng: np.random.Generator, n_channels: int = 4,
                  n_classes: int = N_CLASSES) -> Network:
    after_conv = window - 4  # two valid 3x3 convolutions
    if after_conv < 2 or after_conv % 2:
        raise ValueError(f"window {window} incompatible with the fixed architecture")
    flat = (after_conv // 2) ** 2 * 32
    return Network([
        neural.Conv2d(n_channels, 16, 3, rng),
        neural.Relu(),
        neural.Conv2d(16, 32, 3, rng),
        neural.Relu(),
        neural.MaxPool2x2(),
        neural.Flatten(),
        neural.Dense(flat, 64, rng),
        neural.Relu(),
        neural.Dense(64, n_classes, rng),
    ])


def _stratified_split(labels: np.ndarray, val_fraction: float,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    train_idx, val_idx = [], []
    for cls in range(N_CLASSES):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 2:
            raise CorpusError(
                f"class {PatternClass(cls).name} has {idx.size} example(s); need at least 2"
            )
        idx = rng.permutation(idx)
        n_val = max(1, int(round(val_fraction * idx.size)))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return np.concatenate(train_idx), np.concatenate(val_idx)


def _accuracy(network: Network, tensors: np.ndarray, labels: np.ndarray) -> float:
    preds = _predict_logits(network, tensors).argmax(axis=1)
    return float((preds == labels).mean())


def _per_class_accuracy(network: Network, tensors: np.ndarray,
                        labels: np.ndarray) -> dict[str, float]:
    preds = _predict_logits(network, tensors).argmax(axis=1)
    table = {}
    for cls in PatternClass:
        mask = labels == int(cls)
        if mask.any():
            table[cls.name.lower()] = float((preds[mask] == int(cls)).mean())
    return table


def _predict_logits(network: Network, tensors: np.ndarray, chunk: int = 512) -> np.ndarray:
    outs = []
    for start in range(0, tensors.shape[0], chunk):
        y, _ = network.forward(tensors[start : start + chunk])
        outs.append(y)
    return np.concatenate(outs, axis=0)


def train_classifier(
    tensors: np.ndarray,
    labels: np.ndarray,
    config: ClassifierConfig | None = None,
    extra_meta: dict | None = None,
) -> ClassifierModel:
    """Train the CNN on encoded windows and return the best checkpoint.

    ``tensors`` is (N, W, W, 4), ``labels`` integer class codes. Raises
    :class:`CorpusError` when a class is missing and :class:`TrainingDiverged`
    (with the epoch index) when the loss leaves the finite range.
    """
    config = config or ClassifierConfig()
    tensors = np.asarray(tensors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if tensors.ndim != 4 or tensors.shape[0] != labels.shape[0]:
        raise ValueError(f"corpus shape mismatch: {tensors.shape} vs {labels.shape}")
    window = tensors.shape[1]

    rng = np.random.default_rng(config.seed)
    network = build_network(window, rng)
    train_idx, val_idx = _stratified_split(labels, config.val_fraction, rng)
    x_train, y_train = tensors[train_idx], labels[train_idx]
    x_val, y_val = tensors[val_idx], labels[val_idx]

    optimizer = neural.Adam(network.params(), learning_rate=config.learning_rate)
    best_state = network.state()
    best_val = -1.0
    best_epoch = 0
    stale = 0
    epochs_run = 0
    for epoch in range(config.epochs):
        epochs_run = epoch + 1
        order = rng.permutation(x_train.shape[0])
        epoch_loss = 0.0
        for start in range(0, order.size, config.batch_size):
            batch = order[start : start + config.batch_size]
            logits, caches = network.forward(x_train[batch])
            loss, dlogits = neural.softmax_cross_entropy_batch(logits, y_train[batch])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            epoch_loss += loss * batch.size
            _, grads = network.backward(caches, dlogits)
            neural.clip_grads_(grads, config.max_grad_norm)
            try:
                optimizer.step(grads)
            except NumericsError as exc:
                raise TrainingDiverged(f"{exc} at epoch {epoch}") from exc
        val_acc = _accuracy(network, x_val, y_val)
        logger.info("epoch %d: loss %.4f, val accuracy %.4f",
                    epoch, epoch_loss / order.size, val_acc)
        if val_acc > best_val:
            best_val = val_acc
            best_state = network.state()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("early stop at epoch %d (no improvement since %d)",
                            epoch, best_epoch)
                break

    network.load_state(best_state)
    metadata = {
        "seed": config.seed,
        "epochs_run": epochs_run,
        "best_epoch": best_epoch,
        "train_accuracy": _accuracy(network, x_train, y_train),
        "val_accuracy": best_val,
        "per_class_accuracy": _per_class_accuracy(network, x_val, y_val),
        "corpus_size": int(tensors.shape[0]),
    }
    if extra_meta:
        metadata.update(extra_meta)
    return ClassifierModel(network=network, window=window, metadata=metadata)


def predict_distribution(model: ClassifierModel, tensor: np.ndarray) -> np.ndarray:
    """Probability vector over the pattern classes for one encoded window."""
    tensor = np.asarray(tensor, dtype=np.float64)
    expected = (model.window, model.window, 4)
    if tensor.shape != expected:
        raise neural.ShapeError(f"expected tensor of shape {expected}, got {tensor.shape}")
    return predict_batch(model, tensor[None])[0]


def predict_batch(model: ClassifierModel, tensors: np.ndarray) -> np.ndarray:
    tensors = np.asarray(tensors, dtype=np.float64)
    expected = (model.window, model.window, 4)
    if tensors.ndim != 4 or tensors.shape[1:] != expected:
        raise neural.ShapeError(f"expected (N, {expected[0]}, {expected[1]}, 4), got {tensors.shape}")
    return neural.softmax(_predict_logits(model.network, tensors))


def save_classifier(model: ClassifierModel, path: str | Path) -> None:
    """Write the checkpoint plus a human-readable metadata sidecar."""
    meta = {"window": model.window, "n_classes": model.n_classes,
            "metadata": model.metadata}
    neural.save_network(path, model.network, extra_meta=meta)
    sidecar = Path(f"{path}.meta.txt")
    lines = [f"window={model.window}", f"n_classes={model.n_classes}"]
    for key in ("seed", "epochs_run", "train_accuracy", "val_accuracy",
                "corpus_size", "corpus_sha256"):
        if key in model.metadata:
            lines.append(f"{key}={model.metadata[key]}")
    for name, acc in model.metadata.get("per_class_accuracy", {}).items():
        lines.append(f"accuracy_{name}={acc}")
    sidecar.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_classifier(path: str | Path) -> ClassifierModel:
    network, extra = neural.load_network(path)
    return ClassifierModel(
        network=network,
        window=int(extra["window"]),
        n_classes=int(extra["n_classes"]),
        metadata=extra.get("metadata", {}),
    )
