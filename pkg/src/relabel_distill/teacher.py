"""The classifier being explained: a one-hidden-layer ReLU MLP.

After training the model is treated as a black box; the explainer only calls
:func:`predict` and :func:`predict_proba`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataio import ImageDataset, ModelArchive
from .numkit import (
    DTYPE,
    Rng,
    ShapeError,
    TrainingError,
    UsageError,
    rng_normal,
    sgd_step,
    softmax,
    softmax_cross_entropy,
)

log = logging.getLogger(__name__)

PARAM_NAMES = ("t.w1", "t.b1", "t.w2", "t.b2")


@dataclass
class TeacherConfig:
    hidden: int = 128
    lr: float = 0.2
    batch_size: int = 64
    epochs: int = 60


@dataclass
class TeacherModel:
    params: dict[str, np.ndarray]
    epochs: int = 0
    train_accuracy: float = float("nan")

    @property
    def input_dim(self) -> int:
        return self.params["t.w1"].shape[0]

    @property
    def k(self) -> int:
        return self.params["t.b2"].shape[0]

    def to_archive(self) -> ModelArchive:
        sections = {name: self.params[name] for name in PARAM_NAMES}
        acc = self.train_accuracy if math.isfinite(self.train_accuracy) else -1.0
        sections["t.meta"] = np.array([self.epochs, acc], dtype=DTYPE)
        return ModelArchive(sections)

    @classmethod
    def from_archive(cls, archive: ModelArchive) -> "TeacherModel":
        missing = [n for n in PARAM_NAMES if n not in archive]
        if missing:
            raise UsageError(f"archive lacks teacher sections {missing}")
        model = cls({n: archive[n].copy() for n in PARAM_NAMES})
        if "t.meta" in archive:
            epochs, acc = archive["t.meta"].tolist()
            model.epochs = int(epochs)
            model.train_accuracy = acc if acc >= 0 else float("nan")
        return model


def init_teacher(input_dim: int, k: int, config: TeacherConfig, rng: Rng) -> TeacherModel:
    if k < 2:
        raise ValueError("teacher needs at least two classes")
    h = config.hidden
    params = {
        "t.w1": rng_normal(rng, (input_dim, h)) * np.float32(math.sqrt(2.0 / input_dim)),
        "t.b1": np.zeros(h, DTYPE),
        "t.w2": rng_normal(rng, (h, k)) * np.float32(1.0 / math.sqrt(h)),
        "t.b2": np.zeros(k, DTYPE),
    }
    return TeacherModel(params)


def _flatten(model: TeacherModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    d = model.input_dim
    if x.size == 0 or x.size % d:
        raise ShapeError(f"input of shape {x.shape} does not flatten to {d} features")
    return x.reshape(-1, d)


def _forward(p, xf):
    a = xf @ p["t.w1"] + p["t.b1"]
    h = np.maximum(a, 0.0)
    return a, h, h @ p["t.w2"] + p["t.b2"]


def logits(model: TeacherModel, x) -> np.ndarray:
    """Logits for one input (shape (K,)) or a batch (shape (N, K))."""
    x = np.asarray(x)
    # a flat vector or one (H, W, C) image; (1, D) stays a batch
    single = x.size == model.input_dim and x.ndim in (1, 3)
    p = {k: np.asarray(v, dtype=np.float64) for k, v in model.params.items()}
    out = _forward(p, _flatten(model, x))[2]
    return out[0] if single else out


def predict(model: TeacherModel, x):
    """Argmax class; ties resolve to the lowest index (``np.argmax`` semantics)."""
    return np.argmax(logits(model, x), axis=-1)


def predict_proba(model: TeacherModel, x) -> np.ndarray:
    return softmax(logits(model, x).astype(np.float64), axis=-1)


def cross_entropy_loss(model: TeacherModel, x, labels):
    """Summed softmax cross-entropy over the batch and its parameter gradients."""
    p = {k: np.asarray(v, dtype=np.float64) for k, v in model.params.items()}
    xf = _flatten(model, x)
    a, h, out = _forward(p, xf)
    loss, d_out = softmax_cross_entropy(out, np.asarray(labels).reshape(-1))
    d_h = (d_out @ p["t.w2"].T) * (a > 0)
    grads = {
        "t.w2": h.T @ d_out,
        "t.b2": d_out.sum(0),
        "t.w1": xf.T @ d_h,
        "t.b1": d_h.sum(0),
    }
    return loss, grads


def accuracy(model: TeacherModel, dataset: ImageDataset) -> float:
    return float(np.mean(predict(model, dataset.flat) == dataset.labels))


def train_teacher(dataset: ImageDataset, config: TeacherConfig, rng: Rng, verbose=None) -> TeacherModel:
    model = init_teacher(dataset.flat.shape[1], dataset.k, config, rng)
    data, labels = dataset.flat, dataset.labels
    n = len(data)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = cross_entropy_loss(model, data[idx], labels[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"teacher loss diverged in epoch {epoch}")
            total += loss
            for name, grad in grads.items():
                model.params[name] = sgd_step(model.params[name], grad / len(idx), config.lr)
        model.epochs = epoch
        log.info("teacher epoch %d loss %.6f", epoch, total / n)
        if verbose is not None:
            verbose(epoch, total / n)
    if config.epochs > 0:
        model.train_accuracy = accuracy(model, dataset)
    return model
