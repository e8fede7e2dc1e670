"""Re-label distillation: explain one teacher prediction with a linear student.

Pipeline for an anchor image ``x`` with teacher class ``c``:

1. decode ``n`` latent perturbations of ``x`` with the VAE;
2. label each sample 1 if the teacher still predicts ``c`` and 0 otherwise,
   and keep the teacher's probability of ``c`` as a two-class soft target;
3. fit ``p1(x') = sigmoid(w . x' + b)`` by minimising
   ``sum_i l1 * ||[p1, 1 - p1] - soft_i||_2 + l2 * |p1 - y_i|``;
4. read the saliency map off ``w``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import teacher as T
from .dataio import ModelArchive
from .numkit import DTYPE, Rng, ShapeError, TrainingError, sigmoid
from .vae import VaeModel, sample_neighborhood

log = logging.getLogger(__name__)

NORM_SMOOTHING = 1e-12
# raw maps whose spread is below this are treated as flat
FLAT_TOLERANCE = 1e-8


@dataclass
class ExplainConfig:
    n_samples: int = 1000
    tau: float = 1.0
    lambda1: float = 0.7
    lambda2: float = 0.3
    lr: float = 1.0
    epochs: int = 1000
    min_class_fraction: float = 0.05
    widen_factor: float = 1.5
    max_retries: int = 5

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")


@dataclass
class Neighborhood:
    anchor: np.ndarray
    anchor_class: int
    samples: np.ndarray  # (n, H, W, C)
    soft_targets: np.ndarray  # (n, 2)
    hard_labels: np.ndarray  # (n,) in {0, 1}
    tau_used: float = float("nan")
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def flat(self) -> np.ndarray:
        return self.samples.reshape(len(self.samples), -1)

    def class_counts(self) -> tuple[int, int]:
        """(samples keeping the anchor class, samples that shifted)."""
        kept = int(self.hard_labels.sum())
        return kept, len(self.hard_labels) - kept


@dataclass
class LinearStudent:
    w: np.ndarray
    b: float
    final_loss: float = float("nan")
    relabel_accuracy: float = float("nan")

    def probability(self, x) -> np.ndarray:
        xf = np.asarray(x, dtype=np.float64).reshape(-1, self.w.size)
        p = sigmoid(xf @ self.w.astype(np.float64) + self.b)
        x = np.asarray(x)
        return p[0] if x.size == self.w.size and x.ndim in (1, 3) else p

    def to_archive(self) -> ModelArchive:
        return ModelArchive({"s.w": self.w.astype(DTYPE), "s.b": np.array([self.b], DTYPE)})

    @classmethod
    def from_archive(cls, archive: ModelArchive) -> "LinearStudent":
        return cls(archive["s.w"].reshape(-1).copy(), float(archive["s.b"][0]))


@dataclass
class SaliencyMap:
    raw: np.ndarray  # (H, W), signed
    normalized: np.ndarray  # (H, W) in [0, 1]
    ordering: np.ndarray  # flat pixel indices, most salient first

    @classmethod
    def from_raw(cls, raw) -> "SaliencyMap":
        raw = np.asarray(raw, dtype=np.float64)
        lo, hi = raw.min(), raw.max()
        if hi - lo > FLAT_TOLERANCE:
            normalized = (raw - lo) / (hi - lo)
        else:
            normalized = np.full_like(raw, 0.5)
        ordering = np.argsort(-raw.reshape(-1), kind="stable")
        return cls(raw.astype(DTYPE), normalized.astype(DTYPE), ordering)

    @classmethod
    def from_weights(cls, w, image_shape) -> "SaliencyMap":
        """Per-pixel signed sum of the student weights over channels."""
        h, wd, c = image_shape
        return cls.from_raw(np.asarray(w, dtype=np.float64).reshape(h, wd, c).sum(axis=-1))


def collapse_soft_target(proba, anchor_class: int) -> np.ndarray:
    """Map a K-class distribution to ``[p_anchor, 1 - p_anchor]``.

    Accepts one vector or an (n, K) batch.
    """
    proba = np.asarray(proba, dtype=np.float64)
    if not 0 <= anchor_class < proba.shape[-1]:
        raise ValueError(f"anchor class {anchor_class} outside [0, {proba.shape[-1]})")
    p = proba[..., anchor_class]
    return np.stack([p, 1.0 - p], axis=-1)


def relabel(teacher: T.TeacherModel, anchor, samples) -> Neighborhood:
    samples = np.asarray(samples)
    if len(samples) == 0:
        raise ValueError("relabel needs at least one sample")
    anchor_class = int(T.predict(teacher, anchor))
    flat = samples.reshape(len(samples), -1)
    hard = (T.predict(teacher, flat) == anchor_class).astype(np.int64)
    soft = collapse_soft_target(T.predict_proba(teacher, flat), anchor_class)
    return Neighborhood(np.asarray(anchor), anchor_class, samples, soft, hard)


def _loss_and_grads(w, b, x, soft, hard, lambda1, lambda2, centered=False):
    p = sigmoid(x @ w + b)
    d0 = p - soft[:, 0]
    d1 = (1.0 - p) - soft[:, 1]
    norm = np.sqrt(d0 * d0 + d1 * d1 + NORM_SMOOTHING)
    gap = p - hard
    loss = float(np.sum(lambda1 * norm + lambda2 * np.abs(gap)))
    d_p = lambda1 * (d0 - d1) / norm + lambda2 * np.sign(gap)
    d_z = d_p * p * (1.0 - p)
    # with centred inputs, x.T @ mean(d_z) vanishes analytically; dropping it
    # keeps roundoff from breaking the symmetry of a constant-target problem
    d_w = x.T @ (d_z - d_z.mean()) if centered else x.T @ d_z
    return loss, d_w, float(d_z.sum())


def distill_loss(student: LinearStudent, neighborhood: Neighborhood, lambda1=0.7, lambda2=0.3):
    """Re-label distillation loss summed over the neighbourhood.

    Returns ``(loss, {"w": dL/dw, "b": dL/db})``.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("lambda1 and lambda2 must be non-negative")
    x = neighborhood.flat.astype(np.float64)
    w = np.asarray(student.w, dtype=np.float64)
    if w.shape != (x.shape[1],):
        raise ShapeError(f"student has {w.size} weights for {x.shape[1]} pixels")
    loss, gw, gb = _loss_and_grads(
        w, float(student.b), x,
        neighborhood.soft_targets.astype(np.float64),
        neighborhood.hard_labels.astype(np.float64),
        lambda1, lambda2,
    )
    return loss, {"w": gw, "b": gb}


def train_student(neighborhood: Neighborhood, config: ExplainConfig | None = None, rng: Rng | None = None) -> LinearStudent:
    """Full-batch gradient descent from zero weights.

    Inputs are centred on the neighbourhood mean while training and the
    offset is folded into the bias afterwards, so the returned student is an
    ordinary ``sigmoid(w . x + b)`` model.  Steps follow the mean gradient.
    ``rng`` is accepted for interface symmetry; training draws no randomness.
    """
    config = config or ExplainConfig()
    if len(neighborhood) < 2:
        raise ValueError("student training needs at least two samples")
    x = neighborhood.flat.astype(np.float64)
    n, d = x.shape
    center = x.mean(axis=0)
    xc = x - center
    soft = neighborhood.soft_targets.astype(np.float64)
    hard = neighborhood.hard_labels.astype(np.float64)
    w = np.zeros(d)
    b = 0.0
    for epoch in range(config.epochs):
        loss, gw, gb = _loss_and_grads(w, b, xc, soft, hard, config.lambda1, config.lambda2, centered=True)
        if not math.isfinite(loss):
            raise TrainingError(f"student loss diverged in epoch {epoch + 1}")
        w -= config.lr * gw / n
        b -= config.lr * gb / n
    b -= float(center @ w)
    student = LinearStudent(w.astype(DTYPE), b)
    student.final_loss, _ = distill_loss(student, neighborhood, config.lambda1, config.lambda2)
    pred = (student.probability(x) > 0.5).astype(np.int64)
    student.relabel_accuracy = float(np.mean(pred == neighborhood.hard_labels))
    return student


def explain(teacher: T.TeacherModel, vae: VaeModel, anchor, config: ExplainConfig | None = None, rng: Rng | None = None):
    """Explain ``teacher``'s prediction on ``anchor``.

    Returns ``(student, saliency, neighborhood)``.  When either re-label class
    holds less than ``min_class_fraction`` of the samples the perturbation
    scale is widened and the neighbourhood redrawn; after ``max_retries`` the
    last neighbourhood is used and a warning is recorded on it.
    """
    config = config or ExplainConfig()
    if rng is None:
        raise ValueError("explain needs an explicit Rng")
    anchor = np.asarray(anchor, dtype=DTYPE)
    tau = config.tau
    for attempt in range(config.max_retries + 1):
        samples = sample_neighborhood(vae, anchor, config.n_samples, tau, rng)
        nb = relabel(teacher, anchor, samples)
        nb.tau_used = tau
        minority = min(nb.class_counts()) / len(nb)
        if minority >= config.min_class_fraction:
            break
        if attempt == config.max_retries:
            msg = (
                f"degenerate neighbourhood: minority class fraction {minority:.4f} "
                f"after {config.max_retries} widenings (tau={tau:.4g})"
            )
            nb.warnings.append(msg)
            log.warning(msg)
        else:
            tau *= config.widen_factor
    student = train_student(nb, config, rng)
    saliency = SaliencyMap.from_weights(student.w, vae.image_shape)
    return student, saliency, nb


def summary_text(nb: Neighborhood, student: LinearStudent) -> str:
    kept, shifted = nb.class_counts()
    lines = [
        f"anchor_class {nb.anchor_class}",
        f"samples {len(nb)}",
        f"count_label1 {kept}",
        f"count_label0 {shifted}",
        f"tau_used {nb.tau_used:.6f}",
        f"student_relabel_accuracy {student.relabel_accuracy:.6f}",
        f"student_final_loss {student.final_loss:.6f}",
    ]
    lines += [f"warning {w}" for w in nb.warnings]
    return "\n".join(lines) + "\n"
