"""Fully connected VAE used as the neighbourhood generator.

Encoder: ``x -> tanh(x W1 + b1) -> (mu, logvar)``; decoder:
``z -> tanh(z V1 + c1) -> sigmoid(. V2 + c2)``.  Gradients are written out by
hand; :func:`elbo_loss` returns the summed loss of a batch with its gradients.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import ImageDataset, ModelArchive
from .numkit import (
    DTYPE,
    Rng,
    ShapeError,
    TrainingError,
    UsageError,
    bce_with_logits,
    rng_normal,
    sgd_step,
    sigmoid,
)

log = logging.getLogger(__name__)

LOGVAR_CLAMP = 10.0
PARAM_NAMES = (
    "enc.w1", "enc.b1", "enc.mu.w", "enc.mu.b", "enc.lv.w", "enc.lv.b",
    "dec.w1", "dec.b1", "dec.w2", "dec.b2",
)


@dataclass
class VaeConfig:
    latent_dim: int = 16
    enc_hidden: int = 128
    dec_hidden: int = 128
    lr: float = 1e-2
    batch_size: int = 64
    epochs: int = 100


@dataclass
class LatentStats:
    mu: np.ndarray
    logvar: np.ndarray


@dataclass
class VaeModel:
    params: dict[str, np.ndarray]
    image_shape: tuple[int, int, int]
    epochs: int = 0
    loss_history: list[float] = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.params["enc.mu.b"].shape[0]

    @property
    def input_dim(self) -> int:
        return self.params["enc.w1"].shape[0]

    @property
    def trained(self) -> bool:
        return self.epochs > 0

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else float("nan")

    def to_archive(self) -> ModelArchive:
        sections = {name: self.params[name] for name in PARAM_NAMES}
        sections["vae.meta"] = np.array(
            [*self.image_shape, self.epochs, self.final_loss if self.loss_history else 0.0],
            dtype=DTYPE,
        )
        return ModelArchive(sections)

    @classmethod
    def from_archive(cls, archive: ModelArchive) -> "VaeModel":
        missing = [n for n in PARAM_NAMES if n not in archive]
        if missing:
            raise UsageError(f"archive lacks VAE sections {missing}")
        params = {n: archive[n].copy() for n in PARAM_NAMES}
        if "vae.meta" in archive:
            h, w, c, epochs, loss = archive["vae.meta"].tolist()
            shape = (int(h), int(w), int(c))
            history = [float(loss)] if epochs else []
        else:
            side = int(math.isqrt(params["enc.w1"].shape[0]))
            shape, epochs, history = (side, side, 1), 1, []
        return cls(params, shape, int(epochs), history)


def init_vae(image_shape, config: VaeConfig, rng: Rng) -> VaeModel:
    d = math.prod(image_shape)
    he, hd, L = config.enc_hidden, config.dec_hidden, config.latent_dim

    def dense(fan_in, fan_out):
        return rng_normal(rng, (fan_in, fan_out)) * np.float32(1.0 / math.sqrt(fan_in))

    params = {
        "enc.w1": dense(d, he),
        "enc.b1": np.zeros(he, DTYPE),
        "enc.mu.w": dense(he, L),
        "enc.mu.b": np.zeros(L, DTYPE),
        "enc.lv.w": dense(he, L) * np.float32(0.1),
        "enc.lv.b": np.zeros(L, DTYPE),
        "dec.w1": dense(L, hd),
        "dec.b1": np.zeros(hd, DTYPE),
        "dec.w2": dense(hd, d),
        "dec.b2": np.zeros(d, DTYPE),
    }
    return VaeModel(params, tuple(image_shape))


def _flatten(model: VaeModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    d = model.input_dim
    if x.size == 0 or x.size % d:
        raise ShapeError(f"image of shape {x.shape} does not flatten to {d} pixels")
    return x.reshape(-1, d)


def _encode_flat(p, xf):
    a1 = xf @ p["enc.w1"] + p["enc.b1"]
    h = np.tanh(a1)
    mu = h @ p["enc.mu.w"] + p["enc.mu.b"]
    lv_raw = h @ p["enc.lv.w"] + p["enc.lv.b"]
    return h, mu, lv_raw, np.clip(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)


def _decode_logits(p, z):
    g = np.tanh(z @ p["dec.w1"] + p["dec.b1"])
    return g, g @ p["dec.w2"] + p["dec.b2"]


def encode(model: VaeModel, x) -> LatentStats:
    """Posterior statistics for one image (or a batch, rows first)."""
    x = np.asarray(x)
    single = x.size == model.input_dim and x.ndim in (1, 3)
    xf = _flatten(model, x)
    _, mu, _, lv = _encode_flat(_as64(model.params), xf)
    if single:
        mu, lv = mu[0], lv[0]
    return LatentStats(mu.astype(DTYPE), lv.astype(DTYPE))


def reparameterize(stats: LatentStats, eps, tau: float = 1.0) -> np.ndarray:
    """z = mu + tau * eps * exp(logvar / 2); eps may carry a leading batch axis."""
    eps = np.asarray(eps, dtype=np.float64)
    mu = np.asarray(stats.mu, dtype=np.float64)
    if eps.shape[-1] != mu.shape[-1]:
        raise ShapeError(f"noise length {eps.shape[-1]} != latent length {mu.shape[-1]}")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    std = np.exp(0.5 * np.asarray(stats.logvar, dtype=np.float64))
    return (mu + tau * eps * std).astype(DTYPE)


def decode(model: VaeModel, z) -> np.ndarray:
    """Decode a latent vector (or an (n, L) batch) into image(s) in (0, 1)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.latent_dim:
        raise ShapeError(f"latent length {z.shape[-1]} != {model.latent_dim}")
    _, logits = _decode_logits(_as64(model.params), z.reshape(-1, model.latent_dim))
    out = sigmoid(logits).astype(DTYPE)
    if z.ndim == 1:
        return out.reshape(model.image_shape)
    return out.reshape(z.shape[0], *model.image_shape)


def _as64(params):
    return {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}


def elbo_loss(model: VaeModel, x, eps):
    """Negative ELBO summed over the batch, and its gradients.

    ``x`` is one image or a batch; ``eps`` has one length-L row per image.
    Reconstruction is pixelwise binary cross-entropy; the KL term is the
    closed form against N(0, I).  Returns ``(loss, grads)`` with grads keyed
    like ``model.params``.
    """
    p = _as64(model.params)
    xf = _flatten(model, x)
    eps = np.asarray(eps, dtype=np.float64).reshape(-1, model.latent_dim)
    if eps.shape[0] != xf.shape[0]:
        raise ShapeError(f"{eps.shape[0]} noise rows for {xf.shape[0]} images")

    h, mu, lv_raw, lv = _encode_flat(p, xf)
    std = np.exp(0.5 * lv)
    z = mu + eps * std
    g, logits = _decode_logits(p, z)
    rec, d_logits = bce_with_logits(logits, xf)
    kl = 0.5 * np.sum(np.exp(lv) + mu * mu - 1.0 - lv)
    loss = rec + float(kl)

    grads = {}
    grads["dec.w2"] = g.T @ d_logits
    grads["dec.b2"] = d_logits.sum(0)
    d_a2 = (d_logits @ p["dec.w2"].T) * (1.0 - g * g)
    grads["dec.w1"] = z.T @ d_a2
    grads["dec.b1"] = d_a2.sum(0)
    d_z = d_a2 @ p["dec.w1"].T

    d_mu = d_z + mu
    d_lv = d_z * eps * 0.5 * std + 0.5 * (np.exp(lv) - 1.0)
    d_lv = d_lv * (np.abs(lv_raw) <= LOGVAR_CLAMP)
    grads["enc.mu.w"] = h.T @ d_mu
    grads["enc.mu.b"] = d_mu.sum(0)
    grads["enc.lv.w"] = h.T @ d_lv
    grads["enc.lv.b"] = d_lv.sum(0)
    d_a1 = (d_mu @ p["enc.mu.w"].T + d_lv @ p["enc.lv.w"].T) * (1.0 - h * h)
    grads["enc.w1"] = xf.T @ d_a1
    grads["enc.b1"] = d_a1.sum(0)
    return loss, grads


def train_vae(dataset: ImageDataset, config: VaeConfig, rng: Rng, verbose=None) -> VaeModel:
    """Minibatch SGD on the negative ELBO, stepping along the batch-mean gradient.

    ``verbose`` is an optional callable receiving ``(epoch, mean_loss)``.
    """
    model = init_vae(dataset.image_shape, config, rng)
    data = dataset.flat
    n = len(data)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            eps = rng_normal(rng, (len(idx), config.latent_dim))
            loss, grads = elbo_loss(model, data[idx], eps)
            if not math.isfinite(loss):
                raise TrainingError(f"VAE loss diverged in epoch {epoch}")
            total += loss
            for name, grad in grads.items():
                model.params[name] = sgd_step(model.params[name], grad / len(idx), config.lr)
        mean = total / n
        model.loss_history.append(mean)
        model.epochs = epoch
        log.info("vae epoch %d loss %.6f", epoch, mean)
        if verbose is not None:
            verbose(epoch, mean)
    return model


def sample_neighborhood(model: VaeModel, x, n: int = 1000, tau: float = 1.0, rng: Rng | None = None) -> np.ndarray:
    """Decode ``n`` latent perturbations of ``x``; returns (n, H, W, C)."""
    if not model.trained:
        raise UsageError("sample_neighborhood needs a trained VAE")
    if n < 2:
        raise ValueError("neighbourhood needs at least two samples")
    if rng is None:
        raise UsageError("sample_neighborhood needs an explicit Rng")
    stats = encode(model, x)
    eps = rng_normal(rng, (n, model.latent_dim))
    return decode(model, reparameterize(stats, eps, tau))
