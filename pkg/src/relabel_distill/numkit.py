"""Small deterministic dense-math kernel.

Tensors are plain ``numpy.ndarray`` objects with ``float32`` storage.  Loss and
dot-product accumulations are done in ``float64`` and cast back on return.

Randomness comes exclusively from :class:`Rng`, a xoshiro256++ generator whose
256-bit state is filled from a splitmix64 expansion of a 64-bit seed.  Normal
deviates use the Box-Muller transform.
"""
from __future__ import annotations

import math

import numpy as np

DTYPE = np.float32

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible."""


class TrainingError(RuntimeError):
    """Raised when a loss turns non-finite during training."""


class UsageError(RuntimeError):
    """Raised when a model is used in a state that does not support the call."""


def tensor(data, shape=None) -> np.ndarray:
    """Build a contiguous float32 tensor, optionally reshaped."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what}: shape {np.shape(a)} does not match {np.shape(b)}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out = np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)
    return out.astype(np.result_type(a.dtype, b.dtype, DTYPE), copy=False)


def sigmoid(x):
    """Elementwise logistic function, stable for large |x|."""
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out.astype(np.result_type(x.dtype, DTYPE), copy=False)


def softplus(x):
    """log(1 + e^x) without overflow."""
    x = np.asarray(x)
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def softmax(logits, axis: int = -1):
    logits = np.asarray(logits)
    if logits.shape[axis] < 1:
        raise ShapeError("softmax needs at least one logit")
    z = logits.astype(np.float64) - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return out.astype(np.result_type(logits.dtype, DTYPE), copy=False)


def softmax_cross_entropy(logits, labels):
    """Summed cross-entropy of integer ``labels`` under softmax ``logits``.

    Returns ``(loss, dloss/dlogits)``; logits are (N, K).
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} incompatible with labels {labels.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(labels))
    loss = float(np.sum(logsum - z[rows, labels]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad


def bce_with_logits(logits, targets):
    """Summed binary cross-entropy of sigmoid(logits) against targets in [0,1].

    Returns ``(loss, dloss/dlogits)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    check_same_shape(logits, targets, "bce")
    loss = float(np.sum(softplus(logits) - targets * logits))
    return loss, sigmoid(logits) - targets


def kl_diag_gaussian_to_standard(mu, logvar) -> float:
    """KL( N(mu, diag(exp(logvar))) || N(0, I) )."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    check_same_shape(mu, logvar, "kl")
    return float(0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar))


def sgd_step(params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    """Return ``params - lr * grads`` as a new array of the params' dtype."""
    check_same_shape(params, grads, "sgd_step")
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    return (params - lr * np.asarray(grads, dtype=np.float64)).astype(params.dtype)


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + _GOLDEN_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class Rng:
    """xoshiro256++ seeded through splitmix64.

    ``Rng(seed, stream)`` fills the state with splitmix64 outputs number
    ``4*stream + 1 .. 4*stream + 4`` of the sequence started at ``seed``.
    Distinct streams of one seed therefore start from distinct states.
    """

    def __init__(self, seed: int = 0, stream: int = 0):
        if stream < 0:
            raise ValueError("stream id must be non-negative")
        sm = (seed + 4 * stream * _GOLDEN_GAMMA) & _MASK64
        words = []
        for _ in range(4):
            sm, out = _splitmix64(sm)
            words.append(out)
        if not any(words):
            words[0] = 1
        self._s = words
        self.seed = seed
        self.stream = stream

    def derive(self, stream: int) -> "Rng":
        """Independent generator for ``(self.seed, stream)``."""
        return Rng(self.seed, stream)

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def next_u64(self) -> int:
        return self.next_u64s(1)[0]

    def next_u64s(self, n: int) -> list[int]:
        s0, s1, s2, s3 = self._s
        m = _MASK64
        out = [0] * n
        for i in range(n):
            t = (s0 + s3) & m
            out[i] = ((((t << 23) | (t >> 41)) & m) + s0) & m
            t = (s1 << 17) & m
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & m
        self._s = [s0, s1, s2, s3]
        return out

    def uniform(self, n: int) -> np.ndarray:
        """``n`` float64 uniforms in [0, 1) from the top 53 bits."""
        bits = np.array(self.next_u64s(n), dtype=np.uint64) >> np.uint64(11)
        return bits.astype(np.float64) * (1.0 / (1 << 53))

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection on the top bits."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        bits = max(1, (bound - 1).bit_length())
        while True:
            r = self.next_u64() >> (64 - bits)
            if r < bound:
                return r

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.array(perm, dtype=np.int64)


def rng_normal(rng: Rng, shape) -> np.ndarray:
    """Standard normal tensor via Box-Muller; two deviates per pair of draws."""
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    n = math.prod(shape)
    pairs = (n + 1) // 2
    u = rng.uniform(2 * pairs)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:n].astype(DTYPE).reshape(shape)
