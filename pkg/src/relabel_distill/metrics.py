"""Deletion / insertion faithfulness curves and the comparison baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import teacher as T
from .explain import SaliencyMap
from .numkit import Rng


@dataclass
class PerturbationCurve:
    points: list[tuple[float, float]]
    auc: float

    @property
    def fractions(self) -> np.ndarray:
        return np.array([f for f, _ in self.points])

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.points])


def auc_trapezoid(points) -> float:
    """Trapezoidal area under (fraction, value) points, fractions increasing."""
    if len(points) < 2:
        raise ValueError("AUC needs at least two points")
    xs = np.array([p[0] for p in points], dtype=np.float64)
    ys = np.array([p[1] for p in points], dtype=np.float64)
    if np.any(np.diff(xs) <= 0):
        raise ValueError("AUC needs strictly increasing fractions")
    span = xs[-1] - xs[0]
    return float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2.0) / span)


def curve_fractions(step_fraction: float) -> list[float]:
    if not 0 < step_fraction <= 1:
        raise ValueError(f"step_fraction must be in (0, 1], got {step_fraction}")
    steps = math.ceil(1.0 / step_fraction - 1e-9)
    return [min(1.0, t * step_fraction) for t in range(steps)] + [1.0]


def _check_ordering(ordering, n_pixels: int) -> np.ndarray:
    ordering = np.asarray(ordering, dtype=np.int64).reshape(-1)
    if ordering.size != n_pixels or not np.array_equal(np.sort(ordering), np.arange(n_pixels)):
        raise ValueError(f"ordering is not a permutation of {n_pixels} pixel indices")
    return ordering


def _perturbation_curve(teacher, anchor, ordering, step_fraction, baseline_value, insert: bool):
    anchor = np.asarray(anchor, dtype=np.float64)
    h, w, c = anchor.shape
    n_pix = h * w
    ordering = _check_ordering(ordering, n_pix)
    anchor_class = int(T.predict(teacher, anchor))
    fractions = curve_fractions(step_fraction)

    clean = anchor.reshape(n_pix, c)
    base = np.full_like(clean, baseline_value)
    batch = np.empty((len(fractions), n_pix, c))
    for t, frac in enumerate(fractions):
        k = int(math.floor(frac * n_pix + 0.5))
        chosen = ordering[:k]
        if insert:
            img = base.copy()
            img[chosen] = clean[chosen]
        else:
            img = clean.copy()
            img[chosen] = baseline_value
        batch[t] = img
    probs = T.predict_proba(teacher, batch.reshape(len(fractions), -1))[:, anchor_class]
    points = [(float(f), float(p)) for f, p in zip(fractions, probs)]
    return PerturbationCurve(points, auc_trapezoid(points))


def deletion_curve(teacher, anchor, ordering, step_fraction=0.02, baseline_value=0.0) -> PerturbationCurve:
    """Probability of the anchor class as pixels are replaced, most salient first."""
    return _perturbation_curve(teacher, anchor, ordering, step_fraction, baseline_value, insert=False)


def insertion_curve(teacher, anchor, ordering, step_fraction=0.02, baseline_value=0.0) -> PerturbationCurve:
    """Probability of the anchor class as pixels are revealed on a baseline image."""
    return _perturbation_curve(teacher, anchor, ordering, step_fraction, baseline_value, insert=True)


def _window_starts(size: int, window: int, stride: int) -> list[int]:
    starts = list(range(0, size - window + 1, stride))
    if starts[-1] != size - window:
        starts.append(size - window)
    return starts


def occlusion_saliency(teacher, anchor, window: int = 3, stride: int = 1, baseline_value=0.0) -> SaliencyMap:
    """Sliding-window occlusion: each pixel gets the mean probability drop of
    the windows covering it."""
    anchor = np.asarray(anchor, dtype=np.float64)
    h, w, _ = anchor.shape
    if window % 2 == 0 or window < 1:
        raise ValueError(f"occlusion window must be odd, got {window}")
    if window > min(h, w):
        raise ValueError(f"window {window} exceeds image size {h}x{w}")
    if stride < 1:
        raise ValueError("stride must be positive")
    anchor_class = int(T.predict(teacher, anchor))
    p_clean = float(T.predict_proba(teacher, anchor)[anchor_class])

    boxes = [(y, x) for y in _window_starts(h, window, stride) for x in _window_starts(w, window, stride)]
    batch = np.repeat(anchor[None], len(boxes), axis=0)
    for i, (y, x) in enumerate(boxes):
        batch[i, y : y + window, x : x + window, :] = baseline_value
    drops = p_clean - T.predict_proba(teacher, batch.reshape(len(boxes), -1))[:, anchor_class]

    total = np.zeros((h, w))
    count = np.zeros((h, w))
    for (y, x), drop in zip(boxes, drops):
        total[y : y + window, x : x + window] += drop
        count[y : y + window, x : x + window] += 1
    return SaliencyMap.from_raw(total / np.maximum(count, 1))


def random_ordering(h: int, w: int, rng: Rng) -> np.ndarray:
    return rng.permutation(h * w)


METHODS = ("relabel", "occlusion", "random")


def compare_methods(
    teacher, anchor, relabel_ordering, rng: Rng, window=3, stride=1, step_fraction=0.02, baseline_value=0.0
) -> dict[str, tuple[PerturbationCurve, PerturbationCurve]]:
    """Deletion and insertion curves for the re-label ordering and both baselines.

    Returns ``{method: (deletion, insertion)}`` keyed in ``METHODS`` order.
    """
    h, w, _ = np.asarray(anchor).shape
    orderings = {
        "relabel": relabel_ordering,
        "occlusion": occlusion_saliency(teacher, anchor, window, stride, baseline_value).ordering,
        "random": random_ordering(h, w, rng),
    }
    return {
        m: (
            deletion_curve(teacher, anchor, o, step_fraction, baseline_value),
            insertion_curve(teacher, anchor, o, step_fraction, baseline_value),
        )
        for m, o in orderings.items()
    }


def top_fraction_mass(saliency: SaliencyMap, region: np.ndarray, fraction: float = 0.25) -> float:
    """Share of the positive raw saliency carried by the top ``fraction`` of
    pixels that falls inside the boolean ``region`` mask."""
    k = max(1, int(round(fraction * saliency.ordering.size)))
    top = saliency.ordering[:k]
    mass = np.maximum(saliency.raw.reshape(-1)[top].astype(np.float64), 0.0)
    inside = np.asarray(region, dtype=bool).reshape(-1)[top]
    total = mass.sum()
    if total <= 0:
        return float(np.mean(inside))
    return float(mass[inside].sum() / total)
