"""Score-to-weight conversion and weighted gradient aggregation.

Max-min normalization is the default; softmax and percentile filtering
exist as ablation comparators, uniform as the standard-training control,
and an all-zero diagnostic mode for update-free runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Gradients

MAXMIN = "maxmin"
SOFTMAX = "softmax"
PERCENTILE = "percentile"
UNIFORM = "uniform"
ZERO = "zero"

BATCH_SCOPE = "batch"
DATASET_SCOPE = "dataset"


@dataclass(frozen=True)
class WeightingMode:
    kind: str = MAXMIN
    temperature: float = 1.0
    percentile: float = 50.0
    scope: str = BATCH_SCOPE  # percentile threshold source: batch or full score table

    def __post_init__(self) -> None:
        if self.kind not in (MAXMIN, SOFTMAX, PERCENTILE, UNIFORM, ZERO):
            raise ValueError(f"unknown weighting kind {self.kind!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.percentile <= 100.0:
            raise ValueError("percentile must be in [0, 100]")
        if self.scope not in (BATCH_SCOPE, DATASET_SCOPE):
            raise ValueError(f"unknown percentile scope {self.scope!r}")


def maxmin_weights(scores) -> np.ndarray:
    """Affine rescale into [0,1]; all-equal scores map to all ones."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty score list")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.ones_like(s)
    return (s - lo) / (hi - lo)


def softmax_weights(scores, temperature: float) -> np.ndarray:
    """Softmax over scores/temperature, rescaled so uniform scores give weight 1 each."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    s = np.asarray(scores, dtype=np.float64) / temperature
    if s.size == 0:
        raise ValueError("empty score list")
    e = np.exp(s - s.max())
    return e / e.sum() * s.size


def percentile_threshold(scores, p: float) -> float:
    """Nearest-rank percentile: the value at index floor(p*n/100), clamped."""
    s = np.sort(np.asarray(scores, dtype=np.float64))
    if s.size == 0:
        raise ValueError("empty score list")
    if not 0.0 <= p <= 100.0:
        raise ValueError("percentile must be in [0, 100]")
    idx = min(s.size - 1, math.floor(p * s.size / 100.0))
    return float(s[idx])


def percentile_filter(scores, p: float) -> np.ndarray:
    """Binary weights: 1 where score >= the p-th percentile of these scores."""
    s = np.asarray(scores, dtype=np.float64)
    return (s >= percentile_threshold(s, p)).astype(np.float64)


def compute_weights(scores, mode: WeightingMode, dataset_scores=None) -> np.ndarray:
    """Per-batch weights from raw scores under the configured mode.

    dataset_scores supplies the threshold population for percentile
    filtering with dataset scope; all other modes normalize within the
    batch.
    """
    s = np.asarray(scores, dtype=np.float64)
    if mode.kind == UNIFORM:
        return np.ones_like(s)
    if mode.kind == ZERO:
        return np.zeros_like(s)
    if mode.kind == MAXMIN:
        return maxmin_weights(s)
    if mode.kind == SOFTMAX:
        return softmax_weights(s, mode.temperature)
    population = s if (mode.scope == BATCH_SCOPE or dataset_scores is None) else dataset_scores
    return (s >= percentile_threshold(population, mode.percentile)).astype(np.float64)


def weighted_gradient(weights, per_example_grads: list[Gradients], mean_normalize: bool = False) -> Gradients:
    """Elementwise weighted sum of gradient trees (no division by the weight sum).

    mean_normalize divides by the number of examples for scale parity with
    mean-reduced standard training.
    """
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(per_example_grads):
        raise ValueError(f"{len(w)} weights for {len(per_example_grads)} gradients")
    if len(per_example_grads) == 0:
        raise ValueError("empty gradient list")
    first = per_example_grads[0]
    for g in per_example_grads[1:]:
        if g.keys() != first.keys() or any(g[k].shape != first[k].shape for k in first):
            raise ValueError("gradient trees have mismatched tensors")
    out: Gradients = {}
    for key in first:
        acc = w[0] * first[key]
        for wi, gi in zip(w[1:], per_example_grads[1:]):
            acc = acc + wi * gi[key]
        if mean_normalize:
            acc = acc / len(w)
        out[key] = acc
    return out
