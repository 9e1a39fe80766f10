"""Augmented views: mixup and the two noise corruptions used by the CL baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mixcl.rng import Rng, beta_sample, normal_sample

__all__ = ["MixupBatch", "mixup_combine", "gaussian_noise_aug", "dropout_noise_aug", "make_mixup_batch"]


@dataclass
class MixupBatch:
    view1: np.ndarray
    view2: np.ndarray
    mixed: np.ndarray
    lam: float | np.ndarray


def _check_lambda(lam) -> np.ndarray:
    arr = np.asarray(lam, dtype=np.float64)
    if np.any(~((arr >= 0) & (arr <= 1))):
        raise ValueError(f"mixing weight must lie in [0, 1], got {lam}")
    return arr


def mixup_combine(view1, view2, lam) -> np.ndarray:
    """Convex combination ``lam * view1 + (1 - lam) * view2``.

    ``lam`` is a scalar or one weight per sample (leading axis).  The result
    is clipped to the per-coordinate hull of the two inputs, which only ever
    removes a rounding ulp and makes the endpoint and equal-input cases exact.
    """
    v1 = np.asarray(view1, dtype=np.float64)
    v2 = np.asarray(view2, dtype=np.float64)
    if v1.shape != v2.shape:
        raise ValueError(f"mixup views differ in shape: {v1.shape} vs {v2.shape}")
    lam = _check_lambda(lam)
    if lam.ndim == 1:
        if lam.shape[0] != v1.shape[0]:
            raise ValueError(f"{lam.shape[0]} per-sample weights for {v1.shape[0]} samples")
        lam = lam.reshape((-1,) + (1,) * (v1.ndim - 1))
    # always evaluate with the larger weight on the first operand so that
    # (a, b, lam) and (b, a, 1 - lam) run the identical float expression
    flip = lam < 0.5
    major = np.where(flip, v2, v1)
    minor = np.where(flip, v1, v2)
    w = np.where(flip, 1.0 - lam, lam)
    out = w * major + (1.0 - w) * minor
    return np.clip(out, np.minimum(v1, v2), np.maximum(v1, v2))


def gaussian_noise_aug(x, rng: Rng, variance: float) -> np.ndarray:
    """Additive i.i.d. N(0, variance) noise."""
    if variance < 0:
        raise ValueError(f"noise variance must be non-negative, got {variance}")
    x = np.asarray(x, dtype=np.float64)
    if variance == 0:
        return x.copy()
    return x + normal_sample(rng, 0.0, np.sqrt(variance), x.shape)


def dropout_noise_aug(x, rng: Rng, rate: float) -> np.ndarray:
    # corruption, not regularization: survivors keep their value (no 1/(1-p))
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    keep = rng.uniform(x.shape) >= rate
    return np.where(keep, x, 0.0)


def make_mixup_batch(dataset, indices1, indices2, rng: Rng, alpha: float, per_sample: bool = False) -> MixupBatch:
    """Gather two minibatches and mix them with a Beta(alpha, alpha) weight.

    One weight is shared by the whole batch unless ``per_sample`` is set.
    ``dataset`` may be a :class:`~mixcl.data.TimeSeriesDataset` or an
    (N, C, T) array.
    """
    samples = np.asarray(getattr(dataset, "samples", dataset))
    idx1 = np.asarray(indices1, dtype=np.intp)
    idx2 = np.asarray(indices2, dtype=np.intp)
    if idx1.shape != idx2.shape or idx1.ndim != 1:
        raise ValueError(f"index arrays must be 1-D and equally long, got {idx1.shape} and {idx2.shape}")
    n = samples.shape[0]
    for idx in (idx1, idx2):
        bad = idx[(idx < 0) | (idx >= n)]
        if bad.size:
            raise IndexError(f"sample index {int(bad[0])} out of range for {n} samples")
    v1, v2 = samples[idx1], samples[idx2]
    lam = beta_sample(rng, alpha, size=idx1.size if per_sample else None)
    return MixupBatch(v1, v2, mixup_combine(v1, v2, lam), lam)
