"""Contrastive, reconstruction and classification losses.

All losses return scalar tensors and are built from differentiable
primitives, so they backpropagate through whatever produced their inputs.
"""

from __future__ import annotations

import numpy as np

from mixcl import autodiff as ad
from mixcl.autodiff import ShapeError, Tensor

__all__ = ["mnt_xent", "mnt_xent_probabilities", "nt_xent", "mse_reconstruction", "softmax_cross_entropy"]


def _check_embeddings(*zs: Tensor) -> None:
    shapes = {z.shape for z in zs}
    if len(shapes) != 1 or zs[0].ndim != 2:
        raise ShapeError(f"embedding blocks must share one (N, d) shape, got {[z.shape for z in zs]}")


def _mixup_logits(z1: Tensor, z2: Tensor, z_mix: Tensor, tau: float):
    s1 = ad.scale(ad.cosine_similarity_matrix(z_mix, z1), 1.0 / tau)
    s2 = ad.scale(ad.cosine_similarity_matrix(z_mix, z2), 1.0 / tau)
    return s1, s2


def mnt_xent(z1, z2, z_mix, lam: float, tau: float = 0.5) -> Tensor:
    """Mixup contrastive loss, averaged over the batch.

    Each mixed embedding ``z_mix[i]`` is scored against all 2N embeddings of
    both source batches.  The soft target puts weight ``lam`` on ``z1[i]``
    and ``1 - lam`` on ``z2[i]``; the loss is the cross-entropy of that
    target against the softmax over the 2N cosine similarities / ``tau``.

    Parameters
    ----------
    z1, z2 : Tensor, shape (N, d)
        Projections of the two source minibatches.
    z_mix : Tensor, shape (N, d)
        Projections of their mixup combination.
    lam : float or array of shape (N,)
        Mixing weight applied to the first batch (one per anchor if an
        array).
    tau : float
        Temperature.
    """
    z1, z2, z_mix = (z if isinstance(z, Tensor) else Tensor(z) for z in (z1, z2, z_mix))
    _check_embeddings(z1, z2, z_mix)
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    n = z1.shape[0]
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim > 1 or (lam.ndim == 1 and lam.shape[0] != n):
        raise ShapeError(f"mixing weights of shape {lam.shape} for {n} anchors")
    if np.any(~((lam >= 0) & (lam <= 1))):
        raise ValueError(f"mixing weight must lie in [0, 1], got {lam}")
    s1, s2 = _mixup_logits(z1, z2, z_mix, tau)
    log_denom = ad.logsumexp(ad.concat([s1, s2], axis=1), axis=1)
    eye = np.eye(n)
    pos1 = (s1 * eye).sum(axis=1)
    pos2 = (s2 * eye).sum(axis=1)
    per_anchor = (pos1 - log_denom) * (-lam) + (pos2 - log_denom) * (lam - 1.0)
    return per_anchor.mean()


def mnt_xent_probabilities(z1, z2, z_mix, tau: float = 0.5) -> np.ndarray:
    """The (N, 2N) softmax each mixed anchor assigns over both source batches."""
    z1, z2, z_mix = (z if isinstance(z, Tensor) else Tensor(z) for z in (z1, z2, z_mix))
    s1, s2 = _mixup_logits(z1, z2, z_mix, tau)
    logits = np.concatenate([s1.data, s2.data], axis=1)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def nt_xent(z_a, z_b, tau: float = 0.5) -> Tensor:
    """SimCLR loss over the 2N views; positives are ``z_a[i]`` <-> ``z_b[i]``."""
    z_a, z_b = (z if isinstance(z, Tensor) else Tensor(z) for z in (z_a, z_b))
    _check_embeddings(z_a, z_b)
    n = z_a.shape[0]
    if n < 2:
        raise ValueError("NT-Xent needs at least two samples per view (no negatives otherwise)")
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = ad.concat([z_a, z_b], axis=0)
    sim = ad.scale(ad.cosine_similarity_matrix(z, z), 1.0 / tau)
    self_mask = np.where(np.eye(2 * n, dtype=bool), -np.inf, 0.0)
    log_denom = ad.logsumexp(sim + self_mask, axis=1)
    partner = np.roll(np.eye(2 * n), n, axis=1)
    positive = (sim * partner).sum(axis=1)
    return (log_denom - positive).mean()


def mse_reconstruction(x_hat, x) -> Tensor:
    x_hat = x_hat if isinstance(x_hat, Tensor) else Tensor(x_hat)
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x_hat.shape != x.shape:
        raise ShapeError(f"reconstruction shape {x_hat.shape} differs from target {x.shape}")
    diff = x_hat - x
    return (diff * diff).mean()


def softmax_cross_entropy(logits, labels) -> Tensor:
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"need (N, K) logits and N labels, got {logits.shape} and {labels.shape}")
    k = logits.shape[1]
    bad = labels[(labels < 0) | (labels >= k)]
    if bad.size:
        raise ValueError(f"label {int(bad[0])} outside [0, {k})")
    onehot = np.eye(k)[labels.astype(np.intp)]
    picked = (logits * onehot).sum(axis=1)
    return (ad.logsumexp(logits, axis=1) - picked).mean()
