"""Seeded random streams.

The generator is numpy's PCG64 (PCG-XSL-RR 128/64), which yields the same
stream on every platform for a given seed.  Labeled sub-streams are derived
from the master seed through :class:`numpy.random.SeedSequence` so that, for
example, the weight-init stream is unaffected by how many shuffles the data
stream performed.

Gamma variates use Marsaglia & Tsang's squeeze method for shape >= 1 and the
``U**(1/a) * Gamma(a + 1)`` boost below 1, carried out in log space so that
very small shapes do not underflow to 0/0 inside the beta ratio.
"""

from __future__ import annotations

import zlib

import numpy as np
from scipy.special import expit

__all__ = ["Rng", "beta_sample", "normal_sample", "permutation", "STREAMS"]

# fixed labels for per-purpose sub-streams
STREAMS = ("shuffle", "lambda", "init", "noise", "head")


class Rng:
    """Deterministic random source.

    Parameters
    ----------
    seed : int
        Unsigned 64-bit master seed.
    """

    def __init__(self, seed: int = 0, _key: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self._key = _key
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=_key)))

    def substream(self, label: str | int) -> "Rng":
        """Independent stream identified by ``label`` under this seed."""
        tag = label if isinstance(label, int) else zlib.crc32(label.encode("utf-8"))
        return Rng(self.seed, self._key + (int(tag),))

    def uniform(self, size=None) -> np.ndarray | float:
        """Draws from [0, 1)."""
        return self._gen.random(size)

    def standard_normal(self, size=None) -> np.ndarray | float:
        return self._gen.standard_normal(size)

    def log_gamma(self, shape: float, size: int) -> np.ndarray:
        """Logarithms of ``size`` Gamma(shape, 1) variates."""
        if shape <= 0:
            raise ValueError(f"gamma shape must be positive, got {shape}")
        if shape < 1:
            boost = np.log1p(-self.uniform(size)) / shape
            return self.log_gamma(shape + 1.0, size) + boost
        d = shape - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        out = np.empty(size)
        filled = 0
        while filled < size:
            need = size - filled
            z = self.standard_normal(need)
            u = self.uniform(need)
            v = (1.0 + c * z) ** 3
            with np.errstate(invalid="ignore", divide="ignore"):
                ok = (v > 0) & (np.log1p(-u) < 0.5 * z * z + d - d * v + d * np.log(v))
            accepted = np.log(d * v[ok])
            out[filled : filled + accepted.size] = accepted
            filled += accepted.size
        return out

    def permutation(self, n: int) -> np.ndarray:
        return permutation(self, n)


def beta_sample(rng: Rng, alpha: float, size: int | None = None):
    """Draw from Beta(alpha, alpha) as G1 / (G1 + G2).

    Returns a float when ``size`` is None, else an array.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    n = 1 if size is None else int(size)
    lg1 = rng.log_gamma(alpha, n)
    lg2 = rng.log_gamma(alpha, n)
    lam = expit(lg1 - lg2)
    return float(lam[0]) if size is None else lam


def normal_sample(rng: Rng, mean: float, std: float, n) -> np.ndarray:
    """``n`` i.i.d. normal draws (ziggurat transform of the PCG64 stream).

    ``n`` may be an int or a shape tuple.
    """
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    return mean + std * rng.standard_normal(n)


def permutation(rng: Rng, n: int) -> np.ndarray:
    """Uniform random ordering of ``0..n-1`` (Fisher-Yates)."""
    if n < 1:
        raise ValueError(f"permutation needs n >= 1, got {n}")
    return rng._gen.permutation(n)
