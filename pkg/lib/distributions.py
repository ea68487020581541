#!/usr/bin/env python3
"""
Distributions
Grouped categorical latents with unimix and straight-through sampling, symlog
transforms and two-hot encoding over a fixed bin grid
"""

from dataclasses import dataclass
from typing import Literal

import numpy as np

from lib.tensor import Rng, Tensor, stop_gradient, straight_through


@dataclass
class LatentDist:
    """K groups x C classes; logits shape (..., K, C)"""
    logits: Tensor
    unimix: float = 0.01

    @property
    def groups(self) -> int:
        return self.logits.shape[-2]

    @property
    def classes(self) -> int:
        return self.logits.shape[-1]

    def probs(self) -> Tensor:
        probs = self.logits.softmax(axis=-1)
        if self.unimix > 0:
            probs = probs * (1.0 - self.unimix) + self.unimix / self.classes
        return probs

    def log_probs(self) -> Tensor:
        return self.probs().log()

    def detach(self) -> 'LatentDist':
        return LatentDist(stop_gradient(self.logits), self.unimix)

    def slice_time(self, start: int, stop: int | None = None) -> 'LatentDist':
        return LatentDist(self.logits[:, start:stop], self.unimix)


@dataclass
class Latent:
    """One-hot sample per group flattened to K*C; `flat` carries the straight-through link"""
    flat: Tensor
    indices: np.ndarray


def sample_latent(dist: LatentDist, rng: Rng, mode: Literal['sample', 'argmax'] = 'sample') -> Latent:
    """
    Draw one class per group after unimix

    Forward value is exactly one-hot; the backward pass treats the sample as the
    probabilities themselves.
    """
    probs = dist.probs()
    if mode == 'sample':
        indices = rng.categorical(probs.data)
    elif mode == 'argmax':
        indices = probs.data.argmax(axis=-1)
    else:
        raise ValueError(f"Unknown sampling mode '{mode}'")
    hard = np.eye(dist.classes, dtype=probs.dtype)[indices]
    sample = straight_through(probs, hard)
    lead = sample.shape[:-2]
    return Latent(flat=sample.reshape(*lead, dist.groups * dist.classes), indices=indices)


def categorical_kl(p: Tensor, q: Tensor) -> Tensor:
    """KL[p || q] for probability tensors (..., K, C), summed over groups and classes"""
    return (p * (p.log() - q.log())).sum(axis=(-2, -1))


# ============================================================================
# symlog / two-hot
# ============================================================================

def symlog(x):
    return np.sign(x) * np.log1p(np.abs(x))


def symexp(y):
    return np.sign(y) * np.expm1(np.abs(y))


def symlog_bins(count: int = 255, low: float = -20.0, high: float = 20.0) -> np.ndarray:
    """Bin centres, uniform in symlog space"""
    return np.linspace(low, high, count)


def twohot_encode(values, bins: np.ndarray) -> np.ndarray:
    """
    Weights on the two bins bracketing each value, linear interpolation, sum 1

    Args:
        values: Array of any shape, already in bin space; clipped to the grid
        bins: Strictly increasing centres

    Returns:
        Array of shape values.shape + (len(bins),)
    """
    x = np.clip(np.asarray(values, dtype=np.float64), bins[0], bins[-1])
    above = np.clip(np.searchsorted(bins, x, side='right'), 1, len(bins) - 1)
    below = above - 1
    w_above = (x - bins[below]) / (bins[above] - bins[below])

    weights = np.zeros(x.shape + (len(bins),))
    np.put_along_axis(weights, below[..., None], (1.0 - w_above)[..., None], axis=-1)
    np.put_along_axis(weights, above[..., None], w_above[..., None], axis=-1)
    return weights


def twohot_expectation(probs, bins: np.ndarray) -> np.ndarray:
    """Expected bin value; inverse of twohot_encode for in-range values"""
    probs = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return (probs * bins).sum(axis=-1)


def twohot_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """-sum(target * log_softmax(logits)) over the bin axis"""
    target = Tensor(target, dtype=logits.dtype)
    return -(target * logits.log_softmax(axis=-1)).sum(axis=-1)
