#!/usr/bin/env python3
"""
Optimizer
Adam with global-norm gradient clipping, updating Parameters in place
"""

import logging
from typing import Iterable, Mapping

import numpy as np

from lib.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


def global_norm(grads: Iterable[np.ndarray]) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_by_global_norm(grads: list[np.ndarray], clip_norm: float) -> tuple[list[np.ndarray], float]:
    """
    Scale all gradients jointly so their global norm is at most clip_norm

    Returns:
        (clipped gradients, norm before clipping)
    """
    norm = global_norm(grads)
    if norm <= clip_norm or norm == 0.0:
        return grads, norm
    scale = clip_norm / norm
    return [g * np.asarray(scale, dtype=g.dtype) for g in grads], norm


def adam_step(
    params: Iterable[Parameter],
    grads: Mapping[str, Tensor | np.ndarray],
    lr: float,
    clip_norm: float,
) -> float:
    """
    One clipped Adam update of every parameter

    Args:
        params: Parameters to update; each owns its moment accumulators
        grads: Gradient map keyed by parameter name
        lr: Learning rate (> 0)
        clip_norm: Global-norm ceiling (> 0)

    Returns:
        Global gradient norm before clipping
    """
    if lr <= 0 or clip_norm <= 0:
        raise ValueError(f"adam_step needs lr > 0 and clip_norm > 0, got lr={lr}, clip_norm={clip_norm}")

    params = list(params)
    raw = []
    for p in params:
        g = grads.get(p.name)
        if g is None:
            logger.warning(f"No gradient for parameter '{p.name}', treating it as zero")
            raw.append(np.zeros_like(p.data))
        else:
            raw.append(np.asarray(g.data if isinstance(g, Tensor) else g, dtype=p.dtype))

    clipped, norm = clip_by_global_norm(raw, clip_norm)

    for p, g in zip(params, clipped):
        state = p.adam_state
        state.step += 1
        state.m = BETA1 * state.m + (1 - BETA1) * g
        state.v = BETA2 * state.v + (1 - BETA2) * g * g
        m_hat = state.m / (1 - BETA1 ** state.step)
        v_hat = state.v / (1 - BETA2 ** state.step)
        p.assign(p.data - lr * m_hat / (np.sqrt(v_hat) + EPSILON))

    return norm
