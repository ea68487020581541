#!/usr/bin/env python3
"""
Gradient check
Compares tape gradients against central finite differences in 64-bit precision
"""

from typing import Callable, Sequence

import numpy as np

from lib.models import GradCheckReport
from lib.tensor import Tape, Tensor, no_grad, precision


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray | Tensor],
    tolerance: float = 1e-4,
    h: float = 1e-3,
) -> GradCheckReport:
    """
    Check d fn / d inputs with central differences

    Args:
        fn: Deterministic map from the inputs (as Tensors) to a scalar Tensor
        inputs: Arrays are wrapped as fresh leaves; Tensors and Parameters (which
            must already be float64) are perturbed in place and restored
        tolerance: Pass threshold on the max relative error
        h: Finite-difference step

    Returns:
        GradCheckReport with the per-input and overall max relative error
    """
    with precision('float64'):
        leaves = []
        for x in inputs:
            if isinstance(x, Tensor):
                if x.dtype != np.float64:
                    raise TypeError(f"grad_check needs float64 tensors, got {x.dtype}")
                x.requires_grad = True
                x.data = np.ascontiguousarray(x.data)
                leaves.append(x)
            else:
                leaves.append(Tensor(np.array(x, dtype=np.float64), requires_grad=True))

        with Tape() as tape:
            loss = fn(*leaves)
        analytic = tape.gradients(loss, leaves)

        per_input = []
        with no_grad():
            for leaf, grad in zip(leaves, analytic):
                flat = leaf.data.reshape(-1)
                numeric = np.zeros(flat.size)
                for j in range(flat.size):
                    original = flat[j]
                    flat[j] = original + h
                    plus = fn(*leaves).item()
                    flat[j] = original - h
                    minus = fn(*leaves).item()
                    flat[j] = original
                    numeric[j] = (plus - minus) / (2 * h)
                per_input.append(relative_error(grad.reshape(-1), numeric))

    worst = max(per_input, default=0.0)
    return GradCheckReport(max_rel_error=worst, per_input=per_input, tolerance=tolerance,
                           passed=worst <= tolerance)
