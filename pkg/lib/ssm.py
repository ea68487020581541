#!/usr/bin/env python3
"""
Selective scan (S6)
Input-dependent discretization of a diagonal state-space model and two evaluation
paths: the left-to-right recurrence and an associative (Hillis-Steele) prefix scan
"""

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from lib.nn import Linear, Module
from lib.tensor import Parameter, Rng, ShapeError, Tensor, apply_primitive, concat, register_primitive, zeros


@dataclass
class ScanState:
    """Hidden state h, shape (batch, D_inner, N_state)"""
    h: Tensor


class SsmParams(Module):
    """
    Diagonal A stored as a raw value with A = -softplus(a_raw) < 0, and the
    selective projections producing B_t, C_t (width N) and Delta_t (width D)
    """

    def __init__(self, d_inner: int, d_state: int, rng: Rng):
        # softplus(a_raw[:, n]) = n + 1, the usual S4D-real initialisation
        magnitudes = np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1))
        self.a_raw = Parameter(np.log(np.expm1(magnitudes)))
        self.w_b = Linear(d_inner, d_state, rng)
        self.w_c = Linear(d_inner, d_state, rng)
        self.w_delta = Linear(d_inner, d_inner, rng)
        self.d_inner = d_inner
        self.d_state = d_state

    def a(self) -> Tensor:
        return -self.a_raw.softplus()


def selective_project(params: SsmParams, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """
    Input-dependent SSM parameters

    Args:
        params: SsmParams
        x: (..., D_inner)

    Returns:
        (delta (..., D_inner) > 0, B (..., N), C (..., N))
    """
    if x.shape[-1] != params.d_inner:
        raise ShapeError(f"selective_project: input width {x.shape[-1]} vs D_inner {params.d_inner}")
    delta = params.w_delta(x).softplus()
    return delta, params.w_b(x), params.w_c(x)


def discretize(delta: Tensor, a: Tensor, b: Tensor, exact_zoh: bool = False) -> tuple[Tensor, Tensor]:
    """
    A_bar = exp(delta * A); B_bar = delta * B, or the exact zero-order hold
    (exp(delta * A) - 1) / A * B when exact_zoh is set

    Shapes: delta (..., D), a (D, N), b (..., N) -> both outputs (..., D, N)
    """
    delta_col = delta.reshape(*delta.shape, 1)
    a_bar = (delta_col * a).exp()
    b_row = b.reshape(*b.shape[:-1], 1, b.shape[-1])
    if exact_zoh:
        return a_bar, (a_bar - 1.0) / a * b_row
    return a_bar, delta_col * b_row


@register_primitive('linear_recurrence')
def _linear_recurrence(a, u, h0):
    """h_t = a_t * h_{t-1} + u_t along axis 1"""
    if a.shape != u.shape or h0.shape != u.shape[:1] + u.shape[2:]:
        raise ShapeError(f"linear_recurrence: a {a.shape}, u {u.shape}, h0 {h0.shape}")
    h = np.empty_like(u)
    prev = h0
    for t in range(u.shape[1]):
        prev = a[:, t] * prev + u[:, t]
        h[:, t] = prev

    def vjp(g):
        ga = np.empty_like(a)
        gu = np.empty_like(u)
        carry = np.zeros_like(h0)
        for t in range(u.shape[1] - 1, -1, -1):
            carry = g[:, t] + carry
            gu[:, t] = carry
            ga[:, t] = carry * (h[:, t - 1] if t > 0 else h0)
            carry = carry * a[:, t]
        return ga, gu, carry
    return h, vjp


def _scan_terms(params: SsmParams, x: Tensor, exact_zoh: bool) -> tuple[Tensor, Tensor, Tensor]:
    if x.ndim != 3:
        raise ShapeError(f"scan: expected (batch, length, D_inner), got {x.shape}")
    delta, b, c = selective_project(params, x)
    a_bar, b_bar = discretize(delta, params.a(), b, exact_zoh)
    return a_bar, b_bar * x.reshape(*x.shape, 1), c


def _initial_state(x: Tensor, params: SsmParams, h0: Optional[Tensor]) -> Tensor:
    if h0 is None:
        return zeros((x.shape[0], params.d_inner, params.d_state), dtype=x.dtype)
    return h0


def _readout(h: Tensor, c: Tensor) -> Tensor:
    # y_t[d] = <C_t, h_t[d, :]>
    return (h * c.reshape(c.shape[0], c.shape[1], 1, c.shape[2])).sum(axis=-1)


def scan_sequential(params: SsmParams, x: Tensor, h0: Optional[Tensor] = None,
                    exact_zoh: bool = False) -> tuple[Tensor, ScanState]:
    """
    Exact left-to-right recurrence

    Args:
        params: SsmParams
        x: (batch, L, D_inner), L >= 1
        h0: Optional carried state (batch, D_inner, N); zero when omitted

    Returns:
        (y (batch, L, D_inner), final ScanState)
    """
    a_bar, u, c = _scan_terms(params, x, exact_zoh)
    h = apply_primitive('linear_recurrence', a_bar, u, _initial_state(x, params, h0))
    return _readout(h, c), ScanState(h=h[:, -1])


def scan_parallel(params: SsmParams, x: Tensor, h0: Optional[Tensor] = None,
                  exact_zoh: bool = False) -> tuple[Tensor, ScanState]:
    """
    Same result as scan_sequential via the associative combine
    (a2, b2) o (a1, b1) = (a2 * a1, a2 * b1 + b2), log2(L) doubling rounds
    """
    a_bar, u, c = _scan_terms(params, x, exact_zoh)
    h0 = _initial_state(x, params, h0)
    length = x.shape[1]

    # Fold h0 into the first element so the prefix scan starts from zero
    first = a_bar[:, 0:1] * h0.reshape(h0.shape[0], 1, *h0.shape[1:]) + u[:, 0:1]
    b = concat([first, u[:, 1:]], axis=1) if length > 1 else first
    a = a_bar

    offset = 1
    while offset < length:
        b = concat([b[:, :offset], b[:, offset:] + a[:, offset:] * b[:, :-offset]], axis=1)
        a = concat([a[:, :offset], a[:, offset:] * a[:, :-offset]], axis=1)
        offset *= 2

    return _readout(b, c), ScanState(h=b[:, -1])


def scan(params: SsmParams, x: Tensor, h0: Optional[Tensor] = None,
         mode: Literal['parallel', 'sequential'] = 'parallel', exact_zoh: bool = False) -> tuple[Tensor, ScanState]:
    if mode == 'parallel':
        return scan_parallel(params, x, h0, exact_zoh)
    if mode == 'sequential':
        return scan_sequential(params, x, h0, exact_zoh)
    raise ValueError(f"Unknown scan mode '{mode}'")
