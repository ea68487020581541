#!/usr/bin/env python3
"""
Mamba modules
The gated Mamba layer and the two variation-awareness modules built on it:
LMamba (short windows of raw features) and GMamba (sequences of feature differences)
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from lib.nn import MLP, LayerNorm, Linear, Module
from lib.ssm import ScanState, SsmParams, scan
from lib.tensor import Parameter, Rng, ShapeError, Tensor, concat, zeros


@dataclass
class MambaState:
    """Carried state of one layer: the last conv_width-1 conv inputs and the SSM state"""
    conv_buffer: Optional[Tensor]
    ssm: ScanState


class MambaLayer(Module):
    """pre_norm -> in_proj (branch, gate) -> causal depthwise conv -> SiLU -> S6 -> * SiLU(gate) -> out_proj"""

    def __init__(self, d_model: int, d_state: int, expand: int, conv_width: int, use_conv: bool,
                 exact_zoh: bool, rng: Rng):
        d_inner = expand * d_model
        self.pre_norm = LayerNorm(d_model)
        self.in_proj = Linear(d_model, 2 * d_inner, rng)
        if use_conv:
            self.conv_weight = Parameter(rng.normal((conv_width, d_inner), 1.0 / np.sqrt(conv_width)))
            self.conv_bias = Parameter(np.zeros(d_inner))
        self.ssm = SsmParams(d_inner, d_state, rng)
        self.out_proj = Linear(d_inner, d_model, rng)
        self.d_model = d_model
        self.d_inner = d_inner
        self.conv_width = conv_width
        self.use_conv = use_conv
        self.exact_zoh = exact_zoh


def _causal_conv(layer: MambaLayer, branch: Tensor, buffer: Optional[Tensor]) -> tuple[Tensor, Optional[Tensor]]:
    width = layer.conv_width
    if width == 1:
        return branch * layer.conv_weight[0] + layer.conv_bias, None
    if buffer is None:
        buffer = zeros((branch.shape[0], width - 1, layer.d_inner), dtype=branch.dtype)
    length = branch.shape[1]
    padded = concat([buffer, branch], axis=1)
    out = layer.conv_bias
    for k in range(width):
        out = out + padded[:, k:k + length] * layer.conv_weight[k]
    return out, padded[:, length:]


def mamba_forward(layer: MambaLayer, seq: Tensor, carried_state: Optional[MambaState] = None,
                  scan_mode: str = 'parallel') -> tuple[Tensor, MambaState]:
    """
    Run one Mamba layer over a sequence

    Args:
        layer: MambaLayer
        seq: (batch, L, d_model), L >= 1
        carried_state: State returned by a previous call on the preceding chunk
        scan_mode: 'parallel' or 'sequential'

    Returns:
        (output (batch, L, d_model), state after the last position)
    """
    if seq.ndim != 3 or seq.shape[-1] != layer.d_model:
        raise ShapeError(f"mamba_forward: expected (batch, L, {layer.d_model}), got {seq.shape}")

    projected = layer.in_proj(layer.pre_norm(seq))
    branch = projected[..., :layer.d_inner]
    gate = projected[..., layer.d_inner:]

    buffer = carried_state.conv_buffer if carried_state is not None else None
    if layer.use_conv:
        branch, buffer = _causal_conv(layer, branch, buffer)

    h0 = carried_state.ssm.h if carried_state is not None else None
    y, ssm_state = scan(layer.ssm, branch.silu(), h0, mode=scan_mode, exact_zoh=layer.exact_zoh)
    return layer.out_proj(y * gate.silu()), MambaState(conv_buffer=buffer, ssm=ssm_state)


def stack_forward(layers: list[MambaLayer], seq: Tensor, states: Optional[list[MambaState]] = None,
                  scan_mode: str = 'parallel') -> tuple[Tensor, list[MambaState]]:
    """First layer output feeds a residual chain through the remaining layers"""
    states = states or [None] * len(layers)
    new_states = []
    x = seq
    for i, (layer, state) in enumerate(zip(layers, states)):
        s, new_state = mamba_forward(layer, x, state, scan_mode)
        x = s if i == 0 else x + s
        new_states.append(new_state)
    return x, new_states


def _mamba_layers(count: int, d_model: int, config, rng: Rng) -> list[MambaLayer]:
    return [
        MambaLayer(d_model, config.d_state, config.expand, config.conv_width,
                   config.use_causal_conv, config.exact_zoh, rng)
        for _ in range(count)
    ]


# ============================================================================
# LMamba
# ============================================================================

class LMambaModule(Module):
    """u^l = post_map(e + Norm(M(Norm(e)))) over windows of exactly `length` steps"""

    def __init__(self, config, rng: Rng):
        self.layers = _mamba_layers(config.lmamba_layers, config.d_model, config, rng)
        self.out_norm = LayerNorm(config.d_model)
        self.post_map = Linear(config.d_model, config.d_model, rng)
        self.length = config.lmamba_length


def lmamba_sequence(module: LMambaModule, seq: Tensor, states: Optional[list[MambaState]] = None,
                    scan_mode: str = 'parallel') -> tuple[Tensor, list[MambaState]]:
    """Residual local map over any length; carried state makes it a plain stateful backbone"""
    s, new_states = stack_forward(module.layers, seq, states, scan_mode)
    return module.post_map(seq + module.out_norm(s)), new_states


def lmamba_forward(module: LMambaModule, window: Tensor, scan_mode: str = 'parallel') -> Tensor:
    """
    Local variation awareness over one short window, fresh state per window

    Args:
        module: LMambaModule
        window: (batch, s, d_model) with s = module.length

    Returns:
        u^l sequence (batch, s, d_model)
    """
    if window.ndim != 3 or window.shape[1] != module.length:
        raise ValueError(f"lmamba_forward: window length must be {module.length}, got shape {window.shape}")
    u, _ = lmamba_sequence(module, window, None, scan_mode)
    return u


# ============================================================================
# GMamba
# ============================================================================

class GMambaModule(Module):
    """
    Global variation awareness over feature differences:
    u^g = SiLU(LayerNorm(MLP(d + Norm(M(Norm(d))))))

    With raw_input set (two identical parallel modules) it consumes features
    instead of differences and ends in the local module's affine map.
    """

    def __init__(self, config, rng: Rng):
        self.layers = _mamba_layers(config.gmamba_layers, config.d_model, config, rng)
        self.out_norm = LayerNorm(config.d_model)
        self.raw_input = config.disable_lmamba_variation
        if self.raw_input:
            self.post_map = Linear(config.d_model, config.d_model, rng)
        else:
            self.post_map = MLP(config.d_model, config.d_model, config.d_model, rng)
            self.post_norm = LayerNorm(config.d_model)
        self.length = config.gmamba_length


def gmamba_sequence(module: GMambaModule, inputs: Tensor, states: Optional[list[MambaState]] = None,
                    scan_mode: str = 'parallel') -> tuple[Tensor, list[MambaState]]:
    """Map a sequence of differences (or raw features in raw_input mode) to u^g"""
    s, new_states = stack_forward(module.layers, inputs, states, scan_mode)
    u = module.post_map(inputs + module.out_norm(s))
    if not module.raw_input:
        u = module.post_norm(u).silu()
    return u, new_states


def feature_differences(e: Tensor) -> Tensor:
    """d_i = e_{i+1} - e_i along the time axis"""
    return e[:, 1:] - e[:, :-1]


def gmamba_forward(module: GMambaModule, e: Tensor, scan_mode: str = 'parallel') -> Tensor:
    """
    GMamba over one length-l feature sequence

    Args:
        module: GMambaModule
        e: (batch, l, d_model) with l = module.length

    Returns:
        u^g for positions 1..l-1, shape (batch, l-1, d_model); entry i is built
        from d_{i} = e_{i+1} - e_{i} and pairs with the local output at step i+1
    """
    if e.ndim != 3 or e.shape[1] != module.length:
        raise ValueError(f"gmamba_forward: sequence length must be {module.length}, got shape {e.shape}")
    inputs = e[:, 1:] if module.raw_input else feature_differences(e)
    u, _ = gmamba_sequence(module, inputs, None, scan_mode)
    return u
