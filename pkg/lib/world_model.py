#!/usr/bin/env python3
"""
GLAM world model
Observation encoder/decoder, per-step feature mixer, GMamba + LMamba fusion and the
dynamics / reward / continuation / variation heads. Two forward paths share the
parameters: the blocked parallel path used for training and the stateful single
step used for imagination.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from lib.distributions import Latent, LatentDist, sample_latent, symexp, symlog_bins, twohot_expectation
from lib.mamba import (
    GMambaModule, LMambaModule, MambaState, feature_differences, gmamba_sequence, lmamba_forward,
    lmamba_sequence,
)
from lib.models import WorldModelConfig
from lib.nn import MLP, Conv2d, ConvTranspose2d, Linear, Module
from lib.tensor import Rng, Tensor, concat, is_strict, no_grad, one_hot, stack, zeros


# ============================================================================
# Structure
# ============================================================================

class ObsEncoder(Module):
    """Stride-2 k4 convolutions with SiLU, then a linear map to K*C logits"""

    def __init__(self, frame_size: int, channels: list[int], latent_dim: int, rng: Rng):
        in_channels = [1] + channels[:-1]
        self.convs = [Conv2d(c_in, c_out, 4, 2, 1, rng) for c_in, c_out in zip(in_channels, channels)]
        self.final_size = frame_size // 2 ** len(channels)
        self.out = Linear(channels[-1] * self.final_size ** 2, latent_dim, rng)

    def __call__(self, frames: Tensor) -> Tensor:
        x = frames.reshape(frames.shape[0], 1, *frames.shape[1:])
        for conv in self.convs:
            x = conv(x).silu()
        return self.out(x.reshape(x.shape[0], -1))


class ObsDecoder(Module):
    """Mirror of the encoder with transposed convolutions; output is unbounded"""

    def __init__(self, frame_size: int, channels: list[int], latent_dim: int, rng: Rng):
        self.start_size = frame_size // 2 ** len(channels)
        self.start_channels = channels[-1]
        self.inp = Linear(latent_dim, channels[-1] * self.start_size ** 2, rng)
        out_channels = channels[::-1][1:] + [1]
        self.deconvs = [ConvTranspose2d(c_in, c_out, 4, 2, 1, rng) for c_in, c_out in zip(channels[::-1], out_channels)]

    def __call__(self, latent: Tensor) -> Tensor:
        x = self.inp(latent).reshape(latent.shape[0], self.start_channels, self.start_size, self.start_size)
        for i, deconv in enumerate(self.deconvs):
            x = deconv(x)
            if i < len(self.deconvs) - 1:
                x = x.silu()
        return x.reshape(x.shape[0], x.shape[2], x.shape[3])


class GlamModel(Module):
    def __init__(self, config: WorldModelConfig, frame_size: int, action_count: int, rng: Rng):
        self.config = config
        self.action_count = action_count
        self.frame_size = frame_size
        latent_dim = config.latent_groups * config.latent_classes

        self.encoder = ObsEncoder(frame_size, config.encoder_channels, latent_dim, rng)
        self.decoder = ObsDecoder(frame_size, config.encoder_channels, latent_dim, rng)
        self.feature_encoder = MLP(latent_dim + action_count, config.hidden_dim, config.d_model, rng)
        self.gmamba = None if config.disable_gmamba else GMambaModule(config, rng)
        self.lmamba = LMambaModule(config, rng)

        fusion_dim = self.fusion_dim
        self.dynamics_head = MLP(fusion_dim, config.hidden_dim, latent_dim, rng)
        self.reward_head = MLP(fusion_dim, config.hidden_dim, config.reward_bins, rng, zero_last=True)
        self.continuation_head = MLP(fusion_dim, config.hidden_dim, 1, rng)
        self.variation_out = Linear(config.hidden_dim, latent_dim, rng) if self.has_variation_head else None
        self.bins = symlog_bins(config.reward_bins, config.bin_low, config.bin_high)

    @property
    def fusion_dim(self) -> int:
        return self.config.d_model * (1 if self.gmamba is None else 2)

    @property
    def has_variation_head(self) -> bool:
        return self.gmamba is not None and not self.config.disable_lmamba_variation

    @property
    def latent_dim(self) -> int:
        return self.config.latent_groups * self.config.latent_classes

    @property
    def first_index(self) -> int:
        """First step with a full local window; predictions start here"""
        return self.config.lmamba_length - 1


@dataclass
class WorldModelOutputs:
    """Head outputs for a batch of steps; leading shape (batch,) or (batch, steps)"""
    next_latent: LatentDist
    reward_logits: Tensor
    continuation_logit: Tensor
    fused: Tensor
    reconstruction: Optional[Tensor] = None
    variation_logits: Optional[Tensor] = None

    @property
    def continuation_prob(self) -> Tensor:
        return self.continuation_logit.sigmoid()

    @property
    def reward_probs(self) -> Tensor:
        return self.reward_logits.softmax(axis=-1)

    def reward_mean(self, bins: np.ndarray) -> np.ndarray:
        return symexp(twohot_expectation(self.reward_probs, bins))


# ============================================================================
# Per-step maps
# ============================================================================

def encode_obs(model: GlamModel, frames) -> LatentDist:
    """
    Posterior over latents for frames of shape (..., H, W), values in [0, 1]

    Returns:
        LatentDist with logits (..., K, C); unimix is applied when sampling
    """
    frames = frames if isinstance(frames, Tensor) else Tensor(frames)
    if is_strict() and (frames.data.min() < 0.0 or frames.data.max() > 1.0):
        raise ValueError(f"encode_obs: pixel values outside [0, 1] "
                         f"(min {frames.data.min():.4f}, max {frames.data.max():.4f})")
    lead = frames.shape[:-2]
    logits = model.encoder(frames.reshape(-1, *frames.shape[-2:]))
    config = model.config
    return LatentDist(logits.reshape(*lead, config.latent_groups, config.latent_classes), config.unimix)


def decode_obs(model: GlamModel, latent: Tensor) -> Tensor:
    """Reconstruction of shape (..., H, W) from flattened latents (..., K*C)"""
    lead = latent.shape[:-1]
    frames = model.decoder(latent.reshape(-1, latent.shape[-1]))
    return frames.reshape(*lead, *frames.shape[-2:])


def feature_encode(model: GlamModel, latent: Tensor, actions) -> Tensor:
    """e_t = MLP(concat(z_t, one_hot(a_t))), width d_model"""
    actions = np.asarray(actions)
    if actions.size and (actions.min() < 0 or actions.max() >= model.action_count):
        raise ValueError(f"feature_encode: action indices must lie in [0, {model.action_count})")
    action_codes = one_hot(actions, model.action_count)
    return model.feature_encoder(concat([latent, Tensor(action_codes.data, dtype=latent.dtype)], axis=-1))


def predict_heads(model: GlamModel, u_global: Optional[Tensor], u_local: Tensor,
                  reconstruction: Optional[Tensor] = None) -> WorldModelOutputs:
    """Fuse u^g and u^l by concatenation and apply every head"""
    config = model.config
    fused = u_local if u_global is None else concat([u_global, u_local], axis=-1)
    lead = fused.shape[:-1]

    dynamics = model.dynamics_head(fused).reshape(*lead, config.latent_groups, config.latent_classes)
    variation = None
    if model.has_variation_head:
        trunk = model.dynamics_head.trunk(concat([u_global, zeros(u_local.shape, dtype=u_local.dtype)], axis=-1))
        variation = model.variation_out(trunk).reshape(*lead, config.latent_groups, config.latent_classes)

    return WorldModelOutputs(
        next_latent=LatentDist(dynamics, config.unimix),
        reward_logits=model.reward_head(fused),
        continuation_logit=model.continuation_head(fused).reshape(*lead),
        fused=fused,
        reconstruction=reconstruction,
        variation_logits=variation,
    )


# ============================================================================
# Parallel (training) path
# ============================================================================

@dataclass
class TrainForward:
    """Everything the losses need from one batch"""
    posterior: LatentDist
    latents: Latent
    outputs: WorldModelOutputs
    first_index: int


def parallel_train_forward(model: GlamModel, obs, actions, rng: Rng, sample_mode: str = 'sample',
                           scan_mode: Optional[str] = None) -> TrainForward:
    """
    Blocked training forward over (batch, T) sequences

    GMamba reads all T-1 differences at once; LMamba reads the overlapping
    length-s windows ending at every step i >= s-1, batched as independent
    sequences. Heads cover steps s-1..T-1: at step i they emit the prior for
    step i+1, the reward and continuation of step i and the reconstruction of o_i.

    Args:
        model: GlamModel
        obs: Frames (batch, T, H, W)
        actions: Integer actions (batch, T)
        rng: Sampling stream for the posterior latents
        sample_mode: 'sample' or 'argmax'
        scan_mode: Overrides the configured scan mode

    Returns:
        TrainForward
    """
    config = model.config
    scan_mode = scan_mode or config.scan_mode
    batch, length = obs.shape[0], obs.shape[1]
    window = config.lmamba_length
    needed = max(window, config.gmamba_length if model.gmamba is not None else window)
    if length < needed:
        raise ValueError(f"parallel_train_forward: sequence length {length} shorter than max(l, s) = {needed}")

    posterior = encode_obs(model, obs)
    latents = sample_latent(posterior, rng, sample_mode)
    features = feature_encode(model, latents.flat, actions)

    start = model.first_index
    steps = length - start
    if config.plain_backbone:
        u_local, _ = lmamba_sequence(model.lmamba, features, None, scan_mode)
        u_local = u_local[:, start:]
    else:
        # windows[b, j] = e[b, j : j + s], the block ending at step start + j
        windows = stack([features[:, k:k + steps] for k in range(window)], axis=2)
        u_windows = lmamba_forward(model.lmamba, windows.reshape(batch * steps, window, config.d_model), scan_mode)
        u_local = u_windows[:, -1].reshape(batch, steps, config.d_model)

    u_global = None
    if model.gmamba is not None:
        inputs = features[:, 1:] if model.gmamba.raw_input else feature_differences(features)
        u_all, _ = gmamba_sequence(model.gmamba, inputs, None, scan_mode)
        # entry j of u_all belongs to step j + 1
        if start > 0:
            u_global = u_all[:, start - 1:]
        else:
            u_first = gmamba_neutral_step(model, features[:, :1], None)
            u_global = concat([u_first, u_all], axis=1)

    reconstruction = decode_obs(model, latents.flat[:, start:])
    outputs = predict_heads(model, u_global, u_local, reconstruction)
    return TrainForward(posterior=posterior, latents=latents, outputs=outputs, first_index=start)


# ============================================================================
# Single-step (imagination) path
# ============================================================================

@dataclass
class ImaginationContext:
    """
    Rolling state for stepwise prediction: the last s features (zero padded while
    cold), carried Mamba states and the previous feature for the next difference
    """
    window: Optional[Tensor]
    local_states: Optional[list[MambaState]]
    global_states: Optional[list[MambaState]]
    prev_feature: Optional[Tensor]
    steps: int = 0

    @classmethod
    def empty(cls, model: GlamModel, batch: int) -> 'ImaginationContext':
        window = None
        if not model.config.plain_backbone:
            window = zeros((batch, model.config.lmamba_length, model.config.d_model))
        return cls(window=window, local_states=None, global_states=None, prev_feature=None, steps=0)

    @property
    def initialized(self) -> bool:
        return self.steps > 0

    @property
    def batch(self) -> int:
        return self.window.shape[0] if self.window is not None else self.prev_feature.shape[0]


def gmamba_neutral_step(model: GlamModel, step_in: Tensor, states: Optional[list[MambaState]]) -> Tensor:
    """u^g for a first step, before any difference exists; reads a zero difference (or the raw feature) without advancing the state"""
    first = step_in if model.gmamba.raw_input else zeros(step_in.shape, dtype=step_in.dtype)
    u_first, _ = gmamba_sequence(model.gmamba, first, states, 'sequential')
    return u_first


def single_step_forward(model: GlamModel, context: ImaginationContext, latent: Tensor, actions,
                        decode: bool = False) -> tuple[WorldModelOutputs, ImaginationContext]:
    """
    One imagination step from a context; pure, returns the advanced context

    Args:
        model: GlamModel
        context: ImaginationContext for the steps before t
        latent: z_t, shape (batch, K*C)
        actions: a_t, integer array (batch,)
        decode: Also reconstruct o_t from z_t

    Returns:
        (WorldModelOutputs for step t, context including step t)
    """
    config = model.config
    feature = feature_encode(model, latent, actions)
    batch = feature.shape[0]
    step_in = feature.reshape(batch, 1, config.d_model)

    if config.plain_backbone:
        u_local, local_states = lmamba_sequence(model.lmamba, step_in, context.local_states, 'sequential')
        window = None
    else:
        window = concat([context.window[:, 1:], step_in], axis=1)
        u_local = lmamba_forward(model.lmamba, window, 'sequential')
        local_states = None

    u_global, global_states = None, context.global_states
    if model.gmamba is not None:
        if context.prev_feature is None:
            u_global = gmamba_neutral_step(model, step_in, context.global_states)
        else:
            inputs = step_in if model.gmamba.raw_input else \
                step_in - context.prev_feature.reshape(batch, 1, config.d_model)
            u_global, global_states = gmamba_sequence(model.gmamba, inputs, context.global_states, 'sequential')
        u_global = u_global[:, 0]

    reconstruction = decode_obs(model, latent) if decode else None
    outputs = predict_heads(model, u_global, u_local[:, -1], reconstruction)
    new_context = ImaginationContext(
        window=window, local_states=local_states, global_states=global_states,
        prev_feature=feature, steps=context.steps + 1,
    )
    return outputs, new_context


def warm_up_context(model: GlamModel, obs, actions, rng: Rng, sample_mode: str = 'sample'):
    """
    Build imagination start states from real snippets of c steps

    The first c-1 steps are read into the context; the last observation gives the
    start latent.

    Args:
        obs: (batch, c, H, W)
        actions: (batch, c); the last action is not used

    Returns:
        (context, start latent (batch, K*C), fused feature of step c-2)
    """
    with no_grad():
        posterior = encode_obs(model, obs)
        latents = sample_latent(posterior, rng, sample_mode)
        batch, length = obs.shape[0], obs.shape[1]
        context = ImaginationContext.empty(model, batch)
        fused = zeros((batch, model.fusion_dim))
        for t in range(length - 1):
            outputs, context = single_step_forward(model, context, latents.flat[:, t], actions[:, t])
            fused = outputs.fused
        return context, latents.flat[:, length - 1], fused


def open_loop_video(model: GlamModel, obs: np.ndarray, actions: np.ndarray, context_length: int,
                    rng: Rng) -> np.ndarray:
    """
    Imagined frames following recorded actions after a real context

    Args:
        obs: (T, H, W) real frames of one episode segment
        actions: (T,) recorded actions
        context_length: Real steps given to the model before it runs open loop

    Returns:
        (T - context_length + 1, H, W) decoded frames for steps context_length-1..T-1
    """
    with no_grad():
        context, latent, _ = warm_up_context(
            model, obs[None, :context_length], actions[None, :context_length], rng, 'argmax')
        frames = []
        for t in range(context_length - 1, obs.shape[0]):
            outputs, context = single_step_forward(model, context, latent, actions[None, t], decode=True)
            frames.append(np.clip(outputs.reconstruction.data[0], 0.0, 1.0))
            latent = sample_latent(outputs.next_latent, rng, 'argmax').flat
        return np.stack(frames)
