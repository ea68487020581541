#!/usr/bin/env python3
"""
World-model losses
Prediction (reward two-hot, reconstruction, continuation), dynamics and
representation KL with free bits, the variation loss and their weighted total
"""

from dataclasses import dataclass

import numpy as np

from lib.distributions import LatentDist, categorical_kl, symlog, twohot_cross_entropy, twohot_encode
from lib.models import WorldModelConfig
from lib.tensor import Tensor, clamp_min, stop_gradient
from lib.world_model import TrainForward, WorldModelOutputs


@dataclass
class LossBreakdown:
    total: Tensor
    pred: Tensor
    dyn: Tensor
    rep: Tensor
    var: Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            'wm_loss_total': self.total.item(),
            'wm_loss_pred': self.pred.item(),
            'wm_loss_dyn': self.dyn.item(),
            'wm_loss_rep': self.rep.item(),
            'wm_loss_var': self.var.item(),
        }


def loss_pred(outputs: WorldModelOutputs, rewards: np.ndarray, continuations: np.ndarray,
              frames: np.ndarray, bins: np.ndarray) -> Tensor:
    """
    Reward cross-entropy against two-hot(symlog(r)) + per-frame squared error +
    continuation BCE, each averaged over batch and time

    Args:
        outputs: Head outputs over n aligned steps, leading shape (batch, n)
        rewards: (batch, n)
        continuations: (batch, n), 1 while the episode continues
        frames: (batch, n, H, W)
        bins: Reward bin centres (symlog space)
    """
    lead = outputs.reward_logits.shape[:-1]
    for name, target in (('rewards', rewards), ('continuations', continuations), ('frames', frames)):
        if tuple(np.shape(target)[:len(lead)]) != tuple(lead):
            raise ValueError(f"loss_pred: {name} shape {np.shape(target)} misaligned with predictions {lead}")

    reward_term = twohot_cross_entropy(outputs.reward_logits, twohot_encode(symlog(rewards), bins)).mean()

    recon = outputs.reconstruction
    error = recon - Tensor(frames, dtype=recon.dtype)
    recon_term = (error * error).sum(axis=(-2, -1)).mean()

    # BCE with logits: softplus(l) - c * l
    logit = outputs.continuation_logit
    cont_term = (logit.softplus() - Tensor(continuations, dtype=logit.dtype) * logit).mean()

    return reward_term + recon_term + cont_term


def loss_dyn_rep(posterior_next: LatentDist, prior: LatentDist, free_bits: float = 1.0) -> tuple[Tensor, Tensor]:
    """
    L_DYN = max(fb, KL[sg(posterior) || prior]); L_REP = max(fb, KL[posterior || sg(prior)])

    KL is summed over groups and averaged over batch and time before clamping.
    """
    post_probs = posterior_next.probs()
    prior_probs = prior.probs()
    dyn = clamp_min(categorical_kl(stop_gradient(post_probs), prior_probs).mean(), free_bits)
    rep = clamp_min(categorical_kl(post_probs, stop_gradient(prior_probs)).mean(), free_bits)
    return dyn, rep


def variation_target(latent_now: Tensor, latent_next: Tensor, groups: int, classes: int) -> np.ndarray:
    """Per-group softmax of sg(z_{t+1} - z_t)"""
    delta = (latent_next.data - latent_now.data).reshape(*latent_now.shape[:-1], groups, classes)
    shifted = np.exp(delta - delta.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def loss_var(latent_now: Tensor, latent_next: Tensor, variation_logits: Tensor, free_bits: float = 1.0) -> Tensor:
    """
    max(fb, KL[softmax(sg(z_{t+1} - z_t)) || softmax(variation logits)]) per group

    KL is summed over groups and averaged over batch and time before clamping.

    Args:
        latent_now, latent_next: Flattened one-hot latents (..., K*C)
        variation_logits: (..., K, C) from the u^g-only head path
    """
    groups, classes = variation_logits.shape[-2:]
    target = variation_target(latent_now, latent_next, groups, classes)
    log_target = np.log(np.maximum(target, np.finfo(np.float64).tiny))
    log_pred = variation_logits.log_softmax(axis=-1)
    target_t = Tensor(target, dtype=log_pred.dtype)
    kl = (target_t * (Tensor(log_target, dtype=log_pred.dtype) - log_pred)).sum(axis=(-2, -1))
    return clamp_min(kl.mean(), free_bits)


def total_loss(pred: Tensor, dyn: Tensor, rep: Tensor, var: Tensor,
               beta_dyn: float = 0.5, beta_rep: float = 0.1, beta_var: float = 0.1) -> Tensor:
    return pred + beta_dyn * dyn + beta_rep * rep + beta_var * var


def world_model_loss(forward: TrainForward, rewards: np.ndarray, dones: np.ndarray, obs: np.ndarray,
                     bins: np.ndarray, config: WorldModelConfig) -> LossBreakdown:
    """
    Align the parallel-path outputs with their targets and combine all terms

    Steps first_index..T-1 feed L_PRED; steps first_index..T-2 feed the terms
    that need z_{t+1}.
    """
    start = forward.first_index
    outputs = forward.outputs
    pred = loss_pred(outputs, rewards[:, start:], 1.0 - dones[:, start:].astype(np.float64), obs[:, start:], bins)

    prior = LatentDist(outputs.next_latent.logits[:, :-1], outputs.next_latent.unimix)
    dyn, rep = loss_dyn_rep(forward.posterior.slice_time(start + 1), prior, config.free_bits)

    if outputs.variation_logits is not None and config.beta_var > 0:
        latents = forward.latents.flat
        var = loss_var(latents[:, start:-1], latents[:, start + 1:], outputs.variation_logits[:, :-1],
                       config.free_bits)
    else:
        var = Tensor(0.0, dtype=pred.dtype)

    total = total_loss(pred, dyn, rep, var, config.beta_dyn, config.beta_rep, config.beta_var)
    return LossBreakdown(total=total, pred=pred, dyn=dyn, rep=rep, var=var)
