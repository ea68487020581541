#!/usr/bin/env python3
"""
Imagination actor-critic
Policy and value networks trained only on world-model rollouts, the horizon
schedule, lambda-returns and the REINFORCE / two-hot critic update
"""

from dataclasses import dataclass, field

import numpy as np

from lib.distributions import (
    sample_latent, symexp, symlog, twohot_cross_entropy, twohot_encode, twohot_expectation,
)
from lib.models import AgentConfig, HorizonSchedule
from lib.nn import MLP, Module
from lib.optim import adam_step
from lib.tensor import Rng, Tape, Tensor, no_grad, one_hot
from lib.world_model import GlamModel, ImaginationContext, single_step_forward


class ActorCritic(Module):
    """Both heads read s_t = concat(z_t, fused feature of the previous model step)"""

    def __init__(self, state_dim: int, action_count: int, config: AgentConfig, bins: np.ndarray, rng: Rng):
        self.actor = MLP(state_dim, config.hidden_dim, action_count, rng)
        self.critic = MLP(state_dim, config.hidden_dim, len(bins), rng, zero_last=True)
        self.bins = bins
        self.action_count = action_count


def agent_state(latent, fused) -> np.ndarray:
    latent = latent.data if isinstance(latent, Tensor) else latent
    fused = fused.data if isinstance(fused, Tensor) else fused
    return np.concatenate([latent, fused.astype(latent.dtype)], axis=-1)


def select_action(agent: ActorCritic, states: np.ndarray, rng: Rng, greedy: bool = False) -> np.ndarray:
    with no_grad():
        probs = agent.actor(Tensor(states)).softmax(axis=-1).data
    if greedy:
        return probs.argmax(axis=-1)
    return rng.categorical(probs)


def critic_value(agent: ActorCritic, states: np.ndarray) -> np.ndarray:
    with no_grad():
        probs = agent.critic(Tensor(states)).softmax(axis=-1)
    return symexp(twohot_expectation(probs, agent.bins))


def horizon_at(step: int, schedule: HorizonSchedule = HorizonSchedule()) -> int:
    """n_t = min(n_0 + floor(t / period) * increment, n_max)"""
    if step < 0:
        raise ValueError(f"horizon_at: step must be >= 0, got {step}")
    return min(schedule.n_0 + (step // schedule.period) * schedule.increment, schedule.n_max)


# ============================================================================
# Imagination
# ============================================================================

@dataclass
class ImaginationRollout:
    """
    n-step rollouts from B start states. latents and fused hold n+1 entries so
    that states[:, n] is the bootstrap state.
    """
    latents: np.ndarray        # (B, n+1, K*C)
    fused: np.ndarray          # (B, n+1, F)
    actions: np.ndarray        # (B, n)
    rewards: np.ndarray        # (B, n)
    continuations: np.ndarray  # (B, n)
    values: np.ndarray         # (B, n+1)

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    @property
    def states(self) -> np.ndarray:
        return agent_state(self.latents, self.fused)


def imagine(model: GlamModel, agent: ActorCritic, context: ImaginationContext, start_latent: Tensor,
            start_fused: Tensor, horizon: int, rng: Rng, greedy: bool = False) -> ImaginationRollout:
    """
    Autoregressive rollout inside the world model; nothing is recorded on a tape,
    so agent losses cannot reach world-model parameters

    Args:
        model: Trained GlamModel
        agent: ActorCritic choosing the actions
        context: Warmed-up ImaginationContext (from real snippets)
        start_latent: z at the start step, (B, K*C)
        start_fused: Fused feature of the step before the start, (B, F)
        horizon: Number of imagined steps n >= 1
        rng: Stream for actions and latent samples
        greedy: Argmax actions instead of sampling

    Returns:
        ImaginationRollout
    """
    if context is None or not context.initialized:
        raise RuntimeError("imagine: imagination context is uninitialized; warm it up on real steps first")
    if horizon < 1:
        raise ValueError(f"imagine: horizon must be >= 1, got {horizon}")

    latents, fused_list, actions, rewards, conts = [start_latent.data], [start_fused.data], [], [], []
    latent, fused = start_latent, start_fused
    with no_grad():
        for _ in range(horizon):
            action = select_action(agent, agent_state(latent, fused), rng, greedy)
            outputs, context = single_step_forward(model, context, latent, action)
            latent = sample_latent(outputs.next_latent, rng).flat
            fused = outputs.fused
            actions.append(action)
            rewards.append(outputs.reward_mean(model.bins))
            conts.append(outputs.continuation_prob.data)
            latents.append(latent.data)
            fused_list.append(fused.data)

    latents = np.stack(latents, axis=1)
    fused_all = np.stack(fused_list, axis=1)
    return ImaginationRollout(
        latents=latents,
        fused=fused_all,
        actions=np.stack(actions, axis=1),
        rewards=np.stack(rewards, axis=1),
        continuations=np.stack(conts, axis=1),
        values=critic_value(agent, agent_state(latents, fused_all)),
    )


def lambda_returns(rewards: np.ndarray, continuations: np.ndarray, values: np.ndarray,
                   gamma: float, lam: float) -> np.ndarray:
    """
    R_t = r_t + gamma * c_t * ((1 - lam) * V_{t+1} + lam * R_{t+1}), R_n = V_n

    Args:
        rewards, continuations: (B, n)
        values: (B, n+1)

    Returns:
        (B, n)
    """
    horizon = rewards.shape[1]
    if values.shape[1] != horizon + 1:
        raise ValueError(f"lambda_returns: values need {horizon + 1} steps, got {values.shape[1]}")
    returns = np.zeros_like(rewards, dtype=np.float64)
    following = values[:, horizon].astype(np.float64)
    for t in range(horizon - 1, -1, -1):
        following = rewards[:, t] + gamma * continuations[:, t] * (
            (1 - lam) * values[:, t + 1] + lam * following)
        returns[:, t] = following
    return returns


@dataclass
class ReturnNormalizer:
    """EMA of the 5th-95th percentile range of returns; advantages divide by max(1, scale)"""
    decay: float = 0.99
    scale: float = 0.0
    updates: int = field(default=0)

    def update(self, returns: np.ndarray) -> float:
        spread = float(np.percentile(returns, 95) - np.percentile(returns, 5))
        self.scale = spread if self.updates == 0 else self.decay * self.scale + (1 - self.decay) * spread
        self.updates += 1
        return self.scale

    @property
    def divisor(self) -> float:
        return max(1.0, self.scale)


def actor_critic_losses(agent: ActorCritic, rollout: ImaginationRollout, returns: np.ndarray,
                        divisor: float, entropy_coef: float) -> tuple[Tensor, Tensor, Tensor]:
    """
    REINFORCE with normalized advantage and entropy bonus; critic two-hot
    cross-entropy to symlog(returns)

    Returns:
        (actor loss, critic loss, mean policy entropy)
    """
    horizon = rollout.horizon
    states = Tensor(rollout.states[:, :horizon])

    log_probs = agent.actor(states).log_softmax(axis=-1)
    taken = one_hot(rollout.actions, agent.action_count)
    chosen = (log_probs * Tensor(taken.data, dtype=log_probs.dtype)).sum(axis=-1)
    entropy = -(log_probs.exp() * log_probs).sum(axis=-1).mean()

    advantage = (returns - rollout.values[:, :horizon]) / divisor
    actor_loss = -(Tensor(advantage, dtype=chosen.dtype) * chosen).mean() - entropy_coef * entropy

    targets = twohot_encode(symlog(returns), agent.bins)
    critic_loss = twohot_cross_entropy(agent.critic(states), targets).mean()
    return actor_loss, critic_loss, entropy


def agent_update(agent: ActorCritic, rollout: ImaginationRollout, normalizer: ReturnNormalizer,
                 config: AgentConfig) -> dict[str, float]:
    """One Adam step on actor and critic from a completed rollout"""
    returns = lambda_returns(rollout.rewards, rollout.continuations, rollout.values, config.gamma, config.lam)
    normalizer.update(returns)

    with Tape() as tape:
        actor_loss, critic_loss, entropy = actor_critic_losses(
            agent, rollout, returns, normalizer.divisor, config.entropy_coef)
        loss = actor_loss + critic_loss
    params = agent.parameters()
    grads = tape.backward(loss, params)
    grad_norm = adam_step(params, grads, config.lr, config.clip_norm)

    return {
        'actor_loss': actor_loss.item(),
        'critic_loss': critic_loss.item(),
        'policy_entropy': entropy.item(),
        'agent_grad_norm': grad_norm,
    }
