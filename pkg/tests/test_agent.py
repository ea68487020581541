#!/usr/bin/env python3
"""
Unit tests for lib.agent
Horizon schedule, lambda-returns, return scaling and imagination rollouts
"""

import unittest

import numpy as np

from lib.agent import (
    ActorCritic, ReturnNormalizer, agent_update, horizon_at, imagine, lambda_returns, select_action,
)
from lib.models import AgentConfig, HorizonSchedule
from lib.tensor import Rng
from lib.world_model import ImaginationContext, warm_up_context
from tests.support import ACTIONS, random_episode, tiny_model


def build_agent(model, seed: int = 1) -> ActorCritic:
    config = AgentConfig(hidden_dim=8)
    return ActorCritic(model.latent_dim + model.fusion_dim, ACTIONS, config, model.bins, Rng(seed)).bind_names('agent')


class TestHorizonSchedule(unittest.TestCase):
    """Test the default 16 -> 24 -> 32 schedule"""

    def test_boundaries(self):
        expected = {0: 16, 24999: 16, 25000: 24, 49999: 24, 50000: 32, 75000: 32, 10**7: 32}
        for step, horizon in expected.items():
            with self.subTest(step=step):
                self.assertEqual(horizon_at(step), horizon)

    def test_custom_schedule(self):
        schedule = HorizonSchedule(n_0=4, increment=2, period=10, n_max=7)
        self.assertEqual([horizon_at(s, schedule) for s in (0, 9, 10, 20, 30)], [4, 4, 6, 7, 7])

    def test_from_config(self):
        schedule = HorizonSchedule.from_config(AgentConfig(horizon_initial=8, horizon_max=24))
        self.assertEqual((schedule.n_0, schedule.n_max), (8, 24))

    def test_negative_step(self):
        with self.assertRaises(ValueError):
            horizon_at(-1)


class TestLambdaReturns(unittest.TestCase):
    """Test the backward recursion against hand computations"""

    def test_hand_computed(self):
        returns = lambda_returns(np.array([[1.0, 2.0]]), np.array([[1.0, 0.5]]), np.array([[3.0, 4.0, 5.0]]),
                                 gamma=0.9, lam=0.5)
        np.testing.assert_allclose(returns, [[4.7125, 4.25]])

    def test_lambda_zero_is_one_step(self):
        rewards = np.array([[1.0, 0.0, 2.0]])
        conts = np.ones((1, 3))
        values = np.array([[0.0, 1.0, 2.0, 3.0]])
        returns = lambda_returns(rewards, conts, values, gamma=0.5, lam=0.0)
        np.testing.assert_allclose(returns, rewards + 0.5 * values[:, 1:])

    def test_terminal_cuts_bootstrap(self):
        returns = lambda_returns(np.array([[1.0]]), np.array([[0.0]]), np.array([[7.0, 100.0]]), 0.99, 0.95)
        np.testing.assert_allclose(returns, [[1.0]])

    def test_value_length_checked(self):
        with self.assertRaises(ValueError):
            lambda_returns(np.zeros((2, 3)), np.ones((2, 3)), np.zeros((2, 3)), 0.99, 0.95)


class TestReturnNormalizer(unittest.TestCase):
    """Test the percentile-range scale"""

    def test_first_update_sets_scale(self):
        normalizer = ReturnNormalizer(decay=0.99)
        normalizer.update(np.arange(101.0))
        self.assertAlmostEqual(normalizer.scale, 90.0)
        normalizer.update(np.zeros(10))
        self.assertAlmostEqual(normalizer.scale, 89.1)
        self.assertEqual(normalizer.updates, 2)

    def test_divisor_floor(self):
        normalizer = ReturnNormalizer()
        normalizer.update(np.array([0.0, 0.1, 0.2]))
        self.assertEqual(normalizer.divisor, 1.0)


class TestImagination(unittest.TestCase):
    """Test rollouts inside the world model"""

    def setUp(self):
        self.model = tiny_model(seed=2)
        self.agent = build_agent(self.model)
        obs, actions = random_episode(np.random.default_rng(2), 3, 5)
        self.context, self.latent, self.fused = warm_up_context(self.model, obs, actions, Rng(0))

    def test_uninitialized_context(self):
        with self.assertRaises(RuntimeError):
            imagine(self.model, self.agent, ImaginationContext.empty(self.model, 3), self.latent, self.fused, 4,
                    Rng(0))

    def test_horizon_must_be_positive(self):
        with self.assertRaises(ValueError):
            imagine(self.model, self.agent, self.context, self.latent, self.fused, 0, Rng(0))

    def test_rollout_shapes(self):
        rollout = imagine(self.model, self.agent, self.context, self.latent, self.fused, 4, Rng(0))
        self.assertEqual(rollout.horizon, 4)
        self.assertEqual(rollout.latents.shape, (3, 5, self.model.latent_dim))
        self.assertEqual(rollout.fused.shape, (3, 5, self.model.fusion_dim))
        self.assertEqual(rollout.rewards.shape, (3, 4))
        self.assertEqual(rollout.values.shape, (3, 5))
        self.assertTrue(np.all((rollout.continuations > 0) & (rollout.continuations < 1)))
        self.assertTrue(np.all((rollout.actions >= 0) & (rollout.actions < ACTIONS)))

    def test_rollout_is_seeded(self):
        a = imagine(self.model, self.agent, self.context, self.latent, self.fused, 3, Rng(5))
        b = imagine(self.model, self.agent, self.context, self.latent, self.fused, 3, Rng(5))
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.latents, b.latents)

    def test_update_leaves_world_model_untouched(self):
        before = self.model.state_dict()
        agent_before = self.agent.state_dict()
        rollout = imagine(self.model, self.agent, self.context, self.latent, self.fused, 4, Rng(0))
        metrics = agent_update(self.agent, rollout, ReturnNormalizer(), AgentConfig(hidden_dim=8, lr=1e-3))

        for name, value in self.model.state_dict().items():
            np.testing.assert_array_equal(value, before[name], err_msg=name)
        changed = [name for name, value in self.agent.state_dict().items()
                   if not np.array_equal(value, agent_before[name])]
        self.assertTrue(changed)
        self.assertEqual(set(metrics), {'actor_loss', 'critic_loss', 'policy_entropy', 'agent_grad_norm'})
        self.assertTrue(all(np.isfinite(v) for v in metrics.values()))

    def test_greedy_selection(self):
        states = np.zeros((4, self.model.latent_dim + self.model.fusion_dim))
        picks = select_action(self.agent, states, Rng(0), greedy=True)
        self.assertEqual(len(set(picks.tolist())), 1)


if __name__ == '__main__':
    unittest.main()
