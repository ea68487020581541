#!/usr/bin/env python3
"""
Unit tests for lib.losses
Free-bits clamping, target alignment, the variation term and loss gradients
"""

import unittest

import numpy as np

from lib.distributions import LatentDist
from lib.gradcheck import grad_check
from lib.losses import loss_dyn_rep, loss_pred, loss_var, total_loss, variation_target, world_model_loss
from lib.tensor import Parameter, Rng, Tape, Tensor, no_grad, precision
from lib.world_model import WorldModelOutputs, parallel_train_forward
from tests.support import random_episode, tiny_model


def outputs_of(reward_logits, continuation_logit, reconstruction) -> WorldModelOutputs:
    lead = continuation_logit.shape
    return WorldModelOutputs(
        next_latent=LatentDist(Tensor(np.zeros(lead + (2, 3)))),
        reward_logits=reward_logits,
        continuation_logit=continuation_logit,
        fused=Tensor(np.zeros(lead + (4,))),
        reconstruction=reconstruction,
    )


class TestFreeBits(unittest.TestCase):
    """Test the clamp on the dynamics and representation terms"""

    def test_identical_distributions_give_exactly_one(self):
        with precision('float64'):
            logits = np.random.default_rng(0).normal(size=(2, 5, 3, 4))
            post = Parameter(logits, name='post')
            prior = Parameter(logits.copy(), name='prior')
            with Tape() as tape:
                dyn, rep = loss_dyn_rep(LatentDist(post), LatentDist(prior), free_bits=1.0)
                loss = dyn + rep
            grads = tape.backward(loss, [post, prior])
        self.assertEqual(dyn.item(), 1.0)
        self.assertEqual(rep.item(), 1.0)
        np.testing.assert_array_equal(grads['post'].data, np.zeros_like(logits))
        np.testing.assert_array_equal(grads['prior'].data, np.zeros_like(logits))

    def test_large_divergence_passes_through(self):
        with precision('float64'):
            post_logits = np.zeros((1, 2, 3, 4))
            post_logits[..., 0] = 10.0
            prior_logits = np.zeros((1, 2, 3, 4))
            prior_logits[..., 1] = 10.0
            post = Parameter(post_logits, name='post')
            prior = Parameter(prior_logits, name='prior')
            with Tape() as tape:
                dyn, rep = loss_dyn_rep(LatentDist(post), LatentDist(prior), free_bits=1.0)
                loss = dyn + rep
            grads = tape.backward(loss, [post, prior])
        self.assertGreater(dyn.item(), 1.0)
        self.assertAlmostEqual(dyn.item(), rep.item())
        # dynamics gradient only reaches the prior, representation only the posterior
        self.assertGreater(np.abs(grads['prior'].data).sum(), 0.0)
        self.assertGreater(np.abs(grads['post'].data).sum(), 0.0)

    def test_stop_gradients_split_the_terms(self):
        with precision('float64'):
            post = Parameter(np.random.default_rng(1).normal(size=(1, 2, 3, 4)) * 4, name='post')
            prior = Parameter(np.random.default_rng(2).normal(size=(1, 2, 3, 4)) * 4, name='prior')
            with Tape() as tape:
                dyn, _ = loss_dyn_rep(LatentDist(post), LatentDist(prior), free_bits=0.0)
            grads = tape.backward(dyn, [post, prior])
        np.testing.assert_array_equal(grads['post'].data, np.zeros((1, 2, 3, 4)))
        self.assertGreater(np.abs(grads['prior'].data).sum(), 0.0)

    def test_gradients_without_clamp(self):
        rng = np.random.default_rng(3)
        report = grad_check(
            lambda a, b: sum(loss_dyn_rep(LatentDist(a), LatentDist(b), free_bits=0.0), Tensor(0.0)),
            [rng.normal(size=(2, 2, 2, 3)), rng.normal(size=(2, 2, 2, 3))],
        )
        self.assertTrue(report.passed)


class TestPredictionLoss(unittest.TestCase):
    """Test reward, reconstruction and continuation terms"""

    def test_misaligned_targets(self):
        outputs = outputs_of(Tensor(np.zeros((2, 3, 5))), Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3, 4, 4))))
        bins = np.linspace(-1, 1, 5)
        with self.assertRaises(ValueError):
            loss_pred(outputs, np.zeros((2, 4)), np.ones((2, 3)), np.zeros((2, 3, 4, 4)), bins)
        with self.assertRaises(ValueError):
            loss_pred(outputs, np.zeros((2, 3)), np.ones((2, 3)), np.zeros((3, 3, 4, 4)), bins)

    def test_known_value(self):
        # uniform reward logits, zero continuation logit, reconstruction off by 0.5 at one pixel
        with precision('float64'):
            recon = np.zeros((1, 1, 2, 2))
            frames = recon.copy()
            frames[0, 0, 0, 0] = 0.5
            outputs = outputs_of(Tensor(np.zeros((1, 1, 5))), Tensor(np.zeros((1, 1))), Tensor(recon))
            loss = loss_pred(outputs, np.zeros((1, 1)), np.ones((1, 1)), frames, np.linspace(-1, 1, 5))
        self.assertAlmostEqual(loss.item(), np.log(5.0) + 0.25 + np.log(2.0))

    def test_gradients(self):
        rng = np.random.default_rng(4)
        rewards = rng.normal(size=(2, 3)) * 3
        conts = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
        frames = rng.uniform(size=(2, 3, 4, 4))
        bins = np.linspace(-3, 3, 9)
        report = grad_check(
            lambda r, c, x: loss_pred(outputs_of(r, c, x), rewards, conts, frames, bins),
            [rng.normal(size=(2, 3, 9)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3, 4, 4))],
        )
        self.assertTrue(report.passed)


class TestVariationLoss(unittest.TestCase):
    """Test the variation target and its KL"""

    def test_target_of_class_switch(self):
        now = Tensor(np.array([[1.0, 0.0, 0.0, 0.0]]))
        nxt = Tensor(np.array([[0.0, 1.0, 0.0, 0.0]]))
        target = variation_target(now, nxt, groups=1, classes=4)
        expected = np.exp([-1.0, 1.0, 0.0, 0.0])
        np.testing.assert_allclose(target[0, 0], expected / expected.sum())

    def test_unchanged_latent_gives_uniform_target(self):
        z = Tensor(np.eye(4)[[2]])
        np.testing.assert_allclose(variation_target(z, z, 1, 4), np.full((1, 1, 4), 0.25))

    def test_gradients(self):
        rng = np.random.default_rng(5)
        now = Tensor(np.eye(3)[rng.integers(0, 3, size=(2, 2))].reshape(2, 6))
        nxt = Tensor(np.eye(3)[rng.integers(0, 3, size=(2, 2))].reshape(2, 6))
        report = grad_check(lambda v: loss_var(now, nxt, v, free_bits=0.0), [rng.normal(size=(2, 2, 3))])
        self.assertTrue(report.passed)

    def test_clamped_below_free_bits(self):
        z = Tensor(np.eye(4)[[1]])
        loss = loss_var(z, z, Tensor(np.zeros((1, 1, 4))), free_bits=1.0)
        self.assertAlmostEqual(loss.item(), 1.0)


class TestWorldModelLoss(unittest.TestCase):
    """Test the combined loss on a tiny model"""

    def batch(self, model, seed=0):
        rng = np.random.default_rng(seed)
        obs, actions = random_episode(rng, 2, 8)
        rewards = rng.integers(-1, 2, size=(2, 8)).astype(np.float64)
        dones = np.zeros((2, 8), dtype=bool)
        dones[1, -1] = True
        return obs, actions, rewards, dones

    def test_weighted_total(self):
        model = tiny_model()
        obs, actions, rewards, dones = self.batch(model)
        with no_grad():
            forward = parallel_train_forward(model, obs, actions, Rng(0))
            losses = world_model_loss(forward, rewards, dones, obs, model.bins, model.config).as_floats()
        expected = (losses['wm_loss_pred'] + 0.5 * losses['wm_loss_dyn'] + 0.1 * losses['wm_loss_rep']
                    + 0.1 * losses['wm_loss_var'])
        self.assertAlmostEqual(losses['wm_loss_total'], expected, places=4)
        self.assertGreaterEqual(losses['wm_loss_dyn'], 1.0)
        self.assertGreaterEqual(losses['wm_loss_var'], 1.0)

    def test_variation_term_off(self):
        for overrides in ({'beta_var': 0.0}, {'disable_gmamba': True}, {'disable_lmamba_variation': True}):
            with self.subTest(**overrides):
                model = tiny_model(**overrides)
                obs, actions, rewards, dones = self.batch(model)
                with no_grad():
                    forward = parallel_train_forward(model, obs, actions, Rng(0))
                    losses = world_model_loss(forward, rewards, dones, obs, model.bins, model.config)
                self.assertEqual(losses.var.item(), 0.0)

    def test_gradient_reaches_every_module(self):
        model = tiny_model()
        obs, actions, rewards, dones = self.batch(model, seed=1)
        with Tape() as tape:
            forward = parallel_train_forward(model, obs, actions, Rng(0))
            losses = world_model_loss(forward, rewards, dones, obs, model.bins, model.config)
        grads = tape.backward(losses.total, model.parameters())
        for prefix in ('world_model.encoder', 'world_model.decoder', 'world_model.gmamba', 'world_model.lmamba',
                       'world_model.dynamics_head', 'world_model.reward_head', 'world_model.continuation_head'):
            total = sum(float(np.abs(g.data).sum()) for name, g in grads.items() if name.startswith(prefix))
            self.assertGreater(total, 0.0, prefix)

    def test_total_loss_weights(self):
        parts = [Tensor(v) for v in (1.0, 2.0, 3.0, 4.0)]
        self.assertAlmostEqual(total_loss(*parts, beta_dyn=0.5, beta_rep=0.1, beta_var=0.1).item(), 2.7, places=5)


if __name__ == '__main__':
    unittest.main()
