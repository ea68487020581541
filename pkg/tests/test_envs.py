#!/usr/bin/env python3
"""
Unit tests for lib.envs
Deterministic toy games, state snapshots and the frame processor
"""

import json
import unittest

import numpy as np

from lib.envs import (
    BALL_PERIOD, EpisodeFinishedError, FrameProcessor, MiniCollect, MiniPong, make_env, make_processed_env,
    to_frame,
)
from lib.models import EnvConfig
from lib.tensor import Rng

NOOP = 0


def play(env, actions):
    return [env.step(a) for a in actions]


class TestMiniPong(unittest.TestCase):
    """Test the paddle game rules"""

    def test_noop_misses_first_serve(self):
        # the serve needs 14 ball moves to reach the agent column and never lands on the idle paddle
        for seed in range(10):
            with self.subTest(seed=seed):
                env = MiniPong()
                env.reset(Rng(seed, 1))
                rewards = [reward for _, reward, _ in play(env, [NOOP] * (14 * BALL_PERIOD))]
                self.assertEqual(rewards[:-1], [0.0] * (14 * BALL_PERIOD - 1))
                self.assertEqual(rewards[-1], -1.0)
                self.assertEqual(env.scores, [0, 1])

    def test_processed_noop_penalty_at_step_14(self):
        env = make_processed_env(EnvConfig(name='minipong', action_repeat=4))
        env.reset(Rng(0, 1))
        rewards = [reward for _, reward, _ in play(env, [NOOP] * 14)]
        self.assertEqual(rewards, [0.0] * 13 + [-1.0])

    def test_same_seed_same_episode(self):
        actions = np.random.default_rng(0).integers(0, 3, size=200)
        runs = []
        for _ in range(2):
            env = MiniPong()
            first = env.reset(Rng(4, 1))
            runs.append([first] + [frame for frame, _, _ in play(env, actions)])
        for a, b in zip(*runs):
            np.testing.assert_array_equal(a, b)

    def test_episode_ends_at_five_points(self):
        env = MiniPong()
        env.reset(Rng(0, 1))
        done, total = False, 0.0
        while not done:
            _, reward, done = env.step(NOOP)
            total += reward
        self.assertEqual(total, -5.0)
        with self.assertRaises(EpisodeFinishedError):
            env.step(NOOP)

    def test_step_limit(self):
        env = MiniPong(max_episode_steps=3)
        env.reset(Rng(0))
        self.assertEqual([done for _, _, done in play(env, [1, 2, 0])], [False, False, True])

    def test_invalid_action(self):
        env = MiniPong()
        env.reset(Rng(0))
        with self.assertRaises(ValueError):
            env.step(3)

    def test_frame_contents(self):
        env = MiniPong()
        frame = env.reset(Rng(0))
        self.assertEqual(frame.shape, (32, 32))
        self.assertEqual(frame.max(), 1.0)
        self.assertEqual(int((frame == 170 / 255.0).sum()), 12)

    def test_state_round_trip(self):
        actions = np.random.default_rng(1).integers(0, 3, size=120)
        env = MiniPong()
        env.reset(Rng(7, 1))
        play(env, actions[:40])
        state = json.loads(json.dumps(env.get_state()))
        expected = play(env, actions[40:])

        restored = MiniPong()
        restored.set_state(state)
        for (frame, reward, done), (e_frame, e_reward, e_done) in zip(play(restored, actions[40:]), expected):
            np.testing.assert_array_equal(frame, e_frame)
            self.assertEqual((reward, done), (e_reward, e_done))

    def test_set_state_adopts_given_rng(self):
        env = MiniPong()
        env.reset(Rng(7, 1))
        state = env.get_state()
        rng = Rng(0, 0)
        restored = MiniPong()
        restored.set_state(state, rng)
        self.assertIs(restored.rng, rng)
        self.assertEqual(rng.get_state(), state['rng'])


class TestMiniCollect(unittest.TestCase):
    """Test the pellet game"""

    def test_pellet_count_constant(self):
        env = MiniCollect()
        env.reset(Rng(0))
        total = 0.0
        for action in np.random.default_rng(0).integers(0, 5, size=300):
            _, reward, _ = env.step(action)
            total += reward
            self.assertEqual(len(env.pellets), 6)
            self.assertNotIn(env.agent, env.pellets)
        self.assertGreaterEqual(total, 0.0)

    def test_reward_for_pellet(self):
        env = MiniCollect()
        env.reset(Rng(0))
        env.pellets[0] = [env.agent[0] + 1, env.agent[1]]
        _, reward, _ = env.step(4)
        self.assertEqual(reward, 1.0)

    def test_walls(self):
        env = MiniCollect()
        env.reset(Rng(0))
        play(env, [3] * 10)
        self.assertEqual(env.agent[0], 0)

    def test_episode_length(self):
        env = MiniCollect(max_episode_steps=500)
        env.reset(Rng(0))
        dones = [done for _, _, done in play(env, [0] * 500)]
        self.assertFalse(any(dones[:-1]))
        self.assertTrue(dones[-1])

    def test_state_round_trip(self):
        env = MiniCollect()
        env.reset(Rng(3))
        play(env, [4, 4, 2])
        state = json.loads(json.dumps(env.get_state()))
        actions = np.random.default_rng(3).integers(0, 5, size=100)
        expected = [r for _, r, _ in play(env, actions)]
        restored = MiniCollect()
        restored.set_state(state)
        self.assertEqual([r for _, r, _ in play(restored, actions)], expected)


class FakeEnv:
    """Emits frames with one bright pixel per step, done after `length` steps"""

    def __init__(self, length: int):
        self.length = length
        self.spec = MiniPong().spec
        self.calls = 0

    def reset(self, rng):
        self.calls = 0
        return np.zeros((32, 32), dtype=np.float32)

    def step(self, action):
        self.calls += 1
        frame = np.zeros((32, 32), dtype=np.float32)
        frame[0, self.calls] = 1.0
        return frame, 0.5, self.calls >= self.length


class TestFrameProcessor(unittest.TestCase):
    """Test action repeat, reward sums and max-pooling"""

    def test_max_of_last_two_frames(self):
        processor = FrameProcessor(FakeEnv(100), action_repeat=4, frame_size=32)
        processor.reset(Rng(0))
        frame, reward, done = processor.step(0)
        self.assertEqual(reward, 2.0)
        self.assertFalse(done)
        self.assertEqual(sorted(np.flatnonzero(frame[0]).tolist()), [3, 4])

    def test_stops_at_done(self):
        env = FakeEnv(2)
        processor = FrameProcessor(env, action_repeat=4, frame_size=32)
        processor.reset(Rng(0))
        _, reward, done = processor.step(0)
        self.assertTrue(done)
        self.assertEqual(env.calls, 2)
        self.assertEqual(reward, 1.0)

    def test_state_round_trip(self):
        processor = make_processed_env(EnvConfig(name='minicollect'))
        processor.reset(Rng(1))
        processor.step(4)
        state = json.loads(json.dumps(processor.get_state()))
        expected = processor.step(2)[0]
        restored = make_processed_env(EnvConfig(name='minicollect'))
        restored.set_state(state)
        np.testing.assert_array_equal(restored.step(2)[0], expected)


class TestFrames(unittest.TestCase):
    """Test resizing and environment construction"""

    def test_sixty_four_pixel_frames(self):
        env = make_env(EnvConfig(name='minipong', frame_size=64))
        raw = env.reset(Rng(0))
        self.assertEqual(raw.shape, (64, 64))
        small = to_frame(raw, 32)
        self.assertEqual(small.shape, (32, 32))
        np.testing.assert_allclose(small, MiniPong().reset(Rng(0)), atol=1e-6)

    def test_rgb_to_gray(self):
        rgb = np.ones((32, 32, 3), dtype=np.float32)
        np.testing.assert_allclose(to_frame(rgb, 32), np.ones((32, 32)), atol=1e-6)

    def test_upscale(self):
        self.assertEqual(to_frame(np.zeros((16, 16)), 32).shape, (32, 32))

    def test_unknown_env(self):
        with self.assertRaises(ValueError):
            make_env(EnvConfig.model_construct(name='breakout', frame_size=32, max_episode_steps=None))

    def test_spec(self):
        self.assertEqual(make_env(EnvConfig(name='minicollect')).spec.action_count, 5)
        self.assertEqual(make_env(EnvConfig(name='minipong', frame_size=64)).spec.frame_shape, (64, 64))


if __name__ == '__main__':
    unittest.main()
