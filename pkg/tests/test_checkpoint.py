#!/usr/bin/env python3
"""
Unit tests for lib.checkpoint
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np

from lib.checkpoint import CheckpointMismatchError, load_checkpoint, read_checkpoint, save_checkpoint, stored_config
from lib.optim import adam_step
from lib.replay import ReplayBuffer
from lib.tensor import ShapeError
from tests.support import FRAME, smoke_config, tiny_model


class TestCheckpoint(unittest.TestCase):
    """Test saving and restoring parameters, optimizer moments and replay"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'ckpt' / 'step.npz'
        self.config = smoke_config()
        self.model = tiny_model(seed=1)
        params = self.model.parameters()
        adam_step(params, {p.name: np.ones_like(p.data) for p in params}, lr=1e-2, clip_norm=1.0)
        self.replay = ReplayBuffer(32, (FRAME, FRAME))
        for t in range(40):
            self.replay.append(np.full((FRAME, FRAME), t / 40), t % 3, float(t), False, t // 10)
        save_checkpoint(self.path, self.config, params, self.replay, {'env_step': 40},
                        extra_arrays={'obs': np.arange(4.0)})

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        model = tiny_model(seed=2)
        replay = ReplayBuffer(32, (FRAME, FRAME))
        meta, state = load_checkpoint(self.path, self.config, model.parameters(), replay)

        self.assertEqual(meta['env_step'], 40)
        np.testing.assert_array_equal(state['obs'], np.arange(4.0))
        for a, b in zip(self.model.parameters(), model.parameters()):
            np.testing.assert_array_equal(a.data, b.data)
            np.testing.assert_array_equal(a.adam_state.m, b.adam_state.m)
            self.assertEqual(b.adam_state.step, 1)
        self.assertEqual(replay.total, 40)
        np.testing.assert_array_equal(replay.frames, self.replay.frames)

    def test_no_temporary_file_left(self):
        self.assertEqual([p.name for p in self.path.parent.iterdir()], ['step.npz'])

    def test_metadata(self):
        meta, arrays = read_checkpoint(self.path)
        self.assertEqual(meta['config_hash'], self.config.config_hash())
        self.assertIn('replay/frames', arrays)
        self.assertEqual(stored_config(self.path), self.config)

    def test_hash_mismatch(self):
        other = self.config.with_overrides({'world_model.lr': 5e-4})
        with self.assertRaises(CheckpointMismatchError):
            load_checkpoint(self.path, other, tiny_model(seed=2).parameters(), None)
        with self.assertLogs('lib.checkpoint', level='WARNING'):
            load_checkpoint(self.path, other, tiny_model(seed=2).parameters(), None, force=True)

    def test_run_length_keys_do_not_change_hash(self):
        longer = self.config.with_overrides({'run.total_env_steps': 123456})
        load_checkpoint(self.path, longer, tiny_model(seed=2).parameters(), None)

    def test_missing_parameter(self):
        model = tiny_model(seed=2)
        model.lmamba.post_map.weight.name = 'world_model.not_there'
        with self.assertRaises(KeyError):
            load_checkpoint(self.path, self.config, model.parameters(), None)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            load_checkpoint(self.path, self.config, tiny_model(seed=2, hidden_dim=9).parameters(), None)


if __name__ == '__main__':
    unittest.main()
