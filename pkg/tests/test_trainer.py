#!/usr/bin/env python3
"""
Unit tests for lib.trainer
Update cadence, seeded determinism, bit-identical resume, evaluation and ablation sweeps
"""

import os
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from lib.checkpoint import CheckpointMismatchError
from lib.envs import make_processed_env
from lib.init_config import ABLATION_GRID, HORIZON_GRID, LONG_TESTS_ENV_VAR, RNG_STREAMS
from lib.models import Config, EnvSpec, MetricsRecord
from lib.replay import TrajectoryBatch, decode_frame, read_episode_log, replay_episode_log
from lib.tensor import Rng
from lib.trainer import (
    GlamTrainer, NonFiniteLossError, ablation_config, evaluate, open_loop_frames, run_ablation,
)
from tests.support import smoke_config

STEPS = 120


def comparable(records: list[MetricsRecord]) -> list[dict]:
    return [r.model_dump(exclude={'wall_clock'}) for r in records]


class CountingEnv:
    """Deterministic 32x32 game: +1 for action 0, episodes of 12 steps"""

    def __init__(self):
        self.spec = EnvSpec(name='counting', frame_shape=(32, 32), action_count=3, max_episode_steps=12,
                            dynamics="a bar grows one row per step")
        self.t = 0

    def frame(self) -> np.ndarray:
        frame = np.zeros((32, 32), dtype=np.float32)
        frame[:self.t + 1, :4] = 1.0
        return frame

    def reset(self, rng) -> np.ndarray:
        self.t = 0
        return self.frame()

    def step(self, action: int):
        self.t += 1
        return self.frame(), 1.0 if action == 0 else 0.0, self.t >= 12

    def get_state(self) -> dict:
        return {'t': self.t}

    def set_state(self, state: dict, rng=None):
        self.t = state['t']


class TestTrainingRuns(unittest.TestCase):
    """Test short smoke runs that share one set of artifacts"""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.mkdtemp()
        root = Path(cls.tmp)
        cls.config = smoke_config(**{'run.checkpoint_every': 110})
        cls.first = GlamTrainer(cls.config, root / 'first')
        cls.first_final = cls.first.train(STEPS)
        cls.second = GlamTrainer(cls.config.with_overrides({'run.checkpoint_every': 1000}), root / 'second')
        cls.second.train(STEPS)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)

    def test_update_cadence(self):
        """Test one world-model and one agent update per step after warmup"""
        self.assertEqual(self.first.env_step, STEPS)
        self.assertEqual(self.first.wm_updates, STEPS - 100)
        self.assertEqual(self.first.agent_updates, STEPS - 100)
        self.assertTrue(self.first_final.exists())
        self.assertTrue(self.first.checkpoint_path(110).exists())

    def test_metrics_stream(self):
        """Test one record per log interval, losses only after warmup"""
        records = MetricsRecord.from_jsonl_file(self.first.metrics_path)
        self.assertEqual([r.env_step for r in records], list(range(10, STEPS + 1, 10)))
        self.assertTrue(all(r.wm_loss_total is None for r in records if r.env_step <= 100))
        for record in records[-2:]:
            self.assertTrue(np.isfinite(record.wm_loss_total))
            self.assertTrue(np.isfinite(record.actor_loss))
            self.assertEqual(record.horizon, 4)
        self.assertEqual(records[-1].wm_updates, STEPS - 100)

    def test_same_seed_same_metrics(self):
        """Test two runs with one seed log identical metrics apart from wall-clock time"""
        first = MetricsRecord.from_jsonl_file(self.first.metrics_path)
        second = MetricsRecord.from_jsonl_file(self.second.metrics_path)
        self.assertEqual(comparable(first), comparable(second))
        for a, b in zip(self.first.model.parameters(), self.second.model.parameters()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_resume_is_bit_identical(self):
        """Test that resuming from step 110 reproduces the uninterrupted run"""
        resumed = GlamTrainer.from_checkpoint(self.first.checkpoint_path(110), output_dir=Path(self.tmp) / 'resumed')
        self.assertEqual(resumed.env_step, 110)
        resumed.train(STEPS)

        for a, b in zip(self.first.model.parameters() + self.first.agent.parameters(),
                        resumed.model.parameters() + resumed.agent.parameters()):
            np.testing.assert_array_equal(a.data, b.data, err_msg=a.name)
            self.assertEqual(a.adam_state.step, b.adam_state.step)
        self.assertEqual(resumed.replay.total, self.first.replay.total)
        self.assertEqual(resumed.normalizer.scale, self.first.normalizer.scale)

        expected = MetricsRecord.from_jsonl_file(self.first.metrics_path)[-1]
        actual = MetricsRecord.from_jsonl_file(resumed.metrics_path)[-1]
        self.assertEqual(comparable([actual]), comparable([expected]))

    def test_hash_mismatch_refused(self):
        other = self.config.with_overrides({'world_model.beta_var': 0.0})
        with self.assertRaises(CheckpointMismatchError):
            GlamTrainer.from_checkpoint(self.first_final, other, output_dir=Path(self.tmp) / 'refused')
        forced = GlamTrainer.from_checkpoint(self.first_final, other, output_dir=Path(self.tmp) / 'forced',
                                             force=True)
        self.assertEqual(forced.env_step, STEPS)

    def test_open_loop_frames(self):
        real, imagined, context = open_loop_frames(self.first_final, length=8, context_length=4)
        self.assertEqual(context, 4)
        self.assertEqual(real.shape, (5, 32, 32))
        self.assertEqual(imagined.shape, real.shape)


class TestTrainerPieces(unittest.TestCase):
    """Test single updates, guards and evaluation without full runs"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_non_finite_loss_writes_diagnostic(self):
        trainer = GlamTrainer(smoke_config(), self.root)
        batch = TrajectoryBatch(obs=np.zeros((1, 2, 32, 32), dtype=np.float32), actions=np.zeros((1, 2), dtype=int),
                                rewards=np.zeros((1, 2), dtype=np.float32), dones=np.zeros((1, 2), dtype=bool))
        with self.assertRaises(NonFiniteLossError):
            trainer._check_finite({'wm_loss_total': float('nan'), 'wm_loss_pred': 1.0}, batch)
        with np.load(self.root / 'diagnostic_0.npz') as snapshot:
            self.assertEqual(snapshot['obs'].shape, (1, 2, 32, 32))
            self.assertIn('norm/world_model.encoder.out.weight', snapshot.files)

    def test_every_preset_trains(self):
        """Test one world-model and one agent update per ablation preset"""
        for preset in ABLATION_GRID + HORIZON_GRID:
            with self.subTest(preset=preset):
                config = ablation_config(smoke_config(), preset, seed=0, output_root=self.root)
                trainer = GlamTrainer(config)
                for _ in range(config.world_model.batch_length + 4):
                    trainer.collect_step()
                wm = trainer.world_model_update()
                agent = trainer.agent_update_step()
                self.assertTrue(all(np.isfinite(v) for v in wm.values()))
                self.assertTrue(all(np.isfinite(v) for v in agent.values()))
                self.assertEqual(config.run.output_dir, str(self.root / preset / 'seed_0'))

    def test_unknown_preset(self):
        with self.assertRaises(ValueError):
            ablation_config(smoke_config(), 'wo_everything', 0, self.root)

    def test_evaluate_is_repeatable(self):
        """Test greedy scores on a deterministic environment"""
        config = smoke_config(**{'run.output_dir': str(self.root / 'run')})
        trainer = GlamTrainer(config, env=CountingEnv())
        checkpoint = self.root / 'step0.npz'
        trainer.save(checkpoint)

        first = evaluate(checkpoint, episodes=3, env=CountingEnv(), greedy=True)
        second = evaluate(checkpoint, episodes=3, env=CountingEnv(), greedy=True)
        self.assertEqual(first.episode_scores, second.episode_scores)
        self.assertEqual(len(set(first.episode_scores)), 1)
        self.assertTrue(first.greedy)
        self.assertEqual(first.env_step, 0)
        self.assertAlmostEqual(first.mean_score, float(np.mean(first.episode_scores)))

    def test_evaluate_rejects_other_env(self):
        config = smoke_config(**{'run.output_dir': str(self.root / 'run')})
        checkpoint = self.root / 'step0.npz'
        GlamTrainer(config).save(checkpoint)
        with self.assertRaises(ValueError):
            evaluate(checkpoint, episodes=1, config=config.with_overrides({'env.name': 'minicollect'}))

    def test_episode_log_replays_through_fresh_env(self):
        """Test that logged actions fed to a new env on the same seed reproduce every logged frame"""
        config = smoke_config(**{'run.episode_log': True, 'run.seed': 3, 'env.max_episode_steps': 40})
        trainer = GlamTrainer(config, self.root)
        for _ in range(90):
            trainer.collect_step()
        records = read_episode_log(self.root / 'episodes.jsonl')
        self.assertEqual(len(records), 90)
        self.assertTrue(any(r.done for r in records[:-1]))

        frames = replay_episode_log(records, make_processed_env(config.env), Rng(3, RNG_STREAMS['env']))
        self.assertEqual(len(frames), len(records))
        for i, record in enumerate(records):
            np.testing.assert_array_equal(decode_frame(record), frames[i].astype(np.float32) / 255.0)

    def test_episode_log_off_by_default(self):
        GlamTrainer(smoke_config(), self.root).collect_step()
        self.assertFalse((self.root / 'episodes.jsonl').exists())

    def test_run_ablation(self):
        base = smoke_config(**{'run.total_env_steps': 105})
        results = run_ablation(base, ['full', 'wo_g'], [0], self.root, max_workers=2)
        self.assertEqual(set(results), {'full', 'wo_g'})
        for preset, paths in results.items():
            self.assertEqual(paths, [self.root / preset / 'seed_0' / 'metrics.jsonl'])
            self.assertTrue(paths[0].exists())


def random_policy_mean(config: Config, episodes: int, seed: int = 0) -> float:
    env = make_processed_env(config.env)
    rng = Rng(seed, RNG_STREAMS['eval'])
    scores = []
    for _ in range(episodes):
        env.reset(rng)
        score, done = 0.0, False
        while not done:
            _, reward, done = env.step(int(rng.integers(0, env.spec.action_count)))
            score += reward
        scores.append(score)
    return float(np.mean(scores))


@unittest.skipUnless(os.getenv(LONG_TESTS_ENV_VAR), f"set {LONG_TESTS_ENV_VAR}=1 to run long training runs")
class TestLongRuns(unittest.TestCase):
    """Test multi-thousand-step runs: the ablation smoke grid and MiniPong learning"""

    def test_ablation_grid_smoke(self):
        """Test every ablation preset finishes 2000 smoke steps with finite losses"""
        with tempfile.TemporaryDirectory() as tmp:
            base = smoke_config(**{'run.total_env_steps': 2000, 'run.log_every': 100})
            results = run_ablation(base, ABLATION_GRID, [0], Path(tmp), max_workers=3)
            for preset in ABLATION_GRID:
                self.assertEqual(len(results[preset]), 1, preset)
                records = MetricsRecord.from_jsonl_file(results[preset][0])
                self.assertEqual(records[-1].env_step, 2000)
                losses = [r.wm_loss_total for r in records if r.wm_loss_total is not None]
                self.assertTrue(losses and all(np.isfinite(losses)), preset)

    def test_minipong_learning(self):
        """Test world-model loss falls and the policy beats random play by 3 points"""
        config = Config().with_overrides({'run.total_env_steps': 50000, 'run.log_every': 500,
                                          'run.checkpoint_every': 50000})
        random_mean = random_policy_mean(config, 1000)
        eval_means = []
        with tempfile.TemporaryDirectory() as tmp:
            for seed in (0, 1, 2):
                with self.subTest(seed=seed):
                    cell = config.with_overrides({'run.seed': seed, 'run.output_dir': str(Path(tmp) / f'seed_{seed}')})
                    trainer = GlamTrainer(cell)
                    final = trainer.train()
                    records = MetricsRecord.from_jsonl_file(trainer.metrics_path)
                    by_step = {r.env_step: r.wm_loss_total for r in records if r.wm_loss_total is not None}
                    first = by_step[min(by_step)]
                    self.assertLess(by_step[20000], first)
                    eval_means.append(evaluate(final, episodes=config.run.eval_episodes).mean_score)
        self.assertGreaterEqual(float(np.mean(eval_means)), random_mean + 3.0)


if __name__ == '__main__':
    unittest.main()
