#!/usr/bin/env python3
"""
GLAM trainer
Interleaves environment collection, world-model updates and imagination
actor-critic updates, streams metrics, writes checkpoints and evaluates policies
"""

import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Optional

import numpy as np

from lib.agent import ActorCritic, ReturnNormalizer, agent_state, agent_update, horizon_at, imagine, select_action
from lib.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from lib.envs import EnvAdapter, make_processed_env
from lib.init_config import ABLATION_PRESETS, RNG_STREAMS
from lib.losses import world_model_loss
from lib.models import Config, EvalReport, HorizonSchedule, MetricsRecord
from lib.optim import adam_step
from lib.replay import EpisodeLogWriter, ReplayBuffer, TrajectoryBatch
from lib.tensor import Rng, Tape, set_precision, set_strict
from lib.world_model import GlamModel, open_loop_video, parallel_train_forward, warm_up_context

logger = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    """A loss became NaN or infinite; a diagnostic snapshot was written"""


class GlamTrainer:
    """
    Owns the model, agent, replay, environment and every RNG stream of one run.
    All state needed to continue bit-identically is in save()/load().
    """

    def __init__(self, config: Config, output_dir: Optional[Path] = None, env: Optional[EnvAdapter] = None):
        set_precision(config.run.precision)
        set_strict(config.run.strict)
        self.config = config
        self.output_dir = Path(output_dir or config.run.output_dir)
        self.metrics_path = self.output_dir / 'metrics.jsonl'

        seed = config.run.seed
        self.rngs = {name: Rng(seed, stream) for name, stream in RNG_STREAMS.items()}
        self.env = env or make_processed_env(config.env)
        spec = self.env.spec
        frame_size = config.env.frame_size

        init_rng = self.rngs['init']
        self.model = GlamModel(config.world_model, frame_size, spec.action_count, init_rng).bind_names('world_model')
        self.agent = ActorCritic(self.model.latent_dim + self.model.fusion_dim, spec.action_count,
                                 config.agent, self.model.bins, init_rng).bind_names('agent')
        self.replay = ReplayBuffer(config.replay.capacity, (frame_size, frame_size))
        self.episode_log = EpisodeLogWriter(self.output_dir / 'episodes.jsonl') if config.run.episode_log else None
        self.normalizer = ReturnNormalizer(config.agent.return_scale_decay)
        self.schedule = HorizonSchedule.from_config(config.agent)

        self.env_step = 0
        self.wm_updates = 0
        self.agent_updates = 0
        self.episodes = 0
        self.episode_id = 0
        self.episode_return = 0.0
        self.pending_returns: list[float] = []
        self.last_losses: dict[str, float] = {}
        self.obs: Optional[np.ndarray] = None
        self.recent = deque(maxlen=max(config.env.context_length - 1, 0))
        self.started = time.monotonic()

    # ------------------------------------------------------------------
    # Acting
    # ------------------------------------------------------------------

    def policy_action(self, obs: np.ndarray, history, rng: Rng, greedy: bool = False) -> int:
        """Warm the model up on the episode's recent (frame, action) pairs, then query the actor"""
        frames = [f for f, _ in history] + [obs]
        actions = [a for _, a in history] + [0]
        context, latent, fused = warm_up_context(
            self.model, np.stack(frames)[None], np.asarray(actions)[None], rng,
            'argmax' if greedy else 'sample')
        return int(select_action(self.agent, agent_state(latent, fused), rng, greedy)[0])

    def collect_step(self):
        """One emitted env step: random until warmup is over, then the actor"""
        if self.obs is None:
            self.obs = self.env.reset(self.rngs['env'])
            self.recent.clear()

        if self.env_step < self.config.run.warmup_steps:
            action = int(self.rngs['collect'].integers(0, self.env.spec.action_count))
        else:
            action = self.policy_action(self.obs, self.recent, self.rngs['collect'])

        next_obs, reward, done = self.env.step(action)
        self.replay.append(self.obs, action, reward, done, self.episode_id)
        if self.episode_log is not None:
            self.episode_log.append(self.obs, action, reward, done)
        self.recent.append((self.obs, action))
        self.episode_return += reward
        self.env_step += 1

        if done:
            self.pending_returns.append(self.episode_return)
            self.episodes += 1
            self.episode_id += 1
            self.episode_return = 0.0
            self.obs = None
        else:
            self.obs = next_obs

    # ------------------------------------------------------------------
    # Updates
    # ------------------------------------------------------------------

    def world_model_update(self) -> dict[str, float]:
        wm = self.config.world_model
        batch = self.replay.sample(self.rngs['replay'], wm.batch_size, wm.batch_length)
        with Tape() as tape:
            forward = parallel_train_forward(self.model, batch.obs, batch.actions, self.rngs['world_model'])
            losses = world_model_loss(forward, batch.rewards, batch.dones, batch.obs, self.model.bins, wm)
        values = losses.as_floats()
        self._check_finite(values, batch)

        params = self.model.parameters()
        grads = tape.backward(losses.total, params)
        values['wm_grad_norm'] = adam_step(params, grads, wm.lr, wm.clip_norm)
        self.wm_updates += 1
        return values

    def agent_update_step(self) -> dict[str, float]:
        agent_config = self.config.agent
        horizon = horizon_at(self.env_step, self.schedule)
        starts = self.replay.sample(self.rngs['replay'], agent_config.imagination_batch, agent_config.context_length)
        context, latent, fused = warm_up_context(self.model, starts.obs, starts.actions, self.rngs['agent'])
        rollout = imagine(self.model, self.agent, context, latent, fused, horizon, self.rngs['agent'])
        values = agent_update(self.agent, rollout, self.normalizer, agent_config)
        self._check_finite(values, starts)
        self.agent_updates += 1
        values['horizon'] = horizon
        return values

    def _check_finite(self, values: dict[str, float], batch: TrajectoryBatch):
        bad = {k: v for k, v in values.items() if not np.isfinite(v)}
        if not bad:
            return
        path = self.output_dir / f'diagnostic_{self.env_step}.npz'
        path.parent.mkdir(parents=True, exist_ok=True)
        norms = {f'norm/{p.name}': np.array(np.linalg.norm(p.data))
                 for p in self.model.parameters() + self.agent.parameters()}
        np.savez(path, obs=batch.obs, actions=batch.actions, rewards=batch.rewards, dones=batch.dones, **norms)
        raise NonFiniteLossError(f"Non-finite loss at env step {self.env_step}: {bad}; snapshot in {path}")

    @property
    def ready(self) -> bool:
        """Updates start once warmup is over and replay holds a full training window"""
        return (self.env_step >= self.config.run.warmup_steps
                and self.replay.valid_starts(self.config.world_model.batch_length).size > 0)

    # ------------------------------------------------------------------
    # Loop
    # ------------------------------------------------------------------

    def train(self, total_env_steps: Optional[int] = None) -> Path:
        """
        Run until `total_env_steps` (default: config) and return the final checkpoint

        Per env step: collect one transition, then (once ready) one world-model
        update and one agent update at the configured cadence.
        """
        run = self.config.run
        total = total_env_steps or run.total_env_steps
        logger.info(f"Training {self.config.env.name} from step {self.env_step} to {total}")

        while self.env_step < total:
            self.collect_step()
            if self.env_step > run.warmup_steps and self.ready:
                if self.env_step % run.wm_update_every == 0:
                    self.last_losses.update(self.world_model_update())
                if self.env_step % run.agent_update_every == 0:
                    self.last_losses.update(self.agent_update_step())
            if self.env_step % run.log_every == 0:
                self.log_metrics()
            if self.env_step % run.checkpoint_every == 0:
                self.save(self.checkpoint_path(self.env_step))

        final = self.output_dir / 'final.npz'
        self.save(final)
        return final

    def log_metrics(self) -> MetricsRecord:
        record = MetricsRecord(
            env_step=self.env_step,
            wm_loss_total=self.last_losses.get('wm_loss_total'),
            wm_loss_pred=self.last_losses.get('wm_loss_pred'),
            wm_loss_dyn=self.last_losses.get('wm_loss_dyn'),
            wm_loss_rep=self.last_losses.get('wm_loss_rep'),
            wm_loss_var=self.last_losses.get('wm_loss_var'),
            actor_loss=self.last_losses.get('actor_loss'),
            critic_loss=self.last_losses.get('critic_loss'),
            policy_entropy=self.last_losses.get('policy_entropy'),
            horizon=horizon_at(self.env_step, self.schedule),
            episode_return_mean=float(np.mean(self.pending_returns)) if self.pending_returns else None,
            episodes=self.episodes,
            wm_updates=self.wm_updates,
            agent_updates=self.agent_updates,
            wall_clock=time.monotonic() - self.started,
        )
        record.append_to(self.metrics_path)
        self.pending_returns = []
        logger.info(f"step {record.env_step}: wm {record.wm_loss_total}, actor {record.actor_loss}, "
                    f"return {record.episode_return_mean}")
        return record

    def checkpoint_path(self, step: int) -> Path:
        return self.output_dir / 'checkpoints' / f'step_{step:08d}.npz'

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------

    def save(self, path: Path):
        meta = {
            'env_step': self.env_step,
            'wm_updates': self.wm_updates,
            'agent_updates': self.agent_updates,
            'episodes': self.episodes,
            'episode_id': self.episode_id,
            'episode_return': self.episode_return,
            'pending_returns': self.pending_returns,
            'last_losses': self.last_losses,
            'rngs': {name: rng.get_state() for name, rng in self.rngs.items()},
            'env_state': self.env.get_state() if self.obs is not None else None,
            'recent_actions': [a for _, a in self.recent],
            'return_scale': self.normalizer.scale,
            'return_updates': self.normalizer.updates,
        }
        extra = {}
        if self.obs is not None:
            extra['obs'] = self.obs
        if self.recent:
            extra['recent_frames'] = np.stack([f for f, _ in self.recent])
        save_checkpoint(path, self.config, self.model.parameters() + self.agent.parameters(),
                        self.replay, meta, extra)

    def load(self, path: Path, force: bool = False) -> dict:
        meta, state = load_checkpoint(path, self.config, self.model.parameters() + self.agent.parameters(),
                                      self.replay, force)
        self.env_step = meta['env_step']
        self.wm_updates = meta['wm_updates']
        self.agent_updates = meta['agent_updates']
        self.episodes = meta['episodes']
        self.episode_id = meta['episode_id']
        self.episode_return = meta['episode_return']
        self.pending_returns = list(meta['pending_returns'])
        self.last_losses = dict(meta['last_losses'])
        for name, rng_state in meta['rngs'].items():
            self.rngs[name].set_state(rng_state)
        self.normalizer.scale = meta['return_scale']
        self.normalizer.updates = meta['return_updates']

        self.obs = state.get('obs')
        self.recent.clear()
        if meta['env_state'] is not None:
            # the env keeps drawing from the trainer's env stream
            self.env.set_state(meta['env_state'], self.rngs['env'])
            for frame, action in zip(state.get('recent_frames', []), meta['recent_actions']):
                self.recent.append((frame, action))
        logger.info(f"Resumed from {path} at env step {self.env_step}")
        return meta

    @classmethod
    def from_checkpoint(cls, path: Path, config: Optional[Config] = None, output_dir: Optional[Path] = None,
                        force: bool = False) -> 'GlamTrainer':
        """Trainer restored from a checkpoint; the stored config is used when none is given"""
        if config is None:
            meta, _ = read_checkpoint(path)
            config = Config(**meta['config'])
        trainer = cls(config, output_dir)
        trainer.load(path, force)
        return trainer


# ============================================================================
# Evaluation
# ============================================================================

def restore_policy(checkpoint: Path, env: Optional[EnvAdapter] = None) -> tuple[GlamTrainer, dict]:
    """Trainer built from the checkpoint's own config with model and agent weights loaded; replay stays empty"""
    meta, _ = read_checkpoint(checkpoint)
    stored = Config(**meta['config'])
    trainer = GlamTrainer(stored, env=env)
    load_checkpoint(checkpoint, stored, trainer.model.parameters() + trainer.agent.parameters(), None)
    return trainer, meta


def run_episode(trainer: GlamTrainer, env: EnvAdapter, rng: Rng, greedy: bool) -> float:
    """Play one full episode with the trainer's actor; returns the undiscounted score"""
    obs = env.reset(rng)
    history = deque(maxlen=trainer.recent.maxlen)
    score, done = 0.0, False
    while not done:
        action = trainer.policy_action(obs, history, rng, greedy)
        history.append((obs, action))
        obs, reward, done = env.step(action)
        score += reward
    return score


def evaluate(checkpoint: Path, episodes: int = 20, config: Optional[Config] = None,
             env: Optional[EnvAdapter] = None, greedy: Optional[bool] = None) -> EvalReport:
    """
    Mean score of the checkpoint's policy over fresh episodes

    Args:
        checkpoint: Checkpoint file
        episodes: Number of evaluation episodes
        config: Expected config; its env section must match the checkpoint's
        env: Environment override (defaults to the configured one)
        greedy: Argmax actions; defaults to run.eval_greedy

    Raises:
        ValueError: env section of `config` differs from the checkpoint's
    """
    trainer, meta = restore_policy(checkpoint, env)
    stored = trainer.config
    if config is not None and config.env != stored.env:
        raise ValueError(f"evaluate: checkpoint was trained on {stored.env.model_dump()}, "
                         f"requested {config.env.model_dump()}")
    greedy = stored.run.eval_greedy if greedy is None else greedy

    rng = Rng(stored.run.seed, RNG_STREAMS['eval'])
    scores = [run_episode(trainer, trainer.env, rng, greedy) for _ in range(episodes)]
    return EvalReport(
        env=stored.env.name,
        env_step=meta['env_step'],
        greedy=greedy,
        episode_scores=scores,
        mean_score=float(np.mean(scores)),
    )


# ============================================================================
# Ablation sweeps
# ============================================================================

def ablation_config(base: Config, preset: str, seed: int, output_root: Path) -> Config:
    """Base config with one ablation preset, a seed and its own run directory"""
    if preset not in ABLATION_PRESETS:
        raise ValueError(f"Unknown ablation preset '{preset}'; choose from {sorted(ABLATION_PRESETS)}")
    return base.with_overrides({
        **ABLATION_PRESETS[preset],
        'run.seed': seed,
        'run.output_dir': str(Path(output_root) / preset / f'seed_{seed}'),
    })


def run_ablation(base: Config, presets: list[str], seeds: list[int], output_root: Path,
                 max_workers: int = 1) -> dict[str, list[Path]]:
    """
    Train every (preset, seed) cell and collect the metrics stream of each

    Runs share no state; precision and strict mode are process-wide, so every
    cell uses the base config's values for both.

    Args:
        base: Config every preset is applied to
        presets: Names from ABLATION_PRESETS
        seeds: Seeds trained per preset
        output_root: Cells write to output_root/<preset>/seed_<seed>/
        max_workers: Number of cells trained concurrently

    Returns:
        Dict of preset -> metrics.jsonl paths of the cells that finished
    """
    cells = [(preset, seed, ablation_config(base, preset, seed, output_root)) for preset in presets for seed in seeds]
    results: dict[str, list[Path]] = {preset: [] for preset in presets}

    def train_cell(config: Config) -> Path:
        trainer = GlamTrainer(config)
        trainer.train()
        return trainer.metrics_path

    completed_count = 0
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        future_to_cell = {executor.submit(train_cell, config): (preset, seed) for preset, seed, config in cells}

        for future in as_completed(future_to_cell):
            preset, seed = future_to_cell[future]
            completed_count += 1
            try:
                results[preset].append(future.result())
                logger.info(f"Ablation cell {completed_count}/{len(cells)} done: {preset} seed {seed}")
            except Exception as e:
                logger.error(f"Ablation cell {preset} seed {seed} failed: {e}")

    for paths in results.values():
        paths.sort()
    return results


def open_loop_frames(checkpoint: Path, length: int = 32, context_length: Optional[int] = None,
                     seed: Optional[int] = None) -> tuple[np.ndarray, np.ndarray, int]:
    """
    Record one random-action segment and let the world model replay it open loop

    Returns:
        (real frames, imagined frames, context length); both frame arrays cover
        steps context_length-1 .. length-1 of the segment
    """
    trainer, _ = restore_policy(checkpoint)
    context_length = context_length or trainer.config.env.context_length
    if not 1 <= context_length <= length:
        raise ValueError(f"open_loop_frames: context_length {context_length} outside [1, {length}]")
    rng = Rng(trainer.config.run.seed if seed is None else seed, RNG_STREAMS['eval'])

    env = make_processed_env(trainer.config.env)
    frames, actions = [env.reset(rng)], []
    while len(frames) < length:
        action = int(rng.integers(0, env.spec.action_count))
        obs, _, done = env.step(action)
        actions.append(action)
        if done:
            break
        frames.append(obs)
    actions = actions[:len(frames)]
    actions += [0] * (len(frames) - len(actions))
    if len(frames) < context_length:
        raise ValueError(f"open_loop_frames: episode ended after {len(frames)} frames")

    obs = np.stack(frames)
    imagined = open_loop_video(trainer.model, obs, np.asarray(actions), context_length, rng)
    return obs[context_length - 1:], imagined, context_length
