#!/usr/bin/env python3
"""
Replay storage
FIFO ring buffer of transitions with episode-aware window sampling, and the
append-only episode log used for offline replay
"""

import base64
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lib.models import EpisodeLogRecord
from lib.tensor import Rng


class ReplayNotReadyError(RuntimeError):
    """No window of the requested length lies inside a single episode yet"""


@dataclass
class TrajectoryBatch:
    """Windows of consecutive transitions; position t holds (o_t, a_t, r_t, done_t)"""
    obs: np.ndarray      # (B, T, H, W) float32 in [0, 1]
    actions: np.ndarray  # (B, T) int64
    rewards: np.ndarray  # (B, T) float32
    dones: np.ndarray    # (B, T) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.actions.shape


def quantize(frame: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


class ReplayBuffer:
    """
    Ring buffer of at most `capacity` steps, frames stored as uint8. The oldest
    step is evicted first; every step keeps its episode id so windows never
    straddle two episodes.
    """

    def __init__(self, capacity: int, frame_shape: tuple[int, int]):
        self.capacity = capacity
        self.frames = np.zeros((capacity, *frame_shape), dtype=np.uint8)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=bool)
        self.episode_ids = np.zeros(capacity, dtype=np.int64)
        self.total = 0

    def __len__(self) -> int:
        return min(self.total, self.capacity)

    def append(self, frame: np.ndarray, action: int, reward: float, done: bool, episode_id: int):
        slot = self.total % self.capacity
        self.frames[slot] = quantize(frame)
        self.actions[slot] = action
        self.rewards[slot] = reward
        self.dones[slot] = done
        self.episode_ids[slot] = episode_id
        self.total += 1

    def _physical(self, logical: np.ndarray) -> np.ndarray:
        oldest = self.total % self.capacity if self.total > self.capacity else 0
        return (oldest + logical) % self.capacity

    def valid_starts(self, length: int) -> np.ndarray:
        """Logical start positions whose whole window shares one episode id"""
        size = len(self)
        if size < length:
            return np.zeros(0, dtype=np.int64)
        ids = self.episode_ids[self._physical(np.arange(size))]
        return np.nonzero(ids[:size - length + 1] == ids[length - 1:])[0]

    def sample(self, rng: Rng, batch: int = 32, length: int = 64) -> TrajectoryBatch:
        """
        Uniform windows over valid start positions

        Raises:
            ReplayNotReadyError: No episode segment holds `length` contiguous steps
        """
        starts = self.valid_starts(length)
        if starts.size == 0:
            raise ReplayNotReadyError(f"replay holds {len(self)} steps; no episode segment of length {length} yet")
        chosen = starts[rng.integers(0, starts.size, size=batch)]
        index = self._physical(chosen[:, None] + np.arange(length)[None, :])
        return TrajectoryBatch(
            obs=self.frames[index].astype(np.float32) / 255.0,
            actions=self.actions[index],
            rewards=self.rewards[index],
            dones=self.dones[index],
        )

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            'frames': self.frames, 'actions': self.actions, 'rewards': self.rewards,
            'dones': self.dones, 'episode_ids': self.episode_ids, 'total': np.array(self.total),
        }

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        if arrays['frames'].shape != self.frames.shape:
            raise ValueError(f"replay snapshot shape {arrays['frames'].shape} vs buffer {self.frames.shape}")
        self.frames[...] = arrays['frames']
        self.actions[...] = arrays['actions']
        self.rewards[...] = arrays['rewards']
        self.dones[...] = arrays['dones']
        self.episode_ids[...] = arrays['episode_ids']
        self.total = int(arrays['total'])


# ============================================================================
# Episode log
# ============================================================================

class EpisodeLogWriter:
    """Append-only JSON-lines log of transitions with raw uint8 frame bytes"""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, frame: np.ndarray, action: int, reward: float, done: bool):
        pixels = quantize(frame)
        record = EpisodeLogRecord(
            frame=base64.b64encode(pixels.tobytes()).decode('ascii'),
            frame_shape=pixels.shape,
            action=int(action),
            reward=float(reward),
            done=bool(done),
        )
        with open(self.path, 'a', encoding='utf-8') as f:
            f.write(record.model_dump_json() + '\n')


def read_episode_log(path: Path) -> list[EpisodeLogRecord]:
    with open(path, 'r', encoding='utf-8') as f:
        return [EpisodeLogRecord.model_validate_json(line) for line in f if line.strip()]


def decode_frame(record: EpisodeLogRecord) -> np.ndarray:
    pixels = np.frombuffer(base64.b64decode(record.frame), dtype=np.uint8)
    return pixels.reshape(record.frame_shape).astype(np.float32) / 255.0


def replay_episode_log(records: list[EpisodeLogRecord], env, rng: Rng) -> list[np.ndarray]:
    """
    Feed the logged actions back through a freshly built env

    The env is reset with `rng` at the start and after every done flag, the
    way the collector resets it, so a log written from a seed's env stream
    replays from a new Rng on that stream.

    Returns:
        The frame the env showed before each logged action, quantized like the log
    """
    frames = []
    obs = None
    for record in records:
        if obs is None:
            obs = env.reset(rng)
        frames.append(quantize(obs))
        obs, _, done = env.step(record.action)
        if done:
            obs = None
    return frames
