#!/usr/bin/env python3
"""
Pixel environments
The adapter protocol, two deterministic toy games (MiniPong, MiniCollect) and the
frame processor applying action repeat and max-pooling over raw frames
"""

from collections import deque
from typing import Protocol

import numpy as np

from lib.models import EnvConfig, EnvSpec
from lib.tensor import Rng


class EpisodeFinishedError(RuntimeError):
    """step() called after the episode reported done"""


class EnvAdapter(Protocol):
    """Anything with these methods can feed the trainer, e.g. an external Atari binding"""

    spec: EnvSpec

    def reset(self, rng: Rng) -> np.ndarray: ...

    def step(self, action: int) -> tuple[np.ndarray, float, bool]: ...

    def get_state(self) -> dict: ...

    def set_state(self, state: dict, rng: Rng | None = None) -> None: ...


def _check_action(spec: EnvSpec, action) -> int:
    if not 0 <= int(action) < spec.action_count:
        raise ValueError(f"{spec.name}: action {action} outside [0, {spec.action_count})")
    return int(action)


def _upscale(frame: np.ndarray, frame_size: int) -> np.ndarray:
    factor = frame_size // frame.shape[0]
    return np.kron(frame, np.ones((factor, factor), dtype=frame.dtype)) if factor > 1 else frame


# ============================================================================
# MiniPong
# ============================================================================

GRID = 32
PADDLE = 6
BALL_LEVEL = 255
PADDLE_LEVEL = 170
WIN_SCORE = 5
# Raw steps per ball move and per opponent move; the agent moves every raw step
BALL_PERIOD = 4
OPPONENT_PERIOD = 8


class MiniPong:
    """
    Paddle game on a 32x32 grid. The agent's paddle is on the right, a tracking
    opponent on the left. The ball moves one cell every 4 raw steps, the
    opponent half as often. Actions: noop, up, down.
    +1 when the opponent misses, -1 when the agent misses, first to 5 wins.
    Every episode opens with a serve towards the agent.
    """

    def __init__(self, frame_size: int = 32, max_episode_steps: int = 4000):
        self.spec = EnvSpec(
            name='minipong',
            frame_shape=(frame_size, frame_size),
            action_count=3,
            max_episode_steps=max_episode_steps,
            dynamics="ball moves one cell every 4 steps and reflects off walls and paddles; "
                     "serves from the centre with a random row and vertical direction",
        )
        self.frame_size = frame_size
        self.rng = None
        self.done = True

    def reset(self, rng: Rng) -> np.ndarray:
        self.rng = rng
        self.agent_y = self.opponent_y = (GRID - PADDLE) // 2
        self.scores = [0, 0]  # agent, opponent
        self.steps = 0
        self.done = False
        self._serve(direction=1)
        return self.render()

    def _serve(self, direction: int):
        self.ball_x = GRID // 2
        self.ball_y = int(self.rng.integers(8, GRID - 8))
        self.ball_vx = direction
        self.ball_vy = 1 if int(self.rng.integers(0, 2)) else -1

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise EpisodeFinishedError("minipong: step after done; call reset first")
        action = _check_action(self.spec, action)
        self.steps += 1

        if action == 1:
            self.agent_y = max(0, self.agent_y - 1)
        elif action == 2:
            self.agent_y = min(GRID - PADDLE, self.agent_y + 1)
        if self.steps % OPPONENT_PERIOD == 0:
            centre = self.opponent_y + PADDLE // 2
            if self.ball_y < centre:
                self.opponent_y = max(0, self.opponent_y - 1)
            elif self.ball_y > centre:
                self.opponent_y = min(GRID - PADDLE, self.opponent_y + 1)

        reward = self._move_ball() if self.steps % BALL_PERIOD == 0 else 0.0
        if max(self.scores) >= WIN_SCORE or self.steps >= self.spec.max_episode_steps:
            self.done = True
        return self.render(), reward, self.done

    def _move_ball(self) -> float:
        x, y = self.ball_x + self.ball_vx, self.ball_y + self.ball_vy
        if y < 0:
            y, self.ball_vy = -y, -self.ball_vy
        elif y > GRID - 1:
            y, self.ball_vy = 2 * (GRID - 1) - y, -self.ball_vy

        if self.ball_vx > 0 and x >= GRID - 2:
            if self.agent_y <= y < self.agent_y + PADDLE:
                self.ball_vx, x = -1, GRID - 3
                self.ball_vy = -1 if y < self.agent_y + PADDLE // 2 else 1
            else:
                self.scores[1] += 1
                self._serve(direction=1)
                return -1.0
        elif self.ball_vx < 0 and x <= 1:
            if self.opponent_y <= y < self.opponent_y + PADDLE:
                self.ball_vx, x = 1, 2
                self.ball_vy = -1 if y < self.opponent_y + PADDLE // 2 else 1
            else:
                self.scores[0] += 1
                self._serve(direction=-1)
                return 1.0

        self.ball_x, self.ball_y = x, y
        return 0.0

    def render(self) -> np.ndarray:
        frame = np.zeros((GRID, GRID), dtype=np.float32)
        frame[self.agent_y:self.agent_y + PADDLE, GRID - 2] = PADDLE_LEVEL / 255.0
        frame[self.opponent_y:self.opponent_y + PADDLE, 1] = PADDLE_LEVEL / 255.0
        frame[self.ball_y, self.ball_x] = BALL_LEVEL / 255.0
        return _upscale(frame, self.frame_size)

    def get_state(self) -> dict:
        return {
            'ball': [self.ball_x, self.ball_y, self.ball_vx, self.ball_vy],
            'agent_y': self.agent_y,
            'opponent_y': self.opponent_y,
            'scores': list(self.scores),
            'steps': self.steps,
            'done': self.done,
            'rng': self.rng.get_state(),
        }

    def set_state(self, state: dict, rng: Rng | None = None):
        self.ball_x, self.ball_y, self.ball_vx, self.ball_vy = state['ball']
        self.agent_y = state['agent_y']
        self.opponent_y = state['opponent_y']
        self.scores = list(state['scores'])
        self.steps = state['steps']
        self.done = state['done']
        self.rng = rng or self.rng or Rng(state['rng']['seed'], state['rng']['stream'])
        self.rng.set_state(state['rng'])


# ============================================================================
# MiniCollect
# ============================================================================

CELLS = 8
CELL_PX = GRID // CELLS
PELLETS = 6
PELLET_LEVEL = 128
# noop, up, down, left, right
MOVES = [(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0)]


class MiniCollect:
    """
    8x8 grid of 4-pixel cells. The agent walks onto pellets for +1 each; an eaten
    pellet respawns on a random free cell. The episode ends after 500 steps.
    """

    def __init__(self, frame_size: int = 32, max_episode_steps: int = 500):
        self.spec = EnvSpec(
            name='minicollect',
            frame_shape=(frame_size, frame_size),
            action_count=5,
            max_episode_steps=max_episode_steps,
            dynamics="agent moves one cell per step inside the walls; six pellets, each "
                     "respawning on a random free cell when collected",
        )
        self.frame_size = frame_size
        self.rng = None
        self.done = True

    def reset(self, rng: Rng) -> np.ndarray:
        self.rng = rng
        self.agent = [CELLS // 2, CELLS // 2]
        self.pellets = []
        for _ in range(PELLETS):
            self.pellets.append(self._free_cell())
        self.steps = 0
        self.done = False
        return self.render()

    def _free_cell(self) -> list[int]:
        occupied = {tuple(self.agent)} | {tuple(p) for p in self.pellets}
        free = [(x, y) for y in range(CELLS) for x in range(CELLS) if (x, y) not in occupied]
        x, y = free[int(self.rng.integers(0, len(free)))]
        return [x, y]

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise EpisodeFinishedError("minicollect: step after done; call reset first")
        action = _check_action(self.spec, action)
        self.steps += 1

        dx, dy = MOVES[action]
        self.agent = [min(max(self.agent[0] + dx, 0), CELLS - 1), min(max(self.agent[1] + dy, 0), CELLS - 1)]

        reward = 0.0
        if self.agent in self.pellets:
            self.pellets.remove(self.agent)
            reward = 1.0
            self.pellets.append(self._free_cell())

        self.done = self.steps >= self.spec.max_episode_steps
        return self.render(), reward, self.done

    def render(self) -> np.ndarray:
        frame = np.zeros((GRID, GRID), dtype=np.float32)
        for x, y in self.pellets:
            frame[y * CELL_PX + 1:y * CELL_PX + 3, x * CELL_PX + 1:x * CELL_PX + 3] = PELLET_LEVEL / 255.0
        ax, ay = self.agent
        frame[ay * CELL_PX:(ay + 1) * CELL_PX, ax * CELL_PX:(ax + 1) * CELL_PX] = 1.0
        return _upscale(frame, self.frame_size)

    def get_state(self) -> dict:
        return {
            'agent': list(self.agent),
            'pellets': [list(p) for p in self.pellets],
            'steps': self.steps,
            'done': self.done,
            'rng': self.rng.get_state(),
        }

    def set_state(self, state: dict, rng: Rng | None = None):
        self.agent = list(state['agent'])
        self.pellets = [list(p) for p in state['pellets']]
        self.steps = state['steps']
        self.done = state['done']
        self.rng = rng or self.rng or Rng(state['rng']['seed'], state['rng']['stream'])
        self.rng.set_state(state['rng'])


ENVIRONMENTS = {
    'minipong': MiniPong,
    'minicollect': MiniCollect,
}


def make_env(config: EnvConfig) -> EnvAdapter:
    env_cls = ENVIRONMENTS.get(config.name)
    if env_cls is None:
        raise ValueError(f"Unknown environment '{config.name}'")
    kwargs = {'frame_size': config.frame_size}
    if config.max_episode_steps is not None:
        kwargs['max_episode_steps'] = config.max_episode_steps
    return env_cls(**kwargs)


# ============================================================================
# Frame processing
# ============================================================================

def to_frame(raw: np.ndarray, size: int) -> np.ndarray:
    """Grayscale (luminance) and resize to size x size by block mean or pixel repeat"""
    frame = np.asarray(raw, dtype=np.float32)
    if frame.ndim == 3:
        frame = frame @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    height = frame.shape[0]
    if height > size:
        factor = height // size
        frame = frame.reshape(size, factor, size, factor).mean(axis=(1, 3))
    elif height < size:
        frame = _upscale(frame, size)
    return frame


class FrameProcessor:
    """Repeats each action (stopping at done), sums rewards, emits max of the last two raw frames"""

    def __init__(self, env: EnvAdapter, action_repeat: int = 4, frame_size: int = 32):
        self.env = env
        self.action_repeat = action_repeat
        self.frame_size = frame_size
        self.raw = deque(maxlen=2)

    @property
    def spec(self) -> EnvSpec:
        return self.env.spec

    def reset(self, rng: Rng) -> np.ndarray:
        frame = self.env.reset(rng)
        self.raw.clear()
        self.raw.append(frame)
        return to_frame(frame, self.frame_size)

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        total, done = 0.0, False
        for _ in range(self.action_repeat):
            frame, reward, done = self.env.step(action)
            self.raw.append(frame)
            total += reward
            if done:
                break
        return self.process(), total, done

    def process(self) -> np.ndarray:
        return to_frame(np.maximum.reduce(list(self.raw)), self.frame_size)

    def get_state(self) -> dict:
        return {'env': self.env.get_state(), 'raw': [f.tolist() for f in self.raw]}

    def set_state(self, state: dict, rng: Rng | None = None):
        self.env.set_state(state['env'], rng)
        self.raw.clear()
        for frame in state['raw']:
            self.raw.append(np.asarray(frame, dtype=np.float32))


def make_processed_env(config: EnvConfig) -> FrameProcessor:
    return FrameProcessor(make_env(config), config.action_repeat, config.frame_size)
