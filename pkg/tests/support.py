"""Small configs and builders shared by the test modules"""

import numpy as np

from lib.init_config import SMOKE_OVERRIDES
from lib.models import Config, WorldModelConfig
from lib.tensor import Rng
from lib.world_model import GlamModel

FRAME = 8
ACTIONS = 3


def tiny_world_model_config(**overrides) -> WorldModelConfig:
    """A world model small enough for finite differences and per-step replays"""
    values = dict(
        latent_groups=3, latent_classes=4, d_model=6, d_state=3, expand=2, conv_width=3,
        gmamba_length=4, lmamba_length=3, encoder_channels=[2, 2], hidden_dim=8,
        reward_bins=11, batch_size=2, batch_length=8,
    )
    values.update(overrides)
    return WorldModelConfig(**values)


def tiny_model(seed: int = 0, **overrides) -> GlamModel:
    return GlamModel(tiny_world_model_config(**overrides), FRAME, ACTIONS, Rng(seed, 0)).bind_names('world_model')


def random_episode(rng: np.random.Generator, batch: int, length: int, frame: int = FRAME,
                   actions: int = ACTIONS) -> tuple[np.ndarray, np.ndarray]:
    """Frames on the 1/255 grid and integer actions"""
    obs = rng.integers(0, 256, size=(batch, length, frame, frame)) / 255.0
    return obs, rng.integers(0, actions, size=(batch, length))


def smoke_config(**overrides) -> Config:
    """Smoke-sized training config with a short warmup"""
    values = dict(SMOKE_OVERRIDES)
    values.update({
        'run.warmup_steps': 100,
        'run.log_every': 10,
        'run.checkpoint_every': 1000,
        'agent.horizon_initial': 4,
        'agent.horizon_max': 8,
        'world_model.reward_bins': 31,
    })
    values.update(overrides)
    return Config().with_overrides(values)
