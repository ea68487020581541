#!/usr/bin/env python3
"""
Pydantic models for GLAM configuration, run records and reports
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Literal, Mapping, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator


# ============================================================================
# Configuration
# ============================================================================

class WorldModelConfig(BaseModel):
    """World-model architecture, loss weights and optimizer settings"""
    model_config = ConfigDict(extra='forbid')

    latent_groups: int = Field(default=32, ge=1, description="K categorical groups")
    latent_classes: int = Field(default=32, ge=2, description="C classes per group")
    unimix: float = Field(default=0.01, ge=0.0, lt=1.0)
    d_model: int = Field(default=256, ge=1, description="Mamba feature dimension")
    d_state: int = Field(default=16, ge=1, description="SSM state size N")
    expand: int = Field(default=2, ge=1, description="D_inner = expand * d_model")
    conv_width: int = Field(default=4, ge=1)
    use_causal_conv: bool = True
    exact_zoh: bool = False
    scan_mode: Literal['parallel', 'sequential'] = 'parallel'
    gmamba_layers: int = Field(default=1, ge=1, le=2)
    lmamba_layers: int = Field(default=1, ge=1, le=2)
    gmamba_length: int = Field(default=16, ge=2, description="l")
    lmamba_length: int = Field(default=4, ge=1, description="s")
    disable_gmamba: bool = False
    disable_lmamba_variation: bool = Field(default=False, description="Dbl.Mamba: global branch on raw features")
    plain_backbone: bool = Field(default=False, description="Local branch as a stateful full-sequence Mamba")
    encoder_channels: list[int] = Field(default_factory=lambda: [16, 32, 64])
    hidden_dim: int = Field(default=256, ge=1)
    reward_bins: int = Field(default=255, ge=2)
    bin_low: float = -20.0
    bin_high: float = 20.0
    beta_dyn: float = Field(default=0.5, ge=0.0)
    beta_rep: float = Field(default=0.1, ge=0.0)
    beta_var: float = Field(default=0.1, ge=0.0)
    free_bits: float = Field(default=1.0, ge=0.0)
    lr: float = Field(default=1e-4, gt=0.0)
    clip_norm: float = Field(default=1000.0, gt=0.0)
    batch_size: int = Field(default=32, ge=1)
    batch_length: int = Field(default=64, ge=2)

    @model_validator(mode='after')
    def check_lengths(self) -> 'WorldModelConfig':
        needed = max(self.gmamba_length, self.lmamba_length)
        if self.batch_length < needed:
            raise ValueError(f"batch_length {self.batch_length} shorter than max(l, s) = {needed}")
        if self.bin_high <= self.bin_low:
            raise ValueError("bin_high must exceed bin_low")
        if self.plain_backbone and not self.disable_gmamba:
            raise ValueError("plain_backbone requires disable_gmamba")
        return self


class AgentConfig(BaseModel):
    """Actor-critic and imagination settings"""
    model_config = ConfigDict(extra='forbid')

    gamma: float = Field(default=0.985, ge=0.0, le=1.0)
    lam: float = Field(default=0.95, ge=0.0, le=1.0)
    entropy_coef: float = Field(default=3e-4, ge=0.0)
    lr: float = Field(default=3e-5, gt=0.0)
    clip_norm: float = Field(default=100.0, gt=0.0)
    hidden_dim: int = Field(default=256, ge=1)
    imagination_batch: int = Field(default=1024, ge=1)
    context_length: int = Field(default=16, ge=2, description="Imagination context length")
    horizon_initial: int = Field(default=16, ge=1)
    horizon_increment: int = Field(default=8, ge=0)
    horizon_period: int = Field(default=25000, ge=1, description="Env steps between horizon increases")
    horizon_max: int = Field(default=32, ge=1)
    return_scale_decay: float = Field(default=0.99, ge=0.0, lt=1.0)

    @model_validator(mode='after')
    def check_horizon(self) -> 'AgentConfig':
        if self.horizon_max < self.horizon_initial:
            raise ValueError(f"horizon_max {self.horizon_max} below horizon_initial {self.horizon_initial}")
        return self


class EnvConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    name: Literal['minipong', 'minicollect'] = 'minipong'
    frame_size: int = 32
    action_repeat: int = Field(default=4, ge=1)
    max_episode_steps: Optional[int] = Field(default=None, ge=1)
    context_length: int = Field(default=16, ge=1, description="Real steps conditioning the collection policy")

    @model_validator(mode='after')
    def check_frame_size(self) -> 'EnvConfig':
        if self.frame_size not in (32, 64):
            raise ValueError(f"frame_size must be 32 or 64, got {self.frame_size}")
        return self


class ReplayConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    capacity: int = Field(default=100000, ge=1)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    seed: int = Field(default=0, ge=0)
    total_env_steps: int = Field(default=100000, ge=1)
    warmup_steps: int = Field(default=1024, ge=0)
    wm_update_every: int = Field(default=1, ge=1)
    agent_update_every: int = Field(default=1, ge=1)
    log_every: int = Field(default=100, ge=1)
    checkpoint_every: int = Field(default=5000, ge=1)
    eval_episodes: int = Field(default=20, ge=1)
    eval_greedy: bool = False
    strict: bool = False
    precision: Literal['float32', 'float64'] = 'float32'
    output_dir: str = 'runs/default'
    episode_log: bool = Field(default=False, description="Log each collected transition to episodes.jsonl")


# Bookkeeping keys that never change results; a run may resume with new values
HASH_EXCLUDED_KEYS = (
    'run.total_env_steps',
    'run.log_every',
    'run.checkpoint_every',
    'run.eval_episodes',
    'run.output_dir',
    'run.episode_log',
)


class Config(BaseModel):
    """Complete training configuration; every default is a published hyperparameter"""
    model_config = ConfigDict(extra='forbid')

    world_model: WorldModelConfig = Field(default_factory=WorldModelConfig)
    agent: AgentConfig = Field(default_factory=AgentConfig)
    env: EnvConfig = Field(default_factory=EnvConfig)
    replay: ReplayConfig = Field(default_factory=ReplayConfig)
    run: RunConfig = Field(default_factory=RunConfig)

    @model_validator(mode='after')
    def check_cross_sections(self) -> 'Config':
        if self.replay.capacity < self.world_model.batch_length:
            raise ValueError("replay.capacity must hold at least one training window")
        return self

    @classmethod
    def from_yaml_file(cls, path: Path) -> 'Config':
        """Load a config from YAML; missing keys take defaults, unknown keys are rejected"""
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}
        return cls(**data)

    def to_yaml_file(self, path: Path):
        """Write the full config, defaults included"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            yaml.safe_dump(self.model_dump(), f, sort_keys=False)

    def with_overrides(self, overrides: Mapping[str, Any]) -> 'Config':
        """Copy with dotted-key overrides applied, re-validated"""
        data = self.model_dump()
        for dotted, value in overrides.items():
            _set_dotted(data, dotted, value)
        return Config(**data)

    def config_hash(self) -> str:
        data = self.model_dump()
        for dotted in HASH_EXCLUDED_KEYS:
            section, key = dotted.split('.')
            data[section].pop(key, None)
        canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _set_dotted(data: dict, dotted: str, value: Any):
    parts = dotted.split('.')
    node = data
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ValueError(f"Unknown config section '{part}' in '{dotted}'")
        node = node[part]
    if parts[-1] not in node:
        raise ValueError(f"Unknown config key '{dotted}'")
    node[parts[-1]] = value


def parse_overrides(items: Iterable[str]) -> dict[str, Any]:
    """
    Parse CLI 'dotted.key=value' strings

    Values go through yaml.safe_load so numbers, booleans and lists type correctly.
    """
    overrides = {}
    for item in items:
        if '=' not in item:
            raise ValueError(f"Override '{item}' is not of the form dotted.key=value")
        key, raw = item.split('=', 1)
        overrides[key.strip()] = yaml.safe_load(raw)
    return overrides


# ============================================================================
# Environment description
# ============================================================================

class EnvSpec(BaseModel):
    """Static description of a pixel environment"""
    name: str
    frame_shape: tuple[int, int]
    action_count: int = Field(ge=2)
    max_episode_steps: int = Field(ge=1)
    dynamics: str = Field(description="Plain-language description of the deterministic rules")

    @model_validator(mode='after')
    def check_shape(self) -> 'EnvSpec':
        if any(side not in (32, 64) for side in self.frame_shape):
            raise ValueError(f"frame_shape must use 32 or 64 pixel sides, got {self.frame_shape}")
        return self


class HorizonSchedule(BaseModel):
    """Imagination horizon growing by `increment` every `period` env steps up to `n_max`"""
    n_0: int = 16
    increment: int = 8
    period: int = 25000
    n_max: int = 32

    @classmethod
    def from_config(cls, agent: AgentConfig) -> 'HorizonSchedule':
        return cls(n_0=agent.horizon_initial, increment=agent.horizon_increment,
                   period=agent.horizon_period, n_max=agent.horizon_max)


# ============================================================================
# Records and reports
# ============================================================================

class MetricsRecord(BaseModel):
    """One logging interval of a training run"""
    env_step: int
    wm_loss_total: Optional[float] = None
    wm_loss_pred: Optional[float] = None
    wm_loss_dyn: Optional[float] = None
    wm_loss_rep: Optional[float] = None
    wm_loss_var: Optional[float] = None
    actor_loss: Optional[float] = None
    critic_loss: Optional[float] = None
    policy_entropy: Optional[float] = None
    horizon: int
    episode_return_mean: Optional[float] = None
    episodes: int = 0
    wm_updates: int = 0
    agent_updates: int = 0
    wall_clock: float = Field(default=0.0, description="Seconds since run start; not deterministic")

    @classmethod
    def from_jsonl_file(cls, path: Path) -> list['MetricsRecord']:
        """Load every record of a metrics stream"""
        records = []
        with open(path, 'r', encoding='utf-8') as f:
            for line in f:
                if line.strip():
                    records.append(cls.model_validate_json(line))
        return records

    def append_to(self, path: Path):
        """Append as one JSON line and flush"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'a', encoding='utf-8') as f:
            f.write(self.model_dump_json() + '\n')
            f.flush()


class EvalReport(BaseModel):
    """Scores of an evaluation run from one checkpoint"""
    env: str
    env_step: int
    greedy: bool
    episode_scores: list[float]
    mean_score: float

    def to_json_file(self, path: Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.model_dump_json(indent=2))


class GradCheckReport(BaseModel):
    """Tape gradients against central finite differences"""
    max_rel_error: float
    per_input: list[float]
    tolerance: float
    passed: bool


class ScoreSummary(BaseModel):
    """Human-normalized scores per game and their aggregates (fractions, 1.0 = human)"""
    per_game: dict[str, float]
    mean: float
    median: float


class ReferenceScore(BaseModel):
    random: float
    human: float


class EpisodeLogRecord(BaseModel):
    """One transition of an episode log; frames are raw uint8 bytes, base64 encoded"""
    frame: str
    frame_shape: tuple[int, int]
    action: int
    reward: float
    done: bool
