#!/usr/bin/env python3
"""
Checkpoint container
One .npz archive: named parameter arrays, Adam moments, replay arrays and a JSON
metadata string (config, config hash, RNG streams, counters, environment state)
"""

import json
import logging
import os
from pathlib import Path
from typing import Iterable

import numpy as np

from lib.models import Config
from lib.replay import ReplayBuffer
from lib.tensor import Parameter, ShapeError

logger = logging.getLogger(__name__)

META_KEY = 'meta'


class CheckpointMismatchError(RuntimeError):
    """Checkpoint was written under a different result-affecting config"""


def save_checkpoint(path: Path, config: Config, params: Iterable[Parameter], replay: ReplayBuffer,
                    meta: dict, extra_arrays: dict[str, np.ndarray] | None = None):
    """
    Write the full training state atomically

    Args:
        path: Target .npz file
        config: Run config; stored whole, with its hash
        params: Every trainable parameter (world model and agent)
        replay: Buffer whose arrays are stored under replay/
        meta: JSON-serializable run state (counters, RNG states, env state)
        extra_arrays: Additional arrays stored under state/
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = list(params)

    arrays = {}
    for p in params:
        arrays[f'param/{p.name}'] = p.data
        arrays[f'adam_m/{p.name}'] = p.adam_state.m
        arrays[f'adam_v/{p.name}'] = p.adam_state.v
    for key, value in replay.state_arrays().items():
        arrays[f'replay/{key}'] = value
    for key, value in (extra_arrays or {}).items():
        arrays[f'state/{key}'] = value

    full_meta = {
        'config': config.model_dump(),
        'config_hash': config.config_hash(),
        'adam_steps': {p.name: p.adam_state.step for p in params},
        **meta,
    }
    arrays[META_KEY] = np.array(json.dumps(full_meta, sort_keys=True))

    tmp = path.with_suffix('.tmp')
    with open(tmp, 'wb') as f:
        np.savez(f, **arrays)
    os.replace(tmp, path)
    logger.info(f"Saved checkpoint {path}")


def read_checkpoint(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Metadata and all arrays, without touching any live objects"""
    with np.load(Path(path)) as archive:
        arrays = {key: archive[key] for key in archive.files}
    meta = json.loads(str(arrays.pop(META_KEY)))
    return meta, arrays


def stored_config(path: Path) -> Config:
    meta, _ = read_checkpoint(path)
    return Config(**meta['config'])


def load_checkpoint(path: Path, config: Config, params: Iterable[Parameter], replay: ReplayBuffer | None,
                    force: bool = False) -> tuple[dict, dict[str, np.ndarray]]:
    """
    Restore parameters, Adam state and replay in place

    Args:
        path: Checkpoint file
        config: Config of the live run; its hash must match the stored one
        params: Live parameters, matched by name
        replay: Live buffer to refill, or None to skip
        force: Load despite a config hash mismatch

    Returns:
        (metadata, arrays stored under state/ with the prefix stripped)

    Raises:
        CheckpointMismatchError: Hash mismatch without force
    """
    meta, arrays = read_checkpoint(path)
    live_hash = config.config_hash()
    if meta['config_hash'] != live_hash:
        if not force:
            raise CheckpointMismatchError(
                f"Checkpoint {path} was written with config hash {meta['config_hash'][:12]}, "
                f"the live config hashes to {live_hash[:12]}; pass --force to load anyway")
        logger.warning(f"Loading {path} despite config hash mismatch (forced)")

    for p in params:
        key = f'param/{p.name}'
        if key not in arrays:
            raise KeyError(f"Checkpoint {path} has no parameter '{p.name}'")
        if arrays[key].shape != p.shape:
            raise ShapeError(f"{p.name}: checkpoint shape {arrays[key].shape} vs model {p.shape}")
        p.assign(arrays[key])
        p.adam_state.m = arrays[f'adam_m/{p.name}'].astype(p.dtype)
        p.adam_state.v = arrays[f'adam_v/{p.name}'].astype(p.dtype)
        p.adam_state.step = int(meta['adam_steps'][p.name])

    if replay is not None:
        replay.load_arrays({key[len('replay/'):]: value for key, value in arrays.items() if key.startswith('replay/')})

    state = {key[len('state/'):]: value for key, value in arrays.items() if key.startswith('state/')}
    return meta, state
