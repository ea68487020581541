#!/usr/bin/env python3
"""
Human-normalized score arithmetic over the bundled Random / Human reference table
"""

import json
import os
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from lib.init_config import DATA_DIR_ENV_VAR, REFERENCE_SCORES_PATH
from lib.models import ReferenceScore, ScoreSummary


def human_normalized(score: float, random_ref: float, human_ref: float) -> float:
    """(score - random) / (human - random); signed, 1.0 means human level"""
    if human_ref == random_ref:
        raise ValueError(f"human_normalized: human and random references are both {human_ref}")
    return (score - random_ref) / (human_ref - random_ref)


def reference_scores_path() -> Path:
    """GLAM_DATA_DIR/atari_reference_scores.json when that exists, else the bundled table"""
    data_dir = os.getenv(DATA_DIR_ENV_VAR)
    if data_dir:
        candidate = Path(data_dir) / REFERENCE_SCORES_PATH.name
        if candidate.exists():
            return candidate
    return REFERENCE_SCORES_PATH


def load_reference_scores(path: Optional[Path] = None) -> dict[str, ReferenceScore]:
    with open(path or reference_scores_path(), 'r', encoding='utf-8') as f:
        data = json.load(f)
    return {game: ReferenceScore(**refs) for game, refs in data.items()}


def aggregate_scores(per_game: Mapping[str, float],
                     references: Optional[Mapping[str, ReferenceScore]] = None) -> ScoreSummary:
    """
    Normalize each game's score, then take mean and median across games

    Args:
        per_game: Raw agent score per game name
        references: Random / Human table; defaults to the bundled one

    Returns:
        ScoreSummary with per-game fractions and their mean and median

    Raises:
        ValueError: Empty input or a game missing from the reference table
    """
    if not per_game:
        raise ValueError("aggregate_scores: no games given")
    references = references if references is not None else load_reference_scores()

    normalized = {}
    for game, score in per_game.items():
        if game not in references:
            raise ValueError(f"aggregate_scores: unknown game '{game}'")
        refs = references[game]
        normalized[game] = human_normalized(score, refs.random, refs.human)

    values = np.array(list(normalized.values()), dtype=np.float64)
    return ScoreSummary(per_game=normalized, mean=float(values.mean()), median=float(np.median(values)))
