#!/usr/bin/env python3
"""
Training-curve and imagination plots
Curves of one or more seeds are drawn as a mean line with a min-max band
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

from lib.models import MetricsRecord

logger = logging.getLogger(__name__)

# metric field -> (file stem, y label)
CURVES = {
    'episode_return_mean': ('score', 'Episode return'),
    'wm_loss_total': ('wm_loss', 'World-model loss'),
    'actor_loss': ('actor_loss', 'Actor loss'),
    'critic_loss': ('critic_loss', 'Critic loss'),
}


@dataclass
class SeedCurve:
    steps: np.ndarray  # (P,) env steps
    mean: np.ndarray   # (P,)
    low: np.ndarray    # (P,) min over seeds
    high: np.ndarray   # (P,) max over seeds
    seeds: int


def aggregate_curves(runs: Sequence[list[MetricsRecord]], field: str) -> SeedCurve:
    """
    Mean, min and max of one metric across seeds at every logged env step

    A step enters the curve when at least one seed logged a value there.
    """
    by_step: dict[int, list[float]] = {}
    for records in runs:
        for record in records:
            value = getattr(record, field)
            if value is not None:
                by_step.setdefault(record.env_step, []).append(value)

    steps = np.array(sorted(by_step), dtype=np.int64)
    values = [np.array(by_step[s], dtype=np.float64) for s in steps]
    return SeedCurve(
        steps=steps,
        mean=np.array([v.mean() for v in values]),
        low=np.array([v.min() for v in values]),
        high=np.array([v.max() for v in values]),
        seeds=len(runs),
    )


def emit_plots(metrics_files: Sequence[Path], out_dir: Path, label: str = 'GLAM') -> list[Path]:
    """
    One PNG per curve, seeds aggregated; the x-axis spans [0, last logged env step]

    Args:
        metrics_files: metrics.jsonl of each seed
        out_dir: Directory receiving <curve>.png
        label: Legend label of the mean line

    Returns:
        Paths of the written images

    Raises:
        ValueError: No files, or no records in any of them
    """
    if not metrics_files:
        raise ValueError("emit_plots: no metrics files given")
    runs = [MetricsRecord.from_jsonl_file(path) for path in metrics_files]
    if not any(runs):
        raise ValueError(f"emit_plots: no metrics records in {[str(p) for p in metrics_files]}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    max_step = max(record.env_step for records in runs for record in records)

    written = []
    for field, (stem, ylabel) in CURVES.items():
        curve = aggregate_curves(runs, field)
        if curve.steps.size == 0:
            logger.info(f"No values for {field}; skipping {stem}.png")
            continue

        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(curve.steps, curve.mean, label=label)
        if curve.seeds > 1:
            ax.fill_between(curve.steps, curve.low, curve.high, alpha=0.25)
        ax.set_xlim(0, max_step)
        ax.set_xlabel('Environment steps')
        ax.set_ylabel(ylabel)
        ax.legend()
        path = out_dir / f'{stem}.png'
        fig.savefig(str(path), dpi=120, bbox_inches='tight')
        plt.close(fig)
        written.append(path)

    return written


def imagination_strip(real: np.ndarray, imagined: np.ndarray, path: Path, context_length: int = 0) -> Path:
    """
    Real frames on the top row, imagined frames below

    Args:
        real: (T, H, W) recorded frames in [0, 1]
        imagined: (T, H, W) decoded frames aligned with `real`
        path: PNG to write
        context_length: Leading columns fed from real frames; marked in the titles
    """
    if real.shape != imagined.shape:
        raise ValueError(f"imagination_strip: real {real.shape} vs imagined {imagined.shape}")
    steps = real.shape[0]
    fig, axes = plt.subplots(2, steps, figsize=(1.2 * steps, 2.6), squeeze=False)
    for t in range(steps):
        for row, frames in enumerate((real, imagined)):
            ax = axes[row, t]
            ax.imshow(frames[t], cmap='gray', vmin=0.0, vmax=1.0, interpolation='nearest')
            ax.set_xticks([])
            ax.set_yticks([])
        axes[0, t].set_title(f't={t}' + ('*' if t < context_length else ''), fontsize=8)
    axes[0, 0].set_ylabel('real')
    axes[1, 0].set_ylabel('imagined')

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(str(path), dpi=120, bbox_inches='tight')
    plt.close(fig)
    return path
