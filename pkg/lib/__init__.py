"""
GLAM Library
World model with global and local Mamba inference modules, imagination
actor-critic, toy pixel environments and the training harness
"""

from .trainer import GlamTrainer, evaluate, run_ablation
from .scores import aggregate_scores, human_normalized
from .plots import emit_plots

__all__ = ['GlamTrainer', 'evaluate', 'run_ablation', 'aggregate_scores', 'human_normalized', 'emit_plots']
