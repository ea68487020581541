from pathlib import Path

# Dotted-key overrides per ablation cell; 'full' is the default config
ABLATION_PRESETS = {
    'full': {},
    # Inference-module ablations
    'wo_g': {'world_model.disable_gmamba': True},
    'wo_g_l': {'world_model.disable_gmamba': True, 'world_model.plain_backbone': True},
    'wo_lvar': {'world_model.beta_var': 0.0},
    'dbl_mamba': {'world_model.disable_lmamba_variation': True, 'world_model.beta_var': 0.0},
    # Layer counts (GMamba, LMamba)
    'g1_l1': {'world_model.gmamba_layers': 1, 'world_model.lmamba_layers': 1},
    'g1_l2': {'world_model.gmamba_layers': 1, 'world_model.lmamba_layers': 2},
    'g2_l1': {'world_model.gmamba_layers': 2, 'world_model.lmamba_layers': 1},
    'g2_l2': {'world_model.gmamba_layers': 2, 'world_model.lmamba_layers': 2},
    # Maximum imagination horizon
    'n16': {'agent.horizon_max': 16},
    'n24': {'agent.horizon_max': 24},
    'n32': {'agent.horizon_max': 32},
}

ABLATION_GRID = ['full', 'wo_g', 'wo_g_l', 'wo_lvar', 'dbl_mamba', 'g1_l1', 'g1_l2', 'g2_l1', 'g2_l2']
HORIZON_GRID = ['n16', 'n24', 'n32']

# Tiny model and batch sizes for smoke runs and tests
SMOKE_OVERRIDES = {
    'world_model.latent_groups': 4,
    'world_model.latent_classes': 4,
    'world_model.d_model': 16,
    'world_model.d_state': 4,
    'world_model.hidden_dim': 32,
    'world_model.encoder_channels': [4, 8, 8],
    'world_model.batch_size': 2,
    'world_model.batch_length': 16,
    'agent.hidden_dim': 32,
    'agent.imagination_batch': 4,
    'agent.context_length': 4,
    'env.context_length': 4,
    'replay.capacity': 5000,
    'run.warmup_steps': 100,
    'run.log_every': 50,
    'run.checkpoint_every': 500,
}

# RNG stream ids derived from the run seed, one per concern
RNG_STREAMS = {
    'init': 0,
    'env': 1,
    'collect': 2,
    'replay': 3,
    'world_model': 4,
    'agent': 5,
    'eval': 6,
}

DATA_DIR_ENV_VAR = 'GLAM_DATA_DIR'
LONG_TESTS_ENV_VAR = 'GLAM_LONG_TESTS'

REFERENCE_SCORES_PATH = Path(__file__).resolve().parent.parent / 'data' / 'atari_reference_scores.json'
