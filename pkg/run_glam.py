#!/usr/bin/env python3
"""
Command-line API for GLAM world-model training
Subcommands: train, eval, ablate, plot, scores, config dump
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

from lib.init_config import ABLATION_GRID, ABLATION_PRESETS, SMOKE_OVERRIDES
from lib.models import Config, parse_overrides

load_dotenv()


def banner(title: str):
    print("\n" + "="*80)
    print(title)
    print("="*80)


def build_config(args) -> Config:
    """Defaults <- YAML file <- smoke sizes <- preset <- -o overrides"""
    config = Config.from_yaml_file(args.config) if args.config else Config()
    if args.smoke:
        config = config.with_overrides(SMOKE_OVERRIDES)
    if args.preset:
        if args.preset not in ABLATION_PRESETS:
            raise ValueError(f"Unknown preset '{args.preset}'; choose from {sorted(ABLATION_PRESETS)}")
        config = config.with_overrides(ABLATION_PRESETS[args.preset])
    if args.override:
        config = config.with_overrides(parse_overrides(args.override))
    return config


def has_config_args(args) -> bool:
    return bool(args.config or args.preset or args.smoke or args.override)


def add_config_args(parser: argparse.ArgumentParser):
    parser.add_argument('--config', type=Path, help='YAML config file (missing keys take defaults)')
    parser.add_argument('--preset', help=f'Ablation preset, one of {sorted(ABLATION_PRESETS)}')
    parser.add_argument('--smoke', action='store_true', help='Tiny model and batch sizes for quick runs')
    parser.add_argument('-o', '--override', action='append', default=[], metavar='KEY=VALUE',
                        help='Dotted config override, e.g. -o world_model.lr=3e-4 (repeatable)')


# ============================================================================
# Subcommands
# ============================================================================

def cmd_train(args):
    from lib.checkpoint import stored_config
    from lib.trainer import GlamTrainer

    # a resumed run keeps its stored config unless one is given
    config = stored_config(args.resume) if args.resume and not has_config_args(args) else build_config(args)
    if args.output_dir:
        config = config.with_overrides({'run.output_dir': str(args.output_dir)})

    banner(f"Training GLAM on {config.env.name} (seed {config.run.seed})")
    if args.resume:
        trainer = GlamTrainer.from_checkpoint(args.resume, config, force=args.force)
        print(f"✓ Resumed from {args.resume} at env step {trainer.env_step}")
    else:
        trainer = GlamTrainer(config)
    config.to_yaml_file(trainer.output_dir / 'config.yaml')

    final = trainer.train(args.steps)

    banner("TRAINING COMPLETE")
    print(f"Env steps: {trainer.env_step}")
    print(f"World-model updates: {trainer.wm_updates}")
    print(f"Agent updates: {trainer.agent_updates}")
    print(f"Metrics: {trainer.metrics_path}")
    print(f"Final checkpoint: {final}")
    print("="*80)


def cmd_eval(args):
    from lib.trainer import evaluate

    config = build_config(args) if has_config_args(args) else None
    banner(f"Evaluating {args.checkpoint}")
    report = evaluate(args.checkpoint, args.episodes, config, greedy=True if args.greedy else None)
    for i, score in enumerate(report.episode_scores):
        print(f"  Episode {i + 1}: {score:g}")
    print(f"✓ Mean score over {len(report.episode_scores)} episodes: {report.mean_score:g}")
    if args.out:
        report.to_json_file(args.out)
        print(f"✓ Saved report to {args.out}")


def cmd_ablate(args):
    from lib.plots import emit_plots
    from lib.trainer import run_ablation

    config = build_config(args)
    presets = args.presets or ABLATION_GRID
    banner(f"Ablation: {len(presets)} presets x {len(args.seeds)} seeds")
    if args.steps:
        config = config.with_overrides({'run.total_env_steps': args.steps})

    results = run_ablation(config, presets, args.seeds, args.output_dir, args.workers)

    banner("ABLATION COMPLETE")
    for preset, paths in results.items():
        status = '✓' if len(paths) == len(args.seeds) else '✗'
        print(f"{status} {preset}: {len(paths)}/{len(args.seeds)} seeds finished")
        if paths:
            emit_plots(paths, Path(args.output_dir) / preset / 'plots', label=preset)
    failed = [p for p, paths in results.items() if len(paths) < len(args.seeds)]
    if failed:
        raise RuntimeError(f"Ablation cells failed for presets {failed}")


def cmd_plot(args):
    from lib.plots import emit_plots, imagination_strip

    if args.video:
        from lib.trainer import open_loop_frames

        banner(f"Open-loop imagination from {args.video}")
        real, imagined, context = open_loop_frames(args.video, args.length)
        path = imagination_strip(real, imagined, Path(args.out_dir) / 'imagination.png', context_length=1)
        print(f"✓ Saved {path} ({real.shape[0]} steps after {context - 1} context frames)")
        if not args.metrics:
            return

    banner(f"Plotting {len(args.metrics)} metrics file(s)")
    for path in emit_plots(args.metrics, args.out_dir, label=args.label):
        print(f"✓ Saved {path}")


def cmd_scores(args):
    from lib.scores import aggregate_scores, load_reference_scores

    with open(args.scores, 'r', encoding='utf-8') as f:
        per_game = json.load(f)
    references = load_reference_scores(args.references) if args.references else None
    summary = aggregate_scores(per_game, references)

    banner(f"Human-normalized scores over {len(summary.per_game)} games")
    for game, value in summary.per_game.items():
        print(f"  {game}: {100 * value:.1f}%")
    print(f"✓ Human Mean: {100 * summary.mean:.1f}%")
    print(f"✓ Human Median: {100 * summary.median:.1f}%")


def cmd_config_dump(args):
    config = build_config(args)
    if args.out:
        config.to_yaml_file(args.out)
        print(f"✓ Wrote config (hash {config.config_hash()[:12]}) to {args.out}")
    else:
        import yaml
        sys.stdout.write(yaml.safe_dump(config.model_dump(), sort_keys=False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='GLAM world model: train, evaluate and ablate')
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    train = sub.add_parser('train', help='Train a world model and agent')
    add_config_args(train)
    train.add_argument('--output-dir', type=Path, help='Overrides run.output_dir')
    train.add_argument('--steps', type=int, help='Env-step budget (overrides run.total_env_steps)')
    train.add_argument('--resume', type=Path, help='Checkpoint to continue from')
    train.add_argument('--force', action='store_true', help='Resume despite a config hash mismatch')
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser('eval', help='Evaluate a checkpoint')
    ev.add_argument('checkpoint', type=Path)
    add_config_args(ev)
    ev.add_argument('--episodes', type=int, default=20)
    ev.add_argument('--greedy', action='store_true', help='Argmax actions instead of sampling')
    ev.add_argument('--out', type=Path, help='Write the EvalReport JSON here')
    ev.set_defaults(func=cmd_eval)

    ablate = sub.add_parser('ablate', help='Train a grid of ablation presets')
    add_config_args(ablate)
    ablate.add_argument('--presets', nargs='+', choices=sorted(ABLATION_PRESETS))
    ablate.add_argument('--seeds', nargs='+', type=int, default=[0])
    ablate.add_argument('--steps', type=int, help='Env-step budget per cell')
    ablate.add_argument('--workers', type=int, default=1)
    ablate.add_argument('--output-dir', type=Path, default=Path('runs/ablation'))
    ablate.set_defaults(func=cmd_ablate)

    plot = sub.add_parser('plot', help='Training curves and imagination strips')
    plot.add_argument('metrics', nargs='*', type=Path, help='metrics.jsonl files, one per seed')
    plot.add_argument('--out-dir', type=Path, default=Path('plots'))
    plot.add_argument('--label', default='GLAM')
    plot.add_argument('--video', type=Path, metavar='CHECKPOINT', help='Render an open-loop imagination strip')
    plot.add_argument('--length', type=int, default=32, help='Segment length for --video')
    plot.set_defaults(func=cmd_plot)

    scores = sub.add_parser('scores', help='Human-normalized mean and median')
    scores.add_argument('scores', type=Path, help='JSON object of game name -> raw score')
    scores.add_argument('--references', type=Path, help='Random/Human table (defaults to the bundled one)')
    scores.set_defaults(func=cmd_scores)

    config = sub.add_parser('config', help='Config utilities')
    config_sub = config.add_subparsers(dest='config_command', required=True)
    dump = config_sub.add_parser('dump', help='Print the full config, defaults included')
    add_config_args(dump)
    dump.add_argument('--out', type=Path, help='Write YAML here instead of stdout')
    dump.set_defaults(func=cmd_config_dump)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        args.func(args)
    except Exception as e:
        sys.stderr.write(json.dumps({'error': type(e).__name__, 'message': str(e)}) + '\n')
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
