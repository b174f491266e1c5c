"""Command line entry points for the full pipeline.

All commands read one declarative config file; --seed overrides the
dataset seed so sweeps don't need per-seed config copies.
"""

import logging
import sys
from pathlib import Path

import click

from .checkpoint import load_params
from .config import (
    LOSS_MODES, SHARING_MODES, STRATEGIES, load_config, parse_config,
)
from .data import save_dataset
from .experiment import (
    eval_dataset, run_ablation, run_curve, train_dataset, write_curve_csv,
)
from .training import (
    generate_interactive_training_set, train_stage1, train_stage2,
)

log = logging.getLogger(__name__)


def _load(config_path, seed):
    if config_path is None:
        return parse_config(None, seed_override=seed)
    return load_config(config_path, seed_override=seed)


@click.group()
@click.option("--config", "-c", "config_path",
              type=click.Path(exists=True, dir_okay=False), default=None,
              help="Experiment config file (YAML). Defaults apply if omitted.")
@click.option("--seed", type=int, default=None,
              help="Override the dataset seed from the config.")
@click.option("--verbose/--quiet", default=True, show_default=True)
@click.pass_context
def main(ctx, config_path, seed, verbose):
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    ctx.obj = _load(config_path, seed)


@main.command("gen-data")
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False),
              help="Directory receiving train/ and eval/ scene folders.")
@click.pass_obj
def gen_data(cfg, out_dir):
    """Generate the synthetic dataset and write it as PNG + JSON scenes."""
    root = Path(out_dir)
    train = train_dataset(cfg)
    evals = eval_dataset(cfg)
    save_dataset(train, root / "train")
    save_dataset(evals, root / "eval")
    click.echo(f"wrote {len(train)} train and {len(evals)} eval scenes "
               f"to {root}")


@main.command()
@click.option("--stage", type=click.IntRange(1, 2), default=1,
              show_default=True)
@click.option("--loss", "loss_mode", type=click.Choice(LOSS_MODES),
              default=None, help="Override training.loss_mode.")
@click.option("--sharing", type=click.Choice(SHARING_MODES), default=None,
              help="Override training.sharing.")
@click.option("--out", "out_path", required=True,
              type=click.Path(dir_okay=False),
              help="Checkpoint file to write.")
@click.option("--from", "from_path",
              type=click.Path(exists=True, dir_okay=False), default=None,
              help="Stage-1 checkpoint to fine-tune (stage 2 only).")
@click.pass_obj
def train(cfg, stage, loss_mode, sharing, out_path, from_path):
    """Train the stage-1 or stage-2 model and save its checkpoint."""
    cfg = cfg.with_axes(loss_mode=loss_mode, sharing=sharing)
    dataset = train_dataset(cfg)
    if stage == 1:
        if from_path is not None:
            raise click.UsageError("--from only applies to --stage 2")
        train_stage1(dataset, cfg, checkpoint_path=out_path)
    else:
        if from_path is None:
            raise click.UsageError("--stage 2 needs --from STAGE1_CHECKPOINT")
        stage1 = load_params(from_path)
        examples = generate_interactive_training_set(dataset, stage1, cfg)
        train_stage2(examples, cfg, stage1, checkpoint_path=out_path)
    click.echo(f"saved stage-{stage} checkpoint to {out_path}")


@main.command()
@click.option("--params", "params_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Stage-2 checkpoint to evaluate.")
@click.option("--strategy", type=click.Choice(STRATEGIES), default=None,
              help="Override interaction.strategy.")
@click.option("--rounds", type=click.IntRange(min=0), default=None,
              help="Override interaction.rounds.")
@click.option("--out", "out_path", required=True,
              type=click.Path(dir_okay=False), help="CSV file to write.")
@click.pass_obj
def curve(cfg, params_path, strategy, rounds, out_path):
    """Run the interactive loop over the eval split and write the curve."""
    cfg = cfg.with_axes(strategy=strategy, rounds=rounds)
    params = load_params(params_path)
    scenes = eval_dataset(cfg)
    points = run_curve(scenes, params, cfg)
    write_curve_csv(points, out_path)
    for p in points:
        click.echo(f"round {p.round}: {p.scribbles_per_region:.2f} "
                   f"scribbles/region, mean IoU {p.mean_iou:.4f}")


@main.command()
@click.option("--out", "out_path", required=True,
              type=click.Path(dir_okay=False), help="CSV file to write.")
@click.pass_obj
def ablation(cfg, out_path):
    """Train all four loss/sharing cells and tabulate their mean IoU."""
    rows = run_ablation(cfg, csv_path=out_path)
    width = max(len(f"{m}+{s}") for m, s, _ in rows)
    for loss_mode, sharing, iou in rows:
        click.echo(f"{f'{loss_mode}+{sharing}':<{width}}  {iou:.4f}")


@main.command()
@click.option("--params", "params_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Model checkpoint the service predicts with.")
@click.option("--data", "data_dir", type=click.Path(file_okay=False),
              default=None, help="Scene directory served by scene id.")
@click.option("--static", "static_dir", type=click.Path(file_okay=False),
              default=None,
              help="Also serve this directory (the browser annotator) at /.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.pass_obj
def serve(cfg, params_path, data_dir, static_dir, host, port):
    """Serve the interactive annotation HTTP API."""
    import uvicorn

    from .service import create_app
    app = create_app(load_params(params_path), scene_dir=data_dir,
                     sharing=cfg.training.sharing,
                     box_margin=cfg.training.box_margin)
    if static_dir is not None:
        from starlette.staticfiles import StaticFiles

        # API routes are matched first; the mounts only catch the rest
        if data_dir is not None:
            app.mount("/scenes", StaticFiles(directory=data_dir),
                      name="scenes")
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="static")
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
