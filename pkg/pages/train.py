import errno
import logging
import os
from dataclasses import replace

import click

from cvt.checkpoint import save_checkpoint
from cvt.data import SyntheticDataset
from cvt.errors import ConfigError
from cvt.model import build_model
from cvt.presets import get_preset
from cvt.training import evaluate, train
from includes.config_file import RunConfig, TrainSettings, load_config_file

logger = logging.getLogger(__name__)


def ensure_writable(path):
    """Fail before any work is done if `path` cannot be created."""
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory) or not os.access(directory, os.W_OK):
        raise OSError(errno.EACCES, "directory is not writable", path)
    if os.path.isdir(path):
        raise OSError(errno.EISDIR, "is a directory", path)


def make_dataset(run: RunConfig) -> SyntheticDataset:
    return SyntheticDataset(
        seed=run.train.task_seed,
        num_classes=run.model.num_classes,
        image_size=run.train.image_size,
        channels=run.model.input_channels,
        noise_scale=run.train.noise_scale,
    )


def resolve_run(config_path=None, preset=None, steps=None, seed=None):
    if config_path and preset:
        raise ConfigError("config", "give either --config or --preset, not both")
    if config_path:
        run = load_config_file(config_path)
    else:
        run = RunConfig(model=get_preset(preset or "tiny"), train=TrainSettings())

    overrides = {k: v for k, v in (("steps", steps), ("seed", seed)) if v is not None}
    return replace(run, train=replace(run.train, **overrides)) if overrides else run


def train_view(config_path=None, preset=None, steps=None, seed=None, out="model.cvtk", log_path=None):
    """Train on the synthetic task, evaluate, then write the checkpoint (and the JSONL log)."""
    run = resolve_run(config_path, preset, steps, seed)
    ensure_writable(out)
    if log_path:
        ensure_writable(log_path)

    dataset = make_dataset(run)
    model = build_model(run.model, seed=run.train.seed)
    click.echo(
        f"🚀 Training {run.model.name} ({model.num_parameters()} params) "
        f"for {run.train.steps} steps, seed {run.train.seed}"
    )
    log = train(model, dataset, run.train.steps, run.train.hparams, seed=run.train.seed)
    result = evaluate(model, dataset, num_samples=run.train.eval_samples, seed=run.train.seed + 1)

    digest = save_checkpoint(model, out)
    if log_path:
        log.write_jsonl(log_path)
        logger.info("wrote %d log records to %s", len(log.records), log_path)

    final_loss = log.losses[-1] if log.records else float("nan")
    click.echo(f"final loss {final_loss:.4f}")
    click.echo(f"accuracy {result.accuracy:.4f}  loss {result.loss:.4f}")
    click.echo(f"✅ Saved {out}  checksum {digest}")
    return digest, result
