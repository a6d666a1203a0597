from dataclasses import replace

import click

from cvt.checkpoint import load_checkpoint
from cvt.training import evaluate
from includes.config_file import RunConfig, TrainSettings, load_config_file
from pages.train import make_dataset


def evaluate_view(checkpoint, seed=1, config_path=None, samples=None):
    """
    Accuracy and mean loss of a saved model on the synthetic task. With
    `--config`, the checkpoint must hold exactly that model and the task is
    rebuilt from its `train` section.
    """
    expected = load_config_file(config_path) if config_path else None
    model = load_checkpoint(checkpoint, expected.model if expected else None)

    run = expected or RunConfig(model=model.config, train=TrainSettings())
    if samples is not None:
        run = replace(run, train=replace(run.train, eval_samples=samples))

    result = evaluate(model, make_dataset(run), num_samples=run.train.eval_samples, seed=seed)
    click.echo(f"📊 {model.config.name} on {run.train.eval_samples} samples (seed {seed})")
    click.echo(f"accuracy {result.accuracy:.4f}  loss {result.loss:.4f}")
    return result
