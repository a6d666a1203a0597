import logging
import sys
from functools import wraps

import click

import settings
from cvt.errors import CheckpointError, ConfigError, CvtError, GeometryError, TrainingDivergedError
from cvt.presets import PRESETS
from pages.analyze import analyze_view
from pages.evaluate import evaluate_view
from pages.search import search_view
from pages.trace import trace_view
from pages.train import train_view

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_CONFIG = 2
EXIT_GEOMETRY = 3
EXIT_IO = 4
EXIT_CHECKPOINT = 5
EXIT_INTERNAL = 6

PRESET_CHOICE = click.Choice(sorted(PRESETS))


def fail(message, code):
    click.secho(message, fg="red", err=True)
    sys.exit(code)


def run_view(view):
    """Route a command to its view; every library error becomes a documented exit code."""

    @wraps(view)
    def wrapper(*args, **kwargs):
        try:
            return view(*args, **kwargs)
        except ConfigError as e:
            fail(f"❌ Invalid configuration: {e}", EXIT_CONFIG)
        except GeometryError as e:
            fail(f"❌ Input too small: {e}", EXIT_GEOMETRY)
        except CheckpointError as e:
            fail(f"❌ Checkpoint error: {e}", EXIT_CHECKPOINT)
        except TrainingDivergedError as e:
            fail(f"⚠️ Training diverged: {e}", EXIT_DIVERGED)
        except OSError as e:
            fail(f"❌ Cannot write {e.filename}: {e.strerror}", EXIT_IO)
        except CvtError as e:
            fail(f"❌ Internal error ({type(e).__name__}): {e}", EXIT_INTERNAL)

    return wrapper


# ==========================
# Command group
# ==========================
@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log at DEBUG level.")
def cli(verbose):
    """Convolutional vision transformer: analysis, tracing and toy training."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else settings.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def model_options(func):
    func = click.option("--input-size", type=int, default=224, show_default=True)(func)
    func = click.option("--preset", type=PRESET_CHOICE, default=None, help="Compiled-in preset (default cvt13).")(func)
    func = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)(func)
    return func


@cli.command("analyze")
@model_options
@click.option("--format", "output_format", type=click.Choice(["table", "records"]), default="table", show_default=True)
@click.option("--stride-kv", type=click.IntRange(min=1), default=None, help="Override every key/value projection stride.")
def analyze(config_path, preset, input_size, output_format, stride_kv):
    """Parameter and FLOP counts per layer."""
    run_view(analyze_view)(config_path, preset, input_size, output_format, stride_kv)


@cli.command("trace")
@model_options
def trace(config_path, preset, input_size):
    """Output shape of every layer."""
    run_view(trace_view)(config_path, preset, input_size)


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--preset", type=PRESET_CHOICE, default=None, help="Model to train when no --config is given (default tiny).")
@click.option("--steps", type=click.IntRange(min=0), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default="model.cvtk", show_default=True)
@click.option("--log", "log_path", type=click.Path(), default=None, help="JSON-lines training log.")
def train(config_path, preset, steps, seed, out, log_path):
    """Train on the synthetic task and save a checkpoint."""
    run_view(train_view)(config_path, preset, steps, seed, out, log_path)


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--samples", type=click.IntRange(min=1), default=None)
def evaluate(checkpoint, seed, config_path, samples):
    """Accuracy and loss of a checkpoint on the synthetic task."""
    run_view(evaluate_view)(checkpoint, seed, config_path, samples)


@cli.command("search")
@model_options
@click.option("--samples", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--bottleneck", is_flag=True, help="Also list the bottleneck candidate.")
def search(config_path, preset, input_size, samples, seed, bottleneck):
    """Cost listing of the stride/ratio search space."""
    run_view(search_view)(config_path, preset, samples, seed, input_size, bottleneck)
