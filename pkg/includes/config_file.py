"""
Run description files (YAML) with top-level keys `model` and `train`.

The `model` section takes exactly one of:
  preset: <name>    the named preset; other fields may only repeat its values
  extends: <name>   the named preset with the listed fields overriding it
  stages: [...]     a full stage-by-stage description
"""
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional

import yaml
from jsonschema import Draft7Validator

from cvt.config import ModelConfig
from cvt.errors import ConfigError
from cvt.presets import PRESETS, get_preset
from cvt.training import TrainHyperParams

_INT = {"type": "integer"}
_NUM = {"type": "number"}

STAGE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["embed", "num_blocks", "num_heads"],
    "properties": {
        "embed": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kernel", "stride", "padding", "out_channels"],
            "properties": {"kernel": _INT, "stride": _INT, "padding": _INT, "out_channels": _INT},
        },
        "num_blocks": _INT,
        "num_heads": _INT,
        "mlp_ratio": _NUM,
        "with_cls_token": {"type": "boolean"},
        "proj": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kernel": _INT,
                "stride_q": _INT,
                "stride_kv": _INT,
                "padding": _INT,
                "method": {"enum": ["dw_bn", "linear"]},
            },
        },
        "stride_kv_per_block": {"type": ["array", "null"], "items": _INT},
        "mlp_ratio_per_block": {"type": ["array", "null"], "items": _NUM},
        "drop_rate": _NUM,
    },
}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": list(PRESETS)},
        "extends": {"enum": list(PRESETS)},
        "stages": {"type": "array", "items": STAGE_SCHEMA, "minItems": 1},
        "num_classes": _INT,
        "input_channels": _INT,
        "name": {"type": "string"},
    },
}

TRAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "steps": _INT,
        "seed": _INT,
        "task_seed": _INT,
        "batch_size": _INT,
        "lr": _NUM,
        "warmup_fraction": _NUM,
        "weight_decay": _NUM,
        "beta1": _NUM,
        "beta2": _NUM,
        "eps": _NUM,
        "shuffle_labels": {"type": "boolean"},
        "image_size": _INT,
        "noise_scale": _NUM,
        "eval_samples": _INT,
        "log_every": _INT,
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {"model": MODEL_SCHEMA, "train": TRAIN_SCHEMA},
}

HPARAM_KEYS = ("lr", "batch_size", "warmup_fraction", "weight_decay", "beta1", "beta2", "eps", "shuffle_labels", "log_every")


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 300
    seed: int = 0
    task_seed: int = 0
    image_size: int = 32
    noise_scale: float = 0.5
    eval_samples: int = 1000
    hparams: TrainHyperParams = field(default_factory=TrainHyperParams)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainSettings


# ==========================
# Model section
# ==========================
def resolve_model(section: Dict[str, Any]) -> ModelConfig:
    modes = [key for key in ("preset", "extends", "stages") if key in section]
    if len(modes) != 1:
        raise ConfigError("model", "give exactly one of 'preset', 'extends' or 'stages'")
    mode = modes[0]
    scalars = {k: v for k, v in section.items() if k in ("num_classes", "input_channels", "name")}

    if mode == "stages":
        return ModelConfig.from_dict({"stages": section["stages"], **scalars})

    base = get_preset(section[mode])
    if mode == "preset":
        for key, value in scalars.items():
            if getattr(base, key) != value:
                raise ConfigError(
                    f"model.{key}",
                    f"{value!r} conflicts with preset {base.name!r} ({getattr(base, key)!r}); use 'extends' to override",
                )
        return base
    return replace(base, **scalars)


def _first_schema_error(data: Any) -> Optional[ConfigError]:
    errors = sorted(Draft7Validator(SCHEMA).iter_errors(data), key=lambda e: list(e.path))
    if not errors:
        return None
    err = errors[0]
    where = ".".join(str(p) for p in err.path) or "<root>"
    return ConfigError(where, err.message)


def parse_config(data: Any) -> RunConfig:
    error = _first_schema_error(data)
    if error is not None:
        raise error

    model = resolve_model(data["model"])
    raw_train = data.get("train", {})
    hparams = TrainHyperParams(**{k: raw_train[k] for k in HPARAM_KEYS if k in raw_train})
    settings = {k: v for k, v in raw_train.items() if k not in HPARAM_KEYS}
    return RunConfig(model=model, train=TrainSettings(hparams=hparams, **settings))


def load_config_file(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise ConfigError("config", f"file not found: {path}") from e
    except yaml.YAMLError as e:
        raise ConfigError("config", f"not valid YAML: {e}") from e
    return parse_config(data)


def select_model(config_path: Optional[str], preset: Optional[str], default: str = "cvt13") -> ModelConfig:
    """`--config` and `--preset` are mutually exclusive; with neither, the default preset."""
    if config_path and preset:
        raise ConfigError("config", "give either --config or --preset, not both")
    if config_path:
        return load_config_file(config_path).model
    return get_preset(preset or default)
