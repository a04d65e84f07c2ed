"""Run configuration: a flat JSON object with dotted keys.

Example::

    {"data.path": "gap.jsonl", "data.split_mode": "sequence",
     "model.arch": "BiRNODE", "solver.method": "rk4", "train.epochs": 10}

Unset keys take the defaults below; unknown keys are rejected.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .data import SplitSpec
from .exceptions import BirnodeError, ConfigError
from .models import ModelConfig
from .ode import SolverConfig
from .training import TrainConfig

DEFAULTS: dict = {
    "data.path": None,
    "data.split_mode": "seen-event",
    "data.ratios": [0.6, 0.2, 0.2],
    "data.held_out": None,
    "data.max_sequence_length": None,
    "model.arch": "RNODE",
    "model.hidden_width": 64,
    "model.dynamics_layers": [64],
    "model.dynamics_activation": "tanh",
    "model.aggregation": "concat",
    "model.time_channel": "absolute",
    "model.cell": "vanilla",
    "model.head_layers": None,
    "solver.method": "euler",
    "solver.steps_per_unit_time": 20,
    "solver.min_steps": 1,
    "solver.rtol": 1e-3,
    "solver.atol": 1e-4,
    "solver.max_adaptive_steps": 1000,
    "train.epochs": 50,
    "train.learning_rate": 0.01,
    "train.batch_size": 50,
    "train.dropout": 0.2,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "seed": 0,
    "out_dir": "runs/default",
}


def parse_override(item: str) -> tuple[str, object]:
    """``key=value`` with the value read as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def resolve(path=None, overrides: dict | None = None) -> dict:
    """Merge defaults, the config file and overrides (highest precedence)."""
    cfg = copy.deepcopy(DEFAULTS)
    layers = []
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {p}: invalid JSON ({exc.msg})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {p}: top level must be an object")
        layers.append(loaded)
    if overrides:
        layers.append(overrides)
    for layer in layers:
        unknown = sorted(set(layer) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(layer)
    validate(cfg)
    return cfg


def _section(cfg: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def solver_config(cfg: dict) -> SolverConfig:
    return SolverConfig(**_section(cfg, "solver"))


def split_spec(cfg: dict) -> SplitSpec:
    return SplitSpec(
        ratios=tuple(cfg["data.ratios"]), mode=cfg["data.split_mode"], held_out=cfg["data.held_out"]
    )


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(seed=int(cfg["seed"]), **_section(cfg, "train"))


def model_config(cfg: dict, input_width: int, num_classes: int) -> ModelConfig:
    m = _section(cfg, "model")
    return ModelConfig(
        input_width=input_width,
        num_classes=num_classes,
        solver=solver_config(cfg),
        dropout_rate=float(cfg["train.dropout"]),
        **m,
    )


def validate(cfg: dict) -> None:
    """Raise :class:`ConfigError` naming the offending section."""
    checks = [
        ("solver", lambda: solver_config(cfg)),
        ("data", lambda: split_spec(cfg)),
        ("train", lambda: train_config(cfg)),
        ("model", lambda: model_config(cfg, 1, 2)),
    ]
    for section, build in checks:
        try:
            build()
        except (BirnodeError, TypeError, ValueError) as exc:
            raise ConfigError(f"{section}: {exc}") from None
    msl = cfg["data.max_sequence_length"]
    if msl is not None and (not isinstance(msl, int) or msl < 1):
        raise ConfigError("data: max_sequence_length must be a positive integer or null")


def dump(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
