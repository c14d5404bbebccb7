"""Declarative run configuration: flat key-value text with sections.

Parsing rejects unknown sections and keys; emitting then re-parsing is
idempotent.  Every stochastic component derives its seed from the single
master seed and a component name, so streams stay independent.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


def seed_for(master_seed: int, component: str) -> int:
    """Stable per-component seed: hash of the master seed and component name."""
    digest = hashlib.sha256(f"{master_seed}:{component}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class RunConfig:
    # [run]
    experiment: str = "run"
    master_seed: int = 0
    algorithm: str = "ppo"
    total_steps: int = 200_000
    eval_every: int = 10          # updates; 0 disables periodic eval
    eval_episodes: int = 100
    checkpoint_every: int = 50    # updates
    output_dir: str = ""          # resolved by the CLI when empty
    # [env]
    family: str = "gapworld"
    level_count: int = 50
    level_seeds: str = ""         # comma list; empty means range(level_count)
    horizon: int = 100
    # [model]
    head: str = "baseline"
    n_basis: int = 4
    encoder_hidden: int = 64
    lstm_hidden: int = 64
    # [train]
    gamma: float = -1.0           # negative means family default
    gae_lambda: float = 0.95
    lr: float = 5e-4
    clip_eps: float = 0.2
    epochs: int = 3
    minibatches: int = 8
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    n_workers: int = 4
    steps_per_worker: int = 256
    normalize_advantages: bool = True

    def resolved_gamma(self) -> float:
        if self.gamma > 0:
            return self.gamma
        return 0.99 if self.family == "gapworld" else 0.9

    def resolved_level_seeds(self) -> list[int]:
        if self.level_seeds.strip():
            return [int(s) for s in self.level_seeds.split(",")]
        return list(range(self.level_count))

    def validate(self) -> None:
        if self.algorithm not in ("ppo", "a2c"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.head not in ("baseline", "dynamic", "control"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.family not in ("gapworld", "tabular"):
            raise ConfigError(f"unknown family {self.family!r}")
        if self.total_steps < 1 or self.n_workers < 1 or self.steps_per_worker < 1:
            raise ConfigError("step and worker counts must be positive")


_SECTIONS = {
    "run": ("experiment", "master_seed", "algorithm", "total_steps",
            "eval_every", "eval_episodes", "checkpoint_every", "output_dir"),
    "env": ("family", "level_count", "level_seeds", "horizon"),
    "model": ("head", "n_basis", "encoder_hidden", "lstm_hidden"),
    "train": ("gamma", "gae_lambda", "lr", "clip_eps", "epochs", "minibatches",
              "value_coef", "entropy_coef", "n_workers", "steps_per_worker",
              "normalize_advantages"),
}
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}")
    return raw


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = RunConfig()
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp[section].items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            setattr(cfg, key, _convert(key, raw))
    cfg.validate()
    return cfg


def emit_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        cp[section] = {k: _format(getattr(cfg, k)) for k in keys}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply --set key=value pairs; keys are the flat field names."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _convert(key, raw.strip()))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
