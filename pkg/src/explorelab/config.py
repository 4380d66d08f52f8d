"""Run configuration: YAML file, strict keys, documented defaults, CLI overrides."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .agent import TrainConfig, alpha_schedule
from .counts import ResetMode, ResetPolicy
from .rewards import RewardKind, RewardSpec, View
from .world import Family

OUT_ENV_VAR = "EXPLORELAB_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class EnvSection:
    families: list = field(default_factory=lambda: ["DoorKey8x8"])
    seed: int = 0


@dataclass
class RewardSection:
    kind: str = "CBET"
    scale: float = 0.005
    state_view: str = "ego"
    change_view: str = "pano"


@dataclass
class CountsSection:
    reset: str = "random"
    p: float = 0.001
    keying: str = "raw"
    hash_seed: int = 0
    shared_coin: bool = False


@dataclass
class TrainSection:
    gamma_i: float = 0.99
    gamma: float = 0.99
    actor_lr: float = 0.05
    critic_lr: float = 0.05
    entropy_coeff: float = 0.0005
    n_step: int = 1
    total_steps: int = 100_000


@dataclass
class TransferSection:
    env: str = "DoorKey5x5"
    checkpoint: Optional[str] = None
    alpha: Optional[str] = None
    tabula_rasa: bool = False


@dataclass
class EvalSection:
    env: Optional[str] = None
    episodes: int = 100
    seed: int = 0
    greedy: bool = False


@dataclass
class IOSection:
    out_dir: str = "runs/default"
    trend_window: int = 1000


@dataclass
class RunConfig:
    env: EnvSection = field(default_factory=EnvSection)
    reward: RewardSection = field(default_factory=RewardSection)
    counts: CountsSection = field(default_factory=CountsSection)
    train: TrainSection = field(default_factory=TrainSection)
    transfer: TransferSection = field(default_factory=TransferSection)
    eval: EvalSection = field(default_factory=EvalSection)
    io: IOSection = field(default_factory=IOSection)

    # derived objects -------------------------------------------------------

    def reward_spec(self) -> RewardSpec:
        r = self.reward
        return RewardSpec(RewardKind(r.kind), r.scale, View(r.state_view), View(r.change_view))

    def reset_policy(self) -> ResetPolicy:
        return ResetPolicy(ResetMode(self.counts.reset), self.counts.p)

    def train_config(self, families: Optional[list] = None) -> TrainConfig:
        t = self.train
        return TrainConfig(
            gamma_i=t.gamma_i,
            gamma=t.gamma,
            p=self.counts.p,
            actor_lr=t.actor_lr,
            critic_lr=t.critic_lr,
            entropy_coeff=t.entropy_coeff,
            n_step=t.n_step,
            total_steps=t.total_steps,
            env_schedule=list(families if families is not None else self.env.families),
            shared_reset_coin=self.counts.shared_coin,
        )

    def out_dir(self) -> Path:
        return Path(os.environ.get(OUT_ENV_VAR) or self.io.out_dir)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _section_class(name: str):
    return type(getattr(RunConfig(), name))


def _coerce(value: Any, default: Any, where: str) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{where}: expected a boolean, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(float(value)) if isinstance(value, str) else int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected an integer, got {value!r}") from None
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if isinstance(default, list):
        if isinstance(value, str):
            return [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return list(value)
    if value is not None and not isinstance(value, (str, int, float)):
        raise ConfigError(f"{where}: expected a scalar, got {value!r}")
    return None if value is None else str(value)


def from_dict(data: Optional[dict]) -> RunConfig:
    cfg = RunConfig()
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping of sections")
    for sec_name, body in data.items():
        if sec_name not in _SECTIONS:
            raise ConfigError(f"unknown config section {sec_name!r}")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"section {sec_name!r} must be a mapping")
        for key, value in body.items():
            set_value(cfg, f"{sec_name}.{key}", value)
    validate(cfg)
    return cfg


def set_value(cfg: RunConfig, dotted: str, value: Any) -> None:
    sec_name, _, key = dotted.partition(".")
    if sec_name not in _SECTIONS:
        raise ConfigError(f"unknown config section {sec_name!r}")
    section = getattr(cfg, sec_name)
    names = {f.name for f in dataclasses.fields(section)}
    if key not in names:
        raise ConfigError(f"unknown key {key!r} in section {sec_name!r}")
    default = getattr(_section_class(sec_name)(), key)
    setattr(section, key, _coerce(value, default, dotted))


def load(path: Optional[str | Path]) -> RunConfig:
    if path is None:
        return from_dict({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    return from_dict(data)


def validate(cfg: RunConfig) -> None:
    try:
        for fam in cfg.env.families:
            Family.parse(fam)
        if not cfg.env.families:
            raise ValueError("env.families must not be empty")
        cfg.env.families = [Family.parse(f).value for f in cfg.env.families]
        cfg.transfer.env = Family.parse(cfg.transfer.env).value
        if cfg.eval.env is not None:
            cfg.eval.env = Family.parse(cfg.eval.env).value
        cfg.reward_spec()
        cfg.reset_policy()
        cfg.train_config()
        alpha_schedule(cfg.transfer.alpha)
        if cfg.counts.keying not in ("raw", "hash"):
            raise ValueError(f"counts.keying must be raw or hash, got {cfg.counts.keying!r}")
        if cfg.eval.episodes < 1:
            raise ValueError("eval.episodes must be at least 1")
        if cfg.io.trend_window < 1:
            raise ValueError("io.trend_window must be at least 1")
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
