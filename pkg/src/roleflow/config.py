"""Run configuration loaded from a single YAML (or JSON) document."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import yaml

from .backends import EXECUTOR_KEY_ENV, POLICY_KEY_ENV
from .orchestration import EpisodeConfig
from .reward import RewardConfig
from .rl import GrpoConfig

SECRET_KEYS = {"api_key", "apikey", "token", "secret", "password"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendSettings:
    kind: str = "http"  # http | cassette
    base_url: str = ""
    model: str = ""
    api_key_env: Optional[str] = None
    max_attempts: int = 4
    backoff_base: float = 0.5
    timeout: float = 120.0

    def __post_init__(self):
        if self.kind not in ("http", "cassette"):
            raise ConfigError(f"backend kind must be http or cassette, got {self.kind!r}")


@dataclass(frozen=True)
class RunConfig:
    policy: BackendSettings = BackendSettings(api_key_env=POLICY_KEY_ENV)
    executor: BackendSettings = BackendSettings(api_key_env=EXECUTOR_KEY_ENV)
    episode: EpisodeConfig = EpisodeConfig()
    reward: RewardConfig = RewardConfig()
    grpo: GrpoConfig = GrpoConfig()
    parallel: int = 1
    out_dir: str = "runs/latest"
    cassette_dir: Optional[str] = None
    replay_strict: bool = False
    record: bool = False

    def __post_init__(self):
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")


def _reject_secrets(obj: Any, path: str = "") -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            if str(k).lower() in SECRET_KEYS:
                raise ConfigError(
                    f"{path}{k}: secrets are not read from config files; name an environment variable via api_key_env"
                )
            _reject_secrets(v, f"{path}{k}.")


def _build(cls, data: Optional[dict], path: str, defaults=None):
    if data is None:
        return defaults if defaults is not None else cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    base = dataclasses.asdict(defaults) if defaults is not None else {}
    base.update(data)
    try:
        return cls(**base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_from_dict(data: Optional[dict]) -> RunConfig:
    data = dict(data or {})
    _reject_secrets(data)
    defaults = RunConfig()
    sections = {
        "policy": (BackendSettings, defaults.policy),
        "executor": (BackendSettings, defaults.executor),
        "episode": (EpisodeConfig, defaults.episode),
        "reward": (RewardConfig, defaults.reward),
        "grpo": (GrpoConfig, defaults.grpo),
    }
    kwargs = {}
    for key, (cls, default) in sections.items():
        kwargs[key] = _build(cls, data.pop(key, None), key, default)
    top = {f.name for f in dataclasses.fields(RunConfig)} - set(sections)
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kwargs.update(data)
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: Optional[str | Path]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from None
    return config_from_dict(data)


def config_to_dict(config: RunConfig) -> dict:
    return dataclasses.asdict(config)
