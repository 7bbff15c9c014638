"""Structured configuration files (YAML) for the command line and experiment recipes.

A config file is a mapping with optional sections::

    env:       EnvConfig fields
    data:      DataConfig fields (dataset generation)
    reward:    w_u, w_c (shared by every trainer and the evaluator)
    dqn:       DqnConfig fields
    crr:       CrrConfig fields
    baseline:  BaselineConfig fields
    eval:      EvalConfig fields
    analysis:  AnalysisConfig fields

Any section may instead be a path to another YAML file holding that
section, resolved relative to the file that names it. Missing sections take
their defaults. Unknown keys are configuration errors.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import yaml

from .baseline import BaselineConfig
from .crr import CrrConfig
from .dataset import RewardConfig
from .dqn import DqnConfig
from .env import EnvConfig
from .errors import ConfigError

SECTIONS = ("env", "data", "reward", "dqn", "crr", "baseline", "eval", "analysis")


def _strict(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"section {where!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(unknown)}")
    try:
        return cls(**dict(data))
    except TypeError as exc:
        raise ConfigError(f"bad {where!r} section: {exc}") from exc


@dataclass(frozen=True)
class DataConfig:
    """How ``gen-data`` builds a logged dataset."""

    n_users: int = 1000
    episodes_per_user: int = 1
    behavior: str = "fixed:0.5"
    run_seed: int = 0
    day_length: int | None = None   # None: one day spans a whole episode
    cost_a: float = 1.0

    def __post_init__(self):
        if int(self.n_users) < 1 or int(self.episodes_per_user) < 1:
            raise ConfigError("n_users and episodes_per_user must be >= 1")
        if self.day_length is not None and int(self.day_length) < 1:
            raise ConfigError("day_length must be >= 1")


@dataclass(frozen=True)
class EvalConfig:
    gamma: float = 1.0
    train_split: float = 0.8
    window: int = 25
    seed: int = 0


@dataclass(frozen=True)
class AnalysisConfig:
    p_values: tuple = (0.5, 0.7, 0.9)
    coverage_users: int = 500
    coverage_run_seed: int = 0
    seeds: int = 20
    study_users: int = 500
    eval_episodes_per_user: int = 10
    lengths: tuple | None = None
    # DqnConfig overrides for the exploration study
    study_dqn: dict = field(default_factory=lambda: {"lr_schedule": "constant", "epochs": 30})

    def __post_init__(self):
        object.__setattr__(self, "p_values", tuple(float(p) for p in self.p_values))
        if self.lengths is not None:
            object.__setattr__(self, "lengths", tuple(int(x) for x in self.lengths))
        object.__setattr__(self, "study_dqn", dict(self.study_dqn))
        if int(self.seeds) < 1:
            raise ConfigError("analysis.seeds must be >= 1")


@dataclass(frozen=True)
class Config:
    env: EnvConfig = field(default_factory=EnvConfig)
    data: DataConfig = field(default_factory=DataConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    crr: CrrConfig = field(default_factory=CrrConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def with_seed(self, seed: int) -> "Config":
        """Every run-level seed set to ``seed``; the world seed ``env.seed`` is kept."""
        seed = int(seed)
        return replace(
            self,
            data=replace(self.data, run_seed=seed),
            dqn=replace(self.dqn, seed=seed),
            crr=replace(self.crr, seed=seed),
            baseline=replace(self.baseline, seed=seed),
            eval=replace(self.eval, seed=seed),
            analysis=replace(self.analysis, coverage_run_seed=seed),
        )

    def with_reward(self, w_u: float | None = None, w_c: float | None = None) -> "Config":
        """Override the shared reward weights (and the copies held by the trainers)."""
        reward = RewardConfig(self.reward.w_u if w_u is None else float(w_u),
                              self.reward.w_c if w_c is None else float(w_c))
        return replace(self, reward=reward,
                       dqn=replace(self.dqn, reward=reward),
                       crr=replace(self.crr, reward=reward),
                       baseline=replace(self.baseline, reward=reward))

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            section = getattr(self, name)
            data = section.to_dict() if hasattr(section, "to_dict") else asdict(section)
            if name in ("dqn", "crr", "baseline"):
                data.pop("reward", None)   # written once, in the top-level section
            out[name] = _plain(data)
        return out


def _plain(x):
    # tuples -> lists so that the YAML snapshot stays plain
    if isinstance(x, Mapping):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _section(raw, name, base: Path | None):
    value = raw.get(name)
    if isinstance(value, str):
        path = Path(value) if base is None else base / value
        if not path.is_file():
            raise ConfigError(f"section {name!r} refers to missing file {str(path)!r}")
        value = yaml.safe_load(path.read_text())
    return value


def config_from_dict(raw: Mapping | None, base: Path | None = None) -> Config:
    """Build a :class:`Config`; ``base`` resolves sections given as file paths."""
    raw = dict(raw or {})
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sec = {name: _section(raw, name, base) for name in SECTIONS}
    reward = _strict(RewardConfig, sec["reward"], "reward")

    def trainer(cls, name):
        if not isinstance(sec[name] or {}, Mapping):
            raise ConfigError(f"section {name!r} must be a mapping")
        data = dict(sec[name] or {})
        if "reward" in data:
            raise ConfigError(
                f"set reward weights in the top-level 'reward' section, not in {name!r}")
        data["reward"] = reward
        return _strict(cls, data, name)

    env_raw = sec["env"]
    if env_raw is not None and not isinstance(env_raw, Mapping):
        raise ConfigError("section 'env' must be a mapping")
    try:
        env = EnvConfig.from_dict(env_raw or {})
    except TypeError as exc:
        raise ConfigError(f"bad 'env' section: {exc}") from exc
    return Config(
        env=env,
        data=_strict(DataConfig, sec["data"], "data"),
        reward=reward,
        dqn=trainer(DqnConfig, "dqn"),
        crr=trainer(CrrConfig, "crr"),
        baseline=trainer(BaselineConfig, "baseline"),
        eval=_strict(EvalConfig, sec["eval"], "eval"),
        analysis=_strict(AnalysisConfig, sec["analysis"], "analysis"),
    )


def load_config(path=None) -> Config:
    """Read a YAML config file; ``None`` gives the defaults."""
    if path is None:
        return Config()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, path.parent)


def dump_config(config: Config) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True, default_flow_style=False)
