"""Supervised two-model baseline.

Two regressors estimate the expected engagement ``U(s, a)`` and cost
``C(s, a)`` of each action; the decision is
``argmax_a (w_u * U(s, a) - w_c * C(s, a))``. The regressors only see the
metrics of the row itself, so the baseline is myopic by design.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from .dataset import RewardConfig
from .dqn import LR_SCHEDULES, scheduled_lr, split_rows
from .env import ACTION_INDEX, ACTIONS
from .errors import ConfigError, PreconditionError
from .nn import Mlp, MlpSpec, masked_mse

BASELINE_FORMAT = "authrl-baseline"


@dataclass(frozen=True)
class BaselineConfig:
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 1e-3
    lr_schedule: str = "constant"
    lr_final_fraction: float = 0.01
    hidden_layers: tuple = (64, 64)
    activation: str = "relu"
    validation_split: float = 0.2
    reward: RewardConfig = field(default_factory=RewardConfig)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.validation_split < 1.0:
            raise ConfigError("validation_split must lie in [0, 1)")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if not 0.0 < self.lr_final_fraction <= 1.0:
            raise ConfigError("lr_final_fraction must lie in (0, 1]")
        if isinstance(self.reward, Mapping):
            object.__setattr__(self, "reward", RewardConfig(**self.reward))
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))

    @classmethod
    def from_dict(cls, data: Mapping) -> "BaselineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown BaselineConfig keys: {sorted(unknown)}")
        return cls(**dict(data))


@dataclass
class BaselineModel:
    u_model: Mlp
    c_model: Mlp
    reward: RewardConfig = field(default_factory=RewardConfig)
    validation_mse: dict = field(default_factory=dict)

    def scores(self, states) -> np.ndarray:
        """``w_u * U - w_c * C`` per action, ``[n, 2]``."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return self.reward.w_u * self.u_model(states) - self.reward.w_c * self.c_model(states)

    __call__ = scores

    def decide(self, state) -> str:
        s = self.scores(state)[0]
        return ACTIONS[0] if s[0] >= s[1] else ACTIONS[1]

    def to_dict(self) -> dict:
        return {
            "format": BASELINE_FORMAT,
            "version": 1,
            "reward": {"w_u": self.reward.w_u, "w_c": self.reward.w_c},
            "u_model": self.u_model.to_dict(),
            "c_model": self.c_model.to_dict(),
            "validation_mse": self.validation_mse,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BaselineModel":
        if data.get("format") != BASELINE_FORMAT:
            raise ConfigError(f"not an {BASELINE_FORMAT} checkpoint")
        return cls(Mlp.from_dict(data["u_model"]), Mlp.from_dict(data["c_model"]),
                   RewardConfig(**data["reward"]), dict(data.get("validation_mse", {})))


def _fit(states, actions, targets, spec, config, rng):
    net = Mlp.init(spec, rng)
    n = len(targets)
    total = config.epochs * -(-n // config.batch_size)
    it = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = masked_mse(net, states[idx], actions[idx], targets[idx])
            net.apply_update(grads, scheduled_lr(config.learning_rate, config.lr_schedule, it,
                                                 total, config.lr_final_fraction))
            it += 1
    return net


def _arrays(rows):
    states = np.array([r.state_features for r in rows], dtype=float)
    actions = np.array([ACTION_INDEX[r.action] for r in rows])
    ue = np.array([r.metrics["ue"] for r in rows], dtype=float)
    cost = np.array([r.metrics["cost"] for r in rows], dtype=float)
    return states, actions, ue, cost


def fit_baseline(rows, config: BaselineConfig = BaselineConfig()) -> BaselineModel:
    """Regress per-row ``ue`` and ``cost`` on the state, at the logged action's output."""
    rows = list(rows)
    if not rows:
        raise PreconditionError("cannot fit the baseline on an empty dataset")
    if config.validation_split > 0:
        train_rows, valid_rows = split_rows(rows, 1.0 - config.validation_split, config.seed)
    else:
        train_rows, valid_rows = rows, []
    if not train_rows:
        train_rows = rows
    states, actions, ue, cost = _arrays(train_rows)
    spec = MlpSpec(input_dim=states.shape[1], hidden_layers=config.hidden_layers,
                   output_dim=2, activation=config.activation)
    seeds = np.random.SeedSequence([int(config.seed), 0xB45E]).spawn(2)
    u_model = _fit(states, actions, ue, spec, config, np.random.default_rng(seeds[0]))
    c_model = _fit(states, actions, cost, spec, config, np.random.default_rng(seeds[1]))
    model = BaselineModel(u_model, c_model, config.reward)
    if valid_rows:
        vs, va, vu, vc = _arrays(valid_rows)
        model.validation_mse = {"ue": masked_mse(u_model, vs, va, vu)[0],
                                "cost": masked_mse(c_model, vs, va, vc)[0]}
    return model


def baseline_decide(model: BaselineModel, state) -> str:
    return model.decide(state)
