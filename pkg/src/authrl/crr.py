"""Critic-Regularized Regression.

The actor maximises the log-likelihood of logged actions, weighted by a
monotone transform of the critic's advantage, so it only moves probability
toward actions that appear in the data. The critic is a scalar Q-network
trained with expected-policy TD targets
``r + gamma * sum_a pi(a | s') * Q_frozen(s', a)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, Mapping

import numpy as np

from .dataset import RewardConfig, rows_to_batch
from .dqn import TrainMetrics, mean_q
from .errors import ConfigError, PreconditionError
from .nn import Minibatch, Mlp, MlpSpec, masked_mse, weighted_nll
from .policy import softmax


@dataclass(frozen=True)
class CrrConfig:
    beta: float = 1.0
    weight_max: float = 20.0
    transform: str = "exp"
    gamma: float = 1.0
    batch_size: int = 64
    epochs: int = 30
    actor_learning_rate: float = 1e-3
    critic_learning_rate: float = 1e-3
    target_sync_period: int = 100
    reward: RewardConfig = field(default_factory=RewardConfig)
    seed: int = 0
    hidden_layers: tuple = (64, 64)
    activation: str = "relu"
    probe_size: int = 1000

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta!r}")
        if not self.weight_max > 0:
            raise ConfigError(f"weight_max must be positive, got {self.weight_max!r}")
        if self.transform not in ("exp", "binary_indicator"):
            raise ConfigError(f"unknown transform {self.transform!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma!r}")
        for name in ("batch_size", "epochs", "target_sync_period", "probe_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if isinstance(self.reward, Mapping):
            object.__setattr__(self, "reward", RewardConfig(**self.reward))
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))

    @classmethod
    def from_dict(cls, data: Mapping) -> "CrrConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown CrrConfig keys: {sorted(unknown)}")
        return cls(**dict(data))


@dataclass
class CrrMetrics(TrainMetrics):
    """:class:`TrainMetrics` plus the actor loss; ``probe_p_a`` is the actor's mean P(A)."""

    actor_loss: list = field(default_factory=list)


def advantage(q_values, policy_probs) -> np.ndarray:
    """``Q(a) - sum_a' pi(a') Q(a')`` for one state ``[2]`` or a batch ``[n, 2]``."""
    q = np.asarray(q_values, dtype=float)
    pi = np.asarray(policy_probs, dtype=float)
    return q - (pi * q).sum(axis=-1, keepdims=True)


def crr_weights(adv, config: CrrConfig) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    if config.transform == "binary_indicator":
        return (adv > 0).astype(float)
    # clip the exponent first so huge advantages cannot overflow; the cap is exact
    z = adv / config.beta
    cap = math.log(config.weight_max)
    return np.where(z >= cap, config.weight_max, np.exp(np.minimum(z, cap)))


def crr_actor_loss(batch: Minibatch, actor: Mlp, critic: Mlp, config: CrrConfig):
    """Advantage-weighted negative log-likelihood; returns ``(loss, grads)``.

    The weights are constants with respect to the actor parameters.
    """
    q = critic(batch.states)
    pi = softmax(actor(batch.states))
    rows = np.arange(len(batch))
    w = crr_weights(advantage(q, pi)[rows, batch.actions], config)
    return weighted_nll(actor, batch.states, batch.actions, w)


def critic_targets(batch: Minibatch, actor: Mlp, frozen_critic: Mlp, config: CrrConfig):
    live = ~batch.terminal
    targets = np.array(batch.rewards, dtype=float)
    if live.any():
        s2 = batch.next_states[live]
        mask = batch.next_action_mask[live]
        pi = softmax(actor(s2)) * mask
        total = pi.sum(axis=1, keepdims=True)
        pi = np.divide(pi, total, out=np.zeros_like(pi), where=total > 0)
        targets[live] += config.gamma * (pi * frozen_critic(s2)).sum(axis=1)
    return targets


def train_crr(rows, config: CrrConfig = CrrConfig(), on_epoch: Callable | None = None):
    """Alternate critic TD steps and actor steps; returns ``(actor, critic, CrrMetrics)``.

    ``on_epoch(epoch, actor, critic)`` is called after every epoch.
    """
    rows = list(rows)
    if not rows:
        raise PreconditionError("cannot train on an empty dataset")
    seeds = np.random.SeedSequence([int(config.seed), 0xC22]).spawn(4)
    actor_rng, critic_rng, shuffle_rng, probe_rng = (np.random.default_rng(s) for s in seeds)
    data = rows_to_batch(rows, config.reward)
    n = len(data)
    probe = data.states[np.sort(probe_rng.choice(n, size=min(config.probe_size, n),
                                                 replace=False))]
    d = data.states.shape[1]
    spec = MlpSpec(input_dim=d, hidden_layers=config.hidden_layers, output_dim=2,
                   activation=config.activation)
    actor = Mlp.init(spec, actor_rng)
    critic = Mlp.init(spec, critic_rng)
    frozen = critic.copy()
    metrics = CrrMetrics()
    it = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = data.take(order[start:start + config.batch_size])
            targets = critic_targets(batch, actor, frozen, config)
            c_loss, c_grads = masked_mse(critic, batch.states, batch.actions, targets)
            critic.apply_update(c_grads, config.critic_learning_rate)
            a_loss, a_grads = crr_actor_loss(batch, actor, critic, config)
            actor.apply_update(a_grads, config.actor_learning_rate)
            it += 1
            if it % config.target_sync_period == 0:
                frozen = critic.copy()
            losses.append(c_loss)
            metrics.td_loss.append(c_loss)
            metrics.actor_loss.append(a_loss)
            metrics.iteration_epoch.append(epoch)
            metrics.probe_p_a.append(float(softmax(actor(probe))[:, 0].mean()))
        metrics.epoch_td_loss.append(float(np.mean(losses)))
        metrics.qbar_train.append(tuple(mean_q(critic, data.states)))
        if on_epoch is not None:
            on_epoch(epoch, actor, critic)
    return actor, critic, metrics
