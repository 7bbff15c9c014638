"""Offline Q-learning on a static dataset of MDP rows.

Targets are built from a frozen copy of the network that is re-synced every
``target_sync_period`` iterations. ``variant="double_dqn"`` selects the
bootstrap action with the online network and evaluates it with the frozen
one; ``dueling=True`` swaps in a value/advantage head.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Mapping

import numpy as np

from .dataset import RewardConfig, rows_to_batch
from .errors import ConfigError, PreconditionError
from .nn import Minibatch, Mlp, MlpSpec, loss_and_grad
from .policy import greedy_probs

QGAP_EPS = 1e-6
LR_SCHEDULES = ("constant", "linear", "cosine", "exponential")


def scheduled_lr(base: float, schedule: str, it: int, total: int,
                 final_fraction: float = 0.003) -> float:
    """Step size for iteration ``it`` (0-based) out of ``total``.

    The non-constant schedules anneal from ``base`` to ``base * final_fraction``
    over training, which lets the greedy policy settle once the bootstrap
    targets stop moving.
    """
    if schedule == "constant" or total <= 1:
        return base
    frac = it / (total - 1)
    low = base * final_fraction
    if schedule == "linear":
        return low + (base - low) * (1.0 - frac)
    if schedule == "cosine":
        return low + (base - low) * 0.5 * (1.0 + math.cos(math.pi * frac))
    return base * final_fraction ** frac


@dataclass(frozen=True)
class DqnConfig:
    gamma: float = 1.0
    batch_size: int = 64
    epochs: int = 50
    target_sync_period: int = 100
    variant: str = "dqn"
    dueling: bool = False
    learning_rate: float = 1e-3
    lr_schedule: str = "exponential"
    lr_final_fraction: float = 0.003
    reward: RewardConfig = field(default_factory=RewardConfig)
    train_split: float = 0.8
    seed: int = 0
    hidden_layers: tuple = (64, 64)
    activation: str = "relu"
    probe_size: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma!r}")
        if not 0.0 < self.train_split < 1.0:
            raise ConfigError(f"train_split must lie in (0, 1), got {self.train_split!r}")
        if self.variant not in ("dqn", "double_dqn"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        for name in ("batch_size", "epochs", "target_sync_period", "probe_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0.0 < self.lr_final_fraction <= 1.0:
            raise ConfigError("lr_final_fraction must lie in (0, 1]")
        if isinstance(self.reward, Mapping):
            object.__setattr__(self, "reward", RewardConfig(**self.reward))
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))

    @classmethod
    def from_dict(cls, data: Mapping) -> "DqnConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown DqnConfig keys: {sorted(unknown)}")
        return cls(**dict(data))


@dataclass
class TrainMetrics:
    """Training trace.

    Per-iteration series: ``td_loss``, ``probe_p_a`` (share of probe states
    whose greedy action is A), ``iteration_epoch``. Per-epoch series:
    ``epoch_td_loss``, ``qbar_train`` and ``qbar_test`` (mean Q of actions
    A and B over the split's states).
    """

    td_loss: list = field(default_factory=list)
    probe_p_a: list = field(default_factory=list)
    iteration_epoch: list = field(default_factory=list)
    epoch_td_loss: list = field(default_factory=list)
    qbar_train: list = field(default_factory=list)
    qbar_test: list = field(default_factory=list)
    q_gap: tuple = (math.nan, math.nan)

    @property
    def iterations(self) -> int:
        return len(self.td_loss)

    def action_distributions(self) -> np.ndarray:
        """Probe action distribution per iteration, ``[iterations, 2]``."""
        p = np.asarray(self.probe_p_a, dtype=float)
        return np.stack([p, 1.0 - p], axis=1)

    def write_csv(self, path) -> None:
        epoch_end = {}
        for i, e in enumerate(self.iteration_epoch):
            epoch_end[e] = i
        end_rows = {i: e for e, i in epoch_end.items()}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "epoch", "td_loss", "p_action_a_probe",
                        "qbar_a_train", "qbar_b_train", "qbar_a_test", "qbar_b_test"])
            for i, (loss, p, e) in enumerate(zip(self.td_loss, self.probe_p_a,
                                                  self.iteration_epoch)):
                qcols = ["", "", "", ""]
                if i in end_rows and e < len(self.qbar_train):
                    qa, qb = self.qbar_train[e]
                    ta, tb = self.qbar_test[e] if e < len(self.qbar_test) else ("", "")
                    qcols = [repr(float(qa)), repr(float(qb)),
                             "" if ta == "" else repr(float(ta)),
                             "" if tb == "" else repr(float(tb))]
                w.writerow([i + 1, e + 1, repr(float(loss)), repr(float(p)), *qcols])


def split_rows(rows, train_split: float, seed: int):
    """Deterministic split by ``mdp_id``: whole chains go to one side."""
    ids = list(dict.fromkeys(r.mdp_id for r in rows))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5B117]))
    order = rng.permutation(len(ids))
    n_train = min(max(1, int(round(train_split * len(ids)))), len(ids))
    train_ids = {ids[i] for i in order[:n_train]}
    train = [r for r in rows if r.mdp_id in train_ids]
    test = [r for r in rows if r.mdp_id not in train_ids]
    return train, test


def _masked(q, mask):
    return np.where(mask, q, -np.inf)


def td_targets(batch: Minibatch, online: Mlp, frozen: Mlp, config: DqnConfig) -> np.ndarray:
    """Bootstrapped targets ``r + gamma * Q_frozen(s', a')``; terminal rows get ``r``."""
    live = ~batch.terminal
    targets = np.array(batch.rewards, dtype=float)
    if not live.any() or config.gamma == 0:
        return targets
    next_states = batch.next_states[live]
    mask = batch.next_action_mask[live]
    q_frozen = frozen(next_states)
    if config.variant == "double_dqn":
        pick = np.argmax(_masked(online(next_states), mask), axis=1)
        boot = q_frozen[np.arange(len(pick)), pick]
    else:
        boot = _masked(q_frozen, mask).max(axis=1)
    # a row with no possible next action bootstraps nothing
    boot = np.where(mask.any(axis=1), boot, 0.0)
    targets[live] += config.gamma * boot
    return targets


def mean_q(net, states) -> np.ndarray:
    """Average Q per action over ``states``; ``[2]``."""
    states = np.asarray(states, dtype=float)
    return net(states).mean(axis=0)


def _states(x):
    if isinstance(x, np.ndarray):
        return x
    return np.array([r.state_features for r in x], dtype=float)


def q_gap(params, train_rows, test_rows, eps: float = QGAP_EPS) -> np.ndarray:
    """Relative train/test gap of average Q, one value per action."""
    qtr, qte = mean_q(params, _states(train_rows)), mean_q(params, _states(test_rows))
    return q_gap_from_means(qtr, qte, eps)


def q_gap_from_means(qbar_train, qbar_test, eps: float = QGAP_EPS) -> np.ndarray:
    qtr, qte = np.asarray(qbar_train, dtype=float), np.asarray(qbar_test, dtype=float)
    return np.abs(qtr - qte) / np.maximum(np.abs(qtr), eps)


def _rngs(seed):
    ss = np.random.SeedSequence([int(seed), 0xD0]).spawn(3)
    return [np.random.default_rng(s) for s in ss]


def train(rows, config: DqnConfig = DqnConfig(),
          on_iteration: Callable | None = None, test_rows=None):
    """Fit a Q-network offline; returns ``(params, TrainMetrics)``.

    ``rows`` is split by ``mdp_id`` into train and test parts unless
    ``test_rows`` is given, in which case all of ``rows`` is used for training.
    ``on_iteration(i, online, frozen)`` is called after every update.
    """
    rows = list(rows)
    if not rows:
        raise PreconditionError("cannot train on an empty dataset")
    if test_rows is None:
        train_rows, test_rows = split_rows(rows, config.train_split, config.seed)
    else:
        train_rows, test_rows = rows, list(test_rows)
    init_rng, shuffle_rng, probe_rng = _rngs(config.seed)
    data = rows_to_batch(train_rows, config.reward)
    test_states = _states(test_rows) if test_rows else None
    n = len(data)
    probe_idx = probe_rng.choice(n, size=min(config.probe_size, n), replace=False)
    probe = data.states[np.sort(probe_idx)]

    spec = MlpSpec(input_dim=data.states.shape[1], hidden_layers=config.hidden_layers,
                   output_dim=2, activation=config.activation, dueling=config.dueling)
    online = Mlp.init(spec, init_rng)
    frozen = online.copy()
    metrics = TrainMetrics()
    it = 0
    total = config.epochs * -(-n // config.batch_size)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = data.take(order[start:start + config.batch_size])
            targets = td_targets(batch, online, frozen, config)
            loss, grads = loss_and_grad(online, batch, targets)
            online.apply_update(grads, scheduled_lr(config.learning_rate, config.lr_schedule,
                                                    it, total, config.lr_final_fraction))
            it += 1
            if it % config.target_sync_period == 0:
                frozen = online.copy()
            losses.append(loss)
            metrics.td_loss.append(loss)
            metrics.iteration_epoch.append(epoch)
            metrics.probe_p_a.append(float(greedy_probs(online(probe))[:, 0].mean()))
            if on_iteration is not None:
                on_iteration(it, online, frozen)
        metrics.epoch_td_loss.append(float(np.mean(losses)))
        metrics.qbar_train.append(tuple(mean_q(online, data.states)))
        if test_states is not None and len(test_states):
            metrics.qbar_test.append(tuple(mean_q(online, test_states)))
    if metrics.qbar_test:
        metrics.q_gap = tuple(q_gap_from_means(metrics.qbar_train[-1], metrics.qbar_test[-1]))
    return online, metrics
