"""Offline evaluation: training-quality diagnostics and counterfactual estimators.

Diagnostics: TD ratio, windowed action-distribution stability and KL
divergence to the behaviour policy. Estimators: ordinary (trajectory-wise)
importance sampling and the sequential doubly robust estimator, both with
standard errors over trajectories.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dataset import RewardConfig, group_episodes, rows_to_batch, shape_reward
from .dqn import DqnConfig, q_gap, split_rows, td_targets
from .env import ACTION_INDEX
from .errors import DataError, PreconditionError

TD_RATIO_EPS = 1e-6
PROB_FLOOR = 1e-6


class Estimate(NamedTuple):
    value: float
    stderr: float
    n: int

    def interval(self, z: float = 1.96):
        return self.value - z * self.stderr, self.value + z * self.stderr


def td_ratio(mean_td_loss: float, qbar_a: float, qbar_b: float, eps: float = TD_RATIO_EPS):
    """TD loss over the smaller average Q; ``None`` when that minimum is not above ``eps``."""
    low = min(qbar_a, qbar_b)
    if not low > eps:
        return None
    return mean_td_loss / low


def _tv(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def _kl(p, q):
    p = np.maximum(np.asarray(p, dtype=float), PROB_FLOOR)
    q = np.maximum(np.asarray(q, dtype=float), PROB_FLOOR)
    return float((p * (np.log(p) - np.log(q))).sum())


def stability(action_dist_series, window: int = 25, distance: str = "tv") -> list:
    """Distance between the distribution at ``i`` and at ``i - window``, for ``i >= window``."""
    if window < 1:
        raise PreconditionError("window must be >= 1")
    series = [np.asarray(p, dtype=float) for p in action_dist_series]
    if len(series) < window + 1:
        raise PreconditionError(
            f"series of length {len(series)} too short for window {window}")
    dist = {"tv": _tv, "kl": _kl}[distance]
    return [dist(series[i], series[i - window]) for i in range(window, len(series))]


def _behavior(rows):
    probs = np.array([r.action_probability for r in rows], dtype=float)
    if not np.all((probs > 0) & (probs <= 1)):
        raise DataError("logged action probabilities must lie in (0, 1]")
    actions = np.array([ACTION_INDEX[r.action] for r in rows])
    out = np.empty((len(rows), 2))
    rows_idx = np.arange(len(rows))
    out[rows_idx, actions] = probs
    out[rows_idx, 1 - actions] = 1.0 - probs
    return out


def kl_to_behavior(policy, rows) -> float:
    """Mean ``KL(policy(s) || behaviour(s))`` over rows.

    With two actions the logged ``(action, probability)`` pair fixes the
    behaviour distribution. Both distributions are floored at ``1e-6``
    before taking logs.
    """
    rows = list(rows)
    if not rows:
        raise DataError("no rows to evaluate")
    behavior = _behavior(rows)
    states = np.array([r.state_features for r in rows], dtype=float)
    learned = np.maximum(np.asarray(policy.action_distribution(states)), PROB_FLOOR)
    behavior = np.maximum(behavior, PROB_FLOOR)
    per_row = (learned * (np.log(learned) - np.log(behavior))).sum(axis=1)
    return math.fsum(per_row) / len(rows)


@dataclass
class EpisodeData:
    """Logged trajectories padded to a common length; ``mask`` flags real steps."""

    states: np.ndarray        # [n, H, d]
    actions: np.ndarray       # [n, H]
    rewards: np.ndarray       # [n, H]
    logged_probs: np.ndarray  # [n, H]
    mask: np.ndarray          # [n, H]

    @classmethod
    def from_rows(cls, rows, reward: RewardConfig) -> "EpisodeData":
        episodes = group_episodes(rows)
        if not episodes:
            raise DataError("no trajectories to evaluate")
        n, H = len(episodes), max(len(e) for e in episodes)
        d = len(episodes[0][0].state_features)
        states = np.zeros((n, H, d))
        actions = np.zeros((n, H), dtype=int)
        rewards = np.zeros((n, H))
        probs = np.ones((n, H))
        mask = np.zeros((n, H), dtype=bool)
        for i, ep in enumerate(episodes):
            for t, r in enumerate(ep):
                if not 0.0 < r.action_probability <= 1.0:
                    raise DataError(f"{r.mdp_id}: logged probability {r.action_probability}")
                states[i, t] = r.state_features
                actions[i, t] = ACTION_INDEX[r.action]
                rewards[i, t] = shape_reward(r.metrics, reward)
                probs[i, t] = r.action_probability
                mask[i, t] = True
        return cls(states, actions, rewards, probs, mask)

    def __len__(self):
        return self.states.shape[0]

    def _flat_eval(self, fn):
        n, H, d = self.states.shape
        return np.asarray(fn(self.states.reshape(n * H, d))).reshape(n, H, -1)

    def target_probs(self, policy) -> np.ndarray:
        return self._flat_eval(policy.action_distribution)

    def ratios(self, policy) -> np.ndarray:
        """``pi(a_t | s_t) / p_logged``; 1 on padding."""
        pi = self.target_probs(policy)
        taken = np.take_along_axis(pi, self.actions[..., None], axis=2)[..., 0]
        return np.where(self.mask, taken / self.logged_probs, 1.0)


def _estimate(per_episode) -> Estimate:
    x = np.asarray(per_episode, dtype=float)
    n = len(x)
    mean = math.fsum(x) / n
    if n < 2:
        return Estimate(mean, 0.0, n)
    var = math.fsum((x - mean) ** 2) / (n - 1)
    return Estimate(mean, math.sqrt(var / n), n)


def _episodes(data, reward):
    return data if isinstance(data, EpisodeData) else EpisodeData.from_rows(data, reward)


def importance_sampling(data, target, reward: RewardConfig = RewardConfig(),
                        gamma: float = 1.0) -> Estimate:
    """Ordinary importance sampling: mean of ``prod_t rho_t * sum_t gamma^t r_t``."""
    ep = _episodes(data, reward)
    weights = ep.ratios(target).prod(axis=1)
    discounts = gamma ** np.arange(ep.rewards.shape[1])
    returns = (ep.rewards * ep.mask * discounts).sum(axis=1)
    return _estimate(weights * returns)


def per_decision_is(data, target, reward: RewardConfig = RewardConfig(),
                    gamma: float = 1.0) -> Estimate:
    """Per-decision importance sampling: ``sum_t gamma^t (prod_{k<=t} rho_k) r_t``."""
    ep = _episodes(data, reward)
    cum = np.cumprod(ep.ratios(target), axis=1)
    discounts = gamma ** np.arange(ep.rewards.shape[1])
    return _estimate((cum * ep.rewards * ep.mask * discounts).sum(axis=1))


def doubly_robust(data, target, q_model, reward: RewardConfig = RewardConfig(),
                  gamma: float = 1.0) -> Estimate:
    """Sequential doubly robust estimate of ``target``'s value.

    Backward recursion per trajectory::

        V(H) = 0
        V(t) = V_hat(s_t) + rho_t * (r_t + gamma * V(t+1) - Q_hat(s_t, a_t))

    with ``V_hat(s) = sum_a pi(a | s) Q_hat(s, a)``; the estimate averages
    ``V(0)``.
    """
    ep = _episodes(data, reward)
    pi = ep.target_probs(target)
    q_hat = ep._flat_eval(q_model)
    v_hat = (pi * q_hat).sum(axis=2)
    q_taken = np.take_along_axis(q_hat, ep.actions[..., None], axis=2)[..., 0]
    rho = ep.ratios(target)
    v_dr = np.zeros(len(ep))
    for t in range(ep.rewards.shape[1] - 1, -1, -1):
        step = v_hat[:, t] + rho[:, t] * (ep.rewards[:, t] + gamma * v_dr - q_taken[:, t])
        v_dr = np.where(ep.mask[:, t], step, v_dr)
    return _estimate(v_dr)


@dataclass
class EvalReport:
    td_ratio: float | None
    stability_series: list = field(default_factory=list)
    kl_to_behavior: float = 0.0
    q_gap: tuple = (math.nan, math.nan)
    is_estimate: Estimate = None
    dr_estimate: Estimate = None

    def to_dict(self) -> dict:
        def est(e):
            return None if e is None else {"value": e.value, "stderr": e.stderr, "n": e.n}

        return {
            "td_ratio": self.td_ratio,
            "td_ratio_defined": self.td_ratio is not None,
            "stability_series": [float(x) for x in self.stability_series],
            "kl_to_behavior": float(self.kl_to_behavior),
            "q_gap": {a: (None if math.isnan(g) else float(g))
                      for a, g in zip(("A", "B"), self.q_gap)},
            "is_estimate": est(self.is_estimate),
            "dr_estimate": est(self.dr_estimate),
        }


def evaluate(rows, q_model, target, reward: RewardConfig = RewardConfig(), gamma: float = 1.0,
             train_split: float = 0.8, seed: int = 0, action_dist_series=None,
             window: int = 25) -> EvalReport:
    """Assemble an :class:`EvalReport` for ``target`` with ``q_model`` as the DR model.

    The TD ratio uses the model's own TD loss on ``rows`` (the model serves
    as its own frozen network) and the average Q over ``rows``.
    """
    rows = list(rows)
    batch = rows_to_batch(rows, reward)
    cfg = DqnConfig(gamma=gamma, reward=reward, train_split=train_split, seed=seed)
    targets = td_targets(batch, q_model, q_model, cfg)
    q = q_model(batch.states)
    td = float(np.mean((q[np.arange(len(batch)), batch.actions] - targets) ** 2))
    qbar = q.mean(axis=0)
    series = []
    if action_dist_series is not None and len(action_dist_series) > window:
        series = stability(action_dist_series, window)
    train_rows, test_rows = split_rows(rows, train_split, seed)
    gap = tuple(q_gap(q_model, train_rows, test_rows)) if test_rows else (math.nan, math.nan)
    return EvalReport(
        td_ratio=td_ratio(td, qbar[0], qbar[1]),
        stability_series=series,
        kl_to_behavior=kl_to_behavior(target, rows),
        q_gap=gap,
        is_estimate=importance_sampling(rows, target, reward, gamma),
        dr_estimate=doubly_robust(rows, target, q_model, reward, gamma),
    )
