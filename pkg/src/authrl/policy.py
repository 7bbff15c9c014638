"""Action-selection policies over the two actions ``A`` and ``B``.

All policies accept either one state vector ``[d]`` or a matrix of states
``[n, d]`` and return probabilities ``[2]`` or ``[n, 2]`` respectively.
Q-function and actor handles are plain callables mapping ``[n, d]`` states to
``[n, 2]`` outputs; network parameter objects qualify.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .env import ACTIONS
from .errors import InvalidPolicyError


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_matrix(state):
    x = np.asarray(state, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def greedy_probs(q_values: np.ndarray) -> np.ndarray:
    """One-hot on the argmax over actions; ties go to action A."""
    pick_a = q_values[:, 0] >= q_values[:, 1]
    return np.stack([pick_a, ~pick_a], axis=1).astype(float)


class Policy:
    def _probs(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def action_distribution(self, state) -> np.ndarray:
        states, single = _as_matrix(state)
        probs = self._probs(states)
        return probs[0] if single else probs

    def sample_action(self, state, rng: np.random.Generator):
        """Sample an action; returns ``(action, probability of that action)``."""
        p_a = float(self.action_distribution(state)[0])
        if rng.random() < p_a:
            return ACTIONS[0], p_a
        return ACTIONS[1], 1.0 - p_a


@dataclass(frozen=True)
class FixedProb(Policy):
    """Behavioural policy choosing ``A`` with a fixed probability."""

    p_a: float

    def __post_init__(self):
        if not 0.0 <= self.p_a <= 1.0:
            raise InvalidPolicyError(f"p_a must lie in [0, 1], got {self.p_a!r}")

    def _probs(self, states):
        out = np.empty((states.shape[0], 2))
        out[:, 0] = self.p_a
        out[:, 1] = 1.0 - self.p_a
        return out


@dataclass(frozen=True)
class Greedy(Policy):
    q: Callable

    def __post_init__(self):
        if self.q is None or not callable(self.q):
            raise InvalidPolicyError("Greedy policy needs a callable Q-function")

    def _probs(self, states):
        return greedy_probs(np.asarray(self.q(states)))


@dataclass(frozen=True)
class EpsilonGreedy(Policy):
    q: Callable
    epsilon: float

    def __post_init__(self):
        if self.q is None or not callable(self.q):
            raise InvalidPolicyError("EpsilonGreedy policy needs a callable Q-function")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidPolicyError(f"epsilon must lie in [0, 1], got {self.epsilon!r}")

    def _probs(self, states):
        greedy = greedy_probs(np.asarray(self.q(states)))
        return (1.0 - self.epsilon) * greedy + self.epsilon / 2.0


@dataclass(frozen=True)
class Actor(Policy):
    """Stochastic policy: softmax over the actor network's logits."""

    actor: Callable

    def __post_init__(self):
        if self.actor is None or not callable(self.actor):
            raise InvalidPolicyError("Actor policy needs a callable actor network")

    def _probs(self, states):
        return softmax(np.asarray(self.actor(states), dtype=float))


def action_distribution(policy: Policy, state) -> np.ndarray:
    if not isinstance(policy, Policy):
        raise InvalidPolicyError(f"not a policy: {policy!r}")
    return policy.action_distribution(state)


def sample_action(policy: Policy, state, rng: np.random.Generator):
    if not isinstance(policy, Policy):
        raise InvalidPolicyError(f"not a policy: {policy!r}")
    return policy.sample_action(state, rng)


def parse_policy(text: str, load_model: Callable | None = None) -> Policy:
    """Build a policy from its CLI name.

    Accepted forms: ``fixed:<p>``, ``greedy:<model>``, ``egreedy:<eps>:<model>``
    and ``actor:<model>``. ``load_model`` turns a model path into a callable;
    it defaults to the checkpoint loader of :mod:`authrl.nn`.
    """
    if load_model is None:
        from .nn import load_checkpoint as load_model
    kind, _, rest = text.partition(":")
    try:
        if kind == "fixed":
            return FixedProb(float(rest))
        if kind == "greedy" and rest:
            return Greedy(load_model(rest))
        if kind == "egreedy":
            eps, _, path = rest.partition(":")
            if path:
                return EpsilonGreedy(load_model(path), float(eps))
        if kind == "actor" and rest:
            return Actor(load_model(rest))
    except ValueError as exc:
        raise InvalidPolicyError(f"cannot parse policy {text!r}: {exc}") from exc
    raise InvalidPolicyError(f"cannot parse policy {text!r}")
