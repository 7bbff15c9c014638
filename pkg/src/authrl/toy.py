"""Small tabular MDP with exact solutions, used as a ground-truth oracle.

States are exposed to learners as one-hot feature vectors. Episodic data
can use time-augmented features (one-hot over ``(t, s)`` pairs) so that a
finite-horizon Q-function is exactly representable by a linear network.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import MdpRow
from .env import ACTIONS


@dataclass
class ToyMdp:
    transitions: np.ndarray      # [S, A, S]
    reward_mean: np.ndarray      # [S, A]
    initial: np.ndarray          # [S]
    gamma: float = 0.8
    reward_std: float = 0.0

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.reward_mean = np.asarray(self.reward_mean, dtype=float)
        self.initial = np.asarray(self.initial, dtype=float)
        assert np.allclose(self.transitions.sum(axis=2), 1.0)
        assert np.isclose(self.initial.sum(), 1.0)

    @property
    def n_states(self) -> int:
        return self.reward_mean.shape[0]

    # -- features ------------------------------------------------------------

    def features(self, s) -> np.ndarray:
        s = np.atleast_1d(s)
        return np.eye(self.n_states)[s]

    def time_features(self, s, t, horizon) -> np.ndarray:
        s, t = np.atleast_1d(s), np.atleast_1d(t)
        return np.eye(self.n_states * horizon)[t * self.n_states + s]

    def decode(self, x) -> np.ndarray:
        """Feature rows back to state indices (plain or time-augmented)."""
        return np.argmax(np.asarray(x), axis=-1) % self.n_states

    # -- exact solutions ----------------------------------------------------------

    def value_iteration(self, tol: float = 1e-12, max_iter: int = 100_000):
        """Optimal ``Q*`` of the discounted infinite-horizon problem."""
        q = np.zeros_like(self.reward_mean)
        for _ in range(max_iter):
            q_new = self.reward_mean + self.gamma * self.transitions @ q.max(axis=1)
            if np.abs(q_new - q).max() < tol:
                return q_new
            q = q_new
        raise RuntimeError("value iteration did not converge")

    def optimal_policy(self) -> np.ndarray:
        """Greedy action index per state (ties to action A)."""
        q = self.value_iteration()
        return np.where(q[:, 0] >= q[:, 1], 0, 1)

    def policy_q(self, pi: np.ndarray) -> np.ndarray:
        """Infinite-horizon ``Q^pi`` by solving the linear Bellman system."""
        S = self.n_states
        p_pi = np.einsum("sat,tb->satb", self.transitions, pi).reshape(S * 2, S * 2)
        r = self.reward_mean.reshape(-1)
        return np.linalg.solve(np.eye(S * 2) - self.gamma * p_pi, r).reshape(S, 2)

    def finite_horizon_q(self, pi: np.ndarray, horizon: int) -> np.ndarray:
        """``Q_t^pi(s, a)`` for ``t < horizon``; shape ``[horizon, S, 2]``."""
        q = np.zeros((horizon, self.n_states, 2))
        v_next = np.zeros(self.n_states)
        for t in range(horizon - 1, -1, -1):
            q[t] = self.reward_mean + self.gamma * self.transitions @ v_next
            v_next = (pi * q[t]).sum(axis=1)
        return q

    def finite_horizon_value(self, pi: np.ndarray, horizon: int) -> float:
        q0 = self.finite_horizon_q(pi, horizon)[0]
        return float(self.initial @ (pi * q0).sum(axis=1))

    # -- data ---------------------------------------------------------------------

    def transition_rows(self, blocks: int = 10, resolution: int = 10) -> list:
        """Every ``(s, a, s')`` as logged rows, replicated in proportion to its probability.

        Each of the ``blocks`` blocks (one ``mdp_id`` each) holds the full
        set of transitions, with ``P(s' | s, a) * resolution`` copies of each;
        probabilities must be multiples of ``1 / resolution``. Splitting by
        ``mdp_id`` therefore preserves the exact transition frequencies.
        The rows are independent transitions, not chains.
        """
        feats = self.features(np.arange(self.n_states))
        block = []
        for s in range(self.n_states):
            for a in range(2):
                for s2 in range(self.n_states):
                    count = self.transitions[s, a, s2] * resolution
                    n = int(round(count))
                    assert abs(n - count) < 1e-9, "probabilities must be multiples of 1/resolution"
                    block.extend([(s, a, s2)] * n)
        rows = []
        for b in range(blocks):
            for k, (s, a, s2) in enumerate(block):
                rows.append(MdpRow(
                    mdp_id=f"block{b}", sequence_number=k,
                    state_features=tuple(feats[s]), action=ACTIONS[a],
                    action_probability=0.5,
                    metrics={"ue": float(self.reward_mean[s, a]), "cost": 0.0},
                    possible_actions=ACTIONS, sequence_number_ordinal=k + 1, time_diff=1,
                    possible_next_actions=ACTIONS,
                    next_state_features=tuple(feats[s2]), next_action="A",
                ))
        return rows

    def sample_episodes(self, behavior: np.ndarray, n: int, horizon: int,
                        rng: np.random.Generator, time_features: bool = True) -> list:
        """Log ``n`` episodes of length ``horizon`` under a tabular behaviour policy.

        ``behavior[s]`` holds action probabilities. Rewards go to ``metrics.ue``
        with zero cost.
        """
        S = self.n_states
        s = rng.choice(S, size=n, p=self.initial)
        states = np.empty((n, horizon), dtype=int)
        actions = np.empty((n, horizon), dtype=int)
        rewards = np.empty((n, horizon))
        for t in range(horizon):
            states[:, t] = s
            p_a = behavior[s, 0]
            actions[:, t] = np.where(rng.random(n) < p_a, 0, 1)
            a = actions[:, t]
            rewards[:, t] = self.reward_mean[s, a] + self.reward_std * rng.standard_normal(n)
            cum = self.transitions[s, a].cumsum(axis=1)
            s = np.minimum((rng.random(n)[:, None] > cum).sum(axis=1), S - 1)

        def feat(si, t):
            if time_features:
                return tuple(self.time_features(si, t, horizon)[0])
            return tuple(self.features(si)[0])

        cache = {(si, t): feat(si, t) for si in range(S) for t in range(horizon)}
        rows = []
        for i in range(n):
            for t in range(horizon):
                si, ai = states[i, t], actions[i, t]
                last = t == horizon - 1
                rows.append(MdpRow(
                    mdp_id=f"ep{i}", sequence_number=t, state_features=cache[si, t],
                    action=ACTIONS[ai], action_probability=float(behavior[si, ai]),
                    metrics={"ue": float(rewards[i, t]), "cost": 0.0},
                    possible_actions=ACTIONS, sequence_number_ordinal=t + 1,
                    time_diff=0 if last else 1,
                    possible_next_actions=() if last else ACTIONS,
                    next_state_features=None if last else cache[states[i, t + 1], t + 1],
                    next_action=None if last else ACTIONS[actions[i, t + 1]],
                ))
        return rows


def default_toy_mdp(gamma: float = 0.8, reward_std: float = 0.0) -> ToyMdp:
    """Three states, two actions; the optimal action differs across states."""
    transitions = np.array([
        [[0.0, 0.8, 0.2], [0.3, 0.0, 0.7]],
        [[0.6, 0.0, 0.4], [0.1, 0.9, 0.0]],
        [[0.0, 0.5, 0.5], [1.0, 0.0, 0.0]],
    ])
    reward_mean = np.array([
        [1.0, 0.0],
        [0.0, 2.0],
        [0.5, -1.0],
    ])
    return ToyMdp(transitions, reward_mean, initial=np.array([0.5, 0.3, 0.2]),
                  gamma=gamma, reward_std=reward_std)
