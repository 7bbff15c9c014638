"""Synthetic authentication environment.

Every user owns a Gaussian initial state, per-(step, action) Gaussian
transition "base" vectors and per-(step, action) Normal rewards. The next
state is a convex blend of the sampled base vector and the previous state::

    next_state = blend_alpha * base + (1 - blend_alpha) * state

User parameters mix a population component (shared by every user of the
same world seed) with a private component, so that a model trained on some
users can generalise to users it has never seen. With
``population_weight = 0`` and ``reward_coupling = 0`` the per-user draws are
fully independent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, OutOfRangeError

ACTIONS = ("A", "B")
ACTION_INDEX = {"A": 0, "B": 1}
N_ACTIONS = len(ACTIONS)

# SeedSequence tags keep the world stream and the user streams disjoint.
_WORLD_TAG = 0x5EED_0001
_USER_TAG = 0x5EED_0002
_EPISODE_TAG = 0x5EED_0003


@dataclass(frozen=True)
class EnvConfig:
    """Free constants of the simulator.

    ``reward_mean_overrides`` maps ``(t, action)`` to a reward mean that
    replaces the sampled one for every user; use it when an experiment needs
    a known-optimal action.
    """

    state_dim: int = 8
    horizon: int = 5
    blend_alpha: float = 0.5
    init_mean_scale: float = 0.5
    init_cov_scale: float = 0.05
    reward_mean_scale: float = 1.0
    reward_var_scale: float = 0.25
    seed: int = 0
    early_stop_prob: float = 0.0
    population_weight: float = 0.95
    trans_mean_scale: float = 2.0
    reward_coupling: float = 1.0
    reward_mean_overrides: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.state_dim, (int, np.integer)) or self.state_dim < 2:
            raise ConfigError(f"state_dim must be an integer >= 2, got {self.state_dim!r}")
        if not isinstance(self.horizon, (int, np.integer)) or self.horizon < 1:
            raise ConfigError(f"horizon must be a positive integer, got {self.horizon!r}")
        if not 0.0 < self.blend_alpha <= 1.0:
            raise ConfigError(f"blend_alpha must lie in (0, 1], got {self.blend_alpha!r}")
        for name in ("init_mean_scale", "init_cov_scale", "reward_mean_scale",
                     "trans_mean_scale"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be a positive real, got {value!r}")
        # zero reward variance gives deterministic rewards
        if not (math.isfinite(self.reward_var_scale) and self.reward_var_scale >= 0):
            raise ConfigError(f"reward_var_scale must be a non-negative real, "
                              f"got {self.reward_var_scale!r}")
        if not 0.0 <= self.early_stop_prob < 1.0:
            raise ConfigError(f"early_stop_prob must lie in [0, 1), got {self.early_stop_prob!r}")
        if not 0.0 <= self.population_weight <= 1.0:
            raise ConfigError(
                f"population_weight must lie in [0, 1], got {self.population_weight!r}")
        if not math.isfinite(self.reward_coupling):
            raise ConfigError("reward_coupling must be finite")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        overrides = {}
        for key, value in dict(self.reward_mean_overrides).items():
            t, a = _parse_override_key(key)
            if not 0 <= t < self.horizon:
                raise ConfigError(f"reward override step {t} outside [0, {self.horizon})")
            overrides[(t, a)] = float(value)
        object.__setattr__(self, "reward_mean_overrides", overrides)

    @classmethod
    def from_dict(cls, data: Mapping) -> "EnvConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown EnvConfig keys: {sorted(unknown)}")
        return cls(**dict(data))

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["reward_mean_overrides"] = {
            f"{t},{a}": v for (t, a), v in sorted(self.reward_mean_overrides.items())
        }
        return out


def _parse_override_key(key):
    if isinstance(key, str):
        t_str, _, a = key.partition(",")
        t, a = int(t_str), a.strip()
    else:
        t, a = key
    if a not in ACTION_INDEX:
        raise ConfigError(f"unknown action {a!r} in reward override")
    return int(t), a


@dataclass
class UserParams:
    """Generative parameters of one synthetic user.

    Per-(step, action) quantities are stored as arrays indexed
    ``[t, ACTION_INDEX[a]]``.
    """

    user_id: str
    init_mean: np.ndarray        # [d]
    init_cov_diag: np.ndarray    # [d]
    trans_mean: np.ndarray       # [H, 2, d]
    trans_cov_diag: np.ndarray   # [H, 2, d]
    reward_mean: np.ndarray      # [H, 2]
    reward_std: np.ndarray       # [H, 2]
    blend_alpha: float = 0.5

    @property
    def state_dim(self) -> int:
        return self.init_mean.shape[0]

    @property
    def horizon(self) -> int:
        return self.trans_mean.shape[0]


@dataclass
class Step:
    state: np.ndarray
    action: str
    action_prob: float
    reward: float


@dataclass
class Trajectory:
    user_id: str
    steps: list = field(default_factory=list)
    terminal: bool = True

    def __len__(self):
        return len(self.steps)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps])


def _world(config: EnvConfig):
    """Population components shared by all users of ``config.seed``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), _WORLD_TAG]))
    H, d = config.horizon, config.state_dim
    shared_trans = rng.standard_normal((H, N_ACTIONS, d))
    shared_reward = rng.standard_normal((H, N_ACTIONS))
    directions = rng.standard_normal((H, N_ACTIONS, d))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    return shared_trans, shared_reward, directions


def _uniform_scale(rng, scale, size):
    # uniform on (0.1 * scale, scale]
    return scale - rng.random(size) * 0.9 * scale


def init_user(seed: int, config: EnvConfig) -> UserParams:
    """Draw the parameters of user ``seed`` in the world of ``config``."""
    if not isinstance(config, EnvConfig):
        raise ConfigError("config must be an EnvConfig")
    if int(seed) < 0:
        raise ConfigError(f"user seed must be non-negative, got {seed!r}")
    shared_trans, shared_reward, directions = _world(config)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), _USER_TAG, int(seed)]))
    H, d = config.horizon, config.state_dim
    w = config.population_weight
    shared_w, own_w = math.sqrt(w), math.sqrt(1.0 - w)

    init_mean = config.init_mean_scale * rng.standard_normal(d)
    init_cov_diag = _uniform_scale(rng, config.init_cov_scale, d)
    trans_mean = config.trans_mean_scale * (
        shared_w * shared_trans + own_w * rng.standard_normal((H, N_ACTIONS, d))
    )
    trans_cov_diag = _uniform_scale(rng, config.init_cov_scale, (H, N_ACTIONS, d))
    affinity = directions @ (init_mean / config.init_mean_scale)
    reward_mean = config.reward_mean_scale * (
        shared_w * shared_reward
        + own_w * rng.standard_normal((H, N_ACTIONS))
        + config.reward_coupling * affinity
    )
    reward_std = np.sqrt(rng.random((H, N_ACTIONS)) * config.reward_var_scale)
    for (t, a), value in config.reward_mean_overrides.items():
        reward_mean[t, ACTION_INDEX[a]] = value

    return UserParams(
        user_id=f"u{int(seed)}",
        init_mean=init_mean,
        init_cov_diag=init_cov_diag,
        trans_mean=trans_mean,
        trans_cov_diag=trans_cov_diag,
        reward_mean=reward_mean,
        reward_std=reward_std,
        blend_alpha=config.blend_alpha,
    )


def make_users(config: EnvConfig, user_seeds: Iterable[int]) -> list:
    return [init_user(s, config) for s in user_seeds]


def reset(user: UserParams, rng: np.random.Generator) -> np.ndarray:
    """Sample an initial state."""
    z = rng.standard_normal(user.state_dim)
    return user.init_mean + np.sqrt(user.init_cov_diag) * z


def _transition(user, state, t, a_idx, z_base, z_reward):
    base = user.trans_mean[t, a_idx] + np.sqrt(user.trans_cov_diag[t, a_idx]) * z_base
    alpha = user.blend_alpha
    next_state = alpha * base + (1.0 - alpha) * state
    reward = user.reward_mean[t, a_idx] + user.reward_std[t, a_idx] * z_reward
    return next_state, reward, base


def step(user: UserParams, state, t: int, action: str, rng: np.random.Generator,
         return_base: bool = False):
    """Advance one step; returns ``(next_state, reward)``.

    With ``return_base=True`` the sampled base vector is appended to the
    result so the blend can be checked exactly.
    """
    if not 0 <= t < user.horizon:
        raise OutOfRangeError(f"step t={t} outside [0, {user.horizon})")
    a_idx = ACTION_INDEX[action]
    z_base = rng.standard_normal(user.state_dim)
    z_reward = rng.standard_normal()
    next_state, reward, base = _transition(user, np.asarray(state, dtype=float), t, a_idx,
                                           z_base, z_reward)
    if return_base:
        return next_state, float(reward), base
    return next_state, float(reward)


def _draw_noise(rng, d, horizon):
    # Fixed draw order: single and batched rollouts consume identical noise.
    return (
        rng.standard_normal(d),
        rng.random(horizon),
        rng.standard_normal((horizon, d)),
        rng.standard_normal(horizon),
        rng.random(horizon),
    )


def rollout(user: UserParams, policy, horizon: int, rng: np.random.Generator,
            early_stop_prob: float = 0.0) -> Trajectory:
    """Run one episode of ``policy`` on ``user``.

    Episodes last exactly ``horizon`` steps unless ``early_stop_prob`` > 0,
    in which case the episode ends after each step with that probability.
    """
    if not 1 <= horizon <= user.horizon:
        raise OutOfRangeError(f"horizon {horizon} outside [1, {user.horizon}]")
    z0, u_act, z_base, z_reward, u_stop = _draw_noise(rng, user.state_dim, horizon)
    state = user.init_mean + np.sqrt(user.init_cov_diag) * z0
    traj = Trajectory(user_id=user.user_id)
    for t in range(horizon):
        p_a = float(policy.action_distribution(state)[0])
        a_idx = 0 if u_act[t] < p_a else 1
        prob = p_a if a_idx == 0 else 1.0 - p_a
        next_state, reward, _ = _transition(user, state, t, a_idx, z_base[t], z_reward[t])
        traj.steps.append(Step(state=state, action=ACTIONS[a_idx], action_prob=prob,
                               reward=float(reward)))
        state = next_state
        if early_stop_prob > 0 and u_stop[t] < early_stop_prob:
            break
    return traj


def rollout_batch(users: Sequence[UserParams], policy, horizon: int,
                  rngs: Sequence[np.random.Generator],
                  early_stop_prob: float = 0.0) -> list:
    """Vectorised :func:`rollout` over many users, one generator per user.

    Produces exactly the trajectories that calling :func:`rollout` per user
    with the same generators would.
    """
    n = len(users)
    if n == 0:
        return []
    if len(rngs) != n:
        raise ValueError("need one generator per user")
    if not 1 <= horizon <= min(u.horizon for u in users):
        raise OutOfRangeError(f"horizon {horizon} exceeds a user's horizon")
    d = users[0].state_dim
    noise = [_draw_noise(r, d, horizon) for r in rngs]
    z0 = np.stack([x[0] for x in noise])
    u_act = np.stack([x[1] for x in noise])
    z_base = np.stack([x[2] for x in noise])
    z_reward = np.stack([x[3] for x in noise])
    u_stop = np.stack([x[4] for x in noise])

    init_mean = np.stack([u.init_mean for u in users])
    init_sd = np.sqrt(np.stack([u.init_cov_diag for u in users]))
    trans_mean = np.stack([u.trans_mean[:horizon] for u in users])
    trans_sd = np.sqrt(np.stack([u.trans_cov_diag[:horizon] for u in users]))
    reward_mean = np.stack([u.reward_mean[:horizon] for u in users])
    reward_std = np.stack([u.reward_std[:horizon] for u in users])
    alpha = np.array([u.blend_alpha for u in users])[:, None]
    rows = np.arange(n)

    states = init_mean + init_sd * z0
    alive = np.ones(n, dtype=bool)
    trajs = [Trajectory(user_id=u.user_id) for u in users]
    for t in range(horizon):
        dist = np.asarray(policy.action_distribution(states), dtype=float)
        p_a = dist.reshape(n, N_ACTIONS)[:, 0]
        a_idx = np.where(u_act[:, t] < p_a, 0, 1)
        probs = np.where(a_idx == 0, p_a, 1.0 - p_a)
        base = trans_mean[rows, t, a_idx] + trans_sd[rows, t, a_idx] * z_base[:, t]
        next_states = alpha * base + (1.0 - alpha) * states
        rewards = reward_mean[rows, t, a_idx] + reward_std[rows, t, a_idx] * z_reward[:, t]
        for i in np.flatnonzero(alive):
            trajs[i].steps.append(Step(state=states[i], action=ACTIONS[a_idx[i]],
                                       action_prob=float(probs[i]), reward=float(rewards[i])))
        if early_stop_prob > 0:
            alive &= ~(u_stop[:, t] < early_stop_prob)
        states = next_states
        if not alive.any():
            break
    return trajs


def episode_rng(config: EnvConfig, user_seed: int, run_seed: int = 0,
                episode: int = 0) -> np.random.Generator:
    """Generator for one (user, run, episode) triple; independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence(
        [int(config.seed), _EPISODE_TAG, int(user_seed), int(run_seed), int(episode)]))


def simulate(config: EnvConfig, policy, user_seeds: Iterable[int], run_seed: int = 0,
             episodes_per_user: int = 1, horizon: int | None = None) -> list:
    """Roll out ``policy`` on each user; returns a flat list of trajectories."""
    horizon = config.horizon if horizon is None else horizon
    user_seeds = list(user_seeds)
    users = make_users(config, user_seeds)
    batch_users, rngs = [], []
    for seed, user in zip(user_seeds, users):
        for ep in range(episodes_per_user):
            batch_users.append(user)
            rngs.append(episode_rng(config, seed, run_seed, ep))
    return rollout_batch(batch_users, policy, horizon, rngs, config.early_stop_prob)
