"""Offline reinforcement learning for authentication-method selection.

A synthetic user simulator, a logging and MDP-row pipeline, offline DQN and
CRR trainers on a small numpy network, counterfactual policy evaluation, a
supervised baseline and the coverage / exploration analyses.
"""

__version__ = "0.1.0"

from .dataset import MdpRow, RewardConfig, read_jsonl, trajectories_to_rows, write_jsonl
from .dqn import DqnConfig, train
from .crr import CrrConfig, train_crr
from .env import EnvConfig, simulate
from .policy import Actor, EpsilonGreedy, FixedProb, Greedy, parse_policy

__all__ = [
    "Actor", "CrrConfig", "DqnConfig", "EnvConfig", "EpsilonGreedy", "FixedProb", "Greedy",
    "MdpRow", "RewardConfig", "parse_policy", "read_jsonl", "simulate", "train", "train_crr",
    "trajectories_to_rows", "write_jsonl",
]
