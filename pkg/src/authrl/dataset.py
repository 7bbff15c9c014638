"""From simulated trajectories to the augmented MDP row format.

Pipeline: :func:`log_trajectories` turns episodes into timestamped events,
:func:`attribute_daily_rewards` moves each user-day's metrics onto its last
event, :func:`to_mdp_rows` joins every event with its successor, and
:func:`write_jsonl` / :func:`read_jsonl` persist the rows.

Synthetic clock: consecutive steps are ``STEP_SECONDS`` apart and a day
spans ``day_length`` steps, so the day of an event is
``timestamp // (day_length * STEP_SECONDS)``. Each trajectory starts on a
fresh day.
"""
from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .env import ACTION_INDEX, ACTIONS
from .errors import AmbiguityError, ParseError, PreconditionError, SchemaError
from .nn import Minibatch

STEP_SECONDS = 86400


@dataclass(frozen=True)
class RewardConfig:
    w_u: float = 1.0
    w_c: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.w_u) and math.isfinite(self.w_c)):
            raise SchemaError("reward weights must be finite")


@dataclass(frozen=True)
class LoggedEvent:
    mdp_id: str
    timestamp: int
    state_features: tuple
    action: str
    action_probability: float
    metrics: dict
    possible_actions: tuple = ACTIONS


@dataclass(frozen=True)
class MdpRow:
    mdp_id: str
    sequence_number: int
    state_features: tuple
    action: str
    action_probability: float
    metrics: dict
    possible_actions: tuple
    sequence_number_ordinal: int
    time_diff: int
    possible_next_actions: tuple = ()
    next_state_features: tuple | None = None
    next_action: str | None = None

    @property
    def terminal(self) -> bool:
        return self.next_state_features is None


def _features(x) -> tuple:
    return tuple(float(v) for v in np.asarray(x, dtype=float).ravel())


def log_trajectories(trajectories, day_length: int, cost_a: float = 1.0) -> list:
    """One :class:`LoggedEvent` per trajectory step.

    Metrics are synthesised from the scalar reward: ``ue`` is 1 when the
    reward is positive and 0 otherwise, ``cost`` is ``cost_a`` for action A
    and 0 for B.
    """
    if int(day_length) < 1:
        raise PreconditionError(f"day_length must be >= 1, got {day_length!r}")
    next_step = {}
    events = []
    for traj in trajectories:
        if len(traj.steps) == 0:
            continue
        used = next_step.get(traj.user_id, 0)
        start = -(-used // day_length) * day_length
        for k, st in enumerate(traj.steps):
            events.append(LoggedEvent(
                mdp_id=traj.user_id,
                timestamp=(start + k) * STEP_SECONDS,
                state_features=_features(st.state),
                action=st.action,
                action_probability=float(st.action_prob),
                metrics={"ue": 1.0 if st.reward > 0 else 0.0,
                         "cost": float(cost_a) if st.action == "A" else 0.0},
                possible_actions=ACTIONS,
            ))
        next_step[traj.user_id] = start + len(traj.steps)
    return events


def _group(events):
    groups = OrderedDict()
    for ev in events:
        groups.setdefault(ev.mdp_id, []).append(ev)
    return groups


def attribute_daily_rewards(events, day_length: int) -> list:
    """Sum each (user, day) bucket's metrics onto the bucket's last event.

    Earlier events of the bucket get zero metrics. Returns new events in the
    input order.
    """
    if int(day_length) < 1:
        raise PreconditionError(f"day_length must be >= 1, got {day_length!r}")
    span = day_length * STEP_SECONDS
    last_ts = {}
    for ev in events:
        prev = last_ts.get(ev.mdp_id)
        if prev is not None and ev.timestamp <= prev:
            raise PreconditionError(
                f"events of {ev.mdp_id!r} are not in increasing timestamp order")
        last_ts[ev.mdp_id] = ev.timestamp

    buckets = OrderedDict()
    for i, ev in enumerate(events):
        buckets.setdefault((ev.mdp_id, ev.timestamp // span), []).append(i)
    out = list(events)
    for idx in buckets.values():
        keys = []
        for i in idx:
            keys.extend(k for k in events[i].metrics if k not in keys)
        totals = {k: math.fsum(events[i].metrics.get(k, 0.0) for i in idx) for k in keys}
        for i in idx[:-1]:
            out[i] = replace(events[i], metrics={k: 0.0 for k in keys})
        out[idx[-1]] = replace(events[idx[-1]], metrics=totals)
    return out


def shape_reward(metrics, config: RewardConfig) -> float:
    """``w_u * ue - w_c * cost``."""
    for key in ("ue", "cost"):
        if key not in metrics:
            raise SchemaError(f"metrics missing {key!r}", field=key)
    return config.w_u * metrics["ue"] - config.w_c * metrics["cost"]


def to_mdp_rows(events) -> list:
    """Join each event with its successor in the same ``mdp_id`` chain."""
    rows = []
    for mdp_id, chain in _group(events).items():
        chain = sorted(chain, key=lambda ev: ev.timestamp)
        for a, b in zip(chain, chain[1:]):
            if a.timestamp == b.timestamp:
                raise AmbiguityError(f"duplicate timestamp {a.timestamp} in {mdp_id!r}")
        for k, ev in enumerate(chain):
            nxt = chain[k + 1] if k + 1 < len(chain) else None
            rows.append(MdpRow(
                mdp_id=mdp_id,
                sequence_number=ev.timestamp,
                state_features=tuple(ev.state_features),
                action=ev.action,
                action_probability=ev.action_probability,
                metrics=dict(ev.metrics),
                possible_actions=tuple(ev.possible_actions),
                sequence_number_ordinal=k + 1,
                time_diff=0 if nxt is None else nxt.timestamp - ev.timestamp,
                possible_next_actions=() if nxt is None else tuple(nxt.possible_actions),
                next_state_features=None if nxt is None else tuple(nxt.state_features),
                next_action=None if nxt is None else nxt.action,
            ))
    return rows


def trajectories_to_rows(trajectories, day_length: int | None = None, cost_a: float = 1.0):
    """Convenience: log, attribute and join in one call."""
    trajectories = list(trajectories)
    if day_length is None:
        day_length = max((len(t) for t in trajectories), default=1) or 1
    events = log_trajectories(trajectories, day_length, cost_a)
    return to_mdp_rows(attribute_daily_rewards(events, day_length))


# -- JSON lines ---------------------------------------------------------------------

FIELD_ORDER = (
    "mdp_id", "sequence_number", "state_features", "action", "action_probability",
    "metrics", "possible_actions", "next_state_features", "next_action",
    "sequence_number_ordinal", "time_diff", "possible_next_actions",
)
OPTIONAL_FIELDS = {"next_state_features", "next_action"}


def row_to_dict(row: MdpRow) -> dict:
    out = {}
    for name in FIELD_ORDER:
        value = getattr(row, name)
        if value is None and name in OPTIONAL_FIELDS:
            continue
        if isinstance(value, tuple):
            value = list(value)
        elif isinstance(value, dict):
            value = {k: float(v) for k, v in value.items()}
        out[name] = value
    return out


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def row_from_dict(data: dict, line: int | None = None) -> MdpRow:
    """Validate one decoded record and build an :class:`MdpRow`."""
    def fail(name, why):
        where = f" (line {line})" if line is not None else ""
        raise SchemaError(f"field {name!r}: {why}{where}", field=name, line=line)

    if not isinstance(data, dict):
        fail("<record>", "expected a JSON object")
    for name in data:
        if name not in FIELD_ORDER:
            fail(name, "unknown field")
    for name in FIELD_ORDER:
        if name not in data and name not in OPTIONAL_FIELDS:
            fail(name, "missing")

    if not isinstance(data["mdp_id"], str):
        fail("mdp_id", "expected a string")
    for name in ("sequence_number", "sequence_number_ordinal", "time_diff"):
        if not _is_int(data[name]):
            fail(name, "expected an integer")
    if data["sequence_number_ordinal"] < 1:
        fail("sequence_number_ordinal", "must be >= 1")
    if data["time_diff"] < 0:
        fail("time_diff", "must be >= 0")
    for name in ("state_features", "next_state_features"):
        if name in data and not (isinstance(data[name], list)
                                 and all(_is_number(v) for v in data[name])):
            fail(name, "expected a list of numbers")
    for name in ("action", "next_action"):
        if name in data and data[name] not in ACTION_INDEX:
            fail(name, f"expected one of {ACTIONS}")
    p = data["action_probability"]
    if not _is_number(p) or not 0.0 < p <= 1.0:
        fail("action_probability", "expected a number in (0, 1]")
    metrics = data["metrics"]
    if not (isinstance(metrics, dict) and all(_is_number(v) for v in metrics.values())):
        fail("metrics", "expected an object of numbers")
    for name in ("possible_actions", "possible_next_actions"):
        if not (isinstance(data[name], list) and all(a in ACTION_INDEX for a in data[name])):
            fail(name, "expected a list of actions")
    if data["action"] not in data["possible_actions"]:
        fail("action", "not among possible_actions")
    terminal = "next_state_features" not in data
    if terminal and ("next_action" in data or data["possible_next_actions"]):
        fail("next_state_features", "terminal rows must omit all next-step fields")
    if not terminal and "next_action" not in data:
        fail("next_action", "missing on a non-terminal row")

    return MdpRow(
        mdp_id=data["mdp_id"],
        sequence_number=data["sequence_number"],
        state_features=tuple(float(v) for v in data["state_features"]),
        action=data["action"],
        action_probability=float(p),
        metrics={k: float(v) for k, v in metrics.items()},
        possible_actions=tuple(data["possible_actions"]),
        sequence_number_ordinal=data["sequence_number_ordinal"],
        time_diff=data["time_diff"],
        possible_next_actions=tuple(data["possible_next_actions"]),
        next_state_features=(None if terminal
                             else tuple(float(v) for v in data["next_state_features"])),
        next_action=data.get("next_action"),
    )


def dumps_rows(rows) -> str:
    return "".join(json.dumps(row_to_dict(r), separators=(",", ":")) + "\n" for r in rows)


def write_jsonl(rows, path) -> None:
    Path(path).write_text(dumps_rows(rows))


def read_jsonl(path) -> list:
    rows = []
    with open(path) as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc.msg}", line=lineno) from exc
            rows.append(row_from_dict(data, line=lineno))
    return rows


# -- arrays -----------------------------------------------------------------------

def rows_to_batch(rows, reward: RewardConfig) -> Minibatch:
    """Stack rows into a :class:`Minibatch`, shaping rewards from metrics."""
    rows = list(rows)
    if not rows:
        raise PreconditionError("cannot build a batch from zero rows")
    d = len(rows[0].state_features)
    states = np.array([r.state_features for r in rows], dtype=float)
    terminal = np.array([r.terminal for r in rows])
    next_states = np.zeros((len(rows), d))
    for i, r in enumerate(rows):
        if not r.terminal:
            next_states[i] = r.next_state_features
    mask = np.zeros((len(rows), len(ACTIONS)), dtype=bool)
    for i, r in enumerate(rows):
        for a in r.possible_next_actions:
            mask[i, ACTION_INDEX[a]] = True
    return Minibatch(
        states=states,
        actions=np.array([ACTION_INDEX[r.action] for r in rows]),
        rewards=np.array([shape_reward(r.metrics, reward) for r in rows]),
        next_states=next_states,
        terminal=terminal,
        behavior_probs=np.array([r.action_probability for r in rows]),
        next_action_mask=mask,
    )


def group_episodes(rows) -> list:
    """Rows grouped by ``mdp_id`` and ordered by ordinal."""
    return [sorted(chain, key=lambda r: r.sequence_number_ordinal)
            for chain in _group(rows).values()]
