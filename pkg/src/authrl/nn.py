"""Feed-forward function approximator with hand-written backpropagation.

One :class:`Mlp` class serves every network in the package: Q-networks
(optionally with a dueling head), CRR actors (logits fed to a softmax) and
the supervised baseline regressors. Row-vector convention throughout:
``h = act(x @ W + b)``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

CHECKPOINT_FORMAT = "authrl-mlp"


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_layers: tuple = (64, 64)
    output_dim: int = 2
    activation: str = "relu"
    dueling: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        dims = (self.input_dim, self.output_dim, *self.hidden_layers)
        if any(int(x) <= 0 for x in dims):
            raise ConfigError(f"all layer sizes must be positive: {dims}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.dueling and self.output_dim < 2:
            raise ConfigError("a dueling head needs output_dim >= 2")

    @property
    def layer_sizes(self):
        last = self.output_dim + 1 if self.dueling else self.output_dim
        return (self.input_dim, *self.hidden_layers, last)


@dataclass
class Minibatch:
    """Transitions in array form.

    ``rewards`` are already shaped; ``next_action_mask`` marks which actions
    are possible in the next state (all False on terminal rows).
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminal: np.ndarray
    behavior_probs: np.ndarray
    next_action_mask: np.ndarray = None

    def __post_init__(self):
        b = self.states.shape[0]
        if b < 1:
            raise DimensionError("a minibatch needs at least one row")
        if self.next_action_mask is None:
            self.next_action_mask = np.repeat(~self.terminal[:, None], 2, axis=1)
        for name in ("actions", "rewards", "next_states", "terminal", "behavior_probs",
                     "next_action_mask"):
            if getattr(self, name).shape[0] != b:
                raise DimensionError(
                    f"{name} has {getattr(self, name).shape[0]} rows, expected {b}")

    def __len__(self):
        return self.states.shape[0]

    def take(self, idx) -> "Minibatch":
        return Minibatch(self.states[idx], self.actions[idx], self.rewards[idx],
                         self.next_states[idx], self.terminal[idx], self.behavior_probs[idx],
                         self.next_action_mask[idx])


def _act(name, z):
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name, z, h):
    return (z > 0).astype(z.dtype) if name == "relu" else 1.0 - h * h


@dataclass
class Mlp:
    """Network weights plus optimizer state.

    ``weights[k]`` has shape ``[fan_in, fan_out]``. Calling the object runs
    :meth:`forward`, so an ``Mlp`` can be passed wherever a Q-function or
    actor callable is expected.
    """

    spec: MlpSpec
    weights: list
    biases: list
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default=None, repr=False)
    v: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        sizes = self.spec.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise DimensionError("layer count does not match spec")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise DimensionError(f"layer {k} shapes {W.shape}, {b.shape} do not match spec")
        if self.m is None:
            self.m = [np.zeros_like(p) for p in self.params]
        if self.v is None:
            self.v = [np.zeros_like(p) for p in self.params]

    @classmethod
    def init(cls, spec: MlpSpec, rng: np.random.Generator, **kwargs) -> "Mlp":
        """Uniform fan-in initialisation: ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        sizes = spec.layer_sizes
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(spec, weights, biases, **kwargs)

    @property
    def params(self) -> list:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.spec, [W.copy() for W in self.weights], [b.copy() for b in self.biases],
                   self.optimizer, self.beta1, self.beta2, self.eps, self.step,
                   [x.copy() for x in self.m], [x.copy() for x in self.v])

    # -- forward / backward -------------------------------------------------

    def _check_input(self, states):
        x = np.asarray(states, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise DimensionError(
                f"expected states of shape [b, {self.spec.input_dim}], got {x.shape}")
        return x

    def _raw_forward(self, x):
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if k < last:
                h = _act(self.spec.activation, z)
                cache.append((z, h))
            else:
                h = z
        return h, cache

    def forward_with_cache(self, states):
        x = self._check_input(states)
        raw, cache = self._raw_forward(x)
        if self.spec.dueling:
            value, adv = raw[:, :1], raw[:, 1:]
            return value + adv - adv.mean(axis=1, keepdims=True), cache
        return raw, cache

    def forward(self, states) -> np.ndarray:
        return self.forward_with_cache(states)[0]

    __call__ = forward

    def value(self, states) -> np.ndarray:
        """State value of a dueling head; ``[b]``."""
        if not self.spec.dueling:
            raise ConfigError("value() is only defined for dueling networks")
        raw, _ = self._raw_forward(self._check_input(states))
        return raw[:, 0]

    def backward(self, cache, d_out: np.ndarray) -> list:
        """Gradients of a scalar loss given ``d loss / d output``.

        Returned in the order of :attr:`params`.
        """
        if self.spec.dueling:
            n_act = d_out.shape[1]
            d_raw = np.empty((d_out.shape[0], n_act + 1))
            d_raw[:, 0] = d_out.sum(axis=1)
            d_raw[:, 1:] = d_out - d_out.sum(axis=1, keepdims=True) / n_act
        else:
            d_raw = d_out
        grads = [None] * (2 * len(self.weights))
        delta = d_raw
        for k in range(len(self.weights) - 1, -1, -1):
            h_prev = cache[0] if k == 0 else cache[k][1]
            grads[2 * k] = h_prev.T @ delta
            grads[2 * k + 1] = delta.sum(axis=0)
            if k > 0:
                z, h = cache[k]
                delta = (delta @ self.weights[k].T) * _act_grad(self.spec.activation, z, h)
        return grads

    # -- optimisation ---------------------------------------------------------

    def apply_update(self, grads: list, learning_rate: float) -> "Mlp":
        """One optimizer step in place; returns ``self``."""
        self.step += 1
        params = self.params
        if len(grads) != len(params):
            raise DimensionError("gradient list does not match parameters")
        if self.optimizer == "sgd":
            for p, g in zip(params, grads):
                p -= learning_rate * g
            return self
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return self

    # -- flat views (finite differences, checkpoints) ------------------------

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for p in self.params:
            n = p.size
            p[...] = np.asarray(flat[offset:offset + n]).reshape(p.shape)
            offset += n
        if offset != len(flat):
            raise DimensionError("flat vector length does not match parameters")

    # -- serialisation ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": 1,
            "spec": {**asdict(self.spec), "hidden_layers": list(self.spec.hidden_layers)},
            "optimizer": {"name": self.optimizer, "beta1": self.beta1, "beta2": self.beta2,
                          "eps": self.eps, "step": self.step},
            "weights": self.get_flat().tolist(),
            "adam_m": np.concatenate([x.ravel() for x in self.m]).tolist(),
            "adam_v": np.concatenate([x.ravel() for x in self.v]).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"not an {CHECKPOINT_FORMAT} checkpoint")
        spec = MlpSpec(**data["spec"])
        opt = data["optimizer"]
        net = cls.init(spec, np.random.default_rng(0), optimizer=opt["name"],
                       beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"])
        net.step = int(opt["step"])
        net.set_flat(np.array(data["weights"], dtype=float))
        for store, key in ((net.m, "adam_m"), (net.v, "adam_v")):
            flat = np.array(data[key], dtype=float)
            offset = 0
            for x in store:
                x[...] = flat[offset:offset + x.size].reshape(x.shape)
                offset += x.size
        if not all(np.isfinite(p).all() for p in net.params):
            raise NumericError("checkpoint contains non-finite weights")
        return net


# -- losses ---------------------------------------------------------------------

def masked_mse(net: Mlp, states, actions, targets):
    """Mean squared error of the output at each row's action; returns (loss, grads)."""
    targets = np.asarray(targets, dtype=float)
    if not np.isfinite(targets).all():
        raise NumericError("non-finite regression targets")
    out, cache = net.forward_with_cache(states)
    b = out.shape[0]
    if targets.shape != (b,):
        raise DimensionError(f"targets must have shape ({b},), got {targets.shape}")
    rows = np.arange(b)
    err = out[rows, actions] - targets
    d_out = np.zeros_like(out)
    d_out[rows, actions] = 2.0 * err / b
    return float(np.mean(err * err)), net.backward(cache, d_out)


def loss_and_grad(net: Mlp, batch: Minibatch, targets):
    """TD/regression loss at the taken actions of ``batch``."""
    return masked_mse(net, batch.states, batch.actions, targets)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def weighted_nll(net: Mlp, states, actions, weights):
    """``-mean(w_i * log softmax(net(s_i))[a_i])``; returns (loss, grads)."""
    logits, cache = net.forward_with_cache(states)
    b = logits.shape[0]
    rows = np.arange(b)
    logp = log_softmax(logits)
    weights = np.asarray(weights, dtype=float)
    loss = -float(np.mean(weights * logp[rows, actions]))
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    d_logits = -(weights[:, None] * (onehot - probs)) / b
    return loss, net.backward(cache, d_logits)


def apply_update(net: Mlp, grads: list, learning_rate: float) -> Mlp:
    return net.apply_update(grads, learning_rate)


def forward(net: Mlp, states) -> np.ndarray:
    return net.forward(states)


# -- checkpoints ------------------------------------------------------------------

def dumps_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def save_checkpoint(obj, path) -> None:
    """Write an :class:`Mlp` (or anything with ``to_dict``) as JSON."""
    Path(path).write_text(dumps_json(obj.to_dict()) + "\n")


def load_checkpoint(path):
    """Load a checkpoint written by :func:`save_checkpoint`.

    Returns an :class:`Mlp` or, for baseline checkpoints, a
    :class:`authrl.baseline.BaselineModel`.
    """
    data = json.loads(Path(path).read_text())
    fmt = data.get("format")
    if fmt == CHECKPOINT_FORMAT:
        return Mlp.from_dict(data)
    from .baseline import BASELINE_FORMAT, BaselineModel
    if fmt == BASELINE_FORMAT:
        return BaselineModel.from_dict(data)
    raise ConfigError(f"{path}: unknown checkpoint format {fmt!r}")
