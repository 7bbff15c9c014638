import numpy as np
import pytest

from authrl.errors import DimensionError, NumericError
from authrl.nn import (Minibatch, Mlp, MlpSpec, load_checkpoint, loss_and_grad, masked_mse,
                       save_checkpoint, weighted_nll)

FD_STEP = 1e-5


def numeric_grad(net, loss_fn):
    flat = net.get_flat()
    g = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + FD_STEP
        net.set_flat(flat)
        up = loss_fn()
        flat[i] = orig - FD_STEP
        net.set_flat(flat)
        down = loss_fn()
        flat[i] = orig
        g[i] = (up - down) / (2 * FD_STEP)
    net.set_flat(flat)
    return g


def max_rel_error(analytic, numeric):
    a = np.concatenate([x.ravel() for x in analytic])
    scale = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(a - numeric) / scale))


def random_net(rng, dueling=False, activation=None, out=2):
    spec = MlpSpec(input_dim=4, hidden_layers=(5, 3), output_dim=out,
                   activation=activation or rng.choice(["relu", "tanh"]), dueling=dueling)
    return Mlp.init(spec, rng)


# -- forward ------------------------------------------------------------------------

def test_linear_net_is_affine():
    W = np.array([[1.0, -2.0], [0.5, 3.0], [0.0, 1.0]])
    b = np.array([0.25, -1.0])
    net = Mlp(MlpSpec(input_dim=3, hidden_layers=(), output_dim=2), [W], [b])
    x = np.array([[1.0, 2.0, 3.0]])
    # hand computation: [1 + 1 + 0 + 0.25, -2 + 6 + 3 - 1]
    assert np.allclose(net(x), [[2.25, 6.0]])


def test_dueling_mean_equals_value():
    rng = np.random.default_rng(0)
    net = random_net(rng, dueling=True, out=3)
    x = rng.standard_normal((50, 4))
    assert np.allclose(net(x).mean(axis=1), net.value(x), atol=1e-12)


def test_zero_weights_give_bias():
    spec = MlpSpec(input_dim=3, hidden_layers=(4,), output_dim=2)
    net = Mlp(spec, [np.zeros((3, 4)), np.zeros((4, 2))], [np.ones(4), np.array([0.3, -0.7])])
    net.weights[1][...] = 0.0
    x = np.random.default_rng(1).standard_normal((6, 3)) * 10
    assert np.allclose(net(x), [0.3, -0.7])


def test_shape_mismatch():
    net = random_net(np.random.default_rng(0))
    with pytest.raises(DimensionError):
        net(np.zeros((2, 5)))
    with pytest.raises(DimensionError):
        net(np.zeros(4))


# -- losses and gradients ---------------------------------------------------------------

def test_zero_loss_zero_grad():
    rng = np.random.default_rng(2)
    net = random_net(rng)
    x = rng.standard_normal((6, 4))
    a = rng.integers(0, 2, 6)
    loss, grads = masked_mse(net, x, a, net(x)[np.arange(6), a])
    assert loss == 0.0 and all(np.all(g == 0) for g in grads)


def test_single_row_linear_closed_form():
    net = Mlp(MlpSpec(input_dim=2, hidden_layers=(), output_dim=2),
              [np.array([[1.0, 0.0], [2.0, 1.0]])], [np.zeros(2)])
    x = np.array([[3.0, -1.0]])
    pred = 3.0 - 2.0
    loss, (gW, gb) = masked_mse(net, x, np.array([0]), np.array([4.0]))
    assert loss == pytest.approx((pred - 4.0) ** 2)
    assert np.allclose(gW[:, 0], 2 * (pred - 4.0) * x[0]) and np.allclose(gW[:, 1], 0)
    assert np.allclose(gb, [2 * (pred - 4.0), 0.0])


def test_non_finite_targets():
    net = random_net(np.random.default_rng(0))
    with pytest.raises(NumericError):
        masked_mse(net, np.zeros((1, 4)), np.array([0]), np.array([np.inf]))


@pytest.mark.parametrize("head", ["q", "dueling", "actor", "regressor"])
def test_gradients_match_finite_differences(head):
    rng = np.random.default_rng({"q": 10, "dueling": 11, "actor": 12, "regressor": 13}[head])
    worst = 0.0
    for _ in range(100):
        net = random_net(rng, dueling=head == "dueling")
        x = rng.standard_normal((4, 4))
        a = rng.integers(0, 2, 4)
        if head == "actor":
            w = rng.uniform(0, 3, 4)
            fn = lambda: weighted_nll(net, x, a, w)[0]
            _, grads = weighted_nll(net, x, a, w)
        else:
            y = rng.standard_normal(4)
            fn = lambda: masked_mse(net, x, a, y)[0]
            _, grads = masked_mse(net, x, a, y)
        worst = max(worst, max_rel_error(grads, numeric_grad(net, fn)))
    assert worst < 1e-4


def test_loss_and_grad_uses_taken_actions():
    rng = np.random.default_rng(3)
    net = random_net(rng)
    b = Minibatch(rng.standard_normal((5, 4)), rng.integers(0, 2, 5), np.zeros(5),
                  np.zeros((5, 4)), np.ones(5, dtype=bool), np.full(5, 0.5))
    y = rng.standard_normal(5)
    assert loss_and_grad(net, b, y)[0] == masked_mse(net, b.states, b.actions, y)[0]


# -- optimizer ----------------------------------------------------------------------

def test_zero_gradients_only_advance_step():
    net = random_net(np.random.default_rng(4))
    before = net.get_flat().copy()
    net.apply_update([np.zeros_like(p) for p in net.params], 1e-3)
    assert np.array_equal(net.get_flat(), before) and net.step == 1


def test_sgd_arithmetic():
    net = Mlp(MlpSpec(input_dim=1, hidden_layers=(), output_dim=1),
              [np.array([[1.0]])], [np.array([0.0])], optimizer="sgd")
    net.apply_update([np.array([[2.0]]), np.array([0.0])], 0.1)
    assert net.weights[0][0, 0] == pytest.approx(0.8)


@pytest.mark.parametrize("optimizer,lr", [("sgd", 0.05), ("adam", 0.05)])
def test_convex_descent(optimizer, lr):
    # least squares on a linear net: convex in the parameters
    rng = np.random.default_rng(5)
    x = rng.standard_normal((20, 3))
    y = x @ np.array([1.0, -2.0, 0.5]) + 0.3
    net = Mlp.init(MlpSpec(input_dim=3, hidden_layers=(), output_dim=1), rng, optimizer=optimizer)
    a = np.zeros(20, dtype=int)
    losses = []
    for _ in range(20_000):
        loss, grads = masked_mse(net, x, a, y)
        losses.append(loss)
        if loss < 1e-8:
            break
        net.apply_update(grads, lr)
    assert losses[-1] < 1e-8
    if optimizer == "sgd":
        assert all(b < a for a, b in zip(losses, losses[1:]))


def test_training_trace_deterministic():
    def run():
        rng = np.random.default_rng(9)
        net = random_net(rng, activation="relu")
        x, a, y = rng.standard_normal((8, 4)), rng.integers(0, 2, 8), rng.standard_normal(8)
        for _ in range(50):
            net.apply_update(masked_mse(net, x, a, y)[1], 1e-2)
        return net.get_flat()
    assert np.array_equal(run(), run())


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    net = random_net(rng, dueling=True, out=2)
    x = rng.standard_normal((5, 4))
    net.apply_update(masked_mse(net, x, np.zeros(5, dtype=int), np.ones(5))[1], 1e-3)
    save_checkpoint(net, tmp_path / "n.json")
    back = load_checkpoint(tmp_path / "n.json")
    assert back.spec == net.spec and back.step == net.step
    assert np.array_equal(back.get_flat(), net.get_flat())
    assert all(np.array_equal(p, q) for p, q in zip(back.m + back.v, net.m + net.v))
    assert np.array_equal(back(x), net(x))
