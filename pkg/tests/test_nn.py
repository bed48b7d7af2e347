import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from almda.exceptions import DimensionError, DomainError, NumericError, ParseError
from almda.nn import (DenseLayer, FeedForwardNet, NetClassifier, TrainConfig, dumps_net,
                      forward, loads_net, loss_gradients, mlp_init, squared_loss, train)


def test_mlp_init_shapes():
    net = mlp_init([2, 3, 1], ["tanh", "tanh"], seed=0)
    assert [l.weights.shape for l in net.layers] == [(2, 3), (3, 1)]
    assert [l.bias.shape for l in net.layers] == [(3,), (1,)]
    assert all(l.trainable for l in net.layers)
    assert all(np.all(l.bias == 0) for l in net.layers)


def test_mlp_init_scale():
    net = mlp_init([16, 4, 1], ["tanh", "identity"], seed=3)
    assert np.abs(net.layers[0].weights).max() <= 1 / 4
    assert np.abs(net.layers[1].weights).max() <= 1 / 2


def test_mlp_init_deterministic():
    a = mlp_init([2, 3, 1], ["tanh", "tanh"], seed=11)
    b = mlp_init([2, 3, 1], ["tanh", "tanh"], seed=11)
    assert a.same_parameters(b)


def test_mlp_init_errors():
    with pytest.raises(DimensionError):
        mlp_init([2, 3, 1], ["tanh"], seed=0)
    with pytest.raises(DomainError):
        mlp_init([2, 0, 1], ["tanh", "tanh"], seed=0)


def test_zero_weights_map_to_zero():
    net = mlp_init([4, 1], ["identity"], seed=0)
    zero = FeedForwardNet((replace(net.layers[0], weights=np.zeros((4, 1))),))
    X = np.random.default_rng(0).normal(size=(20, 4))
    assert np.all(zero.score(X) == 0)


def test_forward_hand_arithmetic():
    net = FeedForwardNet((DenseLayer(np.array([[1.0], [1.0]]), np.zeros(1), "identity"),))
    assert forward(net, [2.0, 3.0]) == 5.0


def test_forward_zero_tanh():
    net = FeedForwardNet((DenseLayer(np.zeros((3, 2)), np.zeros(2)),
                          DenseLayer(np.zeros((2, 1)), np.zeros(1), "tanh")))
    assert forward(net, [1.0, -2.0, 5.0]) == 0.0


def test_forward_saturation():
    net = FeedForwardNet((DenseLayer(np.array([[50.0]]), np.zeros(1), "tanh"),))
    assert abs(forward(net, [1.0]) - 1.0) < 1e-9


def test_sigmoid_is_rescaled_logistic():
    z = np.linspace(-30, 30, 61)
    net = FeedForwardNet((DenseLayer(np.ones((1, 1)), np.zeros(1), "sigmoid"),))
    assert np.allclose(net.score(z[:, None]), 2 / (1 + np.exp(-z)) - 1, atol=1e-15)


def test_forward_dimension_error():
    net = mlp_init([3, 1], ["tanh"], seed=0)
    with pytest.raises(DimensionError):
        forward(net, [1.0, 2.0])


def _two_clusters(seed=0, n=200):
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) < n // 2, 1.0, -1.0)
    centers = np.where(y[:, None] > 0, [[3.0, 3.0]], [[-3.0, -3.0]])
    return centers + 0.3 * rng.standard_normal((n, 2)), y


def test_separated_clusters_are_learned():
    X, y = _two_clusters()
    # LP oracle: a hyperplane with y (w.x + b) >= 1 exists
    A = -y[:, None] * np.hstack([X, np.ones((len(y), 1))])
    lp = linprog(np.zeros(3), A_ub=A, b_ub=-np.ones(len(y)), bounds=[(None, None)] * 3)
    assert lp.status == 0
    net = train(X, y, mlp_init([2, 3, 1], ["tanh", "tanh"], seed=1), TrainConfig(seed=2))
    assert np.all(net.predict(X) == y)


def test_all_positive_labels():
    X = np.random.default_rng(4).normal(size=(50, 2))
    net = train(X, np.ones(50), mlp_init([2, 3, 1], ["tanh", "tanh"], seed=0),
                TrainConfig(epochs=50))
    assert np.all(net.predict(X) == 1)


def test_frozen_layer_untouched():
    X, y = _two_clusters(seed=5)
    net = mlp_init([2, 3, 1], ["tanh", "tanh"], seed=1)
    net = FeedForwardNet((net.layers[0].frozen(), net.layers[1]))
    out = train(X, y, net, TrainConfig(epochs=20))
    assert out.layers[0].same_parameters(net.layers[0])
    assert not out.layers[1].same_parameters(net.layers[1])


def test_train_does_not_mutate_input():
    X, y = _two_clusters(seed=6)
    net = mlp_init([2, 3, 1], ["tanh", "tanh"], seed=1)
    before = dumps_net(net)
    train(X, y, net, TrainConfig(epochs=5))
    assert dumps_net(net) == before


def test_train_errors():
    net = mlp_init([2, 1], ["tanh"], seed=0)
    with pytest.raises(DomainError):
        train(np.zeros((0, 2)), np.zeros(0), net)
    with pytest.raises(NumericError):
        train(np.array([[np.nan, 1.0]]), [1.0], net)
    with pytest.raises(DimensionError):
        train(np.zeros((3, 3)), np.ones(3), net)


def test_train_config_validation():
    with pytest.raises(DomainError):
        TrainConfig(learning_rate=0)
    with pytest.raises(DomainError):
        TrainConfig(batch_size=0)
    with pytest.raises(DomainError):
        TrainConfig(l2_penalty=-1)


def _fd_gradients(net, X, Y, l2, h=1e-5):
    out = []
    for li, layer in enumerate(net.layers):
        pair = []
        for attr in ("weights", "bias"):
            P = getattr(layer, attr)
            G = np.zeros_like(P)
            for idx in np.ndindex(P.shape):
                vals = []
                for sgn in (1, -1):
                    Q = np.array(P)
                    Q[idx] += sgn * h
                    layers = list(net.layers)
                    layers[li] = replace(layer, **{attr: Q})
                    vals.append(squared_loss(FeedForwardNet(tuple(layers)), X, Y, l2))
                G[idx] = (vals[0] - vals[1]) / (2 * h)
            pair.append(G)
        out.append(pair)
    return out


def _random_net(rng):
    depth = int(rng.integers(1, 4))
    sizes = [int(s) for s in rng.integers(1, 6, size=depth)] + [1]
    acts = list(rng.choice(["tanh", "identity", "sigmoid"], size=depth))
    net = mlp_init(sizes, acts, seed=int(rng.integers(2**31)))
    # nonzero biases so every parameter is exercised
    layers = tuple(replace(l, bias=rng.normal(scale=0.5, size=l.fan_out)) for l in net.layers)
    return FeedForwardNet(layers)


def _max_rel_error(a, n):
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        net = _random_net(rng)
        X = rng.normal(size=(int(rng.integers(1, 8)), net.n_features))
        Y = rng.uniform(-1, 1, size=X.shape[0])
        analytic = loss_gradients(net, X, Y, l2_penalty=1e-3)
        numeric = _fd_gradients(net, X, Y, 1e-3)
        for (dW, db), (nW, nb) in zip(analytic, numeric):
            worst = max(worst, _max_rel_error(dW, nW), _max_rel_error(db, nb))
    assert worst < 1e-4


def test_full_batch_descent_is_monotone():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(64, 3))
    X /= X.std(axis=0)
    y = np.sign(X[:, 0] + 0.5 * X[:, 1] ** 2 - 0.3)
    net = mlp_init([3, 5, 1], ["tanh", "tanh"], seed=0)
    losses = []
    cfg = TrainConfig(learning_rate=1e-3, epochs=300, batch_size=64, l2_penalty=1e-4)

    def record(epoch, Ws, bs):
        layers = tuple(replace(l, weights=W.copy(), bias=b.copy())
                       for l, W, b in zip(net.layers, Ws, bs))
        losses.append(squared_loss(FeedForwardNet(layers), X, y, cfg.l2_penalty))

    train(X, y, net, cfg, after_epoch=record)
    assert np.all(np.diff(losses) <= 1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40))
def test_training_is_deterministic(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    cfg = TrainConfig(epochs=3, batch_size=7, seed=seed)
    init = mlp_init([2, 3, 1], ["tanh", "tanh"], seed=seed)
    assert train(X, y, init, cfg).same_parameters(train(X, y, init, cfg))


def test_serialization_roundtrip_is_exact():
    rng = np.random.default_rng(1)
    net = _random_net(rng)
    net = FeedForwardNet((net.layers[0].frozen(),) + net.layers[1:])
    back = loads_net(dumps_net(net))
    assert back.same_parameters(net)
    assert [l.activation for l in back.layers] == [l.activation for l in net.layers]
    assert [l.trainable for l in back.layers] == [l.trainable for l in net.layers]


def test_serialization_rejects_garbage():
    text = dumps_net(mlp_init([2, 1], ["tanh"], seed=0)).replace("layers 1", "layers 2")
    with pytest.raises(ParseError):
        loads_net(text)


def test_net_classifier_estimator_api():
    X, y = _two_clusters(seed=9)
    clf = NetClassifier(hidden_layer_sizes=(3,), epochs=50)
    assert clf.get_params()["hidden_layer_sizes"] == (3,)
    clf.fit(X, y)
    assert clf.score(X, y) == 1.0
    assert set(clf.predict(X)) <= {-1.0, 1.0}
