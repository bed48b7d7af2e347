"""Small dense feed-forward networks trained by mini-batch gradient descent.

Every classifier in the package (the global model, the per-source models,
the fused alignment models and the baseline learners) is a
:class:`FeedForwardNet`.  Nets are immutable: :func:`train` returns a new net
and never touches its argument.

Activations
-----------
``tanh``
    Hyperbolic tangent.
``identity``
    Linear pass-through.
``sigmoid``
    The logistic function rescaled to (-1, 1), i.e. ``2 * sigma(z) - 1``.
    A zero-hidden-layer net with this output is logistic regression on
    +/-1 labels.
"""

import io
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DimensionError, DomainError, NumericError, ParseError
from .validation import check_matrix, check_positive, check_vector, check_X_y, sign_pm

ACTIVATIONS = ("tanh", "identity", "sigmoid")
FORMAT_MAGIC = "almda-net 1"


def _activate(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    # 2*sigma(z) - 1 == tanh(z / 2), without overflow for large |z|
    return np.tanh(0.5 * z)


def _activation_slope(name, a):
    """Derivative of the activation written in terms of its output ``a``."""
    if name == "tanh":
        return 1.0 - a * a
    if name == "identity":
        return None
    return 0.5 * (1.0 - a * a)


def _frozen_array(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DenseLayer:
    """Affine map ``x @ weights + bias`` followed by an activation.

    ``weights`` has shape (fan_in, fan_out).
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"
    trainable: bool = True

    def __post_init__(self):
        W = _frozen_array(self.weights)
        b = _frozen_array(self.bias)
        if W.ndim != 2:
            raise DimensionError("layer weights must be a 2-D matrix")
        if b.shape != (W.shape[1],):
            raise DimensionError(
                f"bias has shape {b.shape}, expected ({W.shape[1]},)")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise NumericError("layer parameters must be finite")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)

    @property
    def fan_in(self):
        return self.weights.shape[0]

    @property
    def fan_out(self):
        return self.weights.shape[1]

    def frozen(self):
        return replace(self, trainable=False)

    def same_parameters(self, other):
        """Bitwise comparison of weights and bias."""
        return (self.weights.shape == other.weights.shape
                and self.weights.tobytes() == other.weights.tobytes()
                and self.bias.tobytes() == other.bias.tobytes())


@dataclass(frozen=True, eq=False)
class FeedForwardNet:
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError("a net needs at least one layer")
        for i in range(len(layers) - 1):
            if layers[i].fan_out != layers[i + 1].fan_in:
                raise DimensionError(
                    f"layer {i} has fan_out {layers[i].fan_out} but layer "
                    f"{i + 1} has fan_in {layers[i + 1].fan_in}")
        object.__setattr__(self, "layers", layers)

    @property
    def n_features(self):
        return self.layers[0].fan_in

    @property
    def n_outputs(self):
        return self.layers[-1].fan_out

    @property
    def layer_sizes(self):
        return [self.n_features] + [layer.fan_out for layer in self.layers]

    def score(self, X):
        """Scores for each row of ``X`` (1-D when the net has one output)."""
        X = check_matrix(X, n_features=self.n_features, allow_empty=True)
        a = X
        for layer in self.layers:
            a = _activate(layer.activation, a @ layer.weights + layer.bias)
        return a[:, 0] if self.n_outputs == 1 else a

    def predict(self, X):
        return sign_pm(self.score(X))

    def frozen(self):
        return FeedForwardNet(tuple(layer.frozen() for layer in self.layers))

    def same_parameters(self, other):
        return (len(self.layers) == len(other.layers)
                and all(a.same_parameters(b) for a, b in zip(self.layers, other.layers)))


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch gradient descent settings.

    ``epochs=0`` is accepted and leaves the net unchanged.
    """

    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    l2_penalty: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        check_positive(self.learning_rate, "learning_rate")
        check_positive(self.batch_size, "batch_size", integer=True)
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise DomainError(f"epochs must be a nonnegative integer, got {self.epochs!r}")
        if not (self.l2_penalty >= 0 and np.isfinite(self.l2_penalty)):
            raise DomainError(f"l2_penalty must be nonnegative, got {self.l2_penalty!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise DomainError(f"seed must be an unsigned integer, got {self.seed!r}")


def mlp_init(layer_sizes, activations, seed=0):
    """Random net with ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` weights and zero biases.

    Parameters
    ----------
    layer_sizes : sequence of int
        ``[n_features, hidden_1, ..., n_outputs]``.
    activations : sequence of str
        One activation per layer, ``len(layer_sizes) - 1`` entries.
    seed : int
    """
    sizes = [int(s) for s in layer_sizes]
    activations = list(activations)
    if len(sizes) < 2 or len(activations) != len(sizes) - 1:
        raise DimensionError(
            f"{len(sizes)} layer sizes need {max(len(sizes) - 1, 1)} activations, "
            f"got {len(activations)}")
    if any(s < 1 for s in sizes):
        raise DomainError(f"layer sizes must be >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        scale = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-scale, scale, size=(fan_in, fan_out))
        layers.append(DenseLayer(W, np.zeros(fan_out), act, True))
    return FeedForwardNet(tuple(layers))


def classifier_net(n_features, hidden=(), hidden_activation="tanh",
                   output_activation="tanh", seed=0):
    """Single-output classifier net with the given hidden layer widths."""
    sizes = [n_features, *hidden, 1]
    acts = [hidden_activation] * len(hidden) + [output_activation]
    return mlp_init(sizes, acts, seed)


def forward(net, x):
    """Score of a single input vector, or of every row of a matrix."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        check_vector(x, length=net.n_features)
        return float(net.score(x[None, :])[0])
    return net.score(x)


def squared_loss(net, X, Y, l2_penalty=0.0):
    """Mean squared error plus ``l2_penalty * sum ||W||^2`` over all layers."""
    r = net.score(X) - Y
    penalty = sum(float(np.sum(layer.weights ** 2)) for layer in net.layers)
    return float(np.mean(r * r)) + l2_penalty * penalty


def _backprop(Ws, bs, acts_names, X, Y, lowest):
    """Gradients of the mean squared error for layers ``lowest`` and up.

    Returns the per-layer activations and a list of ``(dW, db)`` pairs
    (``None`` below ``lowest``).
    """
    outs = [X]
    a = X
    for W, b, name in zip(Ws, bs, acts_names):
        a = _activate(name, a @ W + b)
        outs.append(a)
    delta = (2.0 / X.shape[0]) * (a - Y)
    grads = [None] * len(Ws)
    for i in range(len(Ws) - 1, lowest - 1, -1):
        slope = _activation_slope(acts_names[i], outs[i + 1])
        if slope is not None:
            delta = delta * slope
        grads[i] = (outs[i].T @ delta, delta.sum(axis=0))
        if i > lowest:
            delta = delta @ Ws[i].T
    return outs, grads


def loss_gradients(net, X, Y, l2_penalty=0.0):
    """Analytic gradient of :func:`squared_loss` for every layer.

    Returns a list of ``(dW, db)`` pairs, one per layer, regardless of the
    ``trainable`` flags.
    """
    X = check_matrix(X, n_features=net.n_features)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    Ws = [layer.weights for layer in net.layers]
    _, grads = _backprop(Ws, [layer.bias for layer in net.layers],
                         [layer.activation for layer in net.layers], X, Y, 0)
    return [(dW + 2.0 * l2_penalty * W, db) for (dW, db), W in zip(grads, Ws)]


def train(X, Y, net, cfg=None, after_step=None, after_epoch=None):
    """Fit ``net`` to targets ``Y`` under squared loss.

    Parameters
    ----------
    X : array-like, shape (n_samples, n_features)
    Y : array-like, shape (n_samples,)
        Hard labels in {-1, +1} or real-valued soft targets.
    net : FeedForwardNet
        Starting point. Layers with ``trainable=False`` are never updated.
    cfg : TrainConfig, optional
    after_step : callable, optional
        ``after_step(Ws, bs)`` is called after every parameter update with
        the mutable working weight and bias lists; it may modify them in
        place (used to project alignment layers back onto rotations).
    after_epoch : callable, optional
        ``after_epoch(epoch, Ws, bs)``, called at the end of each epoch.

    Returns
    -------
    FeedForwardNet
        A new net; ``net`` itself is left untouched.
    """
    cfg = TrainConfig() if cfg is None else cfg
    X, Y = check_X_y(X, Y, n_features=net.n_features, soft=True)
    Y = Y.reshape(-1, 1)
    n = X.shape[0]
    Ws = [np.array(layer.weights) for layer in net.layers]
    bs = [np.array(layer.bias) for layer in net.layers]
    names = [layer.activation for layer in net.layers]
    trainable = [layer.trainable for layer in net.layers]
    if not any(trainable) or cfg.epochs == 0:
        return net
    lowest = trainable.index(True)
    lr, l2, bsize = cfg.learning_rate, cfg.l2_penalty, cfg.batch_size
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bsize):
            idx = order[start:start + bsize]
            _, grads = _backprop(Ws, bs, names, X[idx], Y[idx], lowest)
            for i in range(lowest, len(Ws)):
                if not trainable[i]:
                    continue
                dW, db = grads[i]
                if l2:
                    dW = dW + (2.0 * l2) * Ws[i]
                Ws[i] -= lr * dW
                bs[i] -= lr * db
            if after_step is not None:
                after_step(Ws, bs)
        if not np.isfinite(Ws[-1]).all():
            raise NumericError(f"training diverged in epoch {epoch}")
        if after_epoch is not None:
            after_epoch(epoch, Ws, bs)
    return _rebuild(net, Ws, bs)


def _rebuild(net, Ws, bs):
    layers = []
    for layer, W, b in zip(net.layers, Ws, bs):
        layers.append(layer if not layer.trainable else replace(layer, weights=W, bias=b))
    return FeedForwardNet(tuple(layers))


# -- flat text serialization -------------------------------------------------

def _fmt(values):
    return " ".join("%.17g" % v for v in values)


def dumps_net(net):
    """Serialize a net to the flat text format.

    ::

        almda-net 1
        layers <L>
        layer <fan_in> <fan_out> <activation> <trainable 0|1>
        <fan_in lines, each with fan_out weights>
        <one line of fan_out biases>
        ...

    Numbers are written with 17 significant digits, which round-trips
    float64 exactly.
    """
    out = io.StringIO()
    out.write(f"{FORMAT_MAGIC}\nlayers {len(net.layers)}\n")
    for layer in net.layers:
        out.write(f"layer {layer.fan_in} {layer.fan_out} {layer.activation} "
                  f"{int(layer.trainable)}\n")
        for row in layer.weights:
            out.write(_fmt(row) + "\n")
        out.write(_fmt(layer.bias) + "\n")
    return out.getvalue()


def read_net(lines, source="<string>", offset=0):
    """Parse a net from an iterator of lines; returns ``(net, lines_consumed)``."""
    lines = list(lines)
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(source, "unexpected end of net data", offset + pos + 1)
        pos += 1
        return lines[pos - 1].strip()

    def numbers(text, count):
        try:
            vals = [float(t) for t in text.split()]
        except ValueError:
            raise ParseError(source, "non-numeric value", offset + pos) from None
        if len(vals) != count:
            raise ParseError(source, f"expected {count} values, got {len(vals)}",
                             offset + pos)
        return vals

    if take() != FORMAT_MAGIC:
        raise ParseError(source, f"missing '{FORMAT_MAGIC}' header", offset + 1)
    head = take().split()
    if len(head) != 2 or head[0] != "layers":
        raise ParseError(source, "expected 'layers <count>'", offset + pos)
    layers = []
    for _ in range(int(head[1])):
        parts = take().split()
        if len(parts) != 5 or parts[0] != "layer":
            raise ParseError(source, "malformed layer header", offset + pos)
        fan_in, fan_out = int(parts[1]), int(parts[2])
        W = np.array([numbers(take(), fan_out) for _ in range(fan_in)]).reshape(fan_in, fan_out)
        b = np.array(numbers(take(), fan_out))
        layers.append(DenseLayer(W, b, parts[3], parts[4] == "1"))
    return FeedForwardNet(tuple(layers)), pos


def loads_net(text, source="<string>"):
    net, _ = read_net(text.splitlines(), source)
    return net


def save_net(net, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_net(net))


def load_net(path):
    with open(path, encoding="utf-8") as fh:
        return loads_net(fh.read(), source=path)


class NetClassifier(ClassifierMixin, BaseEstimator):
    """Scikit-learn wrapper around a :class:`FeedForwardNet` classifier.

    Labels must be -1/+1.  ``decision_function`` returns the raw net score.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int, default=(10,)
        Widths of the hidden layers; ``()`` gives a linear model.
    hidden_activation, output_activation : str
        One of ``"tanh"``, ``"identity"``, ``"sigmoid"``.
    learning_rate, epochs, batch_size, l2_penalty :
        See :class:`TrainConfig`.
    random_state : int, default=0
        Seeds both initialization and batch shuffling.
    """

    def __init__(self, hidden_layer_sizes=(10,), hidden_activation="tanh",
                 output_activation="tanh", learning_rate=0.05, epochs=200,
                 batch_size=32, l2_penalty=1e-4, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2_penalty = l2_penalty
        self.random_state = random_state

    def _train_config(self, seed):
        return TrainConfig(self.learning_rate, self.epochs, self.batch_size,
                           self.l2_penalty, seed)

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        seed = int(self.random_state)
        init = classifier_net(X.shape[1], tuple(self.hidden_layer_sizes),
                              self.hidden_activation, self.output_activation,
                              seed=seed)
        self.net_ = train(X, y, init, self._train_config(seed + 1))
        self.classes_ = np.array([-1.0, 1.0])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "net_")
        return self.net_.score(check_matrix(X, n_features=self.n_features_in_))

    def predict(self, X):
        return sign_pm(self.decision_function(X))
