"""Approximate label matching for multi-source domain adaptation.

A global classifier ``g`` is trained on all labeled sources at once and a
local classifier ``f_i`` on each source alone.  For every source, linear
layers ``phi_i`` are prepended to a frozen copy of ``f_i`` and fitted so that
``f_i(phi_i(x))`` reproduces ``g(x)`` on the unlabeled target points.  The
target is labeled by the sign of ``sum_i f_i(phi_i(x))``.
"""

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import (AlmdaError, DimensionError, NumericError, ParseError,
                         SpecError)
from .nn import (DenseLayer, FeedForwardNet, TrainConfig, classifier_net,
                 dumps_net, read_net, train)
from .validation import check_labels, check_matrix, check_vector, sign_pm

TRANSFORM_KINDS = ("free_linear", "rotation")


@dataclass(frozen=True, eq=False)
class Domain:
    """Samples from one distribution: features and, for sources, +/-1 labels."""

    features: np.ndarray
    labels: np.ndarray = None
    name: str = None

    def __post_init__(self):
        X = check_matrix(self.features, name="features")
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        if self.labels is not None:
            y = check_labels(self.labels, n_samples=X.shape[0], name="labels")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def labeled(self):
        return self.labels is not None

    def unlabeled(self):
        return Domain(self.features, None, self.name)

    @property
    def identifier(self):
        """Stable identity: the name if given, else a digest of the data."""
        if self.name is not None:
            return str(self.name)
        h = hashlib.sha256(self.features.tobytes())
        if self.labels is not None:
            h.update(self.labels.tobytes())
        return "sha256:" + h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class MultiDomainSet:
    sources: tuple
    target: Domain

    def __post_init__(self):
        sources = tuple(self.sources)
        if not sources:
            raise DimensionError("at least one source domain is required")
        d = self.target.n_features
        for i, src in enumerate(sources):
            if not src.labeled:
                raise SpecError(f"source {i} has no labels")
            if src.n_features != d:
                raise DimensionError(
                    f"source {i} has {src.n_features} features, target has {d}")
        object.__setattr__(self, "sources", sources)

    @property
    def n_features(self):
        return self.target.n_features


@dataclass(frozen=True)
class TransformSpec:
    """How the alignment map is parameterized and trained.

    ``free_linear`` stacks ``depth`` affine d x d layers.  ``rotation`` uses a
    single bias-free layer whose matrix is kept a proper rotation.
    """

    kind: str = "free_linear"
    depth: int = 1
    train_cfg: TrainConfig = field(default_factory=lambda: TrainConfig(l2_penalty=0.0))

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise SpecError(f"unknown transform kind {self.kind!r}")
        if int(self.depth) != self.depth or self.depth < 1:
            raise SpecError(f"depth must be a positive integer, got {self.depth!r}")
        if self.kind == "rotation" and self.depth != 1:
            raise SpecError("rotation transforms must have depth 1")


@dataclass(frozen=True)
class Architecture:
    """Hidden layer widths and activations for ``g`` and each ``f_i``.

    ``g_hidden=()`` with ``g_output="sigmoid"`` is logistic regression.
    """

    g_hidden: tuple = (10,)
    f_hidden: tuple = (10,)
    hidden_activation: str = "tanh"
    g_output: str = "tanh"
    f_output: str = "tanh"

    def global_net(self, d, seed):
        return classifier_net(d, tuple(self.g_hidden), self.hidden_activation,
                              self.g_output, seed)

    def local_net(self, d, seed):
        return classifier_net(d, tuple(self.f_hidden), self.hidden_activation,
                              self.f_output, seed)


@dataclass(frozen=True, eq=False)
class AdaptedSourceModel:
    """Alignment layers fused in front of a frozen source classifier."""

    phi: tuple
    base: FeedForwardNet
    initial_objective: float = float("nan")
    objective: float = float("nan")

    def __post_init__(self):
        phi = tuple(self.phi)
        d = self.base.n_features
        for layer in phi:
            if layer.weights.shape != (d, d) or layer.activation != "identity":
                raise DimensionError("alignment layers must be d x d identity-activation maps")
        object.__setattr__(self, "phi", phi)

    @property
    def n_features(self):
        return self.base.n_features

    def fused(self):
        return FeedForwardNet(self.phi + self.base.frozen().layers)

    def transform(self, X):
        a = check_matrix(X, n_features=self.n_features, allow_empty=True)
        for layer in self.phi:
            a = a @ layer.weights + layer.bias
        return a

    def score(self, X):
        return self.base.score(self.transform(X))


@dataclass(frozen=True, eq=False)
class AlmModel:
    global_net: FeedForwardNet
    adapted: tuple
    source_ids: tuple = ()
    spec: TransformSpec = field(default_factory=TransformSpec)

    def __post_init__(self):
        adapted = tuple(self.adapted)
        d = self.global_net.n_features
        if any(a.n_features != d for a in adapted):
            raise DimensionError("all sub-models must share the input dimension")
        object.__setattr__(self, "adapted", adapted)
        object.__setattr__(self, "source_ids", tuple(self.source_ids))

    @property
    def n_features(self):
        return self.global_net.n_features

    @property
    def k(self):
        return len(self.adapted)

    def source_scores(self, X):
        """Fused score of every sub-model, shape (n_samples, k)."""
        return np.column_stack([a.score(X) for a in self.adapted])

    def decision_function(self, X):
        return _order_free_sum(self.source_scores(X))

    def predict(self, X):
        return sign_pm(self.decision_function(X))

    def local_decision_function(self, X):
        """``sum_i f_i(x)`` with no alignment."""
        return _order_free_sum(np.column_stack([a.base.score(X) for a in self.adapted]))


def _order_free_sum(scores):
    # sorting first makes the floating-point sum independent of source order
    return np.sort(scores, axis=1).sum(axis=1)


def derive_seed(seed, *tokens):
    """Deterministic 32-bit seed from a master seed and identifying tokens."""
    h = hashlib.sha256(repr((int(seed),) + tokens).encode())
    return int.from_bytes(h.digest()[:4], "little")


def project_rotation(M, return_flag=False):
    """Nearest proper rotation to ``M`` in Frobenius norm.

    With ``M = U S V^T``, the answer is ``U diag(1, ..., 1, det(U V^T)) V^T``.

    Parameters
    ----------
    M : array-like, shape (d, d)
    return_flag : bool
        Also return whether ``M`` was numerically rank deficient, in which
        case the nearest rotation is not unique.

    Returns
    -------
    R : ndarray, shape (d, d)
    rank_deficient : bool, only if ``return_flag``
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError("matrix contains non-finite entries")
    U, s, Vt = np.linalg.svd(M)
    D = np.ones(M.shape[0])
    D[-1] = np.sign(np.linalg.det(U @ Vt))
    R = (U * D) @ Vt
    if return_flag:
        tol = max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        return R, bool(s.size and s[-1] <= tol)
    return R


def _eq2_objective(fused_scores, approx_labels):
    r = approx_labels - fused_scores
    return float(r @ r)


def fit_phi(base, global_net, target_X, spec=None):
    """Fit alignment layers in front of a frozen ``base`` net.

    The layers start at the exact identity map and are trained on
    ``(x, g(x))`` pairs over the target points under squared loss.  The
    parameters with the smallest objective seen at an epoch boundary
    (identity included) are returned, so fitting never ends worse than it
    started.

    Parameters
    ----------
    base : FeedForwardNet
        The local classifier ``f_i``; its parameters are never changed.
    global_net : FeedForwardNet
        The global classifier ``g`` that supplies the approximate labels.
    target_X : array-like, shape (n, d)
    spec : TransformSpec, optional

    Returns
    -------
    AdaptedSourceModel
    """
    spec = TransformSpec() if spec is None else spec
    if spec.kind == "rotation" and spec.depth != 1:
        raise SpecError("rotation transforms must have depth 1")
    d = base.n_features
    if global_net.n_features != d:
        raise DimensionError(
            f"global net takes {global_net.n_features} features, base takes {d}")
    X = check_matrix(target_X, name="target_X", n_features=d)
    approx = global_net.score(X)
    identity = tuple(DenseLayer(np.eye(d), np.zeros(d), "identity", True)
                     for _ in range(spec.depth))
    fused = FeedForwardNet(identity + base.frozen().layers)
    initial = _eq2_objective(fused.score(X), approx)
    best = {"objective": initial, "phi": identity}
    depth = spec.depth
    base_layers = fused.layers[depth:]

    def snapshot(Ws, bs):
        return tuple(DenseLayer(W.copy(), b.copy(), "identity", True)
                     for W, b in zip(Ws[:depth], bs[:depth]))

    def keep_rotation(Ws, bs):
        Ws[0][...] = project_rotation(Ws[0])
        bs[0][...] = 0.0

    def track_best(epoch, Ws, bs):
        a = X
        for W, b in zip(Ws[:depth], bs[:depth]):
            a = a @ W + b
        obj = _eq2_objective(FeedForwardNet(base_layers).score(a), approx)
        if obj < best["objective"]:
            best["objective"] = obj
            best["phi"] = snapshot(Ws, bs)

    # rotation: the bias is held at zero, only the rotation itself is learned
    train(X, approx, fused, spec.train_cfg,
          after_step=keep_rotation if spec.kind == "rotation" else None,
          after_epoch=track_best)
    return AdaptedSourceModel(best["phi"], base, initial, best["objective"])


def predict_consensus(model, x):
    """Sign of the summed fused scores for one input; a zero sum gives +1."""
    x = check_vector(x, length=model.n_features)
    return int(model.predict(x[None, :])[0])


def _attach_source(exc, index, ident):
    exc.source_index = index
    exc.args = (f"source {index} ({ident}): {exc}",)
    return exc


def fit_alm(data, arch=None, spec=None, cfg=None):
    """Run the full approximate label matching procedure.

    Parameters
    ----------
    data : MultiDomainSet
    arch : Architecture, optional
    spec : TransformSpec, optional
        Alignment settings; its ``train_cfg`` governs the phi fits.
    cfg : TrainConfig, optional
        Settings for ``g`` and each ``f_i``.  ``cfg.seed`` is the master
        seed; every sub-model's seed is derived from it and the identity of
        the source, so reordering sources does not change the result.

    Returns
    -------
    AlmModel
        Sub-models are listed in the order of ``data.sources``.
    """
    arch = Architecture() if arch is None else arch
    spec = TransformSpec() if spec is None else spec
    cfg = TrainConfig() if cfg is None else cfg
    d = data.n_features
    ids = [src.identifier for src in data.sources]
    canonical = sorted(range(len(ids)), key=lambda i: ids[i])
    Xs = np.vstack([data.sources[i].features for i in canonical])
    Ys = np.concatenate([data.sources[i].labels for i in canonical])
    g = train(Xs, Ys, arch.global_net(d, derive_seed(cfg.seed, "global", "init")),
              replace(cfg, seed=derive_seed(cfg.seed, "global", "train")))
    adapted = []
    for i, (src, ident) in enumerate(zip(data.sources, ids)):
        try:
            f = train(src.features, src.labels,
                      arch.local_net(d, derive_seed(cfg.seed, ident, "init")),
                      replace(cfg, seed=derive_seed(cfg.seed, ident, "train")))
            phi_cfg = replace(spec.train_cfg, seed=derive_seed(cfg.seed, ident, "phi"))
            adapted.append(fit_phi(f, g, data.target.features,
                                   replace(spec, train_cfg=phi_cfg)))
        except AlmdaError as exc:
            raise _attach_source(exc, i, ident)
    return AlmModel(g, tuple(adapted), tuple(ids), spec)


# -- persistence ---------------------------------------------------------------

ALM_MAGIC = "almda-alm 1"


def dumps_alm(model):
    """Text form of an :class:`AlmModel`.

    A magic line, one JSON manifest line (k, d, transform spec, per-source
    objectives), then ``[global]``, ``[phi i]`` and ``[base i]`` sections
    holding nets in the flat net format.
    """
    manifest = {
        "k": model.k,
        "d": model.n_features,
        "transform": {"kind": model.spec.kind, "depth": model.spec.depth},
        "sources": [
            {"id": sid, "initial_objective": a.initial_objective, "objective": a.objective}
            for sid, a in zip(model.source_ids or [None] * model.k, model.adapted)
        ],
    }
    parts = [ALM_MAGIC, json.dumps(manifest, sort_keys=True), "[global]",
             dumps_net(model.global_net).rstrip("\n")]
    for i, a in enumerate(model.adapted):
        parts += [f"[phi {i}]", dumps_net(FeedForwardNet(a.phi)).rstrip("\n"),
                  f"[base {i}]", dumps_net(a.base).rstrip("\n")]
    return "\n".join(parts) + "\n"


def loads_alm(text, source="<string>"):
    lines = text.splitlines()
    if not lines or lines[0].strip() != ALM_MAGIC:
        raise ParseError(source, f"missing '{ALM_MAGIC}' header", 1)
    try:
        manifest = json.loads(lines[1])
    except (IndexError, json.JSONDecodeError):
        raise ParseError(source, "malformed manifest", 2) from None
    pos = 2

    def section(title):
        nonlocal pos
        if pos >= len(lines) or lines[pos].strip() != title:
            raise ParseError(source, f"expected section {title}", pos + 1)
        net, used = read_net(lines[pos + 1:], source, offset=pos + 1)
        pos += 1 + used
        return net

    g = section("[global]")
    adapted = []
    for i, meta in enumerate(manifest["sources"]):
        phi = section(f"[phi {i}]")
        base = section(f"[base {i}]")
        adapted.append(AdaptedSourceModel(phi.layers, base,
                                          meta["initial_objective"], meta["objective"]))
    spec = TransformSpec(manifest["transform"]["kind"], manifest["transform"]["depth"])
    ids = tuple(m["id"] for m in manifest["sources"])
    if any(i is None for i in ids):
        ids = ()
    return AlmModel(g, tuple(adapted), ids, spec)


def save_alm(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_alm(model))


def load_alm(path):
    with open(path, encoding="utf-8") as fh:
        return loads_alm(fh.read(), source=str(path))


# -- estimator -----------------------------------------------------------------

class ALMClassifier(ClassifierMixin, BaseEstimator):
    """Multi-source domain adaptation by approximate label matching.

    ``fit`` takes the stacked labeled source samples, a per-sample domain
    id, and the unlabeled target features::

        clf = ALMClassifier(f_hidden=(3,)).fit(X, y, domains=groups, X_target=Xt)
        clf.predict(Xt)

    Parameters
    ----------
    g_hidden, f_hidden : tuple of int
        Hidden layer widths of the global and local nets.
    g_output : str, default="tanh"
        Output activation of the global net; ``"sigmoid"`` together with
        ``g_hidden=()`` gives logistic regression.
    transform : {"free_linear", "rotation"}
    transform_depth : int
    learning_rate, epochs, batch_size, l2_penalty :
        Training settings of ``g`` and ``f_i``.
    phi_learning_rate, phi_epochs, phi_batch_size :
        Training settings of the alignment layers.
    random_state : int
    """

    def __init__(self, g_hidden=(10,), f_hidden=(10,), g_output="tanh",
                 transform="free_linear", transform_depth=1, learning_rate=0.05,
                 epochs=200, batch_size=32, l2_penalty=1e-4, phi_learning_rate=0.05,
                 phi_epochs=200, phi_batch_size=32, random_state=0):
        self.g_hidden = g_hidden
        self.f_hidden = f_hidden
        self.g_output = g_output
        self.transform = transform
        self.transform_depth = transform_depth
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2_penalty = l2_penalty
        self.phi_learning_rate = phi_learning_rate
        self.phi_epochs = phi_epochs
        self.phi_batch_size = phi_batch_size
        self.random_state = random_state

    def fit(self, X, y, domains, X_target):
        X = check_matrix(X)
        y = check_labels(y, n_samples=X.shape[0])
        domains = np.asarray(domains)
        if domains.shape != (X.shape[0],):
            raise DimensionError("domains must give one id per row of X")
        target = Domain(check_matrix(X_target, name="X_target", n_features=X.shape[1]))
        sources = [Domain(X[domains == dom], y[domains == dom], name=str(dom))
                   for dom in np.unique(domains)]
        arch = Architecture(tuple(self.g_hidden), tuple(self.f_hidden),
                            g_output=self.g_output)
        spec = TransformSpec(self.transform, self.transform_depth,
                             TrainConfig(self.phi_learning_rate, self.phi_epochs,
                                         self.phi_batch_size, 0.0))
        cfg = TrainConfig(self.learning_rate, self.epochs, self.batch_size,
                          self.l2_penalty, int(self.random_state))
        self.model_ = fit_alm(MultiDomainSet(tuple(sources), target), arch, spec, cfg)
        self.classes_ = np.array([-1.0, 1.0])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision_function(check_matrix(X, n_features=self.n_features_in_))

    def predict(self, X):
        return sign_pm(self.decision_function(X))
