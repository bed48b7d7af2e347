"""Building and loading domains, with preprocessing helpers and splits."""

import csv
import math
from pathlib import Path
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .alm import Domain
from .exceptions import DimensionError, DomainError, ParseError
from .validation import check_matrix, check_positive


@dataclass(frozen=True)
class SineBenchConfig:
    """Sources scattered along the curve ``x2 = amplitude * sin(frequency * x1)``.

    Each source is an isotropic Gaussian blob of scale ``cluster_spread``
    centred at a point on the curve whose ``x1`` coordinate is uniform on
    ``center_range``.  Points above the curve are positive.

    The defaults (spread 1.5, centres on one period) were picked from a scan
    over amplitude in [0.5, 2], frequency in [0.5, 1], spread in [0.5, 2.5]
    and centre half-widths in [pi/2, 2 pi].
    """

    num_sources: int = 5
    points_per_source: int = 1000
    amplitude: float = 1.0
    frequency: float = 1.0
    center_range: tuple = (-math.pi, math.pi)
    cluster_spread: float = 1.5
    seed: int = 0

    def __post_init__(self):
        check_positive(self.num_sources, "num_sources", integer=True)
        check_positive(self.points_per_source, "points_per_source", integer=True)
        check_positive(self.amplitude, "amplitude")
        check_positive(self.frequency, "frequency")
        check_positive(self.cluster_spread, "cluster_spread")
        lo, hi = self.center_range
        if not lo < hi:
            raise DomainError(f"center_range must be increasing, got {self.center_range}")


def sine_labels(X, amplitude=1.0, frequency=1.0):
    return np.where(X[:, 1] > amplitude * np.sin(frequency * X[:, 0]), 1.0, -1.0)


def gen_sine_domains(cfg=None):
    """Labeled 2-D domains for the sine-wave illustration."""
    cfg = SineBenchConfig() if cfg is None else cfg
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.center_range
    domains = []
    for i in range(cfg.num_sources):
        c1 = rng.uniform(lo, hi)
        center = np.array([c1, cfg.amplitude * math.sin(cfg.frequency * c1)])
        X = center + cfg.cluster_spread * rng.standard_normal((cfg.points_per_source, 2))
        domains.append(Domain(X, sine_labels(X, cfg.amplitude, cfg.frequency),
                              name=f"sine{i}"))
    return domains


@dataclass(frozen=True)
class MixtureBenchConfig:
    """Rotated and translated copies of one two-class Gaussian mixture.

    The reference problem has ``n_features`` dimensions and two Gaussian
    bumps per class.  Domain ``i`` applies a random rotation by an angle of
    at most ``max_angle`` radians (in a random plane) and a random shift of
    norm at most ``max_shift``.
    """

    num_domains: int = 6
    points_per_domain: int = 300
    n_features: int = 2
    class_separation: float = 2.0
    cluster_spread: float = 0.6
    max_angle: float = math.pi / 10
    max_shift: float = 1.5
    seed: int = 0

    def __post_init__(self):
        check_positive(self.num_domains, "num_domains", integer=True)
        check_positive(self.points_per_domain, "points_per_domain", integer=True)
        if self.n_features < 2:
            raise DomainError("n_features must be at least 2")
        check_positive(self.cluster_spread, "cluster_spread")


def _plane_rotation(d, angle, rng):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    G = np.eye(d)
    c, s = math.cos(angle), math.sin(angle)
    G[:2, :2] = [[c, -s], [s, c]]
    return Q @ G @ Q.T


def gen_mixture_domains(cfg=None):
    """Labeled domains for the rotated-mixture benchmark."""
    cfg = MixtureBenchConfig() if cfg is None else cfg
    rng = np.random.default_rng(cfg.seed)
    d = cfg.n_features
    sep = cfg.class_separation
    # XOR-like layout: each class owns two opposite corners
    means = np.zeros((4, d))
    means[:, :2] = [[sep, sep], [-sep, -sep], [sep, -sep], [-sep, sep]]
    classes = np.array([1.0, 1.0, -1.0, -1.0])
    domains = []
    for i in range(cfg.num_domains):
        comp = rng.integers(0, 4, size=cfg.points_per_domain)
        X = means[comp] + cfg.cluster_spread * rng.standard_normal((cfg.points_per_domain, d))
        R = _plane_rotation(d, rng.uniform(-cfg.max_angle, cfg.max_angle), rng)
        direction = rng.standard_normal(d)
        shift = direction / np.linalg.norm(direction) * rng.uniform(0, cfg.max_shift)
        domains.append(Domain(X @ R.T + shift, classes[comp], name=f"mix{i}"))
    return domains


# -- CSV -------------------------------------------------------------------------

def write_domain_csv(domain, path):
    """Write a domain as ``f0,...,f{d-1}[,label]`` with exact float repr."""
    d = domain.n_features
    header = [f"f{j}" for j in range(d)] + (["label"] if domain.labeled else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, row in enumerate(domain.features):
            cells = [repr(float(v)) for v in row]
            if domain.labeled:
                cells.append("+1" if domain.labels[i] > 0 else "-1")
            w.writerow(cells)


def read_domain_csv(path, name=None):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(path, "empty file", 1)
    header = [h.strip() for h in rows[0]]
    labeled = bool(header) and header[-1] == "label"
    d = len(header) - int(labeled)
    if d < 1:
        raise ParseError(path, "no feature columns", 1)
    expected = [f"f{j}" for j in range(d)]
    if header[:d] != expected:
        raise ParseError(path, f"feature columns must be named {expected[0]}..{expected[-1]}", 1)
    feats, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(path, f"expected {len(header)} fields, got {len(row)}", lineno)
        try:
            feats.append([float(c) for c in row[:d]])
        except ValueError:
            raise ParseError(path, "non-numeric feature value", lineno) from None
        if labeled:
            cell = row[-1].strip()
            if cell not in ("+1", "-1", "1"):
                raise ParseError(path, f"label {cell!r} is not +1 or -1", lineno)
            labels.append(-1.0 if cell == "-1" else 1.0)
    if not feats:
        raise ParseError(path, "no data rows", 2)
    X = np.array(feats)
    if not np.all(np.isfinite(X)):
        raise ParseError(path, "non-finite feature value")
    return Domain(X, np.array(labels) if labeled else None,
                  name=name if name is not None else Path(path).stem)


def load_domains_csv(paths):
    """One :class:`Domain` per CSV file; every file must have the same width."""
    domains = [read_domain_csv(p) for p in paths]
    if domains:
        d = domains[0].n_features
        for p, dom in zip(paths, domains):
            if dom.n_features != d:
                raise DimensionError(
                    f"{p} has {dom.n_features} features but {paths[0]} has {d}")
    return domains


# -- preprocessing -----------------------------------------------------------------

def _check_counts(term_counts):
    C = np.asarray(term_counts, dtype=float)
    if C.ndim != 2:
        raise DimensionError("term counts must be a 2-D matrix")
    if np.any(C < 0):
        raise DomainError("term counts must be nonnegative")
    return C


def _idf(C):
    df = np.count_nonzero(C > 0, axis=0)
    idf = np.log(C.shape[0] / np.maximum(df, 1))
    idf[df == 0] = 0.0
    return idf


def _tf(C):
    totals = C.sum(axis=1, keepdims=True)
    return np.divide(C, totals, out=np.zeros_like(C), where=totals > 0)


def tfidf_transform(term_counts):
    """TF-IDF with ``tf = count / doc_total`` and ``idf = ln(N / df)``.

    No smoothing: a term present in every document gets weight zero, and an
    empty document maps to a zero row.
    """
    C = _check_counts(term_counts)
    return _tf(C) * _idf(C)


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray

    def transform(self, X):
        X = check_matrix(X, n_features=self.mean.shape[0])
        return (X - self.mean) @ self.components

    def inverse_transform(self, Z):
        return np.asarray(Z) @ self.components.T + self.mean


def pca_fit_transform(X, variance_target=0.95):
    """Smallest PCA whose cumulative explained variance reaches the target.

    Returns ``(PcaModel, projected)``.
    """
    X = check_matrix(X)
    if X.shape[0] < 2:
        raise DomainError("PCA needs at least two samples")
    if not 0 < variance_target <= 1:
        raise DomainError(f"variance_target must lie in (0, 1], got {variance_target!r}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = evals.sum()
    if total <= 0:
        ratios = np.zeros_like(evals)
        r = 1
    else:
        ratios = evals / total
        cum = np.cumsum(ratios)
        # tolerance guards the exact-target case against rounding in cumsum
        r = int(np.searchsorted(cum, variance_target - 1e-12) + 1)
        r = min(r, len(evals))
    # deterministic sign: largest-magnitude loading of each component positive
    comps = evecs[:, :r]
    flip = np.sign(comps[np.argmax(np.abs(comps), axis=0), np.arange(r)])
    comps = comps * np.where(flip == 0, 1.0, flip)
    model = PcaModel(mean, comps, ratios[:r])
    return model, Xc @ comps


class VariancePCA(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`pca_fit_transform`."""

    def __init__(self, variance_target=0.95):
        self.variance_target = variance_target

    def fit(self, X, y=None):
        self.model_, _ = pca_fit_transform(X, self.variance_target)
        self.n_components_ = self.model_.components.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.transform(X)


class TfidfTransformer(TransformerMixin, BaseEstimator):
    """TF-IDF whose idf weights come from the fitted corpus."""

    def fit(self, X, y=None):
        self.idf_ = _idf(_check_counts(X))
        return self

    def transform(self, X):
        check_is_fitted(self, "idf_")
        return _tf(_check_counts(X)) * self.idf_


# -- splits --------------------------------------------------------------------

def split_kfold(domain, k=10, seed=0):
    """Seeded shuffled k-fold split of a domain into ``(train, test)`` pairs."""
    m = domain.n_samples
    k = check_positive(k, "k", integer=True)
    if k > m:
        raise DomainError(f"cannot make {k} folds from {m} samples")
    folds = kfold_indices(m, k, seed)
    pairs = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        pairs.append((_subset(domain, train_idx), _subset(domain, test_idx)))
    return pairs


def kfold_indices(m, k=10, seed=0):
    """Index arrays of ``k`` contiguous folds over a seeded shuffle."""
    order = np.random.default_rng(seed).permutation(m)
    return np.array_split(order, k)


def _subset(domain, idx):
    labels = None if domain.labels is None else domain.labels[idx]
    return Domain(domain.features[idx], labels, domain.name)
