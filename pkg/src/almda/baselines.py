"""Kernel mean matching and transfer component analysis baselines.

Both methods adapt one source to one target.  With several sources, the
per-source classifiers are combined by :func:`confidence_vote`.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .alm import Domain, derive_seed
from .exceptions import DimensionError, DomainError, NumericError
from .nn import NetClassifier
from .validation import check_labels, check_matrix, check_vector, sign_pm

MEDIAN_PAIRS = 2000


# -- kernel ----------------------------------------------------------------------

@dataclass(frozen=True)
class KernelConfig:
    """RBF bandwidth ``sigma``, or ``"median"`` for the median heuristic."""

    bandwidth: object = "median"
    seed: int = 0

    def __post_init__(self):
        if self.bandwidth == "median":
            return
        bw = float(self.bandwidth)
        if not (np.isfinite(bw) and bw > 0):
            raise DomainError(f"bandwidth must be positive, got {self.bandwidth!r}")


def _sq_dists(A, B):
    # explicit differences: identical rows give exactly zero, unlike the expanded form
    d2 = np.empty((A.shape[0], B.shape[0]))
    for start in range(0, A.shape[0], 256):
        diff = A[start:start + 256, None, :] - B[None, :, :]
        d2[start:start + 256] = np.einsum("ijk,ijk->ij", diff, diff)
    return d2


def median_bandwidth(A, B=None, max_pairs=MEDIAN_PAIRS, seed=0):
    """Median Euclidean distance between distinct rows of ``A`` and ``B`` stacked."""
    Z = A if B is None else np.vstack([A, B])
    n = Z.shape[0]
    if n < 2:
        raise DomainError("the median heuristic needs at least two points")
    total = n * (n - 1) // 2
    if total <= max_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        j = (i + rng.integers(1, n, size=max_pairs)) % n
    dist = np.sqrt(np.sum((Z[i] - Z[j]) ** 2, axis=1))
    sigma = float(np.median(dist))
    if sigma <= 0:
        raise DomainError("median pairwise distance is zero; set the bandwidth explicitly")
    return sigma


def resolve_bandwidth(A, B, cfg):
    if cfg.bandwidth == "median":
        return median_bandwidth(A, B, seed=cfg.seed)
    return float(cfg.bandwidth)


def rbf_kernel(A, B, cfg=None):
    """``K[i, j] = exp(-||A_i - B_j||^2 / (2 sigma^2))``."""
    cfg = KernelConfig() if cfg is None else cfg
    A = check_matrix(A, name="A")
    B = check_matrix(B, name="B", n_features=A.shape[1])
    sigma = resolve_bandwidth(A, B, cfg)
    return np.exp(-_sq_dists(A, B) / (2.0 * sigma * sigma))


# -- KMM -------------------------------------------------------------------------

@dataclass(frozen=True)
class KmmConfig:
    """Solver settings for kernel mean matching.

    ``epsilon=None`` means ``(sqrt(m) - 1) / sqrt(m)`` for ``m`` source points.
    """

    kernel: KernelConfig = field(default_factory=KernelConfig)
    B: float = 1000.0
    epsilon: float = None
    max_iters: int = 1000
    step: float = None
    tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if not self.B >= 1:
            raise DomainError(f"B must be >= 1, got {self.B!r}")
        if self.epsilon is not None and not 0 <= self.epsilon < 1:
            raise DomainError(f"epsilon must lie in [0, 1), got {self.epsilon!r}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise DomainError("max_iters must be a positive integer")
        if self.step is not None and not self.step > 0:
            raise DomainError("step must be positive")


@dataclass(frozen=True, eq=False)
class KmmResult:
    beta: np.ndarray
    objective_trace: list
    converged: bool
    epsilon: float
    B: float


def kmm_objective(beta, K_ss, kappa):
    """``(1/m^2) b^T K_ss b - (2/(m n)) b^T K_st 1`` with ``kappa = K_st 1 / n``."""
    m = beta.shape[0]
    return float(beta @ (K_ss @ beta)) / (m * m) - 2.0 * float(beta @ kappa) / m


def mean_embedding_gap(beta, K_ss, K_st, K_tt):
    """Squared RKHS distance between the weighted source mean and the target mean."""
    m, n = K_st.shape
    return (float(beta @ K_ss @ beta) / (m * m)
            - 2.0 * float(beta @ K_st.sum(axis=1)) / (m * n)
            + float(K_tt.sum()) / (n * n))


def project_feasible(v, B, epsilon):
    """Euclidean projection onto ``{0 <= b <= B, |mean(b) - 1| <= epsilon}``.

    The projection is ``clip(v - lam, 0, B)`` for the scalar ``lam`` that
    puts the mean on the nearest edge of the band; ``lam`` is found by
    bisection and the bracket end on the feasible side is returned, so the
    result satisfies the box exactly and the band up to rounding (which only
    matters for ``epsilon = 0``).
    """
    lo_mean, hi_mean = 1.0 - epsilon, 1.0 + epsilon
    b = np.clip(v, 0.0, B)
    mean = b.mean()
    if lo_mean <= mean <= hi_mean:
        return b
    goal = hi_mean if mean > hi_mean else lo_mean

    def mean_at(lam):
        return np.clip(v - lam, 0.0, B).mean()

    # mean_at is non-increasing in lam
    if mean > hi_mean:
        a, c = 0.0, float(v.max())
    else:
        a, c = float(v.min()) - B, 0.0
    for _ in range(200):
        mid = 0.5 * (a + c)
        if mean_at(mid) > goal:
            a = mid
        else:
            c = mid
        if c - a <= 1e-15 * max(1.0, abs(a), abs(c)):
            break
    lam = c if mean > hi_mean else a
    b = np.clip(v - lam, 0.0, B)
    return b


def _top_eigenvalue(K, iters=100, seed=0):
    x = np.random.default_rng(seed).standard_normal(K.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = K @ x
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        lam, x = float(x @ y), y / norm
    return max(lam, float(norm))


def kmm_weights(Xs, Xt, cfg=None):
    """Kernel mean matching source weights by projected gradient descent.

    Starts from ``beta = 1`` and takes steps of size ``1/L`` with ``L`` the
    gradient's Lipschitz constant, estimated by power iteration.  A step
    that would raise the objective is halved until it does not, so the
    trace never increases.

    Returns
    -------
    KmmResult
        ``converged`` is False when ``max_iters`` ran out before the change
        in objective fell below ``tol``; the best iterate is still returned.
    """
    cfg = KmmConfig() if cfg is None else cfg
    Xs = check_matrix(Xs, name="Xs")
    Xt = check_matrix(Xt, name="Xt", n_features=Xs.shape[1])
    m, n = Xs.shape[0], Xt.shape[0]
    eps = (np.sqrt(m) - 1.0) / np.sqrt(m) if cfg.epsilon is None else float(cfg.epsilon)
    sigma = resolve_bandwidth(Xs, Xt, cfg.kernel)
    kc = KernelConfig(sigma)
    K_ss = rbf_kernel(Xs, Xs, kc)
    kappa = rbf_kernel(Xs, Xt, kc).mean(axis=1)
    if cfg.step is None:
        lipschitz = 2.0 * _top_eigenvalue(K_ss, seed=cfg.seed) / (m * m)
        step = 1.0 / max(lipschitz, np.finfo(float).tiny)
    else:
        step = float(cfg.step)
    beta = project_feasible(np.ones(m), cfg.B, eps)
    obj = kmm_objective(beta, K_ss, kappa)
    trace = [obj]
    converged = False
    for _ in range(int(cfg.max_iters)):
        grad = (2.0 / (m * m)) * (K_ss @ beta) - (2.0 / m) * kappa
        t = step
        for _ in range(60):
            cand = project_feasible(beta - t * grad, cfg.B, eps)
            cand_obj = kmm_objective(cand, K_ss, kappa)
            if cand_obj <= obj:
                break
            t *= 0.5
        else:
            converged = True
            break
        decrease = obj - cand_obj
        beta, obj = cand, cand_obj
        trace.append(obj)
        if decrease <= cfg.tol * max(1.0, abs(obj)):
            converged = True
            break
    return KmmResult(beta, trace, converged, eps, float(cfg.B))


def resample_weighted(domain, beta, n_out, seed=0):
    """Draw ``n_out`` rows with replacement, row ``i`` with probability ``beta_i / sum(beta)``."""
    beta = check_vector(beta, name="beta", length=domain.n_samples)
    if np.any(beta < 0):
        raise DomainError("weights must be nonnegative")
    total = beta.sum()
    if not total > 0:
        raise DomainError("weights sum to zero")
    if int(n_out) != n_out or n_out < 1:
        raise DomainError("n_out must be a positive integer")
    idx = np.random.default_rng(seed).choice(domain.n_samples, size=int(n_out),
                                             replace=True, p=beta / total)
    labels = None if domain.labels is None else domain.labels[idx]
    return Domain(domain.features[idx], labels, domain.name)


# -- TCA -------------------------------------------------------------------------

@dataclass(frozen=True)
class TcaConfig:
    """``num_components=None`` means ``min(d, 20)``."""

    kernel: KernelConfig = field(default_factory=KernelConfig)
    num_components: int = None
    mu: float = 1.0
    max_iters: int = 10000
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError(f"mu must be positive, got {self.mu!r}")
        if self.num_components is not None and (
                int(self.num_components) != self.num_components or self.num_components < 1):
            raise DomainError("num_components must be a positive integer")


@dataclass(frozen=True, eq=False)
class TcaResult:
    components: np.ndarray
    eigenvalues: np.ndarray
    residuals: np.ndarray
    projected_source: np.ndarray
    projected_target: np.ndarray
    sigma: float


def mmd_matrix(m, n):
    """``L`` with ``1/m^2``, ``1/n^2`` and ``-1/(m n)`` blocks."""
    e = np.concatenate([np.full(m, 1.0 / m), np.full(n, -1.0 / n)])
    return np.outer(e, e)


def centering_matrix(N):
    return np.eye(N) - np.full((N, N), 1.0 / N)


class EigenSolveError(NumericError):
    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


def power_deflation_eigs(M, B, k, max_iters=10000, tol=1e-8, seed=0):
    """Top ``k`` eigenpairs of ``M = B^{-1} A`` with ``A`` PSD and ``B`` SPD.

    Power iteration with deflation.  Eigenvectors of such an ``M`` are
    ``B``-orthogonal, so after finding ``(lam, w)`` the matrix is deflated
    to ``M - lam w (B w)^T / (w^T B w)``, which zeroes that pair and keeps
    the others.

    Returns
    -------
    values : ndarray, shape (k,)
    vectors : ndarray, shape (N, k)
        Unit-norm columns.
    residuals : ndarray, shape (k,)
        ``||M w - lam w||`` against the original ``M``.
    """
    N = M.shape[0]
    rng = np.random.default_rng(seed)
    work = M.copy()
    values, vectors, residuals = [], [], []
    for j in range(k):
        w = rng.standard_normal(N)
        w /= np.linalg.norm(w)
        lam = 0.0
        res = np.inf
        for _ in range(max_iters):
            z = work @ w
            lam = float(w @ z)
            res = float(np.linalg.norm(z - lam * w))
            if res <= tol * max(1.0, abs(lam)):
                break
            norm = np.linalg.norm(z)
            if norm == 0:
                break
            w = z / norm
        true_res = float(np.linalg.norm(M @ w - lam * w))
        if res > tol * max(1.0, abs(lam)) and true_res > tol * max(1.0, abs(lam)):
            raise EigenSolveError(f"eigenpair {j} did not converge in {max_iters} iterations",
                                  true_res)
        Bw = B @ w
        work = work - lam * np.outer(w, Bw) / float(w @ Bw)
        values.append(lam)
        vectors.append(w)
        residuals.append(true_res)
    return np.array(values), np.column_stack(vectors), np.array(residuals)


def tca_fit_transform(Xs, Xt, cfg=None):
    """Transfer components of a source/target pair.

    Solves for the leading eigenvectors of ``(K L K + mu I)^{-1} K H K`` over
    the stacked kernel matrix and projects both domains with ``K W``.
    """
    cfg = TcaConfig() if cfg is None else cfg
    Xs = check_matrix(Xs, name="Xs")
    Xt = check_matrix(Xt, name="Xt", n_features=Xs.shape[1])
    m, n = Xs.shape[0], Xt.shape[0]
    N = m + n
    k = min(Xs.shape[1], 20) if cfg.num_components is None else int(cfg.num_components)
    if k > N:
        raise DimensionError(f"num_components={k} exceeds m + n = {N}")
    Z = np.vstack([Xs, Xt])
    sigma = resolve_bandwidth(Xs, Xt, cfg.kernel)
    K = rbf_kernel(Z, Z, KernelConfig(sigma))
    reg = K @ mmd_matrix(m, n) @ K + cfg.mu * np.eye(N)
    KHK = K @ centering_matrix(N) @ K
    M = np.linalg.solve(reg, KHK)
    vals, W, res = power_deflation_eigs(M, reg, k, cfg.max_iters, cfg.tol, cfg.seed)
    P = K @ W
    return TcaResult(W, vals, res, P[:m], P[m:], sigma)


def confidence_vote(scores):
    """Sign of the summed scores; magnitudes act as confidences, zero sum gives +1."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise DomainError("no scores to vote on")
    if not np.all(np.isfinite(s)):
        raise NumericError("scores must be finite")
    if s.ndim == 1:
        return 1 if float(np.sort(s).sum()) >= 0 else -1
    return sign_pm(np.sort(s, axis=1).sum(axis=1))


# -- estimators ------------------------------------------------------------------

class KernelMeanMatching(BaseEstimator):
    """Estimator wrapper around :func:`kmm_weights`; ``fit(Xs, Xt)`` sets ``weights_``."""

    def __init__(self, bandwidth="median", B=1000.0, epsilon=None, max_iters=1000,
                 random_state=0):
        self.bandwidth = bandwidth
        self.B = B
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.random_state = random_state

    def fit(self, Xs, Xt):
        cfg = KmmConfig(KernelConfig(self.bandwidth, self.random_state), self.B,
                        self.epsilon, self.max_iters, seed=self.random_state)
        self.result_ = kmm_weights(Xs, Xt, cfg)
        self.weights_ = self.result_.beta
        return self


class TransferComponentAnalysis(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`tca_fit_transform`.

    ``fit(Xs, Xt)`` learns the components; ``transform(X)`` embeds new rows
    through their kernel against the fitted stacked sample.
    """

    def __init__(self, n_components=None, mu=1.0, bandwidth="median", random_state=0):
        self.n_components = n_components
        self.mu = mu
        self.bandwidth = bandwidth
        self.random_state = random_state

    def fit(self, Xs, Xt):
        cfg = TcaConfig(KernelConfig(self.bandwidth, self.random_state),
                        self.n_components, self.mu, seed=self.random_state)
        self.result_ = tca_fit_transform(Xs, Xt, cfg)
        self.X_fit_ = np.vstack([check_matrix(Xs), check_matrix(Xt)])
        return self

    def transform(self, X):
        check_is_fitted(self, "result_")
        X = check_matrix(X, n_features=self.X_fit_.shape[1])
        K = rbf_kernel(X, self.X_fit_, KernelConfig(self.result_.sigma))
        return K @ self.result_.components


def _standardize(train, *others):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd == 0] = 1.0
    return [(a - mu) / sd for a in (train,) + others]


class _MultiSourceVote(ClassifierMixin, BaseEstimator):
    """Shared fit/predict for baselines that adapt each source separately."""

    def _net(self, seed):
        return NetClassifier(tuple(self.hidden_layer_sizes), learning_rate=self.learning_rate,
                             epochs=self.epochs, batch_size=self.batch_size,
                             l2_penalty=self.l2_penalty, random_state=seed)

    def fit(self, X, y, domains, X_target):
        X = check_matrix(X)
        y = check_labels(y, n_samples=X.shape[0])
        domains = np.asarray(domains)
        if domains.shape != (X.shape[0],):
            raise DimensionError("domains must give one id per row of X")
        Xt = check_matrix(X_target, name="X_target", n_features=X.shape[1])
        self.target_scores_ = np.column_stack([
            self._fit_source(Domain(X[domains == dom], y[domains == dom], str(dom)), Xt)
            for dom in np.unique(domains)])
        self.classes_ = np.array([-1.0, 1.0])
        return self

    def decision_function(self, X=None):
        """Summed per-source scores on the fitted target (transductive)."""
        check_is_fitted(self, "target_scores_")
        return np.sort(self.target_scores_, axis=1).sum(axis=1)

    def predict(self, X=None):
        return confidence_vote(self.target_scores_)


class KMMVoteClassifier(_MultiSourceVote):
    """Per-source KMM reweighting and resampling, then a net per source.

    Transductive: scores are computed for the ``X_target`` passed to ``fit``.
    """

    def __init__(self, hidden_layer_sizes=(10,), learning_rate=0.05, epochs=200,
                 batch_size=32, l2_penalty=1e-4, bandwidth="median", B=1000.0,
                 epsilon=None, max_iters=1000, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2_penalty = l2_penalty
        self.bandwidth = bandwidth
        self.B = B
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.random_state = random_state

    def _fit_source(self, src, Xt):
        seed = derive_seed(self.random_state, src.identifier, "kmm")
        cfg = KmmConfig(KernelConfig(self.bandwidth, seed), self.B, self.epsilon,
                        self.max_iters, seed=seed)
        beta = kmm_weights(src.features, Xt, cfg).beta
        sample = resample_weighted(src, beta, src.n_samples, seed=seed)
        net = self._net(seed).fit(sample.features, sample.labels)
        return net.decision_function(Xt)


class TCAVoteClassifier(_MultiSourceVote):
    """Per-source TCA embedding, then a net per source on the embedded source.

    Embedded features are standardized with the embedded source's statistics
    before training.  Transductive like :class:`KMMVoteClassifier`.
    """

    def __init__(self, hidden_layer_sizes=(10,), learning_rate=0.05, epochs=200,
                 batch_size=32, l2_penalty=1e-4, bandwidth="median", n_components=None,
                 mu=1.0, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2_penalty = l2_penalty
        self.bandwidth = bandwidth
        self.n_components = n_components
        self.mu = mu
        self.random_state = random_state

    def _fit_source(self, src, Xt):
        seed = derive_seed(self.random_state, src.identifier, "tca")
        res = tca_fit_transform(src.features, Xt,
                                TcaConfig(KernelConfig(self.bandwidth, seed),
                                          self.n_components, self.mu, seed=seed))
        Ps, Pt = _standardize(res.projected_source, res.projected_target)
        net = self._net(seed).fit(Ps, src.labels)
        return net.decision_function(Pt)
