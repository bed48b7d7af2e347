import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from almda.alm import Domain
from almda.baselines import (KernelConfig, KernelMeanMatching, KmmConfig, KMMVoteClassifier,
                             TcaConfig, TCAVoteClassifier, TransferComponentAnalysis,
                             centering_matrix, confidence_vote, kmm_objective, kmm_weights,
                             mean_embedding_gap, median_bandwidth, mmd_matrix,
                             project_feasible, rbf_kernel, resample_weighted,
                             tca_fit_transform)
from almda.exceptions import DimensionError, DomainError, NumericError


# -- kernel ----------------------------------------------------------------------

def test_rbf_unit_diagonal():
    A = np.random.default_rng(0).normal(size=(12, 4))
    assert np.all(np.diag(rbf_kernel(A, A, KernelConfig(0.7))) == 1.0)


def test_rbf_closed_form():
    K = rbf_kernel([[0.0, 0.0]], [[1.0, 1.0]], KernelConfig(1.0))
    assert abs(K[0, 0] - math.exp(-1)) < 1e-15
    assert abs(K[0, 0] - 0.367879) < 1e-6


def test_rbf_symmetric_psd():
    A = np.random.default_rng(1).normal(size=(10, 3))
    K = rbf_kernel(A, A)
    assert np.array_equal(K, K.T) or np.abs(K - K.T).max() < 1e-15
    assert np.linalg.eigvalsh(K).min() >= -1e-8


def test_rbf_bandwidth_errors():
    with pytest.raises(DomainError):
        KernelConfig(0.0)
    with pytest.raises(DomainError):
        KernelConfig(-1.0)


def test_median_heuristic_matches_brute_force():
    rng = np.random.default_rng(2)
    A, B = rng.normal(size=(20, 3)), rng.normal(size=(15, 3)) + 1
    Z = np.vstack([A, B])
    dists = [np.linalg.norm(Z[i] - Z[j]) for i in range(len(Z)) for j in range(i + 1, len(Z))]
    assert abs(median_bandwidth(A, B) - np.median(dists)) < 1e-12


def test_median_heuristic_sampling_is_seeded():
    A = np.random.default_rng(3).normal(size=(200, 2))
    assert median_bandwidth(A, seed=5) == median_bandwidth(A, seed=5)


# -- KMM -------------------------------------------------------------------------

def _feasible(beta, B, eps):
    return bool(np.all(beta >= 0) and np.all(beta <= B) and abs(beta.mean() - 1) <= eps + 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.9), st.floats(1.0, 5.0))
def test_projection_is_feasible(seed, eps, B):
    v = np.random.default_rng(seed).normal(scale=3.0, size=30)
    assert _feasible(project_feasible(v, B, eps), B, eps)


def test_projection_is_nearest_point():
    rng = np.random.default_rng(4)
    v = rng.normal(scale=3.0, size=8)
    p = project_feasible(v, 2.0, 0.1)
    # no random feasible point is closer to v
    for _ in range(2000):
        q = project_feasible(rng.uniform(0, 2, size=8), 2.0, 0.1)
        assert np.sum((v - p) ** 2) <= np.sum((v - q) ** 2) + 1e-12


def test_kmm_identical_sets_keep_unit_weights():
    X = np.random.default_rng(5).normal(size=(60, 2))
    res = kmm_weights(X, X)
    assert np.mean(np.abs(res.beta - 1)) < 0.05
    K = rbf_kernel(X, X, KernelConfig(median_bandwidth(X, X)))
    kappa = K.mean(axis=1)
    # beta = 1 is the optimum: no random feasible beta does better
    rng = np.random.default_rng(6)
    base = kmm_objective(np.ones(60), K, kappa)
    for _ in range(1000):
        beta = project_feasible(rng.uniform(0, 3, size=60), res.B, res.epsilon)
        assert base <= kmm_objective(beta, K, kappa) + 1e-12


def test_kmm_prefers_matching_cluster():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(40, 2)) + [3, 0]
    b = rng.normal(size=(40, 2)) - [3, 0]
    res = kmm_weights(np.vstack([a, b]), rng.normal(size=(50, 2)) + [3, 0], KmmConfig(B=10.0))
    assert res.beta[:40].mean() > res.beta[40:].mean()
    assert res.objective_trace[-1] < res.objective_trace[0]


def test_kmm_properties_over_instances():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        Xs = rng.normal(size=(30, 2))
        Xt = rng.normal(size=(25, 2)) * 0.7 + rng.normal(size=2)
        res = kmm_weights(Xs, Xt, KmmConfig(B=5.0, max_iters=300))
        assert _feasible(res.beta, 5.0, res.epsilon)
        assert np.all(np.diff(res.objective_trace) <= 0)
        sigma = median_bandwidth(Xs, Xt)
        kc = KernelConfig(sigma)
        blocks = rbf_kernel(Xs, Xs, kc), rbf_kernel(Xs, Xt, kc), rbf_kernel(Xt, Xt, kc)
        assert mean_embedding_gap(res.beta, *blocks) <= mean_embedding_gap(np.ones(30), *blocks)


def test_kmm_config_validation():
    with pytest.raises(DomainError):
        KmmConfig(B=0.5)
    with pytest.raises(DomainError):
        KmmConfig(epsilon=1.0)


# -- resampling ------------------------------------------------------------------

def _ten_points():
    return Domain(np.arange(20, dtype=float).reshape(10, 2), np.where(np.arange(10) % 2, 1.0, -1.0))


def test_uniform_resampling_frequencies():
    out = resample_weighted(_ten_points(), np.ones(10), 10000, seed=0)
    counts = np.array([np.sum(out.features[:, 0] == 2 * i) for i in range(10)])
    se = math.sqrt(0.1 * 0.9 / 10000)
    assert np.all(np.abs(counts / 10000 - 0.1) <= 3 * se)


def test_one_hot_resampling():
    beta = np.zeros(10)
    beta[0] = 1
    out = resample_weighted(_ten_points(), beta, 50, seed=1)
    assert np.all(out.features == [0.0, 1.0]) and np.all(out.labels == -1)


def test_resampling_is_seeded_and_validated():
    dom = _ten_points()
    a = resample_weighted(dom, np.arange(10) + 1.0, 30, seed=3)
    b = resample_weighted(dom, np.arange(10) + 1.0, 30, seed=3)
    assert np.array_equal(a.features, b.features)
    with pytest.raises(DomainError):
        resample_weighted(dom, np.zeros(10), 5)


# -- TCA -------------------------------------------------------------------------

def test_centering_identities():
    H = centering_matrix(30)
    assert np.abs(H @ np.ones(30)).max() < 1e-12
    assert np.abs(H @ H - H).max() < 1e-12


def test_mmd_matrix_sums_to_zero():
    L = mmd_matrix(15, 15)
    assert abs(np.ones(30) @ L @ np.ones(30)) < 1e-12
    assert abs(L[:15, :15].sum() - 1) < 1e-12 and abs(L[15:, 15:].sum() - 1) < 1e-12
    assert abs(L[:15, 15:].sum() + 1) < 1e-12


def test_tca_eigenpairs_against_dense_oracle():
    rng = np.random.default_rng(8)
    Xs, Xt = rng.normal(size=(15, 3)), rng.normal(size=(15, 3)) + 0.5
    res = tca_fit_transform(Xs, Xt, TcaConfig(num_components=3))
    Z = np.vstack([Xs, Xt])
    K = rbf_kernel(Z, Z, KernelConfig(res.sigma))
    A = K @ centering_matrix(30) @ K
    Bm = K @ mmd_matrix(15, 15) @ K + np.eye(30)
    M = np.linalg.inv(Bm) @ A
    for lam, w in zip(res.eigenvalues, res.components.T):
        assert np.linalg.norm(M @ w - lam * w) <= 1e-6
    oracle = scipy.linalg.eigh(A, Bm, eigvals_only=True)[::-1][:3]
    assert np.allclose(res.eigenvalues, oracle, rtol=1e-6)
    assert res.projected_source.shape == (15, 3) and res.projected_target.shape == (15, 3)
    assert np.linalg.matrix_rank(res.components) == 3


def test_tca_default_components_and_limit():
    rng = np.random.default_rng(9)
    res = tca_fit_transform(rng.normal(size=(20, 4)), rng.normal(size=(10, 4)))
    assert res.components.shape == (30, 4)
    with pytest.raises(DimensionError):
        tca_fit_transform(rng.normal(size=(3, 2)), rng.normal(size=(2, 2)),
                          TcaConfig(num_components=6))


def test_tca_reports_nonconvergence():
    rng = np.random.default_rng(10)
    with pytest.raises(NumericError, match="residual"):
        tca_fit_transform(rng.normal(size=(15, 3)), rng.normal(size=(15, 3)),
                          TcaConfig(num_components=3, max_iters=1, tol=1e-14))


# -- voting ----------------------------------------------------------------------

@pytest.mark.parametrize("scores, expected", [([0.9, -0.1, -0.1], 1), ([-0.9, 0.2, 0.2], -1),
                                              ([0.3, -0.3], 1)])
def test_confidence_vote(scores, expected):
    assert confidence_vote(scores) == expected
    assert confidence_vote(2 * np.array(scores)) == expected


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=8), st.floats(0.01, 100), st.randoms())
def test_vote_invariances(scores, scale, rnd):
    base = confidence_vote(scores)
    shuffled = list(scores)
    rnd.shuffle(shuffled)
    assert confidence_vote(shuffled) == base
    if abs(sum(scores)) > 1e-9:
        assert confidence_vote([scale * s for s in scores]) == base


def test_vote_errors():
    with pytest.raises(DomainError):
        confidence_vote([])
    with pytest.raises(NumericError):
        confidence_vote([np.nan])


# -- estimators ------------------------------------------------------------------

def _two_sources(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(120, 2))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    groups = np.repeat(["a", "b"], 60)
    X[60:] += 0.5
    Xt = rng.normal(size=(50, 2)) + 0.25
    return X, y, groups, Xt, np.where(Xt[:, 0] > 0.25, 1.0, -1.0)


def test_kmm_and_tca_transformers():
    X, _, _, Xt, _ = _two_sources()
    kmm = KernelMeanMatching(B=10.0).fit(X, Xt)
    assert kmm.weights_.shape == (120,)
    tca = TransferComponentAnalysis(n_components=2).fit(X[:60], Xt)
    emb = tca.transform(Xt)
    assert np.allclose(emb, tca.result_.projected_target)


@pytest.mark.parametrize("cls", [KMMVoteClassifier, TCAVoteClassifier])
def test_vote_classifiers_fit(cls):
    X, y, groups, Xt, yt = _two_sources(1)
    clf = cls(hidden_layer_sizes=(3,), epochs=30).fit(X, y, groups, Xt)
    pred = clf.predict()
    assert pred.shape == (50,)
    assert np.mean(pred == yt) > 0.7
