import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forestagb import _kernels
from forestagb.errors import InvalidParams, NotConverged, RankDeficient, SchemaMismatch, TooManyRows
from forestagb.learners import (
    GbmParams,
    RfParams,
    SvrParams,
    fit_gbm,
    fit_ols,
    fit_rf,
    fit_svr,
    load_model,
    model_from_json,
    save_model,
)
from forestagb.learners.gbm import apply_bins, bin_uppers
from forestagb.learners.svr import dual_objective, laplacian_kernel
from forestagb.reference import TrainingTable

from .conftest import make_table

# ---------------------------------------------------------------------------
# independent oracles


def qp_oracle(K, y, C, eps, iters=5000):
    """Accelerated projected gradient on the 2n-variable epsilon-SVR dual.

    minimize 0.5 a'Qa + p'a  s.t. z'a = 0, 0 <= a <= C, with
    Q = [[K, -K], [-K, K]], p = [eps - y, eps + y], z = [1, -1].
    The projection finds the multiplier of z'a = 0 exactly: the
    constraint value is piecewise linear in it, with kinks where a
    coordinate hits 0 or C.
    """
    n = y.shape[0]
    Q = np.block([[K, -K], [-K, K]])
    p = np.concatenate([eps - y, eps + y])
    z = np.concatenate([np.ones(n), -np.ones(n)])
    L = np.linalg.eigvalsh(Q).max()

    def project(v):
        phi = lambda lam: z @ np.clip(v - lam * z, 0, C)  # noqa: E731
        knots = np.unique(np.concatenate([v * z, (v - C) * z]))
        vals = np.array([phi(k) for k in knots])
        if vals[0] <= 0:  # phi is non-increasing; flat below the first knot
            return np.clip(v - knots[0] * z, 0, C)
        k = int(np.flatnonzero(vals <= 0)[0])
        l0, l1, f0, f1 = knots[k - 1], knots[k], vals[k - 1], vals[k]
        lam = l1 if f0 == f1 else l0 + (l1 - l0) * f0 / (f0 - f1)
        return np.clip(v - lam * z, 0, C)

    a = np.zeros(2 * n)
    w, t = a.copy(), 1.0
    for _ in range(iters):
        a_new = project(w - (Q @ w + p) / L)
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        w = a_new + (t - 1) / t_new * (a_new - a)
        a, t = a_new, t_new
    return a[:n] - a[n:]


def kkt_residual(K, y, beta, C, eps):
    """Maximal violating-pair gap, recomputed from beta alone."""
    n = y.shape[0]
    a = np.concatenate([np.maximum(beta, 0), np.maximum(-beta, 0)])
    z = np.concatenate([np.ones(n), -np.ones(n)])
    Kb = K @ beta
    G = np.concatenate([Kb + eps - y, -Kb + eps + y])
    up = np.where(z > 0, a < C, a > 0)
    low = np.where(z > 0, a > 0, a < C)
    zg = z * G
    return np.max(-zg[up], initial=-np.inf) + np.max(zg[low], initial=-np.inf)


# ---------------------------------------------------------------------------
# random forest


def test_rf_memorizes_unique_rows():
    rng = np.random.default_rng(0)
    X = rng.permutation(10)[:, None].astype(float) + rng.normal(0, 0.01, (10, 1))
    X = np.column_stack([X, rng.normal(size=(10, 2))])
    t = TrainingTable.from_arrays(X, rng.uniform(0, 300, 10))
    m = fit_rf(t, RfParams(num_trees=25, mtry=3, min_node_size=1, replace=False, seed=5))
    kern = _kernels.backend
    for root in m.roots:
        tree = kern.predict_packed(t.X, m.feature, m.threshold, m.left, m.right, m.value,
                                   np.array([root]), np.zeros(t.n))
        assert np.array_equal(tree, t.y)
    # the forest mean of identical leaves can differ from y only by rounding of sum / T
    np.testing.assert_allclose(m.predict(t), t.y, rtol=4e-16 * 25, atol=0)
    one = fit_rf(t, RfParams(num_trees=1, mtry=3, min_node_size=1, replace=False, seed=5))
    assert np.array_equal(one.predict(t), t.y)


def test_rf_deterministic_and_thread_independent(table):
    p = RfParams(num_trees=12, seed=3)
    a = fit_rf(table, p).predict(table)
    b = fit_rf(table, p, n_jobs=4).predict(table)
    assert np.array_equal(a, b)
    c = fit_rf(table, RfParams(num_trees=12, seed=4)).predict(table)
    assert not np.array_equal(a, c)


def test_rf_fits_signal(table):
    m = fit_rf(table, RfParams(num_trees=50, min_node_size=2, seed=1))
    r = table.y - m.predict(table)
    assert np.sqrt(np.mean(r ** 2)) < 0.5 * table.y.std()


def test_rf_param_validation(table):
    with pytest.raises(InvalidParams):
        fit_rf(table, RfParams(mtry=9))
    with pytest.raises(InvalidParams):
        fit_rf(table, RfParams(sample_fraction=0.0))


# ---------------------------------------------------------------------------
# gradient boosting


def _bins_oracle(x, max_bins, mdb):
    """Equal-frequency bins written as a plain scan over sorted values."""
    xs = sorted(x.tolist())
    n = len(xs)
    target = max(mdb, -(-n // max_bins))
    distinct = sorted(set(xs))
    uppers, acc = [], 0
    for i, v in enumerate(distinct[:-1]):
        acc += xs.count(v)
        if acc >= target:
            mid = (v + distinct[i + 1]) / 2
            uppers.append(mid if mid < distinct[i + 1] else v)
            acc = 0
    if uppers and acc + xs.count(distinct[-1]) < mdb:
        uppers.pop()
    return uppers[: max_bins - 1]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=120), st.integers(2, 20), st.integers(1, 6))
def test_bin_uppers_matches_oracle(vals, max_bins, mdb):
    x = np.array(vals, dtype=float) / 4
    u = bin_uppers(x, max_bins, mdb)
    assert u.tolist() == _bins_oracle(x, max_bins, mdb)
    b = apply_bins(x[:, None], [u])[:, 0]
    # each bin holds exactly the values in (upper[b-1], upper[b]]
    for k in range(u.size + 1):
        sel = x[b == k]
        if k > 0:
            assert (sel > u[k - 1]).all()
        if k < u.size:
            assert (sel <= u[k]).all()


def test_gbm_training_loss_monotone():
    t = make_table(300, 5, seed=2, noise=3.0)
    m = fit_gbm(t, GbmParams(num_rounds=200, num_leaves=15, min_data_in_leaf=5, learning_rate=0.1))
    loss = np.array(m.meta["train_loss"])
    assert loss.size == 201
    assert (np.diff(loss) <= 0).all()
    assert loss[-1] < 0.1 * loss[0]


def test_gbm_init_score_is_mean(table):
    m = fit_gbm(table, GbmParams(num_rounds=0))
    assert np.allclose(m.predict(table), math.fsum(table.y.tolist()) / table.n)


def test_gbm_stochastic_options_reproducible(table):
    p = GbmParams(num_rounds=30, num_leaves=7, min_data_in_leaf=4, bagging_fraction=0.6, bagging_freq=2,
                  feature_fraction=0.5, extra_trees=True, l1=0.2, l2=0.3, max_depth=3, seed=8)
    assert np.array_equal(fit_gbm(table, p).predict(table), fit_gbm(table, p).predict(table))


def test_gbm_max_depth_limits_leaves(table):
    m = fit_gbm(table, GbmParams(num_rounds=3, num_leaves=31, max_depth=2, min_data_in_leaf=2))
    n_leaves = int((m.feature < 0).sum())
    assert n_leaves <= 3 * 4


# ---------------------------------------------------------------------------
# support vector regression


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10_000), st.floats(0.2, 5.0), st.floats(0.01, 0.3))
def test_smo_matches_qp_oracle(n, seed, C, eps):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = rng.normal(size=n)
    K = laplacian_kernel(X, X, 0.7)
    tol = 1e-3
    beta, b, it, gap = _kernels.backend.smo_solve(K, y, C, eps, tol, 100000)
    ref = qp_oracle(K, y, C, eps)
    f_smo, f_ref = dual_objective(K, y, beta, eps), dual_objective(K, y, ref, eps)
    assert abs(f_smo - f_ref) <= 1e-4 * max(abs(f_ref), 1e-12) + 1e-12
    assert kkt_residual(K, y, beta, C, eps) < tol
    assert abs(beta.sum()) < 1e-9 and (np.abs(beta) <= C + 1e-12).all()


def test_svr_single_point_returns_response():
    t = TrainingTable.from_arrays([[1.0, 2.0]], [42.0])
    m = fit_svr(t, SvrParams())
    assert m.predict(t)[0] == pytest.approx(42.0)


def test_svr_unscaled_interpolates_with_large_c():
    t = make_table(20, 2, seed=4)
    m = fit_svr(t, SvrParams(sigma=1.0, c=1e4, epsilon=0.0, scale=False, tolerance=1e-8))
    assert np.allclose(m.predict(t), t.y, atol=1e-3)


def test_svr_caps_and_convergence(table):
    with pytest.raises(TooManyRows):
        fit_svr(table, SvrParams(), row_cap=10)
    with pytest.raises(NotConverged) as ei:
        fit_svr(table, SvrParams(c=100.0, epsilon=0.0, max_iterations=3))
    assert ei.value.best is not None


def test_svr_rows_independent_of_batch(table):
    m = fit_svr(table, SvrParams(sigma=0.3))
    full = m.predict(table)
    one = np.array([m.predict(table.X[i:i + 1])[0] for i in range(table.n)])
    assert np.array_equal(full, one)


# ---------------------------------------------------------------------------
# OLS


def test_ols_matches_lstsq():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 3))
    y = 2 + X @ [1.0, -3.0, 0.5] + rng.normal(0, 0.1, 50)
    m = fit_ols(X, y)
    ref, *_ = np.linalg.lstsq(np.column_stack([np.ones(50), X]), y, rcond=None)
    np.testing.assert_allclose(m.beta, ref, rtol=1e-10)


def test_ols_rank_deficiency_index():
    rng = np.random.default_rng(2)
    x = rng.normal(size=30)
    with pytest.raises(RankDeficient) as ei:
        fit_ols(np.column_stack([x, 2 * x]), rng.normal(size=30))
    assert ei.value.column == 2
    with pytest.raises(RankDeficient) as ei:
        fit_ols(np.column_stack([x, np.full(30, 4.0)]), rng.normal(size=30))
    assert ei.value.column == 2


# ---------------------------------------------------------------------------
# serialization


@pytest.mark.parametrize("kind", ["rf", "gbm", "svr", "ols"])
def test_json_roundtrip_predicts_identically(kind, table, tmp_path):
    if kind == "rf":
        m = fit_rf(table, RfParams(num_trees=5))
    elif kind == "gbm":
        m = fit_gbm(table, GbmParams(num_rounds=10, min_data_in_leaf=5))
    elif kind == "svr":
        m = fit_svr(table, SvrParams())
    else:
        m = fit_ols(table.X, table.y, table.feature_names)
    path = save_model(m, tmp_path / f"{kind}.json")
    back = load_model(path)
    assert back.kind == kind
    assert np.array_equal(back.predict(table), m.predict(table))
    doc = json.loads(path.read_text())
    assert doc["format"] == "forestagb-model" and doc["schema_hash"] == table.schema_hash


def test_schema_mismatch_on_predict(table):
    m = fit_rf(table, RfParams(num_trees=3))
    other = TrainingTable.from_arrays(table.X, table.y, ["a", "b", "c", "d"])
    with pytest.raises(SchemaMismatch):
        m.predict(other)
    with pytest.raises(SchemaMismatch):
        m.predict(table.X[:, :2])
    doc = m.to_json()
    doc["schema_hash"] = "0" * 16
    with pytest.raises(SchemaMismatch):
        model_from_json(doc)
