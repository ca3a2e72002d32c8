import numpy as np
import pytest

from vvcv import (ScalarSteinKernel, SharedSteinKernel, SquaredExponential, VvcvModel,
                  build_dataset, dataset_from_arrays, estimate_beta, estimate_split,
                  gaussian_sampler, gaussian_score, objective_iid, objective_mcmc,
                  objective_with_B, optimal_beta)
from vvcv.tasks import IntegrationTask, TaskSet

STD = gaussian_score(0.0, 1.0)


def small_problem(m0=6, m1=8, seed=0):
    samp = gaussian_sampler(0.0, 1.0)
    ts = TaskSet((
        IntegrationTask(lambda X: X[:, 0] ** 2, STD, samp, m0),
        IntegrationTask(lambda X: np.cos(X[:, 0]), STD, samp, m1),
    ))
    ds = build_dataset(ts, seed=seed)
    kernel = SharedSteinKernel(SquaredExponential(1.0), STD,
                               np.array([[0.8, 0.1], [0.1, 0.6]]))
    return ds, kernel


def model_with(ds, kernel, theta=None, beta=None, lam=1e-3):
    N, T = ds.N, kernel.T
    theta = np.zeros((N, T)) if theta is None else theta
    beta = np.zeros(T) if beta is None else beta
    return VvcvModel(kernel, ds.points, theta, beta, lam)


def test_predict_linearity_and_zero():
    ds, kernel = small_problem()
    rng = np.random.default_rng(1)
    th1 = rng.normal(size=(ds.N, 2))
    th2 = rng.normal(size=(ds.N, 2))
    m0 = model_with(ds, kernel)
    ma = model_with(ds, kernel, th1)
    mb = model_with(ds, kernel, th2)
    mab = model_with(ds, kernel, 2.0 * th1 - 3.0 * th2)
    X = rng.normal(size=(5, 1))
    np.testing.assert_array_equal(m0.predict(X), 0.0)
    np.testing.assert_allclose(mab.predict(X), 2 * ma.predict(X) - 3 * mb.predict(X),
                               atol=1e-12)
    np.testing.assert_allclose(model_with(ds, kernel, 2 * th1).predict(X),
                               2 * ma.predict(X), atol=1e-12)


def test_predict_single_anchor_scalar():
    X = np.array([[0.4]])
    ts = TaskSet((IntegrationTask(lambda Z: Z[:, 0], STD,
                                  gaussian_sampler(0.0, 1.0), 1),))
    ds = dataset_from_arrays(ts, [X], [X[:, 0]])
    sk = ScalarSteinKernel(SquaredExponential(1.0), STD)
    model = VvcvModel(sk, ds.points, np.array([[2.0]]), np.zeros(1))
    z = np.array([0.9])
    assert model.predict(z)[0] == pytest.approx(2.0 * sk.k0(z[None], X)[0, 0])


def test_objective_iid_collapses_to_variances():
    ds, kernel = small_problem()
    beta = ds.task_means()
    m = model_with(ds, kernel, beta=beta, lam=0.0)
    want = sum(np.mean((ds.values_of(t) - beta[t]) ** 2) for t in range(2))
    assert objective_iid(m, ds) == pytest.approx(want)


def test_objective_iid_hand_value():
    ts = TaskSet((IntegrationTask(lambda X: X[:, 0], STD,
                                  gaussian_sampler(0.0, 1.0), 2),))
    ds = dataset_from_arrays(ts, [np.array([[0.1], [0.2]])], [np.array([1.0, 3.0])])
    sk = ScalarSteinKernel(SquaredExponential(1.0), STD)
    m = VvcvModel(sk, ds.points, np.zeros((2, 1)), np.array([2.0]), 0.0)
    assert objective_iid(m, ds) == pytest.approx(1.0)


def test_objective_iid_perfect_fit_zero():
    ds, kernel = small_problem()
    rng = np.random.default_rng(2)
    theta = rng.normal(size=(ds.N, 2)) * 0.1
    m = model_with(ds, kernel, theta, lam=0.0)
    g = m.predict(ds.points)
    fitted = g[np.arange(ds.N), ds.task_of]
    vals = fitted.copy()  # define f := g + 0, beta = 0
    ds2 = dataset_from_arrays(ds.taskset, [ds.points_of(t) for t in range(2)],
                              [vals[ds.task_slice(t)] for t in range(2)])
    assert objective_iid(m, ds2) == pytest.approx(0.0, abs=1e-18)


def test_objective_ridge_norms():
    ds, kernel = small_problem()
    rng = np.random.default_rng(3)
    theta = rng.normal(size=(ds.N, 2)) * 0.05
    m = model_with(ds, kernel, theta, lam=0.1)
    base = objective_iid(m, ds, include_ridge=False)
    eu = objective_iid(m, ds, ridge_norm="euclidean")
    assert eu == pytest.approx(base + 0.1 * np.sum(theta ** 2))
    from vvcv import gram
    G = gram(kernel, ds.points)
    v = theta.reshape(-1)
    rk = objective_iid(m, ds, ridge_norm="rkhs")
    assert rk == pytest.approx(base + 0.1 * float(v @ G @ v))


def test_objective_midpoint_convexity():
    ds, kernel = small_problem()
    rng = np.random.default_rng(4)
    for _ in range(100):
        t1, b1 = rng.normal(size=(ds.N, 2)), rng.normal(size=2)
        t2, b2 = rng.normal(size=(ds.N, 2)), rng.normal(size=2)
        f1 = objective_iid(model_with(ds, kernel, t1, b1), ds)
        f2 = objective_iid(model_with(ds, kernel, t2, b2), ds)
        fm = objective_iid(model_with(ds, kernel, 0.5 * (t1 + t2), 0.5 * (b1 + b2)), ds)
        assert fm <= 0.5 * (f1 + f2) + 1e-10


def test_objective_mcmc_m2_hand_value():
    ts = TaskSet((IntegrationTask(lambda X: X[:, 0], STD,
                                  gaussian_sampler(0.0, 1.0), 2),))
    a, b = 1.0, 3.0
    ds = dataset_from_arrays(ts, [np.array([[0.1], [0.2]])], [np.array([a, b])])
    sk = ScalarSteinKernel(SquaredExponential(1.0), STD)
    m = VvcvModel(sk, ds.points, np.zeros((2, 1)), np.array([0.0]), 0.0)
    iid = objective_iid(m, ds)
    assert objective_mcmc(m, ds) == pytest.approx(iid - (a - b) ** 2 / 4.0)


def test_objective_mcmc_constant_residuals_no_correction():
    ts = TaskSet((IntegrationTask(lambda X: X[:, 0], STD,
                                  gaussian_sampler(0.0, 1.0), 5),))
    ds = dataset_from_arrays(ts, [np.linspace(-1, 1, 5)[:, None]], [np.full(5, 2.5)])
    sk = ScalarSteinKernel(SquaredExponential(1.0), STD)
    m = VvcvModel(sk, ds.points, np.zeros((5, 1)), np.array([0.0]), 0.0)
    assert objective_mcmc(m, ds) == pytest.approx(objective_iid(m, ds))


def test_objective_mcmc_permutation_invariant_identity():
    # The untruncated centred lag sum collapses to -(1/m) sum (r - rbar)^2,
    # identically for every chain ordering: permuting never changes it.
    rng = np.random.default_rng(5)
    m = 64
    X = rng.normal(size=(m, 1))
    f = rng.normal(size=m)
    ts = TaskSet((IntegrationTask(lambda Z: Z[:, 0], STD,
                                  gaussian_sampler(0.0, 1.0), m),))
    sk = ScalarSteinKernel(SquaredExponential(1.0), STD)
    vals = []
    for _ in range(20):
        perm = rng.permutation(m)
        ds = dataset_from_arrays(ts, [X[perm]], [f[perm]])
        model = VvcvModel(sk, ds.points, np.zeros((m, 1)), np.array([0.3]), 0.0)
        corr = objective_mcmc(model, ds) - objective_iid(model, ds)
        vals.append(corr)
    rc = f - f.mean()
    expected = -np.sum(rc ** 2) / m
    np.testing.assert_allclose(vals, expected, rtol=1e-10)


def test_objective_mcmc_needs_two_points():
    ts = TaskSet((IntegrationTask(lambda X: X[:, 0], STD,
                                  gaussian_sampler(0.0, 1.0), 1),))
    ds = dataset_from_arrays(ts, [np.array([[0.0]])], [np.array([1.0])])
    sk = ScalarSteinKernel(SquaredExponential(1.0), STD)
    m = VvcvModel(sk, ds.points, np.zeros((1, 1)), np.zeros(1), 0.0)
    with pytest.raises(ValueError, match="m_t >= 2"):
        objective_mcmc(m, ds)


def test_objective_with_B_penalty():
    ds, kernel = small_problem()
    m = model_with(ds, kernel, beta=ds.task_means(), lam=0.0)
    base = objective_iid(m, ds, ridge_norm="euclidean")
    got = objective_with_B(m, ds, B=np.eye(2))
    assert got == pytest.approx(base + 2.0)
    got4 = objective_with_B(m, ds, B=2.0 * np.eye(2))
    assert got4 - base == pytest.approx(4.0 * 2.0)


def test_optimal_beta_properties():
    ds, kernel = small_problem()
    rng = np.random.default_rng(6)
    theta = rng.normal(size=(ds.N, 2)) * 0.1
    m = model_with(ds, kernel, theta)
    beta = optimal_beta(m, ds)
    best = VvcvModel(kernel, ds.points, theta, beta, m.lam)
    obj = objective_iid(best, ds)
    for t in range(2):
        for eps in (1e-3, -1e-3):
            b2 = beta.copy()
            b2[t] += eps
            other = VvcvModel(kernel, ds.points, theta, b2, m.lam)
            assert objective_iid(other, ds) >= obj - 1e-15
    # theta = 0 gives the sample means
    z = model_with(ds, kernel)
    np.testing.assert_allclose(optimal_beta(z, ds), ds.task_means(), atol=1e-14)
    # T=1 hand value
    ts = TaskSet((IntegrationTask(lambda X: X[:, 0], STD,
                                  gaussian_sampler(0.0, 1.0), 2),))
    ds1 = dataset_from_arrays(ts, [np.array([[0.1], [0.2]])], [np.array([1.0, 3.0])])
    sk = ScalarSteinKernel(SquaredExponential(1.0), STD)
    m1 = VvcvModel(sk, ds1.points, np.zeros((2, 1)), np.zeros(1), 0.0)
    assert optimal_beta(m1, ds1)[0] == pytest.approx(2.0)


def test_estimate_split_plain_mc_and_exact_offset():
    ds, kernel = small_problem()
    m = model_with(ds, kernel)
    np.testing.assert_allclose(estimate_split(m, ds), ds.task_means(), atol=1e-14)
    # f = g + c exactly: estimator returns c with zero variance
    rng = np.random.default_rng(7)
    theta = rng.normal(size=(ds.N, 2)) * 0.1
    mm = model_with(ds, kernel, theta)
    g = mm.predict(ds.points)
    c = 1.7
    vals = [g[ds.task_slice(t), t][...] + c for t in range(2)]
    hold = dataset_from_arrays(ds.taskset, [ds.points_of(t) for t in range(2)], vals)
    np.testing.assert_allclose(estimate_split(mm, hold), c, atol=1e-12)


def test_estimate_beta_returns_beta():
    ds, kernel = small_problem()
    m = model_with(ds, kernel, beta=np.array([0.4, -0.2]))
    np.testing.assert_array_equal(estimate_beta(m), [0.4, -0.2])
    np.testing.assert_array_equal(estimate_beta(m), estimate_beta(m))
