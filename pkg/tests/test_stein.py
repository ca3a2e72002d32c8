import numpy as np
import pytest

from vvcv import (Polynomial, PolynomialSteinKernel, ScalarSteinKernel,
                  SecondOrderSteinKernel, SeparableSteinKernel, SharedSteinKernel,
                  SquaredExponential, TaskCovariance, build_dataset, gaussian_sampler,
                  gaussian_score, gram, integrability_diagnostic, product_se)
from vvcv.tasks import IntegrationTask, TaskSet

from .oracles import brute_matrix_stein

STD = gaussian_score(0.0, 1.0)
WIDE = gaussian_score(0.0, 1.25)


def variants_t2(base="se"):
    k = SquaredExponential(1.0) if base == "se" else Polynomial(c=1.0, l=1)
    B = np.array([[0.8, 0.15], [0.15, 0.6]])
    out = [
        ("general", SeparableSteinKernel(k, (STD, WIDE), B)),
        ("shared", SharedSteinKernel(k, STD, B)),
    ]
    if base == "se":
        out.append(("second", SecondOrderSteinKernel(k, (STD, WIDE), B)))
    else:
        out.append(("poly1", PolynomialSteinKernel((STD, WIDE), B, c=1.0, l=1, order=1)))
        out.append(("poly2", PolynomialSteinKernel((STD, WIDE), B, c=1.0, l=2, order=1)))
        out.append(("poly-so", PolynomialSteinKernel((STD, WIDE), B, c=1.0, l=1, order=2)))
        out.append(("poly-so2", PolynomialSteinKernel((STD, WIDE), B, c=1.0, l=2, order=2)))
    return out


# -- task covariance ----------------------------------------------------------


def test_task_covariance_round_trip():
    B = np.array([[2.0, 0.3, -0.1], [0.3, 1.5, 0.2], [-0.1, 0.2, 0.9]])
    cov = TaskCovariance(B)
    back = TaskCovariance.from_free(cov.free, 3)
    np.testing.assert_allclose(back.matrix, B, atol=1e-10)
    np.testing.assert_allclose(cov.chol @ cov.chol.T, B, atol=1e-12)


def test_task_covariance_rejects_bad_matrices():
    with pytest.raises(ValueError):
        TaskCovariance(np.array([[1.0, 0.5], [0.0, 1.0]]))  # not symmetric
    with pytest.raises(np.linalg.LinAlgError):
        TaskCovariance(np.array([[1.0, 2.0], [2.0, 1.0]]))  # not SPD


def test_free_parameterisation_always_spd():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.normal(scale=2.0, size=6)
        cov = TaskCovariance.from_free(v, 3)
        np.linalg.cholesky(cov.matrix)
        np.testing.assert_allclose(cov.free, v, atol=1e-9)


# -- scalar kernel unit values -------------------------------------------------


def test_k0_scalar_spec_points():
    se = ScalarSteinKernel(SquaredExponential(1.0), STD)
    assert se.k0([[0.0]], [[0.0]])[0, 0] == pytest.approx(1.0)
    # at coincident score-zero points only div survives
    x = np.array([[0.0, 0.0]])
    se2 = ScalarSteinKernel(SquaredExponential(0.7), gaussian_score([0, 0], [1, 1]))
    assert se2.k0(x, x)[0, 0] == pytest.approx(
        SquaredExponential(0.7).div_xy(x, x)[0, 0])


def test_k0_scalar_polynomial_hand_value():
    # k = x*y, scores -x: k0 = 1 - x^2 - y^2 + x^2 y^2, so k0(1, 2) = 0.
    # (Verified against the zero-mean identity: E_x[k0(x, y)] = 1 - 1 - y^2 + y^2.)
    pk = ScalarSteinKernel(Polynomial(c=0.0, l=1), STD)
    assert pk.k0([[1.0]], [[2.0]])[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert pk.k0([[0.5]], [[2.0]])[0, 0] == pytest.approx(
        1 - 0.25 - 4 + 0.25 * 4, abs=1e-12)


def test_score_error_propagates_with_point():
    from vvcv import ScoreFn
    bad = ScoreFn(dim=1, fn=lambda X: np.where(X > 1.5, np.inf, -X))
    sk = ScalarSteinKernel(SquaredExponential(1.0), bad)
    with pytest.raises(ValueError, match="non-finite"):
        sk.k0(np.array([[2.0]]), np.array([[0.0]]))


# -- matrix variants -----------------------------------------------------------


def test_first_order_reduces_to_scalar():
    se = SquaredExponential(1.0)
    scalar = ScalarSteinKernel(se, STD)
    mat = SeparableSteinKernel(se, (STD,), [[1.0]])
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(4, 1)), rng.normal(size=(3, 1))
    np.testing.assert_allclose(mat(X, Y)[:, :, 0, 0], scalar.k0(X, Y), atol=1e-12)


def test_identity_B_same_target_gives_diagonal():
    se = SquaredExponential(1.0)
    k = SeparableSteinKernel(se, (STD, STD), np.eye(2))
    t = k(np.array([[0.3]]), np.array([[-0.2]]))[0, 0]
    assert t[0, 1] == 0.0 and t[1, 0] == 0.0
    assert t[0, 0] == pytest.approx(t[1, 1])


def test_general_first_order_matches_brute_force():
    se = SquaredExponential(1.0)
    B = np.array([[0.8, 0.15], [0.15, 0.6]])
    scores = [gaussian_score([0, 0], [1, 1]), gaussian_score([0, 0], [1.25, 1.25])]
    k = SeparableSteinKernel(se, scores, B)
    rng = np.random.default_rng(2)
    for _ in range(5):
        x, y = rng.normal(size=2), rng.normal(size=2)
        got = k(x[None, :], y[None, :])[0, 0]
        want = brute_matrix_stein(
            lambda a, b: float(se.value(a[None], b[None])[0, 0]),
            scores, B, x, y)
        np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-6)


def test_shared_target_equals_general_with_equal_scores():
    se = SquaredExponential(0.9)
    B = np.array([[0.5, 0.01], [0.01, 0.5]])
    sh = SharedSteinKernel(se, STD, B)
    gen = SeparableSteinKernel(se, (STD, STD), B)
    rng = np.random.default_rng(3)
    X, Y = rng.normal(size=(4, 1)), rng.normal(size=(5, 1))
    np.testing.assert_allclose(sh(X, Y), gen(X, Y), atol=1e-12)


def test_shared_target_spec_value():
    B = np.array([[0.5, 0.01], [0.01, 0.5]])
    sh = SharedSteinKernel(SquaredExponential(1.0), STD, B)
    np.testing.assert_allclose(sh([[0.0]], [[0.0]])[0, 0], B, atol=1e-14)


def test_second_order_spec_values():
    so = SecondOrderSteinKernel(SquaredExponential(1.0), (STD,), [[1.0]])
    assert so([[0.0]], [[0.0]])[0, 0, 0, 0] == pytest.approx(3.0)
    B = np.diag([0.7, 0.4])
    so2 = SecondOrderSteinKernel(SquaredExponential(1.0), (STD, WIDE), B)
    t = so2(np.array([[0.4]]), np.array([[-0.1]]))[0, 0]
    assert t[0, 1] == 0.0 and t[1, 0] == 0.0


def test_second_order_rejects_preconditioned():
    from vvcv import PreconditionedSE
    with pytest.raises(ValueError):
        SecondOrderSteinKernel(PreconditionedSE(1.0, 0.1), (STD,), [[1.0]])


def test_polynomial_closed_form_matches_generic():
    B = np.array([[0.8, 0.15], [0.15, 0.6]])
    rng = np.random.default_rng(4)
    for l in (1, 2):
        closed = PolynomialSteinKernel((STD, WIDE), B, c=0.7, l=l, order=1)
        generic = SeparableSteinKernel(Polynomial(c=0.7, l=l), (STD, WIDE), B)
        closed2 = PolynomialSteinKernel((STD, WIDE), B, c=0.7, l=l, order=2)
        generic2 = SecondOrderSteinKernel(Polynomial(c=0.7, l=l), (STD, WIDE), B)
        for _ in range(50):
            x = rng.normal(size=(1, 1))
            y = rng.normal(size=(1, 1))
            np.testing.assert_allclose(closed(x, y), generic(x, y),
                                       rtol=1e-10, atol=1e-10)
            np.testing.assert_allclose(closed2(x, y), generic2(x, y),
                                       rtol=1e-10, atol=1e-10)
        Xd = rng.normal(size=(3, 4))
        Yd = rng.normal(size=(2, 4))
        std4 = gaussian_score(np.zeros(4), np.ones(4))
        wide4 = gaussian_score(np.zeros(4), np.full(4, 1.25))
        c4 = PolynomialSteinKernel((std4, wide4), B, c=0.7, l=l, order=1)
        g4 = SeparableSteinKernel(Polynomial(c=0.7, l=l), (std4, wide4), B)
        np.testing.assert_allclose(c4(Xd, Yd), g4(Xd, Yd), rtol=1e-10, atol=1e-10)


def test_polynomial_closed_form_hand_value():
    # order=1, l=1, d=1, c=0, B=[1]: 1 + s(y)y + s(x)x + s(x)s(y)(xy)
    pk = PolynomialSteinKernel((STD,), [[1.0]], c=0.0, l=1, order=1)
    got = pk([[1.0]], [[1.0]])[0, 0, 0, 0]
    assert got == pytest.approx(1 + (-1) * 1 + (-1) * 1 + (-1) * (-1) * 1)


def test_polynomial_order2_zero_scores_give_zero():
    pk = PolynomialSteinKernel((STD, STD), np.eye(2), c=1.0, l=1, order=2)
    np.testing.assert_allclose(pk([[0.0]], [[0.0]])[0, 0], 0.0, atol=1e-15)


def test_polynomial_closed_form_rejects_bad_args():
    with pytest.raises(ValueError):
        PolynomialSteinKernel((STD,), [[1.0]], l=3)
    with pytest.raises(ValueError):
        PolynomialSteinKernel((STD,), [[1.0]], order=3)


# -- global invariants over every variant --------------------------------------


def all_variants():
    return variants_t2("se") + variants_t2("poly")


def test_swap_symmetry_every_variant():
    rng = np.random.default_rng(5)
    for name, k in all_variants():
        X, Y = rng.normal(size=(4, 1)), rng.normal(size=(3, 1))
        lhs = k(X, Y)
        rhs = k(Y, X)
        err = np.max(np.abs(lhs - rhs.transpose(1, 0, 3, 2)))
        assert err < 1e-10, name


def test_block_gram_psd_every_variant():
    rng = np.random.default_rng(6)
    for name, k in all_variants():
        X = rng.normal(size=(20, 1))
        G = gram(k, X)
        w = np.linalg.eigvalsh(G)
        assert w.min() >= -1e-8 * np.trace(G), name


def test_linearity_in_B():
    rng = np.random.default_rng(7)
    B1 = np.array([[0.8, 0.15], [0.15, 0.6]])
    B2 = np.array([[0.3, -0.05], [-0.05, 0.4]])
    X, Y = rng.normal(size=(3, 1)), rng.normal(size=(2, 1))
    for name, k in all_variants():
        k1, k2, k12 = k.with_B(B1), k.with_B(B2), k.with_B(B1 + B2)
        np.testing.assert_allclose(k12(X, Y), k1(X, Y) + k2(X, Y),
                                   atol=1e-12, err_msg=name)


def test_stein_zero_mean_smoke():
    # cheap version of the acceptance gate: one variant, moderate n
    rng = np.random.default_rng(8)
    n = 20000
    k = SeparableSteinKernel(SquaredExponential(1.0), (STD, WIDE),
                             np.array([[0.8, 0.15], [0.15, 0.6]]))
    samples = [rng.standard_normal((n, 1)), np.sqrt(1.25) * rng.standard_normal((n, 1))]
    y = np.array([[0.37]])
    tens = [k(samples[t], y) for t in range(2)]
    for t in range(2):
        for u in range(2):
            vals = tens[t][:, 0, t, u]
            se = vals.std(ddof=1) / np.sqrt(n)
            assert abs(vals.mean()) < 5.0 * se, (t, u)


def test_gram_layout_and_symmetry():
    k = SharedSteinKernel(SquaredExponential(1.0), STD, np.eye(2))
    X = np.array([[0.1], [0.5], [-0.3]])
    G = gram(k, X)
    assert G.shape == (6, 6)
    np.testing.assert_allclose(G, G.T, atol=1e-12)
    scalar = ScalarSteinKernel(SquaredExponential(1.0), STD)
    K0 = scalar.k0(X, X)
    # B = I: blocks are k0 * I, interleaved point-major
    np.testing.assert_allclose(G[0::2, 0::2], 0.5 * (K0 + K0.T), atol=1e-12)
    np.testing.assert_allclose(G[0::2, 1::2], 0.0, atol=1e-15)


def test_gram_single_point_t1():
    scalar = ScalarSteinKernel(SquaredExponential(1.0), STD)
    G = gram(scalar, np.array([[0.0]]))
    assert G.shape == (1, 1) and G[0, 0] == pytest.approx(1.0)


def test_gram_kronecker_structure_shared_target():
    B = np.array([[0.5, 0.2], [0.2, 0.9]])
    k = SharedSteinKernel(SquaredExponential(1.0), STD, B)
    X = np.array([[0.1], [0.5], [-0.3]])
    G = gram(k, X)
    K0 = ScalarSteinKernel(SquaredExponential(1.0), STD).k0(X, X)
    np.testing.assert_allclose(G, np.kron(0.5 * (K0 + K0.T), B), atol=1e-12)


def test_integrability_diagnostic():
    score = gaussian_score(0.0, 1.0)
    ts = TaskSet((IntegrationTask(lambda X: X[:, 0], score,
                                  gaussian_sampler(0.0, 1.0), 1000),))
    ds = build_dataset(ts, seed=0)
    k = ScalarSteinKernel(SquaredExponential(1.0), score)
    rep = integrability_diagnostic(k, ds)
    assert len(rep.rows) == 1
    assert rep.rows[0].mean_sq_score == pytest.approx(1.0, abs=0.2)
    assert not rep.rows[0].heavy_tail

    from vvcv import ScoreFn
    zero = ScoreFn(dim=1, fn=lambda X: np.zeros_like(X))
    ts0 = TaskSet((IntegrationTask(lambda X: X[:, 0], zero,
                                   gaussian_sampler(0.0, 1.0), 50),))
    ds0 = build_dataset(ts0, seed=0)
    rep0 = integrability_diagnostic(ScalarSteinKernel(SquaredExponential(1.0), zero), ds0)
    assert rep0.rows[0].mean_sq_score == 0.0


def test_integrability_diagnostic_heavy_tail_warns():
    from vvcv import ScoreFn
    # one huge score dominates the second moment
    spiky = ScoreFn(dim=1, fn=lambda X: np.where(np.abs(X) > 2.5, 1e6, 1e-8))
    score = spiky
    ts = TaskSet((IntegrationTask(lambda X: X[:, 0], score,
                                  gaussian_sampler(0.0, 1.0), 400),))
    ds = build_dataset(ts, seed=1)
    rep = integrability_diagnostic(ScalarSteinKernel(SquaredExponential(1.0), score), ds)
    assert rep.rows[0].heavy_tail and rep.warnings


def test_reduction_chain_t1_polynomial():
    # closed form == generic(poly base) == scalar k0, all at T=1, B=[1]
    closed = PolynomialSteinKernel((STD,), [[1.0]], c=0.7, l=2, order=1)
    generic = SeparableSteinKernel(Polynomial(c=0.7, l=2), (STD,), [[1.0]])
    scalar = ScalarSteinKernel(Polynomial(c=0.7, l=2), STD)
    rng = np.random.default_rng(9)
    X, Y = rng.normal(size=(5, 1)), rng.normal(size=(4, 1))
    k0 = scalar.k0(X, Y)
    np.testing.assert_allclose(closed(X, Y)[:, :, 0, 0], k0, atol=1e-10)
    np.testing.assert_allclose(generic(X, Y)[:, :, 0, 0], k0, atol=1e-10)
