import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapeunfold import NumericError
from shapeunfold.baselines import (UnfoldEstimate, dagostini, dagostini_cv_curve, gaussian_intervals,
                                   iteration_grid, loo_cv_select, poisson_loglik, second_difference,
                                   svd_cv_curve, svd_cv_explicit, svd_unfold)

mpmath.mp.dps = 40


@pytest.fixture
def five_bin():
    rng = np.random.default_rng(11)
    K = np.eye(5) * 0.6 + rng.uniform(0.0, 0.15, (5, 5))
    lam_mc = np.array([120.0, 90.0, 70.0, 55.0, 40.0])
    y = rng.poisson(K @ lam_mc).astype(float)
    return K, y, lam_mc


def test_second_difference_reflexive():
    L = second_difference(4)
    assert np.array_equal(L, [[-1, 1, 0, 0], [1, -2, 1, 0], [0, 1, -2, 1], [0, 0, 1, -1]])
    assert np.allclose(L @ np.ones(4), 0)


def test_svd_unpenalized_square_is_inverse(five_bin):
    K, y, lam_mc = five_bin
    est = svd_unfold(y, K, lam_mc, 0.0)
    assert np.allclose(est.lam, np.linalg.solve(K, y), rtol=1e-10)


def test_svd_large_delta_limit():
    y = np.array([100.0, 80.0, 70.0, 45.0, 30.0, 28.0])
    lam_mc = np.array([90.0, 85.0, 60.0, 50.0, 35.0, 20.0])
    L = second_difference(6) / lam_mc[None, :]
    res = [np.linalg.norm(L @ svd_unfold(y, np.eye(6), lam_mc, d).lam) for d in (1e8, 1e10)]
    assert res[1] < res[0] < 1e-2
    assert res[1] == pytest.approx(res[0] / 100, rel=0.05)


def test_svd_matches_extended_precision(five_bin):
    K, y, lam_mc = five_bin
    delta = 3.7
    Km = mpmath.matrix(K.tolist())
    W = mpmath.diag([1 / mpmath.mpf(v) for v in y])
    Lt = mpmath.matrix((second_difference(5) / lam_mc[None, :]).tolist())
    G = Km.T * W * Km + delta * Lt.T * Lt
    rhs = Km.T * W * mpmath.matrix(y.tolist())
    ref = np.array([float(v) for v in mpmath.lu_solve(G, rhs)])
    assert np.allclose(svd_unfold(y, K, lam_mc, delta).lam, ref, rtol=1e-10, atol=0)


def test_svd_hat_and_covariance(five_bin, mc_response, jet_counts):
    K, y, lam_mc = five_bin
    for Kx, yx, lm in [(K, y, lam_mc), (*mc_response[:1], jet_counts.astype(float),
                                         mc_response[1])]:
        for delta in (1e-3, 1.0, 1e3):
            est = svd_unfold(yx, Kx, lm, delta)
            H = est.info["hat"]
            assert 0 < np.trace(H) <= yx.size + 1e-9
            h = np.diag(H)
            assert np.all(h >= -1e-12) and np.all(h < 1)
            cov = est.covariance
            assert np.allclose(cov, cov.T)
            ev = np.linalg.eigvalsh(cov)
            assert ev.min() >= -1e-8 * ev.max()


def test_cv_shortcut_equals_refits(five_bin):
    K, y, lam_mc = five_bin
    deltas = [1e-3, 0.1, 10.0, 1e3]
    short = svd_cv_curve(y, K, lam_mc, deltas)
    explicit = [svd_cv_explicit(y, K, lam_mc, d) for d in deltas]
    assert np.allclose(short, explicit, rtol=1e-8, atol=0)


def test_single_candidate_is_returned(five_bin):
    K, y, lam_mc = five_bin
    assert loo_cv_select("svd", y, K, lam_mc, [2.5])[0] == 2.5
    assert loo_cv_select("dagostini", y, K, lam_mc, [7])[0] == 7


def test_jet_svd_cv_has_interior_minimum(mc_response, jet_counts):
    K, lam_mc = mc_response
    choice, info = loo_cv_select("svd", jet_counts.astype(float), K, lam_mc)
    assert not info["at_lower_edge"] and not info["at_upper_edge"]
    assert info["candidates"][0] < choice < info["candidates"][-1]


def test_em_identity_one_step():
    y = np.array([3.0, 0.0, 17.0, 250.0])
    est = dagostini(y, np.eye(4), np.array([1.0, 5.0, 2.0, 9.0]), 1)
    assert np.array_equal(est.lam, y)


def test_em_loglik_nondecreasing(mc_response, jet_counts):
    K, lam_mc = mc_response
    est = dagostini(jet_counts.astype(float), K, lam_mc, 300, track_loglik=True)
    ll = est.info["loglik"]
    assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[:-1]))


def test_em_jacobian_matches_finite_differences(five_bin):
    K, y, lam_mc = five_bin
    T = 25
    J = dagostini(y, K, lam_mc, T).info["jacobian"]
    fd = np.empty_like(J)
    for i in range(y.size):
        h = 1e-3 * y[i]
        up, dn = y.copy(), y.copy()
        up[i] += h
        dn[i] -= h
        fd[:, i] = (dagostini(up, K, lam_mc, T).lam - dagostini(dn, K, lam_mc, T).lam) / (2 * h)
    assert np.allclose(J, fd, rtol=1e-4, atol=1e-4 * np.abs(fd).max())


def test_em_gradient_shrinks(five_bin):
    K, y, lam_mc = five_bin

    def grad(lam):
        return K.T @ (y / (K @ lam)) - K.sum(axis=0)

    norms = [np.linalg.norm(grad(dagostini(y, K, lam_mc, T).lam)) for T in (10, 100, 1000)]
    assert norms[0] > norms[1] > norms[2]


def test_em_cv_batched_matches_refits(five_bin):
    K, y, lam_mc = five_bin
    T = 12
    curve = dagostini_cv_curve(y, K, lam_mc, T)
    total = 0.0
    for i in range(5):
        keep = np.arange(5) != i
        lam = dagostini(y[keep], K[keep], lam_mc, T).lam
        total += (y[i] - K[i] @ lam) ** 2 / max(y[i], 1)
    assert curve[T - 1] == pytest.approx(total, rel=1e-10)


def test_iteration_grid():
    g = iteration_grid()
    assert g[0] == 1 and g[-1] == 20_000 and np.all(np.diff(g) > 0)
    assert np.array_equal(g[:200], np.arange(1, 201))


def _est(lam, var):
    return UnfoldEstimate(np.atleast_1d(lam).astype(float), np.diag(np.atleast_1d(var)), "svd", 0.0)


def test_gaussian_interval_examples():
    lo, hi = gaussian_intervals(_est(10.0, 4.0), 0.05, bonferroni=False)
    assert lo[0] == pytest.approx(10 - 1.959964 * 2, abs=1e-6)
    assert hi[0] == pytest.approx(10 + 1.959964 * 2, abs=1e-6)
    lo, hi = gaussian_intervals(_est(3.0, 0.0))
    assert lo[0] == hi[0] == 3.0


def test_bonferroni_quantile_against_mpmath():
    est = _est(np.zeros(30), np.ones(30))
    _, hi = gaussian_intervals(est, 0.05, bonferroni=True)
    z = -mpmath.sqrt(2) * mpmath.erfinv(mpmath.mpf(0.05) / 60 * 2 - 1)
    assert hi[0] == pytest.approx(float(z), rel=1e-12)


def test_negative_variance_rejected():
    with pytest.raises(NumericError):
        gaussian_intervals(_est(1.0, -1.0))


@settings(max_examples=40, deadline=None)
@given(a1=st.floats(1e-4, 0.5), a2=st.floats(1e-4, 0.5), var=st.floats(0.01, 1e4))
def test_width_scales_with_quantile(a1, a2, var):
    from scipy.stats import norm
    w1 = np.diff(gaussian_intervals(_est(5.0, var), a1, False), axis=0)[0, 0]
    w2 = np.diff(gaussian_intervals(_est(5.0, var), a2, False), axis=0)[0, 0]
    assert w1 / w2 == pytest.approx(norm.isf(a1 / 2) / norm.isf(a2 / 2), rel=1e-12)


def test_poisson_loglik_zero_counts():
    assert poisson_loglik(np.array([0.0, 2.0]), np.array([1.0, 2.0])) == pytest.approx(
        2 * np.log(2) - 3)
