import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize, special, stats

from mixident.errors import DomainError
from mixident.estimation import FitConfig, fit_gamma_mle, fit_gaussian_em, gamma_shape_solve
from mixident.experiments import gamma_g0, gaussian_mle_g0
from mixident.families import sample
from mixident.measures import wasserstein_value


@given(st.floats(1e-4, 50.0))
def test_shape_solve_matches_brentq(s):
    a = gamma_shape_solve(s, 1e-6, 1e7)
    ref = optimize.brentq(lambda t: math.log(t) - special.digamma(t) - s, 1e-6, 1e7, xtol=1e-300, rtol=1e-15)
    assert a == pytest.approx(ref, rel=1e-10)


def test_shape_solve_rejects_nonpositive():
    with pytest.raises(DomainError):
        gamma_shape_solve(0.0)


def test_single_gaussian_is_closed_form_mle(rng):
    X = rng.multivariate_normal([1.0, -2.0], [[2.0, 0.5], [0.5, 1.0]], size=500)
    res = fit_gaussian_em(X, FitConfig(k=1, restarts=2))
    p = res.G_hat.points[0]
    np.testing.assert_allclose(p.loc, X.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(p.mat, np.cov(X.T, bias=True), rtol=1e-10)


def test_single_gamma_matches_scipy_fit(rng):
    x = rng.gamma(3.0, 0.5, size=2000)
    res = fit_gamma_mle(x, FitConfig(k=1, restarts=1))
    a, _, scale = stats.gamma.fit(x, floc=0)
    assert res.G_hat.points[0].extras["a"] == pytest.approx(a, rel=1e-4)
    assert res.G_hat.points[0].extras["b"] == pytest.approx(1 / scale, rel=1e-4)


def test_gaussian_em_recovers_truth_and_is_monotone():
    fam, G0 = gaussian_mle_g0()
    X = sample(fam, G0, 6000, 11)
    res = fit_gaussian_em(X, FitConfig(k=3, restarts=4, seed=1))
    assert res.converged and res.monotone
    assert all(b >= a - 1e-9 * abs(a) for a, b in zip(res.trace, res.trace[1:]))
    assert wasserstein_value(res.G_hat, G0, 1.0) < 0.6
    assert res.loglik == max(v for v in res.all_logliks if v is not None)


def test_gamma_em_recovers_truth():
    fam, G0 = gamma_g0("generic")
    x = sample(fam, G0, 5000, 4)
    res = fit_gamma_mle(x, FitConfig(k=2, restarts=4, seed=2))
    assert res.monotone
    assert wasserstein_value(res.G_hat, G0, 1.0) < 1.0


def test_fit_is_permutation_invariant_and_seeded(rng):
    fam, G0 = gaussian_mle_g0()
    X = sample(fam, G0, 1500, 3)
    cfg = FitConfig(k=3, restarts=3, seed=9)
    a = fit_gaussian_em(X, cfg)
    b = fit_gaussian_em(X[rng.permutation(len(X))], cfg)
    assert a.loglik == b.loglik
    assert wasserstein_value(a.G_hat, b.G_hat, 1.0) == 0.0


def test_thread_count_does_not_change_the_fit():
    fam, G0 = gamma_g0("generic")
    x = sample(fam, G0, 1500, 5)
    a = fit_gamma_mle(x, FitConfig(k=2, restarts=3, seed=1, threads=1))
    b = fit_gamma_mle(x, FitConfig(k=2, restarts=3, seed=1, threads=2))
    assert a.to_dict() == b.to_dict()


def test_covariance_eigenvalues_clamped(rng):
    X = np.concatenate([rng.normal(0, 1e-4, size=(50, 1)), rng.normal(5, 1, size=(200, 1))])
    res = fit_gaussian_em(X, FitConfig(k=2, restarts=3, eig_lo=0.1))
    for p in res.G_hat.points:
        assert np.linalg.eigvalsh(p.mat).min() >= 0.1 ** 2 * (1 - 1e-12)


def test_bad_inputs():
    with pytest.raises(DomainError):
        fit_gamma_mle([1.0, -2.0, 3.0], FitConfig(k=1))
    with pytest.raises(DomainError):
        fit_gaussian_em(np.array([[np.nan]]), FitConfig(k=1))
    with pytest.raises(ValueError):
        FitConfig(k=0)
    with pytest.raises(ValueError):
        FitConfig(k=2, eig_lo=2.0, eig_hi=1.0)
