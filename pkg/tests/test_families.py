import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from mixident.errors import BoundaryError, DomainError, SchemaError
from mixident.families import (GammaShapeRate, GaussianLocCov, GeneralizedGaussian, GeneralizedGumbel,
                               GeneralizedLogistic, LocationExponential, SkewNormal, StudentT, VonMises,
                               Weibull, family_from_json, mixture_pdf, sample, skew_closed_forms,
                               verify_identity_gamma, verify_identity_gaussian, verify_identity_skew)
from mixident.measures import MixingMeasure

ONE_D = [
    (GaussianLocCov(1), dict(loc=[0.3], mat=[[0.7]])),
    (GeneralizedGaussian(1), dict(loc=[0.0], mat=[[1.5]], m=2.5)),
    (GeneralizedGaussian(1, convention="usual"), dict(loc=[0.0], mat=[[1.5]], m=1.0)),
    (StudentT(1, 3), dict(loc=[1.0], mat=[[2.0]])),
    (GammaShapeRate(), dict(a=3.0, b=2.0)),
    (LocationExponential(), dict(loc=[1.0], sigma=0.5)),
    (SkewNormal(), dict(loc=[0.0], mat=[[2.0]], m=-1.5)),
    (GeneralizedLogistic(2, 3), dict(loc=[0.5], sigma=1.3)),
    (GeneralizedGumbel(), dict(loc=[0.0], sigma=0.8, lam=2.5)),
    (Weibull(), dict(nu=1.7, lam=2.0)),
    (VonMises(), dict(loc=[1.0], kappa=3.0)),
]


def _make(fam, kw):
    kw = dict(kw)
    return fam.make(kw.pop("loc", ()), kw.pop("mat", ()), **kw)


@pytest.mark.parametrize("fam,kw", ONE_D, ids=[f.kind for f, _ in ONE_D])
def test_densities_integrate_to_one(fam, kw):
    p = _make(fam, kw)
    lo, hi = fam.box(p, 1e-12)
    f = lambda x: float(fam.pdf(p, np.array([[x]]))[0])
    total = sum(integrate.quad(f, a, b, limit=200)[0]
                for a, b in zip(np.linspace(lo[0], hi[0], 9)[:-1], np.linspace(lo[0], hi[0], 9)[1:]))
    assert total == pytest.approx(1.0, abs=1e-7)


def test_densities_match_scipy():
    x = np.linspace(0.05, 6, 40)
    cases = [
        (GaussianLocCov(1), dict(loc=[0.3], mat=[[0.7]]), stats.norm(0.3, math.sqrt(0.7))),
        (StudentT(1, 5), dict(loc=[1.0], mat=[[2.0]]), stats.t(5, 1.0, math.sqrt(2.0))),
        (GammaShapeRate(), dict(a=3.0, b=2.0), stats.gamma(3.0, scale=0.5)),
        (SkewNormal(), dict(loc=[1.0], mat=[[2.0]], m=-1.5), stats.skewnorm(-1.5, 1.0, math.sqrt(2.0))),
        (Weibull(), dict(nu=1.7, lam=2.0), stats.weibull_min(1.7, scale=2.0)),
        (VonMises(), dict(loc=[1.0], kappa=3.0), stats.vonmises(3.0, loc=1.0)),
    ]
    for fam, kw, ref in cases:
        np.testing.assert_allclose(fam.pdf(_make(fam, kw), x), ref.pdf(x), rtol=1e-10, err_msg=fam.kind)


def test_multivariate_gaussian_and_t_match_scipy(rng):
    S = np.array([[2.0, 0.3], [0.3, 0.5]])
    X = rng.normal(size=(20, 2))
    g = GaussianLocCov(2)
    np.testing.assert_allclose(g.pdf(g.make([0.1, -0.2], S), X),
                               stats.multivariate_normal([0.1, -0.2], S).pdf(X), rtol=1e-12)
    t = StudentT(2, 3)
    np.testing.assert_allclose(t.pdf(t.make([0.1, -0.2], S), X),
                               stats.multivariate_t([0.1, -0.2], S, df=3).pdf(X), rtol=1e-10)


@pytest.mark.parametrize("fam,kw", [c for c in ONE_D if c[0].kind not in ("von_mises",)],
                         ids=[f.kind for f, _ in ONE_D if f.kind != "von_mises"])
def test_derivatives_agree_with_finite_differences(fam, kw):
    p = _make(fam, kw)
    c, s = fam.center_spread(p)
    x = c[0] + s[0] * np.array([-1.1, -0.3, 0.4, 1.7])
    x = x[fam.in_support(p, x.reshape(-1, 1)) & ~fam.on_boundary(p, x.reshape(-1, 1))]
    a = fam.derivatives(p, x, order=2)
    n = fam.numeric_derivatives(p, x, order=2)
    np.testing.assert_allclose(a.grad, n.grad, rtol=1e-5, atol=1e-7 * np.abs(a.f).max())
    np.testing.assert_allclose(a.hess, n.hess, rtol=1e-3, atol=1e-5 * np.abs(a.f).max())


def test_boundary_derivative_raises():
    fam = LocationExponential()
    with pytest.raises(BoundaryError):
        fam.derivatives(fam.make([1.0], sigma=1.0), [1.0])


def test_domain_and_schema_checks():
    with pytest.raises(DomainError):
        GammaShapeRate().make(a=-1.0, b=1.0)
    with pytest.raises(SchemaError):
        GammaShapeRate().make(a=1.0)
    with pytest.raises(DomainError):
        StudentT(1, 4)
    with pytest.raises(SchemaError):
        family_from_json({"kind": "nope"})
    assert family_from_json({"kind": "student_t", "d": 2, "nu": 5}).to_json() == {"kind": "student_t", "d": 2,
                                                                                    "nu": 5}


def _mp_gauss(theta, v, x):
    return mp.exp(-(x - theta) ** 2 / (2 * v)) / mp.sqrt(2 * mp.pi * v)


def test_gaussian_heat_identity_against_mp_differentiation():
    mp.mp.dps = 30
    theta, v = mp.mpf("0.4"), mp.mpf("1.7")
    for x in (mp.mpf(-2), mp.mpf("0.3"), mp.mpf(3)):
        d2t = mp.diff(lambda t: _mp_gauss(t, v, x), theta, 2)
        dv = mp.diff(lambda s: _mp_gauss(theta, s, x), v)
        assert abs(d2t - 2 * dv) < mp.mpf(10) ** -20


def test_gamma_rate_identity_against_mp_differentiation():
    mp.mp.dps = 30
    f = lambda x, a, b: b ** a * x ** (a - 1) * mp.exp(-b * x) / mp.gamma(a)
    a, b = mp.mpf("2.5"), mp.mpf("1.5")
    for x in (mp.mpf("0.2"), mp.mpf(1), mp.mpf(4)):
        lhs = mp.diff(lambda s: f(x, a, s), b)
        assert abs(lhs - (a / b) * (f(x, a, b) - f(x, a + 1, b))) < mp.mpf(10) ** -20


def test_skew_closed_forms_against_mp_differentiation():
    mp.mp.dps = 30

    def f(x, th, v, m):
        z = (x - th) / mp.sqrt(v)
        return 2 / mp.sqrt(v) * mp.npdf(z) * mp.ncdf(m * z)

    th, v, m = 0.3, 1.4, -0.8
    xs = np.array([-1.5, 0.1, 2.2])
    f_tt, f_v, f_m = skew_closed_forms(th, v, m, xs)
    for i, x in enumerate(xs):
        X, T, Vv, Mm = (mp.mpf(float(u)) for u in (x, th, v, m))
        assert float(mp.diff(lambda t: f(X, t, Vv, Mm), T, 2)) == pytest.approx(f_tt[i], rel=1e-12)
        assert float(mp.diff(lambda s: f(X, T, s, Mm), Vv)) == pytest.approx(f_v[i], rel=1e-12)
        assert float(mp.diff(lambda s: f(X, T, Vv, s), Mm)) == pytest.approx(f_m[i], rel=1e-12)


@given(st.floats(-3, 3), st.floats(0.2, 5), st.floats(-3, 3))
def test_skew_identity_holds(theta, v, m):
    x = theta + math.sqrt(v) * np.linspace(-4, 4, 25)
    f_tt, _, _ = skew_closed_forms(theta, v, m, x)
    assert verify_identity_skew(theta, v, m, x) <= 1e-10 * max(np.abs(f_tt).max(), 1e-300)


@given(st.floats(0.2, 20), st.floats(0.1, 10))
def test_gamma_identity_holds(a, b):
    x = np.linspace(0.01, 3, 25) * a / b
    fam = GammaShapeRate()
    scale = np.abs(fam.pdf(fam.make(a=a, b=b), x)).max() * a / b
    assert verify_identity_gamma(a, b, x) <= 1e-10 * scale


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.3, 3))
def test_gaussian_identity_holds(t1, t2, s):
    fam = GaussianLocCov(2)
    p = fam.make([t1, t2], [[s, 0.1], [0.1, 1.0]])
    x = np.array([t1, t2]) + np.random.default_rng(0).normal(size=(25, 2))
    scale = np.abs(fam.derivatives(p, x, order=2).d2_theta).max()
    assert verify_identity_gaussian(p, x) <= 1e-10 * scale


def test_sampling_matches_mixture_moments():
    fam = GammaShapeRate()
    G = MixingMeasure([0.3, 0.7], [fam.make(a=2.0, b=1.0), fam.make(a=5.0, b=2.0)])
    X = sample(fam, G, 200_000, 7)
    assert X.mean() == pytest.approx(0.3 * 2.0 + 0.7 * 2.5, rel=1e-2)
    np.testing.assert_array_equal(X, sample(fam, G, 200_000, 7))


def test_mixture_pdf_is_weighted_sum():
    fam = SkewNormal()
    p, q = fam.make([0.0], [[1.0]], m=1.0), fam.make([1.0], [[2.0]], m=-2.0)
    G = MixingMeasure([0.25, 0.75], [p, q])
    x = np.linspace(-3, 3, 11)
    np.testing.assert_allclose(mixture_pdf(fam, G, x), 0.25 * fam.pdf(p, x) + 0.75 * fam.pdf(q, x), rtol=1e-13)
