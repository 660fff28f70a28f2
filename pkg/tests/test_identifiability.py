import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mixident.errors import DomainError, SchemaError
from mixident.experiments import classifier_presets, gamma_g0, skew_g0
from mixident.families import (GammaShapeRate, GaussianLocCov, GeneralizedGaussian, SkewNormal, StudentT,
                               Weibull)
from mixident.identifiability import (gamma_classify, jacobian_transfer, modified_jacobian, rank_probe,
                                      skew_classify)
from mixident.measures import MixingMeasure


def student_points():
    fam = StudentT(2, 3)
    return fam, [fam.make([0.0, 0.0], [[1.0, 0.2], [0.2, 1.5]]), fam.make([2.0, -1.0], [[2.0, 0.0], [0.0, 1.0]])]


def test_student_t_second_order_independent():
    fam, pts = student_points()
    assert rank_probe(fam, pts, order=2, seed=1).verdict == "independent"


def test_generalized_gaussian_first_order_independent():
    fam = GeneralizedGaussian(1)
    pts = [fam.make([0.0], [[1.0]], m=2.0), fam.make([1.5], [[0.5]], m=3.0)]
    assert rank_probe(fam, pts, order=1, seed=1).verdict == "independent"


def test_gaussian_first_order_independent_second_order_dependent():
    fam = GaussianLocCov(2)
    pts = [fam.make([0.0, 0.0], np.eye(2)), fam.make([1.0, 2.0], [[2.0, 0.5], [0.5, 1.0]])]
    assert rank_probe(fam, pts, order=1, seed=2).verdict == "independent"
    res = rank_probe(fam, pts, order=2, seed=2)
    assert res.verdict == "dependent"
    assert res.structure == "rank-one"
    assert res.pattern_cosine > 0.999


def test_gamma_pathological_pair_is_dependent():
    fam = GammaShapeRate()
    assert rank_probe(fam, [fam.make(a=3.0, b=2.0), fam.make(a=4.0, b=2.0)], order=1).verdict == "dependent"
    assert rank_probe(fam, [fam.make(a=3.0, b=2.0), fam.make(a=4.5, b=2.0)], order=1).verdict == "independent"


def test_skew_normal_dependencies():
    fam = SkewNormal()
    gauss = [fam.make([0.0], [[1.0]], m=0.0), fam.make([2.0], [[2.0]], m=1.0)]
    assert rank_probe(fam, gauss, order=1).verdict == "dependent"
    # cousins: same location and same v / (1 + m^2)
    cousins = [fam.make([0.0], [[2.0]], m=1.0), fam.make([0.0], [[5.0]], m=2.0)]
    assert rank_probe(fam, cousins, order=1).verdict == "dependent"
    generic = [fam.make([0.0], [[1.0]], m=1.0), fam.make([2.0], [[2.0]], m=-2.0)]
    assert rank_probe(fam, generic, order=1).verdict == "independent"


def test_probe_is_deterministic_and_validates():
    fam, pts = student_points()
    a = rank_probe(fam, pts, order=1, seed=5)
    b = rank_probe(fam, pts, order=1, seed=5)
    assert a.ratio == b.ratio
    with pytest.raises(DomainError):
        rank_probe(fam, [pts[0], pts[0]], order=1)
    with pytest.raises(DomainError):
        rank_probe(fam, pts, order=3)
    with pytest.raises(DomainError):
        rank_probe(fam, pts, order=1, N=4)


def test_weibull_first_order_independent():
    fam = Weibull()
    pts = [fam.make(nu=1.5, lam=1.0), fam.make(nu=3.0, lam=2.0)]
    assert rank_probe(fam, pts, order=1).verdict == "independent"


def test_classifier_presets():
    for name, (G0, setting, label) in classifier_presets().items():
        got = gamma_classify(G0, setting).verdict if setting else skew_classify(G0).condition
        assert got == label, name


def test_gamma_over_fitted_gap_two():
    fam = GammaShapeRate()
    G0 = MixingMeasure([0.5, 0.5], [fam.make(a=3.0, b=1.0), fam.make(a=5.0, b=1.0)])
    assert gamma_classify(G0, "exact").verdict == "Generic"
    assert gamma_classify(G0, "over").verdict == "Pathological"
    with pytest.raises(DomainError):
        gamma_classify(G0, "bogus")
    with pytest.raises(SchemaError):
        skew_classify(G0)


def test_skew_taxonomy_details():
    _, G = skew_g0("nonconformant")
    tax = skew_classify(G)
    assert tax.cousin_sets == [[], [2], [1]]
    assert tax.conformant == [None, False, False]
    assert tax.k_star == 1
    assert tax.side_condition is True
    doc = tax.to_dict()
    assert {"condition", "cousin_sets", "conformant"} <= set(doc)


def test_skew_standing_assumption_violation_gives_other():
    fam = SkewNormal()
    G = MixingMeasure([0.5, 0.5], [fam.make([0.0], [[1.0]], m=1.0), fam.make([3.0], [[1.0]], m=2.0)])
    assert skew_classify(G).condition == "Other"


@given(st.permutations(range(3)))
def test_classifiers_permutation_invariant(order):
    for case in ("generic", "conformant", "nonconformant"):
        _, G = skew_g0(case)
        assert skew_classify(G.permuted(list(order))).condition == skew_classify(G).condition
    _, G = gamma_g0("pathological")
    assert gamma_classify(G.permuted([1, 0])).verdict == "Pathological"


def test_jacobian_transfer_on_affine_and_degenerate_maps():
    def affine(eta, Lam):
        return 2 * eta + 1, 3 * Lam

    rep = jacobian_transfer(affine, [(np.array([0.5]), np.array([[2.0]]))])
    assert rep.nonsingular == [True]
    J = modified_jacobian(affine, [0.5], [[2.0]])
    np.testing.assert_allclose(J, np.diag([2.0, 3.0]), atol=1e-9)

    def collapse(eta, Lam):
        return eta + Lam.reshape(-1)[:1], 0 * Lam + eta[0] + Lam

    assert jacobian_transfer(collapse, [(np.array([1.0]), np.array([[1.0]]))]).nonsingular == [False]
