import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from mixident.errors import DegenerateError, DomainError, SchemaError
from mixident.measures import (MixingMeasure, ParamPoint, composite_divergence_bound, cost_matrix,
                               ground_distance, point, transport, wasserstein, wasserstein_value)


def lp_transport(a, b, C):
    """Dense LP reference for the transportation problem."""
    m, n = C.shape
    A_eq = np.zeros((m + n, m * n))
    for i in range(m):
        A_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A_eq[m + j, j::n] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def random_measure(rng, k, d1=2, d2=1, extras=("e",), uniform=False):
    w = np.full(k, 1.0 / k) if uniform else rng.dirichlet(np.ones(k))
    pts = []
    for _ in range(k):
        A = rng.normal(size=(d2, d2))
        pts.append(ParamPoint(rng.normal(size=d1), A @ A.T + np.eye(d2), {e: rng.normal() for e in extras}))
    return MixingMeasure(w, pts, normalize=True)


@st.composite
def measures(draw, max_k=5):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    k = draw(st.integers(1, max_k))
    return random_measure(np.random.default_rng(seed), k)


def test_ground_distance_sums_blocks():
    p = point(loc=[0.0, 0.0], mat=[[1.0, 0.0], [0.0, 1.0]], a=1.0)
    q = point(loc=[3.0, 4.0], mat=[[2.0, 1.0], [1.0, 2.0]], a=-1.0)
    assert ground_distance(p, q) == pytest.approx(5.0 + 2.0 + 2.0)


def test_schema_mismatch_rejected():
    p = point(loc=[0.0])
    q = point(loc=[0.0, 1.0])
    with pytest.raises(SchemaError):
        ground_distance(p, q)


def test_measure_validation():
    p, q = point(loc=[0.0]), point(loc=[1.0])
    with pytest.raises(DomainError):
        MixingMeasure([0.5, 0.6], [p, q])
    with pytest.raises(DomainError):
        MixingMeasure([0.5, 0.5], [p, point(loc=[0.0])])
    with pytest.raises(DegenerateError):
        MixingMeasure([], [])
    G = MixingMeasure([2.0, 2.0], [p, q], normalize=True)
    assert list(G.weights) == [0.5, 0.5]


def test_json_round_trip(rng):
    G = random_measure(rng, 3)
    doc = json.loads(json.dumps(G.to_dict({"kind": "x"})))
    H = MixingMeasure.from_dict(doc)
    assert wasserstein_value(G, H, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert doc["family"] == {"kind": "x"}


def test_from_dict_rejects_bad_atoms():
    doc = {"schema": {"d1": 1, "d2": 0, "extras": []}, "atoms": [{"w": 1.0, "loc": [0.0, 1.0]}]}
    with pytest.raises(SchemaError):
        MixingMeasure.from_dict(doc)
    with pytest.raises(SchemaError):
        MixingMeasure.from_dict({"atoms": []})


def test_uniform_weights_match_permutation_brute_force(rng):
    for _ in range(40):
        k = int(rng.integers(1, 6))
        G, H = random_measure(rng, k, uniform=True), random_measure(rng, k, uniform=True)
        for r in (1.0, 2.0):
            C = cost_matrix(G, H, r)
            best = min(C[range(k), list(perm)].mean() for perm in itertools.permutations(range(k)))
            assert wasserstein_value(G, H, r) == pytest.approx(best ** (1 / r), abs=1e-9)


def test_general_weights_match_lp(rng):
    for _ in range(40):
        G, H = random_measure(rng, int(rng.integers(1, 6))), random_measure(rng, int(rng.integers(1, 6)))
        C = cost_matrix(G, H, 1.0)
        assert wasserstein_value(G, H, 1.0) == pytest.approx(lp_transport(G.weights, H.weights, C), abs=1e-9)


def test_transport_degenerate_instances():
    a = np.array([0.5, 0.5])
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    cost, q = transport(a, a, C)
    assert cost == 0.0
    np.testing.assert_allclose(q, np.diag(a))
    cost, q = transport([1.0], [0.25, 0.25, 0.5], np.array([[1.0, 2.0, 3.0]]))
    assert cost == pytest.approx(2.25)


def test_order_below_one_rejected(rng):
    G = random_measure(rng, 2)
    with pytest.raises(DomainError):
        wasserstein(G, G, 0.5)


@given(measures(), measures())
def test_plan_marginals_and_symmetry(G, H):
    val, plan = wasserstein(G, H, 2.0)
    plan.check()
    assert val >= 0
    assert wasserstein_value(H, G, 2.0) == pytest.approx(val, rel=1e-9, abs=1e-12)


@given(measures())
def test_self_distance_zero_and_permutation_invariant(G):
    assert wasserstein_value(G, G, 1.0) == pytest.approx(0.0, abs=1e-12)
    H = G.permuted(list(reversed(range(G.k))))
    assert wasserstein_value(G, H, 3.0) == pytest.approx(0.0, abs=1e-12)


@given(measures(4), measures(4), measures(4))
def test_triangle_inequality(F, G, H):
    for r in (1.0, 2.0):
        assert wasserstein_value(F, H, r) <= wasserstein_value(F, G, r) + wasserstein_value(G, H, r) + 1e-9


@given(measures(4), measures(4))
def test_order_monotone(G, H):
    w1, w2, w4 = (wasserstein_value(G, H, r) for r in (1.0, 2.0, 4.0))
    assert w1 <= w2 * (1 + 1e-9) + 1e-12
    assert w2 <= w4 * (1 + 1e-9) + 1e-12


def test_composite_bound_dominates_variational():
    from mixident.divergences import variational
    from mixident.families import GaussianLocCov

    fam = GaussianLocCov(1)
    G = MixingMeasure([0.3, 0.7], [fam.make([0.0], [[1.0]]), fam.make([2.0], [[0.5]])])
    H = MixingMeasure([0.5, 0.5], [fam.make([0.2], [[1.2]]), fam.make([1.5], [[0.5]])])
    assert variational(G, H, fam) <= composite_divergence_bound(G, H, fam) + 1e-9
