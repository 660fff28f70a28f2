import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mixident.polysys import (eval_system, eval_system_mp, find_nontrivial, gaussian_system,
                              homogeneity_residuals, is_nontrivial, pack, polish, skew_index_set,
                              skew_overfit_system, skew_system, skew_two_atom_solution, unpack)

KNOWN_R3 = {"c": [1, 1], "a": [1, -1], "b": [Fraction(-1, 2), Fraction(-1, 2)]}


def taylor_oracle(c, a, b, r):
    """Coefficients of x^1..x^r in sum_j c_j^2 exp(a_j x + b_j x^2), by truncated series products."""
    total = np.zeros(r + 1)
    for cj, aj, bj in zip(c, a, b):
        ea = np.array([aj ** n / math.factorial(n) for n in range(r + 1)])
        eb = np.zeros(r + 1)
        for n in range(r // 2 + 1):
            eb[2 * n] = bj ** n / math.factorial(n)
        total += cj ** 2 * np.convolve(ea, eb)[: r + 1]
    return total[1:]


def test_known_r3_solution_is_exact_root():
    assert eval_system(gaussian_system(2, 3), KNOWN_R3, exact=True) == [0, 0, 0]
    assert eval_system(gaussian_system(2, 4), KNOWN_R3, exact=True)[-1] != 0


@given(st.integers(1, 3), st.integers(1, 7), st.integers(0, 10 ** 6))
def test_gaussian_system_matches_series_oracle(s, r, seed):
    rng = np.random.default_rng(seed)
    vals = {n: rng.normal(size=s + 1).tolist() for n in ("c", "a", "b")}
    got = eval_system(gaussian_system(s + 1, r), vals)
    np.testing.assert_allclose(got, taylor_oracle(vals["c"], vals["a"], vals["b"], r), rtol=1e-12, atol=1e-12)


@given(st.floats(0.1, 3.0), st.integers(0, 1000))
def test_gaussian_homogeneity(lam, seed):
    rng = np.random.default_rng(seed)
    vals = {n: rng.normal(size=3).tolist() for n in ("c", "a", "b")}
    sys = gaussian_system(3, 5)
    scale = max(1.0, lam ** 5) * max(1.0, np.abs(eval_system(sys, vals)).max())
    assert np.abs(homogeneity_residuals(sys, vals, lam)).max() <= 1e-10 * scale * 10


def test_skew_index_set():
    assert skew_index_set(3) == [(0, 1), (1, 2), (0, 3), (2, 3)]
    for u, v in skew_index_set(6):
        assert (u % 2 == 1) if v % 2 == 0 else (u % 2 == 0)
        assert 0 <= u <= v


def test_skew_two_atom_closed_form():
    sol = skew_two_atom_solution(0.3, 0.7, 1.2)
    assert np.abs(eval_system(skew_system(1, 2), sol)).max() < 1e-15
    assert is_nontrivial(skew_system(1, 2), sol)
    assert np.abs(eval_system(skew_system(1, 3), sol)).max() > 1e-3


def test_pack_unpack_round_trip():
    sys = skew_system(2, 3)
    vals = {"a": [0.2, 0.3, 0.5], "b": [1.0, -0.5, 0.25], "c": [0.1, 0.2, 0.3]}
    assert unpack(sys, pack(sys, vals)) == vals


def test_trivial_points_rejected():
    sys = gaussian_system(2, 3)
    assert not is_nontrivial(sys, {"c": [1, 0], "a": [1, -1], "b": [0, 0]})
    assert not is_nontrivial(sys, {"c": [1, 1], "a": [0, 0], "b": [1, -1]})
    assert is_nontrivial(sys, KNOWN_R3)
    sk = skew_system(1, 2)
    assert not is_nontrivial(sk, {"a": [0.5, 0.5], "b": [1.0, 1.0], "c": [1.0, 0.0]})


def test_search_finds_and_rejects():
    found = find_nontrivial(gaussian_system(2, 3), budget=100, seed=1)
    assert found.found and found.residual < 1e-12
    assert is_nontrivial(gaussian_system(2, 3), found.solution, 1e-3)
    none = find_nontrivial(gaussian_system(2, 4), budget=100, seed=1)
    assert not none.found and none.residual > 1e-6
    assert none.to_dict()["evidence"] == "numerical evidence of insolvability"


def test_polish_reaches_working_precision():
    rep = find_nontrivial(gaussian_system(3, 5), budget=200, seed=0)
    assert rep.found
    vals, res = polish(gaussian_system(3, 5), rep.solution, dps=50)
    assert res < 1e-40
    import mpmath as mp

    with mp.workdps(50):
        assert max(abs(v) for v in eval_system_mp(gaussian_system(3, 5), vals)) < 1e-40


def test_skew_overfit_system_shape():
    sys = skew_overfit_system(1.0, 1.0)
    assert len(sys.equations) == 8 and sys.n_unknowns == 12
    with pytest.raises(ValueError):
        skew_overfit_system(0.0, 1.0)
