"""Polynomial systems that govern the sharp exponents r-bar and s-bar.

Every system here has the shape

    E_alpha = sum_i omega_i * sum_terms coef * x_i^e1 * y_i^e2 * z_i^e3 = 0

where omega_i is a per-atom weight (c_i^2 for the Gaussian system, a_i > 0 for
the skew system) and (x, y, z) are the atom's remaining unknowns.  Solutions are
searched by damped Gauss-Newton (Levenberg-Marquardt) on the relative residual
E_alpha / S_alpha, where S_alpha is the same sum with every term in absolute value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

ACCEPT_TOL = 1e-12
MARGIN = 1e-3

RBAR_TABLE = {1: 4, 2: 6}
RBAR_AT_LEAST = {3: 7}
SBAR_TABLE = {1: 3, 2: 5}


@dataclass
class RateSystem:
    """A structured polynomial system.

    equations[alpha] is a list of (coef, (e1, e2, e3)) with exponents on the
    atom's free unknowns ``free``; ``weight`` names the per-atom weight unknown and
    ``weight_power`` is 2 (squared, sign-free) or 1 (positive weight).
    """

    kind: str
    atoms: int
    r: int
    weight: str
    weight_power: int
    free: tuple
    equations: list
    labels: list
    params: dict = field(default_factory=dict)

    @property
    def n_unknowns(self) -> int:
        return self.atoms * (1 + len(self.free))

    def exponent_array(self):
        """(alpha, term) padded arrays of coefficients and exponents for vectorized evaluation."""
        T = max(len(eq) for eq in self.equations)
        coef = np.zeros((len(self.equations), T))
        exps = np.zeros((len(self.equations), T, len(self.free)), dtype=int)
        for a, eq in enumerate(self.equations):
            for t, (c, e) in enumerate(eq):
                coef[a, t] = float(c)
                exps[a, t, :] = e
        return coef, exps


def gaussian_system(s: int, r: int) -> RateSystem:
    """sum_j sum_{n1 + 2 n2 = alpha} c_j^2 a_j^n1 b_j^n2 / (n1! n2!) = 0 for alpha = 1..r."""
    if s < 1 or r < 1:
        raise ValueError("s and r must be >= 1")
    eqs = []
    for alpha in range(1, r + 1):
        eq = []
        for n2 in range(alpha // 2 + 1):
            n1 = alpha - 2 * n2
            eq.append((Fraction(1, math.factorial(n1) * math.factorial(n2)), (n1, n2)))
        eqs.append(eq)
    return RateSystem("gaussian", s, r, "c", 2, ("a", "b"), eqs, list(range(1, r + 1)))


def skew_index_set(r: int) -> list:
    """(u, v) pairs: 1 <= v <= r; u odd and <= v when v is even, u even in [0, v] when v is odd."""
    out = []
    for v in range(1, r + 1):
        us = range(1, v + 1, 2) if v % 2 == 0 else range(0, v + 1, 2)
        out.extend((u, v) for u in us)
    return out


def skew_system(k_star: int, r: int) -> RateSystem:
    """sum_{i=1}^{k*+1} a_i b_i^u c_i^v = 0 over the parity-coupled index set."""
    if k_star < 1 or r < 1:
        raise ValueError("k_star and r must be >= 1")
    idx = skew_index_set(r)
    eqs = [[(Fraction(1), (u, v))] for u, v in idx]
    return RateSystem("skew", k_star + 1, r, "a", 1, ("b", "c"), eqs, idx)


def skew_overfit_system(m: float, sigma2: float) -> RateSystem:
    """Eight equations in (d_i, a_i, b_i, c_i), i = 1..3, for over-fitting a skew-normal atom by two.

    The unknowns have weights d_i^2; m and sigma2 are the fixed true skewness and
    variance.  Its insolvability is an open hypothesis, so no anchor is attached.
    """
    if m == 0 or sigma2 <= 0:
        raise ValueError("need m != 0 and sigma2 > 0")
    g = m ** 3 + m
    h = 3 * m * m + 1
    s2, s4, s6 = sigma2, sigma2 ** 2, sigma2 ** 3
    F = Fraction
    eqs = [
        [(F(1), (1, 0, 0))],
        [(F(1), (2, 0, 0)), (F(1), (0, 1, 0))],
        [(F(1, 3), (3, 0, 0)), (F(1), (1, 1, 0))],
        [(F(1, 6), (4, 0, 0)), (F(1), (2, 1, 0)), (F(1, 2), (0, 2, 0))],
        [(-g / (2 * s2), (2, 0, 0)), (g / (2 * s4), (2, 1, 0)), (-h / (2 * s2), (2, 0, 1)),
         (3 * (m * m + 1) * g / (24 * s4), (4, 0, 0)), (-g / (2 * s6), (2, 2, 0)),
         (h / (2 * s4), (2, 1, 1)), (-3 * m / (2 * s2), (2, 0, 2)), (F(1), (0, 0, 1))],
        [(-g / (6 * s2), (3, 0, 0)), (g / (6 * s4), (3, 1, 0)), (-h / (6 * s2), (3, 0, 1)),
         (F(1), (1, 0, 1))],
        [(-g / (6 * s2), (4, 0, 0)), (g / (2 * s4), (2, 2, 0)), (-h / (2 * s2), (2, 1, 1)),
         (F(1, 2), (0, 1, 1))],
        [(g * g / (24 * s4), (4, 0, 0)), (g / (4 * s4), (2, 1, 1)), (-h / (2 * s2), (2, 0, 2)),
         (F(1, 2), (0, 0, 2))],
    ]
    return RateSystem("skew_overfit", 3, 8, "d", 2, ("a", "b", "c"), eqs, list(range(1, 9)),
                      {"m": m, "sigma2": sigma2})


# --- evaluation ------------------------------------------------------------------

def pack(sys: RateSystem, values: dict) -> np.ndarray:
    """Flat vector [weights, free_1, free_2, ...] from a name -> per-atom list mapping."""
    names = (sys.weight,) + sys.free
    return np.concatenate([np.asarray(values[n], dtype=float).reshape(sys.atoms) for n in names])


def unpack(sys: RateSystem, vec) -> dict:
    names = (sys.weight,) + sys.free
    v = np.asarray(vec, dtype=float).reshape(len(names), sys.atoms)
    return {n: v[i].tolist() for i, n in enumerate(names)}


def eval_system(sys: RateSystem, values, exact: bool = False):
    """Residual vector of every equation.

    ``values`` is a mapping name -> per-atom sequence or a packed vector.  With
    exact=True (and rational inputs) the evaluation runs in Fractions.
    """
    if not isinstance(values, dict):
        values = unpack(sys, values)
    names = (sys.weight,) + sys.free
    if exact:
        cols = {n: [Fraction(x) for x in values[n]] for n in names}
    else:
        cols = {n: [float(x) for x in values[n]] for n in names}
    out = []
    for eq in sys.equations:
        acc = Fraction(0) if exact else []
        for i in range(sys.atoms):
            w = cols[sys.weight][i] ** sys.weight_power
            for coef, e in eq:
                term = (Fraction(coef) if exact else float(coef)) * w
                for n, p in zip(sys.free, e):
                    term = term * cols[n][i] ** p
                if exact:
                    acc += term
                else:
                    acc.append(term)
        out.append(acc if exact else math.fsum(acc))
    return out if exact else np.array(out)


def is_nontrivial(sys: RateSystem, values, margin: float = 0.0) -> bool:
    """The system's non-triviality predicate, with an optional safety margin.

    margin = 0 checks the predicate exactly as stated; a positive margin demands
    the required inequalities hold by at least that much (after normalization).
    """
    if not isinstance(values, dict):
        values = unpack(sys, values)
    w = np.asarray(values[sys.weight], dtype=float)
    if sys.weight_power == 2:
        om = w * w
        if np.any(om <= margin * max(om.max(), 1e-300)) or om.max() == 0:
            return False
    else:
        om = w
        if np.any(om <= margin * max(om.max(), 1e-300)) or np.any(om <= 0):
            return False
    if sys.kind == "gaussian":
        a, b = np.asarray(values["a"]), np.asarray(values["b"])
        scale = max(np.max(np.abs(a)), math.sqrt(np.max(np.abs(b))))
        return bool(scale > 0 and np.max(np.abs(a)) > margin * scale)
    if sys.kind == "skew":
        b, c = np.asarray(values["b"]), np.asarray(values["c"])
        bs = np.max(np.abs(b))
        if bs == 0 or np.any(np.abs(b) <= margin * bs):
            return False
        if np.max(np.abs(c)) <= 0:
            return False
        an = om / om.max()
        for i in range(sys.atoms):
            for j in range(i):
                if abs(b[i] - b[j]) <= margin * bs:
                    return False
                if max(abs(an[i] - an[j]), abs(abs(b[i]) - abs(b[j])) / bs) <= margin:
                    return False
        return True
    x = np.concatenate([np.abs(values[n]) for n in sys.free])
    return bool(np.max(x) > margin * max(1.0, np.max(x)) and np.max(x) > 0)


# --- batched Levenberg-Marquardt ---------------------------------------------------

class _Batch:
    """Relative residuals and Jacobians for a batch of parameter vectors.

    Parameters per start: softmax logits t (atoms) then free unknowns (atoms x nfree).
    """

    def __init__(self, sys: RateSystem):
        self.sys = sys
        self.coef, self.exps = sys.exponent_array()
        self.A = sys.atoms
        self.F = len(sys.free)

    def split(self, P):
        A, F = self.A, self.F
        t = P[:, :A]
        X = P[:, A:].reshape(-1, F, A).transpose(0, 2, 1)    # (B, A, F)
        return t, X

    def weights(self, t):
        z = t - t.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def monomials(self, X):
        """mono (B, A, E, T) and d mono / d x_f as (B, A, E, T, F)."""
        ex = self.exps                                        # (E, T, F)
        Xe = X[:, :, None, None, :]                           # (B, A, 1, 1, F)
        pw = np.where(ex == 0, 1.0, Xe ** ex)                 # (B, A, E, T, F)
        mono = np.prod(pw, axis=-1)
        dm = np.zeros(mono.shape + (self.F,))
        for f in range(self.F):
            e = ex[..., f]
            d = np.where(e == 0, 0.0, e * np.where(e >= 1, Xe[..., f] ** np.maximum(e - 1, 0), 0.0))
            others = np.prod(np.delete(pw, f, axis=-1), axis=-1) if self.F > 1 else 1.0
            dm[..., f] = d * others
        return mono, dm

    def evaluate(self, P, jac: bool = True):
        t, X = self.split(P)
        om = self.weights(t)                                  # (B, A)
        mono, dm = self.monomials(X)
        c = self.coef[None, None]                             # (1, 1, E, T)
        per_atom = np.sum(c * mono, axis=-1)                  # (B, A, E)
        per_abs = np.sum(np.abs(c * mono), axis=-1)
        E = np.einsum("ba,bae->be", om, per_atom)
        S = np.einsum("ba,bae->be", om, per_abs)
        tiny = 1e-300
        R = E / (S + tiny)
        if not jac:
            return R
        B, A, F = X.shape
        J = np.zeros((B, R.shape[1], A * (1 + F)))
        # weights through softmax: d om_i / d t_j = om_i (delta_ij - om_j)
        dE_dom, dS_dom = per_atom, per_abs                    # (B, A, E)
        dR_dom = (dE_dom * S[:, None, :] - E[:, None, :] * dS_dom) / (S[:, None, :] + tiny) ** 2
        dR_dt = om[:, :, None] * (dR_dom - np.einsum("ba,bae->be", om, dR_dom)[:, None, :])
        J[:, :, :A] = dR_dt.transpose(0, 2, 1)
        sgn = np.sign(c * mono)
        dE_dx = np.einsum("ba,baetf->baef", om, c[..., None] * dm)
        dS_dx = np.einsum("ba,baetf->baef", om, (sgn * c)[..., None] * dm)
        dR_dx = (dE_dx * S[:, None, :, None] - E[:, None, :, None] * dS_dx) / (S[:, None, :, None] + tiny) ** 2
        for f in range(F):
            J[:, :, A + f * A: A + (f + 1) * A] = dR_dx[..., f].transpose(0, 2, 1)
        return R, J


def _normalize(sys: RateSystem, P: np.ndarray, A: int, F: int) -> np.ndarray:
    """Use the system's scaling symmetries to fix the size of the free unknowns."""
    P = P.copy()
    if sys.kind == "gaussian":
        a = P[:, A:2 * A]
        b = P[:, 2 * A:3 * A]
        s = np.maximum(np.max(np.abs(a), axis=1), np.sqrt(np.max(np.abs(b), axis=1)))
        s = np.where(s > 0, s, 1.0)
        P[:, A:2 * A] = a / s[:, None]
        P[:, 2 * A:3 * A] = b / (s * s)[:, None]
    elif sys.kind == "skew":
        for k in range(F):
            blk = P[:, A + k * A: A + (k + 1) * A]
            s = np.max(np.abs(blk), axis=1)
            P[:, A + k * A: A + (k + 1) * A] = blk / np.where(s > 0, s, 1.0)[:, None]
    P[:, :A] -= P[:, :A].max(axis=1, keepdims=True)
    return P


def _lm(sys: RateSystem, P0: np.ndarray, iters: int = 400):
    batch = _Batch(sys)
    A, F = batch.A, batch.F
    P = _normalize(sys, P0, A, F)
    lam = np.full(len(P), 1e-3)
    R, J = batch.evaluate(P)
    cost = np.sum(R * R, axis=1)
    n = P.shape[1]
    eye = np.eye(n)
    for _ in range(iters):
        JtJ = np.einsum("bmi,bmj->bij", J, J)
        g = np.einsum("bmi,bm->bi", J, R)
        D = np.einsum("bii->bi", JtJ)
        M = JtJ + lam[:, None, None] * (D[:, :, None] * eye + 1e-12 * eye)
        try:
            step = -np.linalg.solve(M, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = -np.stack([np.linalg.lstsq(Mb, gb, rcond=None)[0] for Mb, gb in zip(M, g)])
        Pn = _normalize(sys, P + step, A, F)
        Rn, Jn = batch.evaluate(Pn)
        cn = np.sum(Rn * Rn, axis=1)
        ok = np.isfinite(cn) & (cn < cost)
        P[ok], R[ok], J[ok], cost[ok] = Pn[ok], Rn[ok], Jn[ok], cn[ok]
        lam = np.where(ok, np.maximum(lam / 3, 1e-15), np.minimum(lam * 4, 1e12))
        if np.all((cost < 1e-30) | (lam >= 1e12)):
            break
    return P, np.sqrt(cost)


def _to_values(sys: RateSystem, p: np.ndarray) -> dict:
    A = sys.atoms
    t = p[:A]
    om = np.exp(t - t.max())
    om /= om.sum()
    w = np.sqrt(om) if sys.weight_power == 2 else om
    vals = {sys.weight: w.tolist()}
    for k, name in enumerate(sys.free):
        vals[name] = p[A + k * A: A + (k + 1) * A].tolist()
    return vals


@dataclass
class SolveReport:
    found: bool
    residual: float
    solution: dict | None
    starts: int
    normalization: str
    admissible_starts: int = 0
    system: str = ""
    r: int = 0
    atoms: int = 0

    def to_dict(self) -> dict:
        return {
            "system": self.system, "atoms": self.atoms, "r": self.r,
            "found": self.found, "residual": self.residual, "solution": self.solution,
            "starts": self.starts, "admissible_starts": self.admissible_starts,
            "normalization": self.normalization,
            "evidence": "solution" if self.found else "numerical evidence of insolvability",
        }


_NORMALIZATION = {
    "gaussian": "weights c^2 sum to 1; max_j max(|a_j|, sqrt|b_j|) = 1",
    "skew": "weights a sum to 1; max|b| = 1; max|c| = 1",
    "skew_overfit": "weights d^2 sum to 1",
}


def find_nontrivial(sys: RateSystem, budget: int = 500, seed: int = 0, margin: float = MARGIN,
                    tol: float = ACCEPT_TOL, iters: int = 400, chunk: int = 250) -> SolveReport:
    """Multistart search for a non-trivial solution.

    A start is accepted iff its max relative residual is below ``tol`` and the
    non-triviality predicate holds with ``margin``.  Without an accepted start the
    report carries the best residual among admissible endpoints.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    P0 = rng.uniform(-1.0, 1.0, size=(budget, sys.n_unknowns))
    best_res, best_sol, n_adm = np.inf, None, 0
    found_sol = None
    for lo in range(0, budget, chunk):
        P, _ = _lm(sys, P0[lo: lo + chunk], iters)
        R = _Batch(sys).evaluate(P, jac=False)
        res = np.max(np.abs(R), axis=1)
        for b in range(len(P)):
            vals = _to_values(sys, P[b])
            if not is_nontrivial(sys, vals, margin):
                continue
            n_adm += 1
            if res[b] < best_res:
                best_res, best_sol = float(res[b]), vals
            if found_sol is None and res[b] < tol:
                found_sol = (float(res[b]), vals)
    rep = SolveReport(found_sol is not None, found_sol[0] if found_sol else best_res,
                      found_sol[1] if found_sol else best_sol, budget, _NORMALIZATION[sys.kind],
                      n_adm, sys.kind, sys.r, sys.atoms)
    return rep


def _scan(make, r_max: int, budget: int, seed: int) -> tuple:
    reports = []
    est = None
    for r in range(1, r_max + 1):
        rep = find_nontrivial(make(r), budget, seed)
        reports.append(rep)
        if not rep.found:
            est = r
            break
    return est, reports


def rbar(k_minus_k0: int, r_max: int = 8, budget: int = 500, seed: int = 0) -> dict:
    """Smallest r whose Gaussian system has no non-trivial solution (numerically)."""
    if k_minus_k0 < 1:
        raise ValueError("k - k0 must be >= 1")
    s = k_minus_k0 + 1
    est, reports = _scan(lambda r: gaussian_system(s, r), r_max, budget, seed)
    value = est if est is not None else f">={r_max + 1}"
    certified = RBAR_TABLE.get(k_minus_k0)
    if certified is None and k_minus_k0 >= 3:
        certified = ">=7"
    if certified is None:
        agree = None
    elif isinstance(certified, int):
        agree = est == certified if est is not None else r_max < certified
    else:
        agree = est is None or est >= 7
    return {"k_minus_k0": k_minus_k0, "rbar": value, "certified": certified, "agrees": agree,
            "conjecture": 2 * (k_minus_k0 + 1), "reports": [rep.to_dict() for rep in reports]}


def sbar(k_star: int, r_max: int = 8, budget: int = 500, seed: int = 0) -> dict:
    """Smallest r whose skew system has no non-trivial solution (numerically)."""
    if k_star < 1:
        raise ValueError("k_star must be >= 1")
    est, reports = _scan(lambda r: skew_system(k_star, r), r_max, budget, seed)
    value = est if est is not None else f">={r_max + 1}"
    certified = SBAR_TABLE.get(k_star)
    if certified is None:
        agree = None
    else:
        agree = est == certified if est is not None else r_max < certified
    return {"k_star": k_star, "sbar": value, "certified": certified, "agrees": agree,
            "reports": [rep.to_dict() for rep in reports]}


def skew_two_atom_solution(a1: float, a2: float, b1: float, c1: float = 1.0) -> dict:
    """Closed-form solution of the k* = 1, r = 2 skew system: c2 = -a1 c1 / a2, b2 = -b1 a2 / a1."""
    return {"a": [a1, a2], "b": [b1, -b1 * a2 / a1], "c": [c1, -a1 * c1 / a2]}


def homogeneity_residuals(sys: RateSystem, values: dict, lam: float) -> np.ndarray:
    """E_alpha(lam a, lam^2 b) - lam^alpha E_alpha(a, b) for the Gaussian system."""
    base = eval_system(sys, values)
    scaled = dict(values)
    scaled["a"] = [lam * x for x in values["a"]]
    scaled["b"] = [lam * lam * x for x in values["b"]]
    return eval_system(sys, scaled) - np.array([lam ** al for al in sys.labels]) * base


__all__ = [
    "RateSystem", "SolveReport", "gaussian_system", "skew_system", "skew_overfit_system",
    "skew_index_set", "eval_system", "is_nontrivial", "find_nontrivial", "rbar", "sbar",
    "skew_two_atom_solution", "homogeneity_residuals", "pack", "unpack", "eval_system_mp", "polish",
]


def eval_system_mp(sys: RateSystem, values: dict) -> list:
    """Residuals in mpmath arithmetic at the current working precision."""
    import mpmath as mp

    out = []
    for eq in sys.equations:
        terms = []
        for i in range(sys.atoms):
            w = mp.mpf(values[sys.weight][i]) ** sys.weight_power
            for coef, e in eq:
                t = mp.mpf(coef.numerator) / coef.denominator * w if isinstance(coef, Fraction) else mp.mpf(coef) * w
                for n, p in zip(sys.free, e):
                    t *= mp.mpf(values[n][i]) ** p
                terms.append(t)
        out.append(mp.fsum(terms))
    return out


def polish(sys: RateSystem, values: dict, dps: int = 60) -> tuple:
    """Refine a numerical solution to working precision ``dps`` by Newton on a square subsystem.

    The unknowns solved for are the best-conditioned columns of the Jacobian
    (QR with column pivoting); the rest stay at their input values.  Returns
    (values with mpf entries, max |residual|).
    """
    import mpmath as mp
    from scipy.linalg import qr

    names = (sys.weight,) + sys.free
    flat = [float(x) for n in names for x in values[n]]
    m = len(sys.equations)
    h = 1e-7
    J = np.zeros((m, len(flat)))
    base = eval_system(sys, pack(sys, values))
    for j in range(len(flat)):
        v = list(flat)
        v[j] += h
        J[:, j] = (eval_system(sys, np.array(v)) - base) / h
    _, _, piv = qr(J, pivoting=True)
    free_idx = sorted(int(i) for i in piv[:m])
    with mp.workdps(dps):
        x0 = [mp.mpf(v) for v in flat]

        def to_vals(xs):
            full = list(x0)
            for k, i in enumerate(free_idx):
                full[i] = xs[k]
            return {n: full[a * sys.atoms:(a + 1) * sys.atoms] for a, n in enumerate(names)}

        def f(*xs):
            return eval_system_mp(sys, to_vals(xs))

        sol = mp.findroot(f, [x0[i] for i in free_idx], tol=mp.mpf(10) ** (-dps + 5), maxsteps=50)
        xs = [sol[k] for k in range(m)] if m > 1 else [sol]
        vals = to_vals(xs)
        res = max(abs(v) for v in eval_system_mp(sys, vals))
    return vals, res
