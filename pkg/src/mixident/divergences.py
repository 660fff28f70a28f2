"""Variational and Hellinger distances between mixture densities.

Integrals are computed by adaptive tensor Gauss-Legendre cubature over an
axis-aligned box.  Each leaf cell carries the difference between its own rule
and the sum over its 2^d children as an error estimate; leaves are split in
order of decreasing error until the summed error meets the tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import QuadratureError
from .families import Family, mixture_pdf
from .measures import MixingMeasure, wasserstein_value

COVERAGE = 1e-6


@dataclass
class QuadratureSpec:
    """Integration box, tolerances and initial breakpoints.

    ``knots`` holds one sorted array of breakpoints per axis (box ends included).
    """

    lo: np.ndarray
    hi: np.ndarray
    knots: list
    atol: float = 1e-12
    rtol: float = 1e-7
    nodes: int = 10
    max_cells: int = 200_000

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.atol <= 0 or self.rtol < 0:
            raise ValueError("tolerances must be positive")

    @property
    def dim(self) -> int:
        return self.lo.size


@dataclass
class DistanceResult:
    V: float
    h: float
    err_V: float
    err_h2: float
    mass_G: float
    mass_H: float
    cells: int = 0
    extra: dict = field(default_factory=dict)


def default_spec(family: Family, measures, eps: float = 1e-12, multiples=(1, 3, 10, 40),
                 **kw) -> QuadratureSpec:
    """Box covering every component to 1 - eps, with scale-matched breakpoints."""
    slo, shi = family.support()
    lo = np.full(family.dim, np.inf)
    hi = np.full(family.dim, -np.inf)
    pts = [p for G in measures for p in G.points]
    for p in pts:
        blo, bhi = family.box(p, eps)
        lo = np.minimum(lo, blo)
        hi = np.maximum(hi, bhi)
    lo = np.maximum(lo, slo)
    hi = np.minimum(hi, shi)
    knots = []
    for ax in range(family.dim):
        ks = [lo[ax], hi[ax]]
        for p in pts:
            if family.dim == 1:
                ks.extend(family.knots(p)[0])
            else:
                c, s = family.center_spread(p)
                ks.append(c[ax])
                ms = list(multiples)
                while ms[-1] * s[ax] < hi[ax] - lo[ax]:
                    ms.append(ms[-1] * 4)
                ks.extend(c[ax] + sgn * m * s[ax] for m in ms for sgn in (-1, 1))
        ks = np.unique(np.clip(np.asarray(ks, dtype=float), lo[ax], hi[ax]))
        knots.append(ks)
    return QuadratureSpec(lo, hi, knots, **kw)


_GL_CACHE: dict = {}


def _rule(n: int, dim: int):
    key = (n, dim)
    if key not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        grid = np.array(list(product(x, repeat=dim)))
        wt = np.prod(np.array(list(product(w, repeat=dim))), axis=1)
        _GL_CACHE[key] = (grid, wt)
    return _GL_CACHE[key]


class _Integrand:
    """Evaluates [V, h^2, mass_G, mass_H] integrands on batches of points."""

    def __init__(self, family: Family, G: MixingMeasure, H: MixingMeasure, diff=None):
        self.family, self.G, self.H, self.diff = family, G, H, diff

    def __call__(self, X: np.ndarray) -> np.ndarray:
        p = mixture_pdf(self.family, self.G, X)
        q = mixture_pdf(self.family, self.H, X)
        d = p - q if self.diff is None else self.diff(X)
        s = np.sqrt(p) + np.sqrt(q)
        with np.errstate(invalid="ignore", divide="ignore"):
            h2 = np.where(s > 0, 0.5 * d * d / (s * s), 0.0)
        return np.stack([0.5 * np.abs(d), h2, p, q], axis=1)


def _cell_integrals(func, lo: np.ndarray, hi: np.ndarray, n: int) -> np.ndarray:
    """Integrals of all integrand components over each cell: shape (C, K)."""
    C, dim = lo.shape
    grid, wt = _rule(n, dim)
    width = hi - lo
    X = lo[:, None, :] + width[:, None, :] * grid[None, :, :]
    vals = func(X.reshape(-1, dim)).reshape(C, grid.shape[0], -1)
    vol = np.prod(width, axis=1)
    return np.einsum("cgk,g->ck", vals, wt) * vol[:, None]


def _children(lo: np.ndarray, hi: np.ndarray):
    C, dim = lo.shape
    mid = 0.5 * (lo + hi)
    los, his = [], []
    for bits in product((0, 1), repeat=dim):
        b = np.array(bits, dtype=bool)
        los.append(np.where(b, mid, lo))
        his.append(np.where(b, hi, mid))
    # child-major blocks: rows [c0 of all parents, c1 of all parents, ...]
    return np.concatenate(los), np.concatenate(his)


def _refined(func, lo, hi, n):
    """Children-summed integrals and error estimates for each cell."""
    C = lo.shape[0]
    nch = 2 ** lo.shape[1]
    own = _cell_integrals(func, lo, hi, n)
    clo, chi = _children(lo, hi)
    kids = _cell_integrals(func, clo, chi, n).reshape(nch, C, -1).sum(axis=0)
    return kids, np.abs(kids - own)


def integrate(func, spec: QuadratureSpec, weights=None, floors=None):
    """Adaptive integration of a vector integrand.

    weights scales each component's error before it enters the stopping rule;
    floors are absolute tolerances per component.
    """
    grids = np.meshgrid(*[np.arange(len(k) - 1) for k in spec.knots], indexing="ij")
    idx = np.stack([g.reshape(-1) for g in grids], axis=1)
    lo = np.stack([spec.knots[a][idx[:, a]] for a in range(spec.dim)], axis=1)
    hi = np.stack([spec.knots[a][idx[:, a] + 1] for a in range(spec.dim)], axis=1)
    keep = np.all(hi > lo, axis=1)
    lo, hi = lo[keep], hi[keep]
    val, err = _refined(func, lo, hi, spec.nodes)
    K = val.shape[1]
    floors = np.full(K, spec.atol) if floors is None else np.asarray(floors, dtype=float)
    rt = np.full(K, spec.rtol) if weights is None else np.asarray(weights, dtype=float) * spec.rtol
    for _ in range(200):
        total = val.sum(axis=0)
        target = np.maximum(floors, rt * np.abs(total))
        score = np.max(err / target[None, :], axis=1)
        if score.sum() <= 1.0:
            break
        if lo.shape[0] >= spec.max_cells:
            raise QuadratureError(f"cell budget {spec.max_cells} exhausted (score {score.sum():.3g})")
        order = np.argsort(-score, kind="stable")
        csum = np.cumsum(score[order])
        need = score.sum() - 0.5
        cut = int(np.searchsorted(csum, need)) + 1
        split = np.zeros(lo.shape[0], dtype=bool)
        split[order[:cut]] = True
        split |= score > 1.0 / max(lo.shape[0], 1)
        nlo, nhi = _children(lo[split], hi[split])
        nval, nerr = _refined(func, nlo, nhi, spec.nodes)
        lo = np.concatenate([lo[~split], nlo])
        hi = np.concatenate([hi[~split], nhi])
        val = np.concatenate([val[~split], nval])
        err = np.concatenate([err[~split], nerr])
    else:
        raise QuadratureError("adaptive refinement did not converge")
    return val.sum(axis=0), err.sum(axis=0), lo.shape[0]


def distances(G: MixingMeasure, H: MixingMeasure, family: Family, spec: QuadratureSpec | None = None,
              diff=None, check_coverage: bool = True) -> DistanceResult:
    """V and h between p_G and p_H, plus each mixture's mass inside the box.

    ``diff`` optionally supplies p_G - p_H directly (for cancellation-free forms).
    """
    if spec is None:
        spec = default_spec(family, [G, H])
    func = _Integrand(family, G, H, diff)
    floors = [spec.atol, spec.atol, 1e-8, 1e-8]
    tot, err, cells = integrate(func, spec, weights=[1.0, 1.0, 0.0, 0.0], floors=floors)
    V = float(min(max(tot[0], 0.0), 1.0))
    h2 = float(min(max(tot[1], 0.0), 1.0))
    res = DistanceResult(V, math.sqrt(h2), float(err[0]), float(err[1]), float(tot[2]), float(tot[3]), cells)
    if check_coverage and (res.mass_G < 1 - COVERAGE or res.mass_H < 1 - COVERAGE):
        raise QuadratureError(f"box holds masses {res.mass_G:.8f}, {res.mass_H:.8f}")
    return res


def variational(G, H, family, spec=None) -> float:
    return distances(G, H, family, spec).V


def hellinger(G, H, family, spec=None) -> float:
    return distances(G, H, family, spec).h


def variational_mc(G: MixingMeasure, H: MixingMeasure, family: Family, n: int, seed) -> tuple:
    """Importance-sampling estimate of V from (p_G + p_H)/2, with its standard error."""
    from .families import sample

    rng = np.random.default_rng(seed)
    half = n // 2
    X = np.concatenate([sample(family, G, half, rng), sample(family, H, n - half, rng)])
    p = mixture_pdf(family, G, X)
    q = mixture_pdf(family, H, X)
    m = 0.5 * (p + q)
    vals = np.where(m > 0, 0.5 * np.abs(p - q) / np.where(m > 0, m, 1.0), 0.0)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


@dataclass
class BoundRecord:
    family: str
    r: float
    W1: float
    W2: float
    Wr: float
    V: float
    h: float
    composite: float
    upper_ok: dict

    CSV_HEADER = "family,r,W1,W2,Wr,V,h,composite"

    def csv_row(self) -> str:
        vals = [self.r, self.W1, self.W2, self.Wr, self.V, self.h, self.composite]
        return ",".join([self.family] + [repr(float(v)) for v in vals])


def bound_check(G: MixingMeasure, H: MixingMeasure, family: Family, r: float = 2.0,
                constants: dict | None = None, spec=None, composite: bool = True) -> BoundRecord:
    """Distances plus the upper-bound flags V <= C1 W1 and h^2 <= C2 W2^2.

    ``constants`` holds calibrated {"C1":..., "C2":...}; without it the flags are None.
    """
    from .measures import composite_divergence_bound

    W1 = wasserstein_value(G, H, 1.0)
    W2 = wasserstein_value(G, H, 2.0)
    Wr = wasserstein_value(G, H, r)
    res = distances(G, H, family, spec)
    comp = composite_divergence_bound(G, H, family, "variational") if composite else float("nan")
    flags = {"V_le_C1_W1": None, "h2_le_C2_W2sq": None}
    if constants:
        flags["V_le_C1_W1"] = bool(res.V <= constants["C1"] * W1 + 1e-12)
        flags["h2_le_C2_W2sq"] = bool(res.h ** 2 <= constants["C2"] * W2 ** 2 + 1e-12)
    return BoundRecord(family.kind, r, W1, W2, Wr, res.V, res.h, comp, flags)


def calibrate_constants(records) -> dict:
    """Largest observed V/W1 and h^2/W2^2 over a sweep of bound records."""
    c1 = max((rec.V / rec.W1 for rec in records if rec.W1 > 0), default=float("nan"))
    c2 = max((rec.h ** 2 / rec.W2 ** 2 for rec in records if rec.W2 > 0), default=float("nan"))
    return {"C1": c1, "C2": c2}


# --- extended-precision engine for 1-D mixtures ------------------------------------

_MP_MULTIPLES = (0.25, 0.5, 1, 1.5, 2, 3, 4, 6, 8, 12, 16, 24, 40)


def mp_atoms(family: Family, G: MixingMeasure) -> list:
    """(weight, params) pairs with mpmath values, for the 1-D families the engine knows."""
    import mpmath as mp

    out = []
    for w, p in G:
        if family.kind == "gaussian" and family.dim == 1:
            prm = {"theta": p.loc[0], "v": p.mat[0, 0]}
        elif family.kind == "gamma":
            prm = {"a": p.extras["a"], "b": p.extras["b"]}
        elif family.kind == "skew_normal":
            prm = {"theta": p.loc[0], "v": p.mat[0, 0], "m": p.extras["m"]}
        elif family.kind == "location_exponential":
            prm = {"theta": p.loc[0], "sigma": p.extras["sigma"]}
        else:
            raise ValueError(f"no extended-precision density for {family.kind}")
        out.append((mp.mpf(float(w)), {k: mp.mpf(float(v)) for k, v in prm.items()}))
    return out


def _mp_pdf(kind: str, prm: dict, x):
    import mpmath as mp

    if kind == "gaussian":
        z = x - prm["theta"]
        return mp.exp(-z * z / (2 * prm["v"])) / mp.sqrt(2 * mp.pi * prm["v"])
    if kind == "gamma":
        if x <= 0:
            return mp.mpf(0)
        a, b = prm["a"], prm["b"]
        return mp.exp(a * mp.log(b) - mp.loggamma(a) + (a - 1) * mp.log(x) - b * x)
    if kind == "skew_normal":
        s = mp.sqrt(prm["v"])
        z = (x - prm["theta"]) / s
        return 2 / s * mp.npdf(z) * mp.ncdf(prm["m"] * z)
    if kind == "location_exponential":
        if x <= prm["theta"]:
            return mp.mpf(0)
        return mp.exp(-(x - prm["theta"]) / prm["sigma"]) / prm["sigma"]
    raise ValueError(kind)


def _mp_breaks(kind: str, atoms) -> list:
    import mpmath as mp

    pts = set()
    for _, prm in atoms:
        if kind == "gamma":
            a, b = prm["a"], prm["b"]
            c, s = a / b, mp.sqrt(a) / b
            pts.update([mp.mpf(0)] + [c * f for f in (mp.mpf("1e-3"), mp.mpf("0.01"), mp.mpf("0.1"))])
        elif kind == "location_exponential":
            c, s = prm["theta"], prm["sigma"]
            pts.update(c + s * f for f in (0, 0.25, 0.5, 1, 2, 4, 8, 16, 32, 64, 90))
            continue
        else:
            c, s = prm["theta"], mp.sqrt(prm["v"])
        pts.add(c)
        for f in _MP_MULTIPLES:
            pts.add(c + f * s)
            pts.add(c - f * s)
    pts = sorted(pts)
    if kind == "gamma":
        pts = [x for x in pts if x >= 0]
    return pts


def distances_mp(family: Family, G, H, dps: int = 50, nodes: int = 20) -> DistanceResult:
    """V and h between two 1-D mixtures in extended precision.

    G and H are MixingMeasures or lists of (weight, params) from mp_atoms, which lets
    callers build atoms whose tiny offsets are exact.  Panels are split at every sign
    change of p_G - p_H so the integrand is smooth on each panel.
    """
    import mpmath as mp

    kind = family.kind
    with mp.workdps(dps):
        A = mp_atoms(family, G) if isinstance(G, MixingMeasure) else G
        B = mp_atoms(family, H) if isinstance(H, MixingMeasure) else H
        breaks = _mp_breaks(kind, A + B)
        x0, w0 = np.polynomial.legendre.leggauss(nodes)
        gx = [mp.mpf(float(v)) for v in x0]
        gw = [mp.mpf(float(v)) for v in w0]

        def dens(x):
            p = mp.fsum(w * _mp_pdf(kind, prm, x) for w, prm in A)
            q = mp.fsum(w * _mp_pdf(kind, prm, x) for w, prm in B)
            return p, q

        def diff(x):
            p, q = dens(x)
            return p - q

        def root(u, w, du):
            for _ in range(200):
                mid = (u + w) / 2
                dm = diff(mid)
                if dm == 0 or w - u <= mp.mpf(10) ** (-dps + 5) * (1 + abs(mid)):
                    return mid
                if (dm > 0) == (du > 0):
                    u, du = mid, dm
                else:
                    w = mid
            return (u + w) / 2

        totals = [mp.mpf(0)] * 4

        def panel(u, w, depth):
            half, mid = (w - u) / 2, (w + u) / 2
            xs = [mid + half * t for t in gx]
            vals = [dens(x) for x in xs]
            ds = [p - q for p, q in vals]
            if depth < 3:
                for i in range(len(xs) - 1):
                    if ds[i] != 0 and ds[i + 1] != 0 and (ds[i] > 0) != (ds[i + 1] > 0):
                        z = root(xs[i], xs[i + 1], ds[i])
                        panel(u, z, depth + 1)
                        panel(z, w, depth + 1)
                        return
            for wt, (p, q), d in zip(gw, vals, ds):
                s = mp.sqrt(p) + mp.sqrt(q)
                h2 = d * d / (s * s) if s > 0 else mp.mpf(0)
                c = wt * half
                totals[0] += c * abs(d) / 2
                totals[1] += c * h2 / 2
                totals[2] += c * p
                totals[3] += c * q

        for u, w in zip(breaks, breaks[1:]):
            if w > u:
                panel(u, w, 0)
        V, h2, mG, mH = totals
        return DistanceResult(float(V), float(mp.sqrt(h2)), float("nan"), float("nan"), float(mG),
                              float(mH), len(breaks) - 1, extra={"V_mp": V, "h2_mp": h2})
