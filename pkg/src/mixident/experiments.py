"""Reproduction harness: bound-envelope scatters, MLE rate sweeps and adversarial sequences.

Every stochastic quantity is drawn from a generator seeded by (seed, index), so
results do not depend on how work is split across processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import polysys
from .divergences import default_spec, distances, distances_mp, mp_atoms
from .errors import DependencyError, DomainError, MixidentError
from .estimation import FitConfig, fit_gamma_mle, fit_gaussian_em
from .families import Family, GammaShapeRate, GaussianLocCov, LocationExponential, SkewNormal, StudentT, sample
from .measures import MixingMeasure, transport, wasserstein_value

SCATTER_HEADER = ["sample", "W1", "W2", "Wr", "V", "h"]
RATE_HEADER = ["n", "rep", "Wr", "converged"]
ADVERSARIAL_HEADER = ["n", "r", "W", "V", "h", "ratio"]


# --- presets --------------------------------------------------------------------

def _measure(family, weights, atoms):
    return MixingMeasure(weights, [family.make(**a) for a in atoms])


def student_t_g0():
    fam = StudentT(2, 3)
    S1 = [[9 / 4, 1 / 5], [1 / 5, 13 / 6]]
    S2 = [[5 / 2, 2 / 5], [2 / 5, 7 / 3]]
    G0 = _measure(fam, [1 / 3, 2 / 3], [dict(loc=(-2, 2), mat=S1), dict(loc=(-4, 4), mat=S2)])
    return fam, G0


def gaussian_weak_g0():
    fam = GaussianLocCov(1)
    G0 = _measure(fam, [1 / 3, 2 / 3], [dict(loc=-2, mat=1.0), dict(loc=4, mat=4.0)])
    return fam, G0


def gaussian_mle_g0():
    fam = GaussianLocCov(2)
    S1 = [[4.2824, 1.7324], [1.7324, 0.81759]]
    S2 = [[1.75, -1.25], [-1.25, 1.75]]
    S3 = [[1.0, 0.0], [0.0, 4.0]]
    G0 = _measure(fam, [0.3, 0.4, 0.3], [dict(loc=(0, 3), mat=S1), dict(loc=(1, -4), mat=S2),
                                          dict(loc=(5, 2), mat=S3)])
    return fam, G0


def gamma_g0(case: str = "generic"):
    fam = GammaShapeRate()
    if case == "generic":
        atoms = [dict(a=8.0, b=3.0), dict(a=2.0, b=4.0)]
    elif case == "pathological":
        atoms = [dict(a=8.0, b=3.0), dict(a=7.0, b=3.0)]
    else:
        raise DomainError(f"unknown gamma case {case!r}")
    return fam, _measure(fam, [1 / 3, 2 / 3], atoms)


SKEW_CASES = {
    "generic": [(-2.0, 1.0, 1.0), (4.0, 2.0, 2.0), (-5.0, -3.0, 3.0)],
    "conformant": [(-2.0, 0.0, 1.0), (4.0, math.sqrt(3), 2.0), (4.0, math.sqrt(8), 3.0)],
    "nonconformant": [(-2.0, 0.0, 1.0), (4.0, math.sqrt(3), 2.0), (4.0, -math.sqrt(8), 3.0)],
}


def skew_g0(case: str = "generic", weights=None):
    """Atoms given as (theta, m, sigma); the family stores v = sigma^2."""
    fam = SkewNormal()
    if case not in SKEW_CASES:
        raise DomainError(f"unknown skew case {case!r}")
    w = [1 / 3] * 3 if weights is None else weights
    return fam, _measure(fam, w, [dict(loc=t, mat=s * s, m=m) for t, m, s in SKEW_CASES[case]])


def classifier_presets() -> dict:
    """The six named configurations and the labels the classifiers should give them."""
    return {
        "gamma_generic_exact": (gamma_g0("generic")[1], "exact", "Generic"),
        "gamma_generic_over": (gamma_g0("generic")[1], "over", "Generic"),
        "gamma_pathological": (gamma_g0("pathological")[1], "exact", "Pathological"),
        "skew_generic": (skew_g0("generic")[1], None, "S1"),
        "skew_conformant": (skew_g0("conformant")[1], None, "S2"),
        "skew_nonconformant": (skew_g0("nonconformant")[1], None, "S3"),
    }


# --- scatter ---------------------------------------------------------------------

@dataclass
class ScatterConfig:
    """Random mixing measures around G0 and their distances to it.

    Each sample draws a contraction factor t log-uniformly from 10**t_range and a
    construction from ``strategies``:
      contract: atoms and weights move a fraction t of the way to a uniform draw in the box;
      balanced: over-fitted children of one parent with weighted-mean-zero offsets;
      polysys:  children along a nontrivial solution of the Gaussian rate system.
    """

    family: Family
    G0: MixingMeasure
    theta_box: tuple
    mat_box: tuple = (0.0, 0.0)
    extra_box: dict = field(default_factory=dict)
    k: int | None = None
    M: int = 2000
    r: float = 2.0
    envelope_on: str = "W1"
    seed: int = 0
    strategies: dict = field(default_factory=lambda: {"contract": 1.0})
    t_range: tuple = (-3.0, -1.0)
    eps: float = 1e-9
    rtol: float = 1e-4
    nodes: int = 6
    bins: int = 20
    threads: int = 1
    polysys_pool: int = 8

    def __post_init__(self):
        if self.k is None:
            self.k = self.G0.k
        if self.M != 0 and self.M < 100:
            raise ValueError("M must be 0 or at least 100")
        if self.k < self.G0.k:
            raise ValueError("k must be >= the number of atoms of G0")
        if self.envelope_on not in ("W1", "W2", "Wr"):
            raise ValueError("envelope_on must be W1, W2 or Wr")
        unknown = set(self.strategies) - {"contract", "balanced", "polysys"}
        if unknown:
            raise ValueError(f"unknown strategies {sorted(unknown)}")
        lo, hi = self.theta_box
        for p in self.G0.points:
            if np.any(p.loc < lo) or np.any(p.loc > hi):
                raise ValueError("G0 lies outside the location box")

    @property
    def setting(self) -> str:
        return "exact" if self.k == self.G0.k else "over"


def _random_point(cfg: ScatterConfig, rng) -> np.ndarray:
    fam = cfg.family
    loc = rng.uniform(cfg.theta_box[0], cfg.theta_box[1], size=fam.d1)
    mat = np.zeros((fam.d2, fam.d2))
    if fam.d2:
        lam = rng.uniform(cfg.mat_box[0], cfg.mat_box[1], size=fam.d2)
        Q, R = np.linalg.qr(rng.standard_normal((fam.d2, fam.d2)))
        Q = Q * np.sign(np.diag(R))
        mat = (Q * lam) @ Q.T
        mat = 0.5 * (mat + mat.T)
    ex = {e: rng.uniform(*cfg.extra_box[e]) for e in fam.extras}
    from .measures import ParamPoint
    return fam.coords(ParamPoint(loc, mat, ex))


def _in_box(cfg: ScatterConfig, c: np.ndarray) -> bool:
    fam = cfg.family
    try:
        p = fam.from_coords(c)
        fam.validate(p)
    except MixidentError:
        return False
    if np.any(p.loc < cfg.theta_box[0]) or np.any(p.loc > cfg.theta_box[1]):
        return False
    if fam.d2:
        lam = np.linalg.eigvalsh(p.mat)
        if lam[0] < cfg.mat_box[0] * (1 - 1e-12) or lam[-1] > cfg.mat_box[1] * (1 + 1e-12):
            return False
    return all(cfg.extra_box[e][0] <= p.extras[e] <= cfg.extra_box[e][1] for e in fam.extras)


def _parents(cfg: ScatterConfig, rng, same_parent: bool):
    k0 = cfg.G0.k
    extra = cfg.k - k0
    if same_parent:
        par = [int(rng.integers(k0))] * extra
    else:
        par = [int(v) for v in rng.integers(k0, size=extra)]
    return list(range(k0)) + par


def _split_weights(cfg: ScatterConfig, parents, rng) -> np.ndarray:
    w = np.zeros(len(parents))
    for i, pw in enumerate(cfg.G0.weights):
        kids = [j for j, q in enumerate(parents) if q == i]
        w[kids] = pw * (rng.dirichlet(np.ones(len(kids))) if len(kids) > 1 else 1.0)
    return w


_POOLS: dict = {}


def _polysys_pool(s: int, size: int) -> list:
    """Nontrivial solutions of the Gaussian system at r = rbar - 1, one per seed."""
    key = (s, size)
    if key not in _POOLS:
        r = polysys.RBAR_TABLE.get(s - 1, 3) - 1
        sys = polysys.gaussian_system(s, r)
        sols = []
        for seed in range(size):
            rep = polysys.find_nontrivial(sys, budget=200, seed=seed)
            if rep.found:
                sols.append(rep.solution)
        if not sols:
            raise DependencyError("no nontrivial solution of the Gaussian rate system")
        _POOLS[key] = sols
    return _POOLS[key]


def scatter_measure(cfg: ScatterConfig, index: int) -> tuple:
    """(strategy, G) for one sample; deterministic in (cfg.seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    names = sorted(cfg.strategies)
    probs = np.array([cfg.strategies[n] for n in names], dtype=float)
    strat = names[int(rng.choice(len(names), p=probs / probs.sum()))]
    if cfg.setting == "exact" and strat != "contract":
        strat = "contract"
    t = 10.0 ** rng.uniform(*cfg.t_range)
    fam = cfg.family
    base = [fam.coords(p) for p in cfg.G0.points]
    for attempt in range(200):
        if attempt and attempt % 20 == 0:
            t *= 0.5
        if strat == "polysys":
            G = _polysys_sample(cfg, rng, t, base)
        else:
            parents = _parents(cfg, rng, strat == "balanced")
            wsplit = _split_weights(cfg, parents, rng)
            U = [_random_point(cfg, rng) for _ in parents]
            off = [t * (u - base[q]) for u, q in zip(U, parents)]
            if strat == "balanced":
                w = wsplit
                for i in range(cfg.G0.k):
                    kids = [j for j, q in enumerate(parents) if q == i]
                    if len(kids) == 1:
                        off[kids[0]] = np.zeros_like(off[kids[0]])
                    else:
                        mean = sum(w[j] * off[j] for j in kids) / w[kids].sum()
                        for j in kids:
                            off[j] = off[j] - mean
            else:
                wu = rng.dirichlet(np.ones(len(parents)))
                w = (1 - t) * wsplit + t * wu
            coords = [base[q] + o for q, o in zip(parents, off)]
            if not all(_in_box(cfg, c) for c in coords):
                continue
            try:
                G = MixingMeasure(w, [fam.from_coords(c) for c in coords], normalize=True)
            except MixidentError:
                continue
        if G is not None:
            return strat, G
    raise DomainError("could not draw a mixing measure inside the box")


def _polysys_sample(cfg: ScatterConfig, rng, t: float, base):
    fam = cfg.family
    if fam.kind != "gaussian" or fam.dim != 1 or cfg.k == cfg.G0.k:
        raise DomainError("the polysys strategy needs an over-fitted 1-D Gaussian")
    s = cfg.k - cfg.G0.k + 1
    sols = _polysys_pool(s, cfg.polysys_pool)
    sol = sols[int(rng.integers(len(sols)))]
    i = int(rng.integers(cfg.G0.k))
    c2 = np.asarray(sol["c"]) ** 2
    a, b = np.asarray(sol["a"]), np.asarray(sol["b"])
    th, v = base[i][0], base[i][1]
    tau = t * math.sqrt(v)
    w, pts = [], []
    for j in range(cfg.G0.k):
        if j == i:
            continue
        w.append(cfg.G0.weights[j])
        pts.append(cfg.G0.points[j])
    for j in range(s):
        c = np.array([th + a[j] * tau, v + 2 * b[j] * tau * tau])
        if not _in_box(cfg, c):
            return None
        w.append(cfg.G0.weights[i] * c2[j] / c2.sum())
        pts.append(fam.from_coords(c))
    try:
        return MixingMeasure(w, pts, normalize=True)
    except MixidentError:
        return None


def scatter_row(cfg: ScatterConfig, index: int) -> list:
    _, G = scatter_measure(cfg, index)
    spec = default_spec(cfg.family, [G, cfg.G0], eps=cfg.eps, rtol=cfg.rtol, nodes=cfg.nodes)
    if cfg.family.dim == 1:
        spec.atol = 1e-16
    res = distances(G, cfg.G0, cfg.family, spec)
    W1 = wasserstein_value(G, cfg.G0, 1.0)
    W2 = wasserstein_value(G, cfg.G0, 2.0)
    Wr = wasserstein_value(G, cfg.G0, cfg.r)
    return [index, W1, W2, Wr, res.V, res.h]


def _rows_parallel(func, cfg, indices, threads: int) -> list:
    if threads > 1 and len(indices) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(func, [cfg] * len(indices), indices, chunksize=8))
    return [func(cfg, i) for i in indices]


@dataclass
class Envelope:
    slope: float
    intercept: float
    points: list

    @property
    def constant(self) -> float:
        return math.exp(self.intercept)


def fit_envelope(x, y, bins: int = 20, lower: bool = True) -> Envelope:
    """Least squares of log y on log x over per-bin extreme points (log-spaced bins in x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    lx, ly = np.log(x[ok]), np.log(y[ok])
    if lx.size < 2 or np.ptp(lx) == 0:
        return Envelope(float("nan"), float("nan"), [])
    edges = np.linspace(lx.min(), lx.max(), bins + 1)
    idx = np.clip(np.searchsorted(edges, lx, side="right") - 1, 0, bins - 1)
    pts = []
    for b in range(bins):
        sel = np.flatnonzero(idx == b)
        if sel.size == 0:
            continue
        j = sel[np.argmin(ly[sel])] if lower else sel[np.argmax(ly[sel])]
        pts.append((float(lx[j]), float(ly[j])))
    if len(pts) < 2:
        return Envelope(float("nan"), float("nan"), pts)
    P = np.array(pts)
    slope, icpt = np.polyfit(P[:, 0], P[:, 1], 1)
    return Envelope(float(slope), float(icpt), pts)


@dataclass
class ScatterResult:
    rows: list
    lower: Envelope
    upper: Envelope
    config: ScatterConfig

    def summary(self) -> dict:
        return {"M": len(self.rows), "envelope_on": self.config.envelope_on, "r": self.config.r,
                "setting": self.config.setting,
                "lower_slope": self.lower.slope, "lower_constant": self.lower.constant,
                "upper_slope": self.upper.slope, "upper_constant": self.upper.constant}


def run_scatter(cfg: ScatterConfig) -> ScatterResult:
    rows = _rows_parallel(scatter_row, cfg, list(range(cfg.M)), cfg.threads)
    col = SCATTER_HEADER.index(cfg.envelope_on)
    x = [row[col] for row in rows]
    V = [row[4] for row in rows]
    return ScatterResult(rows, fit_envelope(x, V, cfg.bins, True), fit_envelope(x, V, cfg.bins, False), cfg)


def scatter_preset(name: str, M: int = 2000, seed: int = 0, threads: int = 1) -> ScatterConfig:
    if name.startswith("student_t"):
        fam, G0 = student_t_g0()
        common = dict(family=fam, G0=G0, theta_box=(-10.0, 10.0), mat_box=(2.0, 4.0), M=M, seed=seed,
                      threads=threads)
        if name == "student_t_exact":
            return ScatterConfig(envelope_on="W1", r=1.0, **common)
        if name == "student_t_over":
            return ScatterConfig(k=3, envelope_on="W2", r=2.0, strategies={"contract": 0.5, "balanced": 0.5}, **common)
    if name.startswith("gaussian_weak"):
        fam, G0 = gaussian_weak_g0()
        common = dict(family=fam, G0=G0, theta_box=(-10.0, 10.0), mat_box=(0.25, 25.0), M=M, seed=seed,
                      threads=threads, eps=1e-12, rtol=1e-5, nodes=10)
        if name == "gaussian_weak_exact":
            return ScatterConfig(envelope_on="W1", r=1.0, **common)
        if name == "gaussian_weak_over1":
            return ScatterConfig(k=3, envelope_on="Wr", r=4.0,
                                 strategies={"contract": 0.4, "balanced": 0.3, "polysys": 0.3}, **common)
        if name == "gaussian_weak_over2":
            return ScatterConfig(k=4, envelope_on="Wr", r=6.0,
                                 strategies={"contract": 0.4, "balanced": 0.3, "polysys": 0.3}, **common)
    if name.startswith("skew_"):
        case = name[len("skew_"):]
        fam, G0 = skew_g0(case)
        return ScatterConfig(family=fam, G0=G0, theta_box=(-10.0, 10.0), mat_box=(0.25, 25.0),
                             extra_box={"m": (-5.0, 5.0)}, M=M, seed=seed, threads=threads,
                             envelope_on="W1", r=1.0, eps=1e-12, rtol=1e-5, nodes=10)
    raise DomainError(f"unknown scatter preset {name!r}")


SCATTER_PRESETS = ("student_t_exact", "student_t_over", "gaussian_weak_exact", "gaussian_weak_over1",
                   "gaussian_weak_over2", "skew_generic", "skew_conformant", "skew_nonconformant")


# --- rate sweeps ---------------------------------------------------------------------

@dataclass
class RateSweepConfig:
    family: Family
    G0: MixingMeasure
    k: int
    n_grid: tuple = (1000, 2000, 5000, 10000, 20000, 50000)
    R: int = 7
    r: float = 1.0
    seed: int = 0
    restarts: int = 10
    max_iter: int = 1000
    tol: float = 1e-10
    eig_lo: float = 0.05
    eig_hi: float = 20.0
    shape_bounds: tuple = (1e-3, 1e4)
    rate_bounds: tuple = (1e-6, 1e6)
    bootstrap: int = 1000
    threads: int = 1

    def __post_init__(self):
        if list(self.n_grid) != sorted(set(self.n_grid)):
            raise ValueError("n grid must be strictly increasing")
        if self.R < 3:
            raise ValueError("R must be >= 3")
        if self.family.kind not in ("gaussian", "gamma"):
            raise ValueError("rate sweeps support Gaussian and Gamma families")


def rate_cell(cfg: RateSweepConfig, cell: tuple) -> list:
    n, rep = cell
    X = sample(cfg.family, cfg.G0, n, [cfg.seed, n, rep])
    fc = FitConfig(k=cfg.k, restarts=cfg.restarts, max_iter=cfg.max_iter, tol=cfg.tol, eig_lo=cfg.eig_lo,
                   eig_hi=cfg.eig_hi, shape_bounds=tuple(cfg.shape_bounds), rate_bounds=tuple(cfg.rate_bounds),
                   seed=int(np.random.SeedSequence([cfg.seed, n, rep]).generate_state(1)[0]))
    try:
        fit = fit_gaussian_em(X, fc) if cfg.family.kind == "gaussian" else fit_gamma_mle(X, fc)
    except MixidentError:
        return [n, rep, float("nan"), False]
    return [n, rep, wasserstein_value(fit.G_hat, cfg.G0, cfg.r), bool(fit.converged)]


@dataclass
class SlopeFit:
    slope: float
    ci: tuple
    curvature: float
    curvature_ci: tuple
    failures: int

    @property
    def nonpolynomial(self) -> bool:
        """Log-log curve bends upward (decay slowing down) with a CI excluding zero."""
        return bool(self.curvature_ci[0] > 0)

    def to_dict(self) -> dict:
        return {"slope": self.slope, "ci": list(self.ci), "curvature": self.curvature,
                "curvature_ci": list(self.curvature_ci), "failures": self.failures,
                "nonpolynomial": self.nonpolynomial}


def fit_slope(rows, bootstrap: int = 1000, seed: int = 0) -> SlopeFit:
    """Slope of mean log W_r against log n, with a replicate bootstrap CI and a curvature test."""
    good = [row for row in rows if np.isfinite(row[2]) and row[2] > 0]
    failures = len(rows) - len(good)
    ns = sorted({row[0] for row in good})
    by_n = {n: np.log([row[2] for row in good if row[0] == n]) for n in ns}
    x = np.log(np.array(ns, dtype=float))

    def stats(groups):
        y = np.array([g.mean() for g in groups])
        s = np.polyfit(x, y, 1)[0]
        c = np.polyfit(x - x.mean(), y, 2)[0] if len(x) >= 3 else float("nan")
        return s, c

    slope, curv = stats([by_n[n] for n in ns])
    rng = np.random.default_rng([seed, 7919])
    boots = np.array([stats([g[rng.integers(len(g), size=len(g))] for g in (by_n[n] for n in ns)])
                      for _ in range(bootstrap)]) if len(ns) >= 2 else np.full((1, 2), np.nan)
    ci = tuple(float(v) for v in np.percentile(boots[:, 0], [2.5, 97.5]))
    cci = tuple(float(v) for v in np.percentile(boots[:, 1], [2.5, 97.5]))
    return SlopeFit(float(slope), ci, float(curv), cci, failures)


@dataclass
class RateResult:
    rows: list
    fit: SlopeFit
    config: RateSweepConfig


def run_rate_sweep(cfg: RateSweepConfig) -> RateResult:
    cells = [(n, rep) for n in cfg.n_grid for rep in range(cfg.R)]
    rows = _rows_parallel(rate_cell, cfg, cells, cfg.threads)
    return RateResult(rows, fit_slope(rows, cfg.bootstrap, cfg.seed), cfg)


# compact parameter set for the Gamma fits; without it over-fitted MLEs can park an atom
# at huge (a, b) on a small cluster of points
GAMMA_BOX = dict(shape_bounds=(0.5, 20.0), rate_bounds=(0.1, 20.0))


def rate_preset(name: str, seed: int = 0, threads: int = 1, **kw) -> RateSweepConfig:
    if name == "gaussian_exact_rate":
        fam, G0 = gaussian_mle_g0()
        base = dict(k=3, r=1.0)
    elif name == "gaussian_over1_rate":
        fam, G0 = gaussian_mle_g0()
        base = dict(k=4, r=4.0, restarts=5, tol=1e-8, max_iter=2000)
    elif name == "gamma_generic_rate":
        fam, G0 = gamma_g0("generic")
        base = dict(k=2, r=1.0, **GAMMA_BOX)
    elif name == "gamma_generic_over_rate":
        fam, G0 = gamma_g0("generic")
        base = dict(k=3, r=2.0, restarts=5, tol=1e-8, max_iter=2000, **GAMMA_BOX)
    elif name == "gamma_pathological_rate":
        fam, G0 = gamma_g0("pathological")
        base = dict(k=2, r=1.0, tol=1e-8, max_iter=2000, **GAMMA_BOX)
    else:
        raise DomainError(f"unknown rate preset {name!r}")
    base.update(kw)
    return RateSweepConfig(family=fam, G0=G0, seed=seed, threads=threads, **base)


RATE_PRESETS = ("gaussian_exact_rate", "gaussian_over1_rate", "gamma_generic_rate", "gamma_generic_over_rate",
                "gamma_pathological_rate")


# --- adversarial sequences -------------------------------------------------------------

ADVERSARIAL_KINDS = ("two_sided_split", "gaussian_overfit_collapse", "gamma_pathological",
                     "location_exponential", "skew_nonconformant", "unbounded_support")


def _half_decades(lo: int, hi: int) -> list:
    return [int(round(10 ** (k / 2))) for k in range(2 * lo, 2 * hi + 1)]


@dataclass
class AdversarialSequence:
    """G_n constructor for one proof construction.

    ``build(n)`` returns mpmath atoms [(weight, params)], so offsets far below double
    precision stay exact.  ``measure`` is "W1^r" (ratio V / W_1^r), "Wr^r" (V / W_r^r)
    or "exp" (exp(1 / W_r^beta) h).
    """

    kind: str
    family: Family
    G0: MixingMeasure
    build: object
    orders: tuple
    measure: str
    n_list: list
    dps: object = 50
    beta: float = 1.0
    notes: str = ""
    base: object = None

    def g0_atoms(self) -> list:
        return self.base() if self.base is not None else mp_atoms(self.family, self.G0)


def mp_wasserstein(A, B, r: float):
    """W_r between mpmath atom lists.

    Mass shared by identical atoms is matched exactly first; only the remainder goes
    through the float transport solver, rescaled to unit mass.  This keeps masses
    far below double precision (e.g. exp(-300)) intact.
    """
    import mpmath as mp

    D = [[mp.fsum(abs(p[key] - q[key]) for key in p) for _, q in B] for _, p in A]
    a = [w for w, _ in A]
    b = [w for w, _ in B]
    for i in range(len(A)):
        for j in range(len(B)):
            if D[i][j] == 0:
                m = min(a[i], b[j])
                a[i] -= m
                b[j] -= m
    total = mp.fsum(a)
    if total <= 0:
        return mp.mpf(0)
    C = np.array([[float((D[i][j] / max(max(row) for row in D)) ** r) for j in range(len(B))]
                  for i in range(len(A))])
    cost, _ = transport([float(x / total) for x in a], [float(x / mp.fsum(b)) for x in b], C)
    scale = max(max(row) for row in D) ** r
    return (mp.mpf(max(cost, 0.0)) * total * scale) ** (mp.mpf(1) / r)


def adversarial_sequence(kind: str) -> AdversarialSequence:
    import mpmath as mp

    if kind == "two_sided_split":
        fam, G0 = gaussian_weak_g0()

        def build(n):
            (w1, p1), rest = mp_atoms(fam, G0)[0], mp_atoms(fam, G0)[1:]
            d = mp.mpf(1) / n
            lo = {"theta": p1["theta"] - d, "v": p1["v"] - d}
            hi = {"theta": p1["theta"] + d, "v": p1["v"] + d}
            return [(w1 / 2, lo), (w1 / 2, hi)] + rest

        return AdversarialSequence(kind, fam, G0, build, (1.5,), "W1^r", _half_decades(1, 10), dps=60)

    if kind == "gaussian_overfit_collapse":
        fam, G0 = gaussian_weak_g0()
        rep = polysys.find_nontrivial(polysys.gaussian_system(2, polysys.RBAR_TABLE[1] - 1), budget=500, seed=0)
        if not rep.found:
            raise DependencyError("no nontrivial solution at r = rbar - 1; the collapse sequence needs one")
        sol, _ = polysys.polish(polysys.gaussian_system(2, polysys.RBAR_TABLE[1] - 1), rep.solution, dps=80)

        def build(n):
            with mp.workdps(60):
                atoms = mp_atoms(fam, G0)
                (w1, p1), rest = atoms[0], atoms[1:]
                c2 = [c ** 2 for c in sol["c"]]
                tot = mp.fsum(c2)
                kids = [(w1 * c / tot, {"theta": p1["theta"] + a / n, "v": p1["v"] + 2 * b / mp.mpf(n) ** 2})
                        for c, a, b in zip(c2, sol["a"], sol["b"])]
                return kids + rest

        return AdversarialSequence(kind, fam, G0, build, (3.0,), "W1^r", _half_decades(1, 6), dps=60,
                                   notes="polysys solution " + str({k: [float(x) for x in v] for k, v in sol.items()}))

    if kind == "gamma_pathological":
        fam, G0 = gamma_g0("pathological")

        def build(n):
            (w1, p1), (w2, p2) = mp_atoms(fam, G0)
            b2 = p1["b"] * (1 + 1 / (p2["a"] * (n * w2 - 1)))
            return [(w1 + mp.mpf(1) / n, dict(p1)), (w2 - mp.mpf(1) / n, {"a": p2["a"], "b": b2})]

        return AdversarialSequence(kind, fam, G0, build, (1.0, 2.0), "Wr^r", _half_decades(1, 6), dps=50)

    if kind == "location_exponential":
        fam = LocationExponential()
        G0 = _measure(fam, [0.4, 0.6], [dict(loc=0.0, sigma=1.0), dict(loc=2.0, sigma=2.0)])
        r = 1.0
        R = int(math.floor(r)) + 1

        def offset(c, sigma):
            # solve sum_{j<=R} u^j / j! = c for the root u near 0; delta = sigma u
            poly = [mp.mpf(1) / mp.factorial(j) for j in range(R, 0, -1)] + [-c]
            roots = mp.polyroots(poly, maxsteps=200, extraprec=60)
            u = min((z.real for z in roots if abs(z.imag) < mp.mpf(10) ** -30), key=abs)
            return sigma * u

        def build(n):
            out = []
            for (w, p), sgn in zip(mp_atoms(fam, G0), (1, -1)):
                dp = mp.mpf(sgn) / n
                delta = offset(dp / w, p["sigma"])
                out.append((w + dp, {"theta": p["theta"] - delta, "sigma": p["sigma"]}))
            return out

        return AdversarialSequence(kind, fam, G0, build, (r,), "W1^r", _half_decades(1, 6), dps=50)

    if kind == "skew_nonconformant":
        # cousins A, B need p_B m_A + p_A m_B = 0 for the second-order term to cancel
        sa, sb = math.sqrt(3), math.sqrt(8)
        w = [1 / 3, (2 / 3) * sa / (sa + sb), (2 / 3) * sb / (sa + sb)]
        fam, G0 = skew_g0("nonconformant", weights=w)

        def build(n):
            with mp.workdps(60):
                s3, s8 = mp.sqrt(3), mp.sqrt(8)
                W = [mp.mpf(1) / 3, mp.mpf(2) / 3 * s3 / (s3 + s8), mp.mpf(2) / 3 * s8 / (s3 + s8)]
                P = [{"theta": mp.mpf(-2), "v": mp.mpf(1), "m": mp.mpf(0)},
                     {"theta": mp.mpf(4), "v": mp.mpf(4), "m": s3},
                     {"theta": mp.mpf(4), "v": mp.mpf(9), "m": -s8}]
                dB = mp.mpf(1) / n
                dA = -(W[2] * P[1]["v"] / (W[1] * P[2]["v"])) * dB
                A = dict(P[1], m=P[1]["m"] + dA)
                B = dict(P[2], m=P[2]["m"] + dB)
                return [(W[0], P[0]), (W[1], A), (W[2], B)]

        def base():
            atoms = build(1)
            with mp.workdps(60):
                return [atoms[0], (atoms[1][0], dict(atoms[1][1], m=mp.sqrt(3))),
                        (atoms[2][0], dict(atoms[2][1], m=-mp.sqrt(8)))]

        return AdversarialSequence(kind, fam, G0, build, (2.0,), "W1^r", _half_decades(1, 6), dps=60,
                                   base=base)

    if kind == "unbounded_support":
        fam, G0 = gaussian_weak_g0()
        r, beta = 2.0, 1.0
        alpha = 1 / (2 * beta)

        def build(n):
            atoms = mp_atoms(fam, G0)
            (w1, p1), rest = atoms[0], atoms[1:]
            e = mp.exp(-n)
            wide = {"theta": p1["theta"], "v": p1["v"] + mp.exp(mp.mpf(n) / r) / mp.mpf(n) ** alpha}
            return [(w1 - e, dict(p1))] + rest + [(e, wide)]

        return AdversarialSequence(kind, fam, G0, build, (r,), "exp", [5, 10, 20, 50, 100, 150, 200, 300],
                                   dps=lambda n: 40 + int(n / math.log(10)), beta=beta)

    raise DomainError(f"unknown adversarial kind {kind!r}")


@dataclass
class AdversarialResult:
    kind: str
    rows: list
    verdicts: list

    @property
    def passed(self) -> bool:
        return all(v["pass"] for v in self.verdicts)


def check_ratios(ns, ratios, burn_in: int = 100, drop: float = 1e-3) -> dict:
    """Monotone decrease beyond the burn-in and a final value below drop times the first one."""
    pairs = [(n, q) for n, q in zip(ns, ratios) if n >= burn_in]
    vals = [q for _, q in pairs]
    mono = all(b < a for a, b in zip(vals, vals[1:]))
    rel = vals[-1] / vals[0] if vals and vals[0] > 0 else float("nan")
    return {"monotone": bool(mono), "relative_drop": float(rel), "pass": bool(mono and rel < drop)}


def run_adversarial(kind: str, n_list=None, burn_in: int = 100) -> AdversarialResult:
    import mpmath as mp

    seq = adversarial_sequence(kind)
    ns = list(seq.n_list if n_list is None else n_list)
    rows = []
    for n in ns:
        dps = seq.dps(n) if callable(seq.dps) else seq.dps
        with mp.workdps(dps):
            A = seq.build(n)
            B = seq.g0_atoms()
            res = distances_mp(seq.family, A, B, dps=dps)
            for r in seq.orders:
                if seq.measure == "W1^r":
                    W = mp_wasserstein(A, B, 1.0)
                    ratio = res.extra["V_mp"] / W ** r
                elif seq.measure == "Wr^r":
                    W = mp_wasserstein(A, B, r)
                    ratio = res.extra["V_mp"] / W ** r
                else:
                    W = mp_wasserstein(A, B, r)
                    ratio = mp.exp(1 / W ** seq.beta) * mp.sqrt(res.extra["h2_mp"])
                rows.append([n, r, float(W), res.V, res.h, float(ratio)])
    verdicts = []
    for r in seq.orders:
        sub = [row for row in rows if row[1] == r]
        v = check_ratios([row[0] for row in sub], [row[5] for row in sub], burn_in)
        v["r"] = r
        verdicts.append(v)
    return AdversarialResult(kind, rows, verdicts)


# --- output ------------------------------------------------------------------------------

def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_csv(path, header, rows, meta: dict | None = None) -> None:
    """CSV with optional '# key=value' provenance lines before the header row."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def read_csv_body(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [line for line in fh if not line.startswith("#")]


def svg_loglog(series, title: str, xlabel: str, ylabel: str, guides=(), width: int = 480,
               height: int = 360) -> str:
    """Self-contained log-log scatter.

    series: list of (label, xs, ys, colour); guides: list of (slope, intercept) lines in log space.
    """
    pts = [(math.log10(x), math.log10(y)) for _, xs, ys, _ in series for x, y in zip(xs, ys)
           if x > 0 and y > 0 and math.isfinite(x) and math.isfinite(y)]
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    x1, y1 = max(x1, x0 + 1e-9), max(y1, y0 + 1e-9)
    L, R, T, B = 60, 20, 30, 50

    def sx(v):
        return L + (v - x0) / (x1 - x0) * (width - L - R)

    def sy(v):
        return height - B - (v - y0) / (y1 - y0) * (height - T - B)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="16" text-anchor="middle">{title}</text>',
           f'<line x1="{L}" y1="{height - B}" x2="{width - R}" y2="{height - B}" stroke="black"/>',
           f'<line x1="{L}" y1="{T}" x2="{L}" y2="{height - B}" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle">log10 {xlabel}</text>',
           f'<text x="14" y="{height / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 14 {height / 2:.1f})">log10 {ylabel}</text>']
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{sx(v):.1f}" y="{height - B + 14}" text-anchor="middle">{v:.2f}</text>')
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{L - 4}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.2f}</text>')
    for label, xs, ys, colour in series:
        for x, y in zip(xs, ys):
            if x > 0 and y > 0 and math.isfinite(x) and math.isfinite(y):
                out.append(f'<circle cx="{sx(math.log10(x)):.2f}" cy="{sy(math.log10(y)):.2f}" r="1.6" '
                           f'fill="{colour}" fill-opacity="0.6"/>')
    for i, (slope, icpt) in enumerate(guides):
        ya, yb = icpt + slope * x0, icpt + slope * x1
        out.append(f'<line x1="{sx(x0):.2f}" y1="{sy(ya):.2f}" x2="{sx(x1):.2f}" y2="{sy(yb):.2f}" '
                   f'stroke="#555" stroke-dasharray="4 3"/>')
        out.append(f'<text x="{width - R - 4}" y="{T + 14 * (i + 1)}" text-anchor="end">slope {slope:.2f}</text>')
    for i, (label, _, _, colour) in enumerate(series):
        out.append(f'<text x="{L + 8}" y="{T + 14 * (i + 1)}" fill="{colour}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def envelope_guides(env: Envelope) -> tuple:
    """Envelope line converted from natural logs to log10 coordinates."""
    if not math.isfinite(env.slope):
        return ()
    return ((env.slope, env.intercept / math.log(10)),)
