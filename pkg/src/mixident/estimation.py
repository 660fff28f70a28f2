"""Maximum-likelihood fitting of mixing measures.

EM for location-covariance Gaussian mixtures and for Gamma (shape, rate)
mixtures, each with seeded multistart.  Data are sorted into a canonical order
first, so results do not depend on the order of the input rows.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .errors import DomainError
from .families import GammaShapeRate
from .measures import MixingMeasure, ParamPoint

LOG_2PI = math.log(2 * math.pi)


@dataclass
class FitConfig:
    """EM settings.

    eig_lo and eig_hi are the bounds lambda_lo, lambda_hi on the square roots of
    covariance eigenvalues, so eigenvalues are clamped to [eig_lo^2, eig_hi^2].
    """

    k: int
    restarts: int = 10
    max_iter: int = 1000
    tol: float = 1e-10
    eig_lo: float = 0.05
    eig_hi: float = 20.0
    theta_lo: float | None = None
    theta_hi: float | None = None
    shape_bounds: tuple = (1e-3, 1e4)
    rate_bounds: tuple = (1e-6, 1e6)
    weight_floor: float = 1e-6
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.eig_lo <= self.eig_hi:
            raise ValueError("need 0 < eig_lo <= eig_hi")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class FitResult:
    G_hat: MixingMeasure
    loglik: float
    iterations: int
    restart: int
    converged: bool
    trace: list = field(default_factory=list)
    monotone: bool = True
    collapsed: list = field(default_factory=list)
    all_logliks: list = field(default_factory=list)

    def to_dict(self, family: dict | None = None) -> dict:
        return {
            "G_hat": self.G_hat.to_dict(family),
            "loglik": self.loglik,
            "iterations": self.iterations,
            "restart": self.restart,
            "converged": self.converged,
            "monotone": self.monotone,
            "collapsed_restarts": self.collapsed,
            "restart_logliks": self.all_logliks,
        }


def _canonical(X: np.ndarray) -> np.ndarray:
    order = np.lexsort(X.T[::-1])
    return np.ascontiguousarray(X[order])


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        tot = d2.sum()
        if tot <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.uniform(0, tot)))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _clamp_cov(S: np.ndarray, lo: float, hi: float) -> np.ndarray:
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    w = np.clip(w, lo * lo, hi * hi)
    return (V * w) @ V.T


def _floor_weights(pi: np.ndarray, floor: float) -> np.ndarray:
    if floor <= 0 or np.all(pi >= floor):
        return pi
    pi = np.maximum(pi, floor)
    return pi / pi.sum()


# --- Gaussian -------------------------------------------------------------------

def _gauss_logpdf(X, mu, S):
    L = np.linalg.cholesky(S)
    z = linalg.solve_triangular(L, (X - mu).T, lower=True, check_finite=False)
    d = X.shape[1]
    return -0.5 * (d * LOG_2PI + 2 * np.sum(np.log(np.diag(L))) + np.sum(z * z, axis=0))


def _gauss_run(X: np.ndarray, cfg: FitConfig, index: int):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    n, d = X.shape
    k = cfg.k
    mu = _kmeanspp(X, k, rng)
    S0 = _clamp_cov(np.atleast_2d(np.cov(X.T)), cfg.eig_lo, cfg.eig_hi)
    covs = np.array([S0.copy() for _ in range(k)])
    pi = np.full(k, 1.0 / k)
    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        logp = np.stack([math.log(pi[j]) + _gauss_logpdf(X, mu[j], covs[j]) for j in range(k)], axis=1)
        lse = _lse(logp)
        ll = float(math.fsum(lse))
        trace.append(ll)
        if not np.isfinite(ll):
            return None
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= cfg.tol * (1 + abs(ll)):
            converged = True
            break
        resp = np.exp(logp - lse[:, None])
        Nk = resp.sum(axis=0)
        if np.any(Nk <= 0):
            return None
        pi = _floor_weights(Nk / n, cfg.weight_floor)
        mu = (resp.T @ X) / Nk[:, None]
        if cfg.theta_lo is not None or cfg.theta_hi is not None:
            mu = np.clip(mu, cfg.theta_lo, cfg.theta_hi)
        for j in range(k):
            Z = X - mu[j]
            covs[j] = _clamp_cov((resp[:, j, None] * Z).T @ Z / Nk[j], cfg.eig_lo, cfg.eig_hi)
    # reported weights come from a last E-step without the floor
    logp = np.stack([math.log(pi[j]) + _gauss_logpdf(X, mu[j], covs[j]) for j in range(k)], axis=1)
    resp = np.exp(logp - _lse(logp)[:, None])
    raw = resp.sum(axis=0) / n
    return {"pi": raw, "mu": mu, "covs": covs, "ll": trace[-1], "it": it, "conv": converged, "trace": trace}


def _lse(logp):
    m = logp.max(axis=1)
    return m + np.log(np.exp(logp - m[:, None]).sum(axis=1))


def _monotone(trace, slack=1e-9) -> bool:
    return all(b >= a - slack * max(1.0, abs(a)) for a, b in zip(trace, trace[1:]))


def _run_restarts(worker, X, cfg):
    idx = list(range(cfg.restarts))
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            outs = list(ex.map(worker, [X] * len(idx), [cfg] * len(idx), idx))
    else:
        outs = [worker(X, cfg, i) for i in idx]
    return outs


def _pick(outs, build):
    collapsed = [i for i, o in enumerate(outs) if o is None]
    lls = [None if o is None else o["ll"] for o in outs]
    live = [i for i, o in enumerate(outs) if o is not None]
    if not live:
        raise DomainError("every restart collapsed")
    best = max(live, key=lambda i: (outs[i]["ll"], -i))
    o = outs[best]
    G = build(o)
    return FitResult(G, o["ll"], o["it"], best, o["conv"], o["trace"], _monotone(o["trace"]), collapsed, lls)


def _measure(weights, points) -> MixingMeasure:
    keep = [i for i, w in enumerate(weights) if w > 0]
    w = np.asarray([weights[i] for i in keep], dtype=float)
    return MixingMeasure(w / w.sum(), [points[i] for i in keep], normalize=True)


def fit_gaussian_em(data, config: FitConfig) -> FitResult:
    """EM for a k-component location-covariance Gaussian mixture; best of the restarts."""
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if len(X) == 0 or not np.all(np.isfinite(X)):
        raise DomainError("data must be nonempty and finite")
    X = _canonical(X)
    outs = _run_restarts(_gauss_run, X, config)

    def build(o):
        pts = [ParamPoint(o["mu"][j], o["covs"][j], {}) for j in range(config.k)]
        return _measure(o["pi"], pts)

    return _pick(outs, build)


# --- Gamma ----------------------------------------------------------------------

def gamma_shape_solve(s: float, lo: float = 1e-3, hi: float = 1e4) -> float:
    """Solve log a - digamma(a) = s (s > 0) by safeguarded Newton with a bisection fallback."""
    if not s > 0:
        raise DomainError("need log-mean minus mean-log > 0")
    f = lambda a: math.log(a) - special.digamma(a) - s  # noqa: E731
    # f is decreasing in a; keep a bracket [L, H] with f(L) > 0 > f(H)
    L, H = lo, hi
    if f(L) <= 0:
        return L
    if f(H) >= 0:
        return H
    a = (3 - s + math.sqrt((s - 3) ** 2 + 24 * s)) / (12 * s)
    a = min(max(a, L), H)
    for _ in range(100):
        fa = f(a)
        if fa > 0:
            L = a
        else:
            H = a
        if abs(fa) < 1e-14 * max(1.0, s):
            return a
        d = 1.0 / a - float(special.polygamma(1, a))
        step = a - fa / d if d < 0 else 0.5 * (L + H)
        if not (L < step < H):
            step = 0.5 * (L + H)
        if abs(step - a) <= 1e-15 * a:
            return step
        a = step
    return a


def _gamma_logpdf(x, lx, a, b):
    return a * math.log(b) - special.gammaln(a) + (a - 1) * lx - b * x


def _gamma_run(x: np.ndarray, cfg: FitConfig, index: int):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    k = cfg.k
    n = len(x)
    lx = np.log(x)
    centers = np.sort(_kmeanspp(lx.reshape(-1, 1), k, rng)[:, 0])
    lab = np.argmin(np.abs(lx[:, None] - centers[None, :]), axis=1)
    a = np.zeros(k)
    b = np.zeros(k)
    for j in range(k):
        xs = x[lab == j] if np.sum(lab == j) >= 2 else x
        m, v = xs.mean(), xs.var() + 1e-12
        a[j] = np.clip(m * m / v, *cfg.shape_bounds)
        b[j] = np.clip(m / v, *cfg.rate_bounds)
    pi = np.full(k, 1.0 / k)
    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        logp = np.stack([math.log(pi[j]) + _gamma_logpdf(x, lx, a[j], b[j]) for j in range(k)], axis=1)
        lse = _lse(logp)
        ll = float(math.fsum(lse))
        trace.append(ll)
        if not np.isfinite(ll):
            return None
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= cfg.tol * (1 + abs(ll)):
            converged = True
            break
        resp = np.exp(logp - lse[:, None])
        Nk = resp.sum(axis=0)
        if np.any(Nk <= 0):
            return None
        pi = _floor_weights(Nk / n, cfg.weight_floor)
        for j in range(k):
            mx = float(resp[:, j] @ x) / Nk[j]
            mlx = float(resp[:, j] @ lx) / Nk[j]
            s = math.log(mx) - mlx
            if not s > 0:
                return None
            a[j] = gamma_shape_solve(s, *cfg.shape_bounds)
            b[j] = float(np.clip(a[j] / mx, *cfg.rate_bounds))
    logp = np.stack([math.log(pi[j]) + _gamma_logpdf(x, lx, a[j], b[j]) for j in range(k)], axis=1)
    resp = np.exp(logp - _lse(logp)[:, None])
    raw = resp.sum(axis=0) / n
    return {"pi": raw, "a": a.copy(), "b": b.copy(), "ll": trace[-1], "it": it, "conv": converged,
            "trace": trace}


def fit_gamma_mle(data, config: FitConfig) -> FitResult:
    """EM with exact weighted Gamma M-steps; best of the restarts."""
    x = np.asarray(data, dtype=float).reshape(-1)
    if len(x) == 0 or not np.all(np.isfinite(x)):
        raise DomainError("data must be nonempty and finite")
    if np.any(x <= 0):
        raise DomainError("Gamma data must be positive")
    x = np.sort(x)
    outs = _run_restarts(_gamma_run, x, config)
    fam = GammaShapeRate()

    def build(o):
        pts = [fam.make(a=float(o["a"][j]), b=float(o["b"][j])) for j in range(config.k)]
        return _measure(o["pi"], pts)

    return _pick(outs, build)


__all__ = ["FitConfig", "FitResult", "fit_gaussian_em", "fit_gamma_mle", "gamma_shape_solve"]
