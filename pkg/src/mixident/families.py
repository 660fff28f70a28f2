"""Kernel density families: densities, parameter derivatives, samplers.

Every family maps a ParamPoint to a flat coordinate vector (location entries,
upper-triangular matrix entries, extras).  Derivatives are reported along
symmetric matrix directions S_uv = (E_uv + E_vu)/2, so the matrix block of the
gradient is the usual symmetric dF/dSigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import special, stats

from .errors import BoundaryError, DomainError, SchemaError
from .measures import MixingMeasure, ParamPoint, Schema

LOG_2PI = math.log(2.0 * math.pi)
_EPS = np.finfo(float).eps


@dataclass
class DerivativeBundle:
    """Density and parameter derivatives at N data points.

    grad has shape (N, P) and hess (N, P, P) over the family's coordinates,
    with matrix coordinates taken along symmetric unit directions.
    """

    f: np.ndarray
    grad: np.ndarray
    hess: np.ndarray | None
    labels: list
    d1: int
    d2: int

    def _index(self, kind):
        return [i for i, lab in enumerate(self.labels) if lab[0] == kind]

    @property
    def d_theta(self) -> np.ndarray:
        return self.grad[:, self._index("loc")]

    @property
    def d_mat(self) -> np.ndarray:
        return _assemble_sym(self.grad[:, self._index("mat")], self.d2)

    @property
    def d_extras(self) -> dict:
        return {lab[1]: self.grad[:, i] for i, lab in enumerate(self.labels) if lab[0] == "extra"}

    @property
    def d2_theta(self) -> np.ndarray:
        idx = self._index("loc")
        return self.hess[:, idx][:, :, idx]

    @property
    def d2_theta_mat(self) -> np.ndarray:
        """(N, d1, d2, d2): derivative of dF/dtheta_a along each symmetric matrix direction."""
        li, mi = self._index("loc"), self._index("mat")
        block = self.hess[:, li][:, :, mi]
        return np.stack([_assemble_sym(block[:, a], self.d2) for a in range(len(li))], axis=1)

    @property
    def d2_mat(self) -> np.ndarray:
        mi = self._index("mat")
        return self.hess[:, mi][:, :, mi]


def _triu(d: int):
    return [(u, v) for u in range(d) for v in range(u, d)]


def _assemble_sym(cols: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros(cols.shape[:-1] + (d, d))
    for c, (u, v) in enumerate(_triu(d)):
        out[..., u, v] = cols[..., c]
        out[..., v, u] = cols[..., c]
    return out


def _as_data(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if dim == 1:
        return x.reshape(-1, 1)
    x = np.atleast_2d(x)
    if x.shape[1] != dim:
        raise SchemaError(f"data dimension {x.shape[1]} != {dim}")
    return x


class Family:
    """Base class.  Subclasses set kind, d1, d2, extras, dim and implement logpdf."""

    kind = "base"
    d1 = 0
    d2 = 0
    extras: tuple[str, ...] = ()
    dim = 1
    analytic = False
    convention = ""

    # --- descriptors -----------------------------------------------------
    @property
    def schema(self) -> Schema:
        return Schema(self.d1, self.d2, tuple(self.extras))

    def to_json(self) -> dict:
        return {"kind": self.kind}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.to_json()})"

    # --- coordinates -----------------------------------------------------
    @property
    def labels(self) -> list:
        labs = [("loc", i) for i in range(self.d1)]
        labs += [("mat", u, v) for u, v in _triu(self.d2)]
        labs += [("extra", e) for e in self.extras]
        return labs

    @property
    def coord_scale(self) -> np.ndarray:
        return np.array([0.5 if lab[0] == "mat" and lab[1] != lab[2] else 1.0 for lab in self.labels])

    def coords(self, p: ParamPoint) -> np.ndarray:
        vals = list(p.loc) + [p.mat[u, v] for u, v in _triu(self.d2)]
        vals += [p.extras[e] for e in self.extras]
        return np.array(vals, dtype=float)

    def from_coords(self, c) -> ParamPoint:
        c = np.asarray(c, dtype=float)
        loc = c[: self.d1]
        nm = len(_triu(self.d2))
        mat = _assemble_sym(c[self.d1: self.d1 + nm], self.d2)
        ex = dict(zip(self.extras, c[self.d1 + nm:]))
        return ParamPoint(loc, mat, ex)

    def validate(self, p: ParamPoint) -> None:
        if p.loc.size != self.d1 or p.mat.shape[0] != self.d2:
            raise SchemaError(f"{self.kind}: expected blocks ({self.d1},{self.d2})")
        if set(p.extras) != set(self.extras):
            raise SchemaError(f"{self.kind}: expected extras {self.extras}")
        self._check_domain(p)

    def _check_domain(self, p: ParamPoint) -> None:
        pass

    def make(self, loc=(), mat=(), **extras) -> ParamPoint:
        p = ParamPoint(loc, mat, extras)
        self.validate(p)
        return p

    # --- densities -------------------------------------------------------
    def logpdf(self, p: ParamPoint, x) -> np.ndarray:
        raise NotImplementedError

    def pdf(self, p: ParamPoint, x) -> np.ndarray:
        return np.exp(self.logpdf(p, x))

    def in_support(self, p: ParamPoint, x: np.ndarray) -> np.ndarray:
        return np.ones(len(x), dtype=bool)

    def on_boundary(self, p: ParamPoint, x: np.ndarray) -> np.ndarray:
        return np.zeros(len(x), dtype=bool)

    # --- derivatives -----------------------------------------------------
    def derivatives(self, p: ParamPoint, x, order: int = 1) -> DerivativeBundle:
        self.validate(p)
        X = _as_data(x, self.dim)
        if np.any(self.on_boundary(p, X)):
            raise BoundaryError(f"{self.kind}: derivative requested on the support boundary")
        if self.analytic:
            f, g, h = self._analytic(p, X, order)
        else:
            f, g, h = self._numeric(p, X, order)
        return DerivativeBundle(f, g, h, self.labels, self.d1, self.d2)

    def numeric_derivatives(self, p: ParamPoint, x, order: int = 1) -> DerivativeBundle:
        """Richardson finite differences regardless of analytic availability."""
        X = _as_data(x, self.dim)
        f, g, h = self._numeric(p, X, order)
        return DerivativeBundle(f, g, h, self.labels, self.d1, self.d2)

    def _steps(self, c: np.ndarray, power: float) -> np.ndarray:
        base = np.maximum(np.abs(c), self._coord_floor())
        return _EPS ** power * base

    def _coord_floor(self) -> np.ndarray:
        return np.ones(len(self.labels))

    def _numeric(self, p: ParamPoint, X: np.ndarray, order: int):
        c0 = self.coords(p)
        P = c0.size
        scale = self.coord_scale

        def F(c):
            return self.pdf(self.from_coords(c), X)

        f0 = F(c0)
        grad = np.zeros((len(X), P))
        h1 = self._steps(c0, 1.0 / 3.0)
        for a in range(P):
            def D(h, a=a):
                e = np.zeros(P)
                e[a] = h
                return (F(c0 + e) - F(c0 - e)) / (2 * h)
            grad[:, a] = (4 * D(h1[a] / 2) - D(h1[a])) / 3
        hess = None
        if order >= 2:
            hess = np.zeros((len(X), P, P))
            h2 = self._steps(c0, 1.0 / 6.0)
            for a in range(P):
                for b in range(a, P):
                    def D2(s, a=a, b=b):
                        ha, hb = h2[a] * s, h2[b] * s
                        ea = np.zeros(P)
                        eb = np.zeros(P)
                        ea[a] = ha
                        eb[b] = hb
                        if a == b:
                            return (F(c0 + ea) - 2 * f0 + F(c0 - ea)) / ha ** 2
                        return (F(c0 + ea + eb) - F(c0 + ea - eb) - F(c0 - ea + eb)
                                + F(c0 - ea - eb)) / (4 * ha * hb)
                    val = (4 * D2(0.5) - D2(1.0)) / 3
                    hess[:, a, b] = val
                    hess[:, b, a] = val
            hess = hess * scale[None, :, None] * scale[None, None, :]
        return f0, grad * scale[None, :], hess

    def _from_log_derivs(self, f, g, lh, order):
        """Turn log-density derivatives into density derivatives."""
        grad = f[:, None] * g
        hess = None
        if order >= 2:
            hess = f[:, None, None] * (g[:, :, None] * g[:, None, :] + lh)
        return f, grad, hess

    # --- sampling, boxes, probes -----------------------------------------
    def sample(self, p: ParamPoint, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def box(self, p: ParamPoint, eps: float = 1e-9):
        """Axis-aligned box holding at least 1 - eps of the component's mass."""
        raise NotImplementedError

    def knots(self, p: ParamPoint) -> list:
        """Per-axis breakpoints matched to the component's location and scale."""
        lo, hi = self.box(p)
        c, s = self.center_spread(p)
        out = []
        for ax in range(self.dim):
            pts = [c[ax]] + [c[ax] + sgn * m * s[ax] for m in (0.5, 1, 2, 4, 8, 16, 40) for sgn in (-1, 1)]
            pts = [t for t in pts if lo[ax] <= t <= hi[ax]]
            out.append(np.array(pts))
        return out

    def center_spread(self, p: ParamPoint):
        raise NotImplementedError

    def support(self):
        return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)

    def probe_map(self, p: ParamPoint, u: np.ndarray) -> np.ndarray:
        """Map uniforms in (0,1)^dim to an over-dispersed (x3) neighbourhood of the component."""
        c, s = self.center_spread(p)
        return c[None, :] + 3.0 * s[None, :] * special.ndtri(u)


# --- Gaussian ------------------------------------------------------------

def _chol_logdet(S: np.ndarray):
    L = np.linalg.cholesky(S)
    return L, 2.0 * float(np.sum(np.log(np.diag(L))))


class GaussianLocCov(Family):
    kind = "gaussian"
    analytic = True

    def __init__(self, d: int = 1):
        self.d1 = self.d2 = self.dim = int(d)

    def to_json(self) -> dict:
        return {"kind": self.kind, "d": self.dim}

    def logpdf(self, p, x):
        X = _as_data(x, self.dim)
        L, logdet = _chol_logdet(p.mat)
        z = np.linalg.solve(L, (X - p.loc).T)
        q = np.sum(z * z, axis=0)
        return -0.5 * (self.dim * LOG_2PI + logdet + q)

    def _analytic(self, p, X, order):
        d = self.dim
        P = np.linalg.inv(p.mat)
        z = X - p.loc
        w = z @ P
        f = np.exp(self.logpdf(p, X))
        dirs = []
        for u, v in _triu(d):
            S = np.zeros((d, d))
            S[u, v] += 0.5
            S[v, u] += 0.5
            dirs.append(S)
        nS = len(dirs)
        g = np.zeros((len(X), d + nS))
        g[:, :d] = w
        for s, S in enumerate(dirs):
            g[:, d + s] = -0.5 * np.trace(P @ S) + 0.5 * np.einsum("ni,ij,nj->n", w, S, w)
        lh = None
        if order >= 2:
            lh = np.zeros((len(X), d + nS, d + nS))
            lh[:, :d, :d] = -P
            for s, S in enumerate(dirs):
                PSw = w @ S @ P
                lh[:, :d, d + s] = -PSw
                lh[:, d + s, :d] = -PSw
                for t, T in enumerate(dirs):
                    val = 0.5 * np.trace(P @ T @ P @ S) - np.einsum("ni,ij,nj->n", w, T @ P @ S, w)
                    lh[:, d + s, d + t] = val
        return self._from_log_derivs(f, g, lh, order)

    def sample(self, p, n, rng):
        L = np.linalg.cholesky(p.mat)
        z = rng.standard_normal((n, self.dim))
        return p.loc + z @ L.T

    def center_spread(self, p):
        return p.loc.copy(), np.sqrt(np.diag(p.mat))

    def box(self, p, eps=1e-9):
        c, s = self.center_spread(p)
        k = special.ndtri(1 - eps / (2 * self.dim))
        return c - k * s, c + k * s

    def probe_map(self, p, u):
        L = np.linalg.cholesky(p.mat)
        return p.loc + 3.0 * special.ndtri(u) @ L.T


class GeneralizedGaussian(Family):
    """f = c |Sigma|^{-1/2} exp(-(s q)^m), q = z' Sigma^{-1} z, shape m in [1, m_max].

    ``convention="example"`` uses s = 1 (the multivariate generalized Gaussian of
    the upper-bound examples); ``convention="usual"`` uses s = 1/2, so m = 1 is the
    ordinary Gaussian N(theta, Sigma).
    """

    kind = "generalized_gaussian"
    extras = ("m",)

    def __init__(self, d: int = 1, m_max: float = 5.0, convention: str = "example"):
        if convention not in ("example", "usual"):
            raise DomainError("convention must be 'example' or 'usual'")
        self.d1 = self.d2 = self.dim = int(d)
        self.m_max = float(m_max)
        self.convention = convention
        self._s = 1.0 if convention == "example" else 0.5

    def to_json(self):
        return {"kind": self.kind, "d": self.dim, "m_max": self.m_max, "convention": self.convention}

    def _check_domain(self, p):
        m = p.extras["m"]
        if not 1.0 <= m <= self.m_max:
            raise DomainError(f"shape m={m} outside [1, {self.m_max}]")

    def _coord_floor(self):
        fl = np.ones(len(self.labels))
        return fl

    def logpdf(self, p, x):
        X = _as_data(x, self.dim)
        d, m = self.dim, p.extras["m"]
        L, logdet = _chol_logdet(p.mat)
        z = np.linalg.solve(L, (X - p.loc).T)
        q = np.sum(z * z, axis=0)
        lognorm = (math.log(m) + special.gammaln(d / 2) - d / 2 * math.log(math.pi)
                   - special.gammaln(d / (2 * m)) + d / 2 * math.log(self._s) - 0.5 * logdet)
        return lognorm - (self._s * q) ** m

    def sample(self, p, n, rng):
        d, m = self.dim, p.extras["m"]
        g = rng.gamma(d / (2 * m), 1.0, size=n)
        radius = g ** (1 / (2 * m)) / math.sqrt(self._s)
        u = rng.standard_normal((n, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        L = np.linalg.cholesky(p.mat)
        return p.loc + (radius[:, None] * u) @ L.T

    def center_spread(self, p):
        m = p.extras["m"]
        # radial second moment of the whitened variable, per axis
        d = self.dim
        r2 = math.exp(special.gammaln((d + 2) / (2 * m)) - special.gammaln(d / (2 * m))) / self._s / d
        return p.loc.copy(), np.sqrt(np.diag(p.mat) * r2)

    def box(self, p, eps=1e-9):
        d, m = self.dim, p.extras["m"]
        g = stats.gamma.isf(eps, d / (2 * m))
        radius = g ** (1 / (2 * m)) / math.sqrt(self._s)
        half = radius * np.sqrt(np.diag(p.mat))
        return p.loc - half, p.loc + half


class StudentT(Family):
    """Multivariate t with fixed odd degrees of freedom nu and scale matrix Sigma."""

    kind = "student_t"

    def __init__(self, d: int = 1, nu: int = 3):
        if int(nu) != nu or nu < 1 or int(nu) % 2 == 0:
            raise DomainError("degrees of freedom must be a positive odd integer")
        self.d1 = self.d2 = self.dim = int(d)
        self.nu = int(nu)

    def to_json(self):
        return {"kind": self.kind, "d": self.dim, "nu": self.nu}

    def logpdf(self, p, x):
        X = _as_data(x, self.dim)
        d, nu = self.dim, self.nu
        L, logdet = _chol_logdet(p.mat)
        z = np.linalg.solve(L, (X - p.loc).T)
        q = np.sum(z * z, axis=0)
        c = (special.gammaln((nu + d) / 2) - special.gammaln(nu / 2) - d / 2 * math.log(nu * math.pi)
             - 0.5 * logdet)
        return c - (nu + d) / 2 * np.log1p(q / nu)

    def sample(self, p, n, rng):
        L = np.linalg.cholesky(p.mat)
        z = rng.standard_normal((n, self.dim))
        w = rng.chisquare(self.nu, size=n) / self.nu
        return p.loc + (z / np.sqrt(w)[:, None]) @ L.T

    def center_spread(self, p):
        return p.loc.copy(), np.sqrt(np.diag(p.mat))

    def box(self, p, eps=1e-9):
        c, s = self.center_spread(p)
        k = stats.t.isf(eps / (2 * self.dim), self.nu)
        return c - k * s, c + k * s

    def probe_map(self, p, u):
        L = np.linalg.cholesky(p.mat)
        return p.loc + 3.0 * special.ndtri(u) @ L.T


# --- scalar families with named extras ------------------------------------

class GammaShapeRate(Family):
    kind = "gamma"
    extras = ("a", "b")
    analytic = True

    def _check_domain(self, p):
        if p.extras["a"] <= 0 or p.extras["b"] <= 0:
            raise DomainError("Gamma shape and rate must be positive")

    def support(self):
        return np.zeros(1), np.full(1, np.inf)

    def in_support(self, p, X):
        return X[:, 0] > 0

    def on_boundary(self, p, X):
        return X[:, 0] == 0

    def logpdf(self, p, x):
        X = _as_data(x, 1)[:, 0]
        a, b = p.extras["a"], p.extras["b"]
        out = np.full(X.shape, -np.inf)
        pos = X > 0
        xp = X[pos]
        out[pos] = a * math.log(b) - special.gammaln(a) + (a - 1) * np.log(xp) - b * xp
        return out

    def _analytic(self, p, X, order):
        a, b = p.extras["a"], p.extras["b"]
        x = X[:, 0]
        f = self.pdf(p, X)
        pos = x > 0
        lx = np.where(pos, np.log(np.where(pos, x, 1.0)), 0.0)
        g = np.stack([math.log(b) - special.digamma(a) + lx, a / b - x], axis=1)
        g[~pos] = 0.0
        lh = None
        if order >= 2:
            lh = np.zeros((len(x), 2, 2))
            lh[:, 0, 0] = -special.polygamma(1, a)
            lh[:, 0, 1] = lh[:, 1, 0] = 1.0 / b
            lh[:, 1, 1] = -a / b ** 2
        return self._from_log_derivs(f, g, lh, order)

    def sample(self, p, n, rng):
        return rng.gamma(p.extras["a"], 1.0 / p.extras["b"], size=n).reshape(-1, 1)

    def center_spread(self, p):
        a, b = p.extras["a"], p.extras["b"]
        return np.array([a / b]), np.array([math.sqrt(a) / b])

    def box(self, p, eps=1e-9):
        a, b = p.extras["a"], p.extras["b"]
        return np.zeros(1), np.array([stats.gamma.isf(eps, a) / b])

    def knots(self, p):
        lo, hi = self.box(p)
        c, s = self.center_spread(p)
        pts = [0.0, c[0]] + [c[0] + t * s[0] for t in (-2, -1, -0.5, 0.5, 1, 2, 4, 8, 16)]
        pts += [c[0] * 1e-3, c[0] * 1e-2, c[0] * 0.1]
        return [np.array(sorted(t for t in pts if 0 <= t <= hi[0]))]

    def probe_map(self, p, u):
        a, b = p.extras["a"], p.extras["b"]
        c, s = a / b, math.sqrt(a) / b
        cv = s / c
        return c * np.exp(3.0 * cv * special.ndtri(u))


class LocationExponential(Family):
    """f(x | theta, sigma) = exp(-(x - theta)/sigma)/sigma for x > theta."""

    kind = "location_exponential"
    d1 = 1
    extras = ("sigma",)
    analytic = True
    band = 1e-6

    def _check_domain(self, p):
        if p.extras["sigma"] <= 0:
            raise DomainError("sigma must be positive")

    def in_support(self, p, X):
        return X[:, 0] > p.loc[0]

    def on_boundary(self, p, X):
        return np.abs(X[:, 0] - p.loc[0]) < self.band * p.extras["sigma"]

    def logpdf(self, p, x):
        X = _as_data(x, 1)[:, 0]
        th, s = p.loc[0], p.extras["sigma"]
        return np.where(X > th, -math.log(s) - (X - th) / s, -np.inf)

    def _analytic(self, p, X, order):
        th, s = p.loc[0], p.extras["sigma"]
        y = X[:, 0] - th
        f = self.pdf(p, X)
        g = np.stack([np.full(len(y), 1.0 / s), -1.0 / s + y / s ** 2], axis=1)
        lh = None
        if order >= 2:
            lh = np.zeros((len(y), 2, 2))
            lh[:, 0, 1] = lh[:, 1, 0] = -1.0 / s ** 2
            lh[:, 1, 1] = 1.0 / s ** 2 - 2 * y / s ** 3
        f, grad, hess = self._from_log_derivs(f, g, lh, order)
        return f, grad, hess

    def sample(self, p, n, rng):
        return (p.loc[0] + rng.exponential(p.extras["sigma"], size=n)).reshape(-1, 1)

    def center_spread(self, p):
        return p.loc.copy(), np.array([p.extras["sigma"]])

    def box(self, p, eps=1e-9):
        return p.loc.copy(), p.loc + p.extras["sigma"] * (-math.log(eps))

    def knots(self, p):
        th, s = p.loc[0], p.extras["sigma"]
        return [np.array([th] + [th + t * s for t in (0.5, 1, 2, 4, 8, 16)])]

    def probe_map(self, p, u):
        th, s = p.loc[0], p.extras["sigma"]
        return th + np.maximum(3.0 * s * -np.log1p(-u), 2 * self.band * s)


class SkewNormal(Family):
    """f(x | theta, v, m) = 2/sigma phi((x-theta)/sigma) Phi(m (x-theta)/sigma), v = sigma^2.

    theta is the location block, v the 1x1 matrix block and m the extra.
    """

    kind = "skew_normal"
    d1 = d2 = 1
    extras = ("m",)
    analytic = True

    def logpdf(self, p, x):
        X = _as_data(x, 1)[:, 0]
        th, v, m = p.loc[0], p.mat[0, 0], p.extras["m"]
        s = math.sqrt(v)
        z = X - th
        return math.log(2.0) - 0.5 * (LOG_2PI + math.log(v)) - z * z / (2 * v) + special.log_ndtr(m * z / s)

    def _analytic(self, p, X, order):
        th, v, m = p.loc[0], p.mat[0, 0], p.extras["m"]
        s = math.sqrt(v)
        z = X[:, 0] - th
        t = m * z / s
        R = np.exp(-0.5 * t * t - 0.5 * LOG_2PI - special.log_ndtr(t))
        f = np.exp(self.logpdf(p, X))
        dt = np.stack([np.full(len(z), -m / s), -t / (2 * v), z / s], axis=1)
        gauss = np.stack([z / v, -1 / (2 * v) + z * z / (2 * v * v), np.zeros(len(z))], axis=1)
        g = gauss + R[:, None] * dt
        lh = None
        if order >= 2:
            d2t = np.zeros((len(z), 3, 3))
            d2t[:, 0, 1] = d2t[:, 1, 0] = 0.5 * m * v ** -1.5
            d2t[:, 0, 2] = d2t[:, 2, 0] = -1 / s
            d2t[:, 1, 2] = d2t[:, 2, 1] = -0.5 * z * v ** -1.5
            d2t[:, 1, 1] = 0.75 * m * z * v ** -2.5
            d2g = np.zeros((len(z), 3, 3))
            d2g[:, 0, 0] = -1 / v
            d2g[:, 0, 1] = d2g[:, 1, 0] = -z / v ** 2
            d2g[:, 1, 1] = 1 / (2 * v * v) - z * z / v ** 3
            Rp = -R * (t + R)
            lh = d2g + Rp[:, None, None] * dt[:, :, None] * dt[:, None, :] + R[:, None, None] * d2t
        return self._from_log_derivs(f, g, lh, order)

    def sample(self, p, n, rng):
        th, v, m = p.loc[0], p.mat[0, 0], p.extras["m"]
        delta = m / math.sqrt(1 + m * m)
        u0 = rng.standard_normal(n)
        u1 = rng.standard_normal(n)
        y = delta * np.abs(u0) + math.sqrt(1 - delta * delta) * u1
        return (th + math.sqrt(v) * y).reshape(-1, 1)

    def center_spread(self, p):
        return p.loc.copy(), np.array([math.sqrt(p.mat[0, 0])])

    def box(self, p, eps=1e-9):
        s = math.sqrt(p.mat[0, 0])
        k = special.ndtri(1 - eps / 4)
        return p.loc - k * s, p.loc + k * s


class GeneralizedLogistic(Family):
    kind = "generalized_logistic"
    d1 = 1
    extras = ("sigma",)

    def __init__(self, p: int = 1, q: int = 1):
        if int(p) != p or int(q) != q or p < 1 or q < 1:
            raise DomainError("p and q must be positive integers")
        self.p, self.q = int(p), int(q)

    def to_json(self):
        return {"kind": self.kind, "pq": [self.p, self.q]}

    def _check_domain(self, pt):
        if pt.extras["sigma"] <= 0:
            raise DomainError("sigma must be positive")

    def logpdf(self, pt, x):
        X = _as_data(x, 1)[:, 0]
        s = pt.extras["sigma"]
        y = (X - pt.loc[0]) / s
        c = special.gammaln(self.p + self.q) - special.gammaln(self.p) - special.gammaln(self.q)
        return c + self.p * y - (self.p + self.q) * np.logaddexp(0.0, y) - math.log(s)

    def sample(self, pt, n, rng):
        b = rng.beta(self.p, self.q, size=n)
        return (pt.loc[0] + pt.extras["sigma"] * special.logit(b)).reshape(-1, 1)

    def center_spread(self, pt):
        s = pt.extras["sigma"]
        mean = special.digamma(self.p) - special.digamma(self.q)
        sd = math.sqrt(special.polygamma(1, self.p) + special.polygamma(1, self.q))
        return np.array([pt.loc[0] + s * mean]), np.array([s * sd])

    def box(self, pt, eps=1e-9):
        s = pt.extras["sigma"]
        lo = special.logit(stats.beta.ppf(eps / 2, self.p, self.q))
        hi = special.logit(stats.beta.isf(eps / 2, self.p, self.q))
        return np.array([pt.loc[0] + s * lo]), np.array([pt.loc[0] + s * hi])


class GeneralizedGumbel(Family):
    kind = "generalized_gumbel"
    d1 = 1
    extras = ("sigma", "lam")

    def _check_domain(self, pt):
        if pt.extras["sigma"] <= 0 or pt.extras["lam"] <= 0:
            raise DomainError("sigma and lambda must be positive")

    def logpdf(self, pt, x):
        X = _as_data(x, 1)[:, 0]
        s, lam = pt.extras["sigma"], pt.extras["lam"]
        y = (X - pt.loc[0]) / s
        return lam * math.log(lam) - special.gammaln(lam) - lam * (y + np.exp(-y)) - math.log(s)

    def sample(self, pt, n, rng):
        lam = pt.extras["lam"]
        w = rng.gamma(lam, 1.0 / lam, size=n)
        return (pt.loc[0] - pt.extras["sigma"] * np.log(w)).reshape(-1, 1)

    def center_spread(self, pt):
        s, lam = pt.extras["sigma"], pt.extras["lam"]
        mean = math.log(lam) - special.digamma(lam)
        sd = math.sqrt(special.polygamma(1, lam))
        return np.array([pt.loc[0] + s * mean]), np.array([s * sd])

    def box(self, pt, eps=1e-9):
        s, lam = pt.extras["sigma"], pt.extras["lam"]
        wlo = stats.gamma.ppf(eps / 2, lam, scale=1 / lam)
        whi = stats.gamma.isf(eps / 2, lam, scale=1 / lam)
        return np.array([pt.loc[0] - s * math.log(whi)]), np.array([pt.loc[0] - s * math.log(wlo)])


class Weibull(Family):
    kind = "weibull"
    extras = ("nu", "lam")

    def _check_domain(self, pt):
        if pt.extras["nu"] <= 0 or pt.extras["lam"] <= 0:
            raise DomainError("Weibull shape and scale must be positive")

    def support(self):
        return np.zeros(1), np.full(1, np.inf)

    def in_support(self, pt, X):
        return X[:, 0] > 0

    def on_boundary(self, pt, X):
        return X[:, 0] == 0

    def logpdf(self, pt, x):
        X = _as_data(x, 1)[:, 0]
        nu, lam = pt.extras["nu"], pt.extras["lam"]
        out = np.full(X.shape, -np.inf)
        pos = X > 0
        y = X[pos] / lam
        out[pos] = math.log(nu / lam) + (nu - 1) * np.log(y) - y ** nu
        return out

    def sample(self, pt, n, rng):
        return (pt.extras["lam"] * rng.weibull(pt.extras["nu"], size=n)).reshape(-1, 1)

    def center_spread(self, pt):
        nu, lam = pt.extras["nu"], pt.extras["lam"]
        m1 = math.gamma(1 + 1 / nu)
        m2 = math.gamma(1 + 2 / nu)
        return np.array([lam * m1]), np.array([lam * math.sqrt(max(m2 - m1 * m1, 1e-12))])

    def box(self, pt, eps=1e-9):
        nu, lam = pt.extras["nu"], pt.extras["lam"]
        return np.zeros(1), np.array([lam * (-math.log(eps)) ** (1 / nu)])

    def knots(self, pt):
        lo, hi = self.box(pt)
        c, s = self.center_spread(pt)
        pts = [0.0, c[0] * 1e-3, c[0] * 1e-2, c[0] * 0.1] + [c[0] + t * s[0] for t in (-2, -1, -0.5, 0, 0.5, 1, 2, 4, 8)]
        return [np.array(sorted(t for t in pts if 0 <= t <= hi[0]))]

    def probe_map(self, pt, u):
        c, s = self.center_spread(pt)
        return c[0] * np.exp(3.0 * (s[0] / c[0]) * special.ndtri(u))


class VonMises(Family):
    kind = "von_mises"
    d1 = 1
    extras = ("kappa",)

    def _check_domain(self, pt):
        if pt.extras["kappa"] <= 0:
            raise DomainError("kappa must be positive")

    def support(self):
        return np.zeros(1), np.full(1, 2 * math.pi)

    def in_support(self, pt, X):
        return (X[:, 0] >= 0) & (X[:, 0] < 2 * math.pi)

    def logpdf(self, pt, x):
        X = _as_data(x, 1)[:, 0]
        k = pt.extras["kappa"]
        val = k * np.cos(X - pt.loc[0]) - LOG_2PI - (math.log(special.i0e(k)) + k)
        return np.where((X >= 0) & (X < 2 * math.pi), val, -np.inf)

    def sample(self, pt, n, rng):
        return np.mod(rng.vonmises(pt.loc[0], pt.extras["kappa"], size=n), 2 * math.pi).reshape(-1, 1)

    def center_spread(self, pt):
        return pt.loc.copy(), np.array([1.0 / math.sqrt(pt.extras["kappa"])])

    def box(self, pt, eps=1e-9):
        return np.zeros(1), np.full(1, 2 * math.pi)

    def knots(self, pt):
        mu = pt.loc[0] % (2 * math.pi)
        pts = [0.0, mu, (mu + math.pi) % (2 * math.pi), 2 * math.pi]
        return [np.array(sorted(pts))]

    def probe_map(self, pt, u):
        return 2 * math.pi * u


_KINDS = {
    "gaussian": lambda doc: GaussianLocCov(doc.get("d", 1)),
    "generalized_gaussian": lambda doc: GeneralizedGaussian(doc.get("d", 1), doc.get("m_max", 5.0),
                                                            doc.get("convention", "example")),
    "student_t": lambda doc: StudentT(doc.get("d", 1), doc.get("nu", 3)),
    "gamma": lambda doc: GammaShapeRate(),
    "location_exponential": lambda doc: LocationExponential(),
    "skew_normal": lambda doc: SkewNormal(),
    "generalized_logistic": lambda doc: GeneralizedLogistic(*doc.get("pq", [1, 1])),
    "generalized_gumbel": lambda doc: GeneralizedGumbel(),
    "weibull": lambda doc: Weibull(),
    "von_mises": lambda doc: VonMises(),
}


def family_from_json(doc: Mapping) -> Family:
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise SchemaError(f"unknown family kind {kind!r}")
    return _KINDS[kind](doc)


# --- module-level operations ----------------------------------------------

def pdf(family: Family, p: ParamPoint, x) -> np.ndarray:
    family.validate(p)
    return family.pdf(p, x)


def derivatives(family: Family, p: ParamPoint, x, order: int = 1) -> DerivativeBundle:
    return family.derivatives(p, x, order)


def mixture_pdf(family: Family, G: MixingMeasure, x) -> np.ndarray:
    X = _as_data(x, family.dim)
    out = np.zeros(len(X))
    for w, p in G:
        out += w * family.pdf(p, X)
    return out


def mixture_logpdf(family: Family, G: MixingMeasure, x) -> np.ndarray:
    X = _as_data(x, family.dim)
    parts = np.stack([math.log(w) + family.logpdf(p, X) for w, p in G])
    return special.logsumexp(parts, axis=0)


def sample(family: Family, G: MixingMeasure, n: int, seed) -> np.ndarray:
    """n iid draws from the mixture; rows are observations."""
    if n < 1:
        raise DomainError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(G.k, size=n, p=np.asarray(G.weights) / np.sum(G.weights))
    out = np.zeros((n, family.dim))
    for i, p in enumerate(G.points):
        idx = np.flatnonzero(labels == i)
        if idx.size:
            out[idx] = family.sample(p, idx.size, rng)
    return out


def verify_identity_gaussian(p: ParamPoint, x) -> float:
    """max |d2f/dtheta2 - 2 df/dSigma| over the probes and matrix entries."""
    fam = GaussianLocCov(p.loc.size)
    b = fam.derivatives(p, x, order=2)
    return float(np.max(np.abs(b.d2_theta - 2.0 * b.d_mat)))


def verify_identity_gamma(a: float, b: float, x) -> float:
    """max |df/db - (a/b) f(x|a,b) + (a/b) f(x|a+1,b)|."""
    fam = GammaShapeRate()
    p = fam.make(a=a, b=b)
    q = fam.make(a=a + 1, b=b)
    X = _as_data(x, 1)
    bundle = fam.derivatives(p, X, order=1)
    res = bundle.d_extras["b"] - (a / b) * fam.pdf(p, X) + (a / b) * fam.pdf(q, X)
    return float(np.max(np.abs(res)))


def skew_closed_forms(theta: float, v: float, m: float, x):
    """Closed-form f_thetatheta, f_v and f_m of the skew-normal density (v = sigma^2)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    s = math.sqrt(v)
    z = x - theta
    c = math.sqrt(2 * math.pi)
    e = np.exp(-z * z / (2 * v))
    Phi = special.ndtr(m * z / s)
    phi = np.exp(-0.5 * (m * z / s) ** 2) / c
    f_tt = ((-2 / (c * s ** 3) + 2 * z * z / (c * s ** 5)) * Phi
            - 2 * m * (m * m + 2) * z / (c * s ** 4) * phi) * e
    f_v = ((-1 / (c * s ** 3) + z * z / (c * s ** 5)) * Phi - m * z / (c * s ** 4) * phi) * e
    f_m = 2 * z / (c * s * s) * phi * e
    return f_tt, f_v, f_m


def verify_identity_skew(theta: float, v: float, m: float, x) -> float:
    """max |f_thetatheta - 2 f_v + ((m^3 + m)/v) f_m| from the closed forms."""
    f_tt, f_v, f_m = skew_closed_forms(theta, v, m, x)
    return float(np.max(np.abs(f_tt - 2 * f_v + (m ** 3 + m) / v * f_m)))
