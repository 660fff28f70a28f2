"""Discrete mixing measures and exact order-r Wasserstein distances.

A mixing measure G = sum_i p_i delta_(theta_i, Sigma_i, extras_i) is stored as a
weight vector plus a tuple of ParamPoint atoms.  Distances between atoms use the
block metric ||dtheta||_2 + ||dSigma||_F + sum |d extra|, and W_r is the r-th root
of the optimal transportation cost with costs rho^r, solved exactly by a
transportation simplex.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateError, DomainError, SchemaError

DISTINCT_TOL = 1e-9
WEIGHT_TOL = 1e-12
MARGINAL_TOL = 1e-10


@dataclass(frozen=True)
class Schema:
    d1: int
    d2: int
    extras: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"d1": self.d1, "d2": self.d2, "extras": list(self.extras)}


@dataclass(frozen=True, eq=False)
class ParamPoint:
    """Parameters of one mixture component.

    ``loc`` is the location vector, ``mat`` the symmetric positive-definite block
    (shape (0, 0) when the family has none) and ``extras`` the named scalars.
    """

    loc: np.ndarray
    mat: np.ndarray
    extras: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.loc, dtype=float)).reshape(-1)
        mat = np.asarray(self.mat, dtype=float)
        if mat.ndim == 0:
            mat = mat.reshape(1, 1)
        if mat.size == 0:
            mat = np.zeros((0, 0))
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise SchemaError(f"mat must be square, got shape {mat.shape}")
        if mat.shape[0]:
            scale = max(1.0, float(np.max(np.abs(mat))))
            if np.max(np.abs(mat - mat.T)) > 1e-12 * scale:
                raise DomainError("mat is not symmetric")
            mat = 0.5 * (mat + mat.T)
            if np.linalg.eigvalsh(mat)[0] <= 0:
                raise DomainError("mat is not positive definite")
        extras = {str(k): float(v) for k, v in dict(self.extras).items()}
        if not all(np.isfinite(loc)) or not np.all(np.isfinite(mat)):
            raise DomainError("non-finite parameter")
        if not all(math.isfinite(v) for v in extras.values()):
            raise DomainError("non-finite extra")
        loc.setflags(write=False)
        mat.setflags(write=False)
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "mat", mat)
        object.__setattr__(self, "extras", extras)

    @property
    def schema(self) -> Schema:
        return Schema(self.loc.size, self.mat.shape[0], tuple(self.extras))

    def replace(self, loc=None, mat=None, **extras) -> "ParamPoint":
        new = dict(self.extras)
        new.update(extras)
        return ParamPoint(self.loc if loc is None else loc, self.mat if mat is None else mat, new)

    def to_dict(self) -> dict:
        return {"loc": self.loc.tolist(), "mat": self.mat.tolist(), "extras": dict(self.extras)}

    def __repr__(self) -> str:
        parts = []
        if self.loc.size:
            parts.append(f"loc={self.loc.tolist()}")
        if self.mat.size:
            parts.append(f"mat={self.mat.tolist()}")
        parts += [f"{k}={v:g}" for k, v in self.extras.items()]
        return "ParamPoint(" + ", ".join(parts) + ")"


def point(loc=(), mat=(), **extras) -> ParamPoint:
    """Shorthand constructor; scalars are promoted to 1-vectors and 1x1 matrices."""
    return ParamPoint(loc, mat, extras)


def _check_schema(p: ParamPoint, q: ParamPoint) -> None:
    if p.loc.size != q.loc.size or p.mat.shape != q.mat.shape:
        raise SchemaError("block dimensions differ")
    if set(p.extras) != set(q.extras):
        raise SchemaError("extras differ")


def ground_distance(p: ParamPoint, q: ParamPoint) -> float:
    """||dtheta||_2 + ||dSigma||_F + sum of |d extra|."""
    _check_schema(p, q)
    terms = [float(np.linalg.norm(p.loc - q.loc)), float(np.linalg.norm(p.mat - q.mat))]
    terms += [abs(p.extras[k] - q.extras[k]) for k in p.extras]
    return math.fsum(terms)


class MixingMeasure:
    """Finite discrete probability measure over ParamPoint atoms."""

    def __init__(self, weights: Iterable[float], points: Sequence[ParamPoint], *,
                 normalize: bool = False, distinct_tol: float = DISTINCT_TOL):
        w = np.asarray(list(weights), dtype=float).reshape(-1)
        pts = tuple(points)
        if len(pts) == 0:
            raise DegenerateError("empty mixing measure")
        if w.size != len(pts):
            raise SchemaError("weights and atoms differ in length")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise DomainError("weights must be positive")
        total = math.fsum(w)
        if normalize:
            w = w / total
        elif abs(total - 1.0) > WEIGHT_TOL:
            raise DomainError(f"weights sum to {total!r}, not 1")
        schema = pts[0].schema
        for p in pts[1:]:
            _check_schema(pts[0], p)
        for i in range(len(pts)):
            for j in range(i):
                if ground_distance(pts[i], pts[j]) <= distinct_tol:
                    raise DomainError(f"atoms {j} and {i} are not distinct")
        w.setflags(write=False)
        self.weights = w
        self.points = pts
        self.schema = schema

    @property
    def k(self) -> int:
        return len(self.points)

    def __len__(self) -> int:
        return self.k

    def __iter__(self):
        return iter(zip(self.weights, self.points))

    def __repr__(self) -> str:
        atoms = ", ".join(f"{w:.4g}*{p!r}" for w, p in self)
        return f"MixingMeasure([{atoms}])"

    def permuted(self, order: Sequence[int]) -> "MixingMeasure":
        return MixingMeasure(self.weights[list(order)], [self.points[i] for i in order])

    def to_dict(self, family: Mapping | None = None) -> dict:
        doc = {
            "schema": self.schema.to_dict(),
            "atoms": [{"w": float(w), "loc": p.loc.tolist(), "mat": p.mat.tolist(),
                       "extras": dict(p.extras)} for w, p in self],
        }
        if family is not None:
            doc["family"] = dict(family)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MixingMeasure":
        try:
            schema = doc["schema"]
            atoms = doc["atoms"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"missing field {exc}") from None
        d1, d2 = int(schema["d1"]), int(schema["d2"])
        names = list(schema.get("extras", []))
        weights, pts = [], []
        for a in atoms:
            loc = np.asarray(a.get("loc", []), dtype=float).reshape(-1)
            mat = np.asarray(a.get("mat", []), dtype=float)
            if mat.size == 0:
                mat = np.zeros((0, 0))
            ex = dict(a.get("extras", {}))
            if loc.size != d1 or mat.shape != (d2, d2) or sorted(ex) != sorted(names):
                raise SchemaError("atom does not match schema")
            weights.append(a["w"])
            pts.append(ParamPoint(loc, mat, {n: ex[n] for n in names}))
        return cls(weights, pts)


@dataclass(frozen=True)
class TransportPlan:
    q: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def check(self, tol: float = MARGINAL_TOL) -> None:
        if np.any(self.q < 0):
            raise DomainError("negative transport mass")
        if np.max(np.abs(self.q.sum(axis=1) - self.row_marginal)) > tol:
            raise DomainError("row marginals violated")
        if np.max(np.abs(self.q.sum(axis=0) - self.col_marginal)) > tol:
            raise DomainError("column marginals violated")


# --- transportation simplex -------------------------------------------------

def _northwest(a: np.ndarray, b: np.ndarray):
    m, n = a.size, b.size
    s, d = a.copy(), b.copy()
    q = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        x = min(s[i], d[j])
        q[i, j] = x
        basis.append((i, j))
        s[i] -= x
        d[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1 or s[i] <= d[j]:
            i += 1
        else:
            j += 1
    return q, basis


def _potentials(C: np.ndarray, basis, m: int, n: int):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    rows = [[] for _ in range(m)]
    cols = [[] for _ in range(n)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    u[0] = 0.0
    queue = deque([("r", 0)])
    while queue:
        kind, idx = queue.popleft()
        if kind == "r":
            for j in rows[idx]:
                if np.isnan(v[j]):
                    v[j] = C[idx, j] - u[idx]
                    queue.append(("c", j))
        else:
            for i in cols[idx]:
                if np.isnan(u[i]):
                    u[i] = C[i, idx] - v[idx]
                    queue.append(("r", i))
    return u, v, rows, cols


def _cycle(i0: int, j0: int, rows, cols):
    """Tree path from row i0 to column j0, as a list of basic cells starting at column j0."""
    parent = {("r", i0): None}
    queue = deque([("r", i0)])
    while queue:
        node = queue.popleft()
        kind, idx = node
        if node == ("c", j0):
            break
        nbrs = [("c", j) for j in rows[idx]] if kind == "r" else [("r", i) for i in cols[idx]]
        for nb in nbrs:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = []
    node = ("c", j0)
    while parent[node] is not None:
        prev = parent[node]
        cell = (prev[1], node[1]) if prev[0] == "r" else (node[1], prev[1])
        path.append(cell)
        node = prev
    return path


def transport(a: Sequence[float], b: Sequence[float], C: np.ndarray, max_iter: int | None = None):
    """Solve min <q, C> over couplings of a and b.

    Returns (cost, q).  Entering and leaving cells are chosen by smallest
    row-major index (Bland's rule), so the pivot sequence is deterministic.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    m, n = a.size, b.size
    if m == 0 or n == 0:
        raise DegenerateError("empty marginal")
    b = b * (math.fsum(a) / math.fsum(b))
    q, basis = _northwest(a, b)
    scale = float(np.max(np.abs(C))) if C.size else 0.0
    if scale == 0.0:
        return 0.0, q
    tol = 1e-13 * scale
    max_iter = max_iter or 50 * (m + n) ** 2 + 100
    for _ in range(max_iter):
        u, v, rows, cols = _potentials(C, basis, m, n)
        red = C - u[:, None] - v[None, :]
        for i, j in basis:
            red[i, j] = 0.0
        neg = np.flatnonzero(red.reshape(-1) < -tol)
        if neg.size == 0:
            break
        i0, j0 = divmod(int(neg[0]), n)
        path = _cycle(i0, j0, rows, cols)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(q[c] for c in minus)
        leave = min(c for c in minus if q[c] == theta)
        for c in minus:
            q[c] -= theta
        for c in plus:
            q[c] += theta
        q[i0, j0] += theta
        q[leave] = 0.0
        basis.remove(leave)
        basis.append((i0, j0))
    else:
        raise DegenerateError("transportation simplex did not terminate")
    # drop round-off mass left on cells by the pivots; it would survive the 1/r power
    tiny = min(8 * np.finfo(float).eps * float(a.max()), 1e-3 * float(min(a.min(), b.min())))
    q[q < tiny] = 0.0
    cost = math.fsum((q * C).reshape(-1).tolist())
    return max(cost, 0.0), q


def cost_matrix(G: MixingMeasure, H: MixingMeasure, r: float = 1.0) -> np.ndarray:
    D = np.array([[ground_distance(p, q) for q in H.points] for p in G.points])
    return D ** r


def wasserstein(G: MixingMeasure, H: MixingMeasure, r: float = 1.0):
    """Order-r Wasserstein distance between mixing measures; returns (value, plan)."""
    if r < 1:
        raise DomainError("order r must be >= 1")
    C = cost_matrix(G, H, r)
    cost, q = transport(G.weights, H.weights, C)
    plan = TransportPlan(q, np.array(G.weights), np.array(H.weights))
    return cost ** (1.0 / r), plan


def wasserstein_value(G: MixingMeasure, H: MixingMeasure, r: float = 1.0) -> float:
    return wasserstein(G, H, r)[0]


def composite_divergence_bound(G: MixingMeasure, H: MixingMeasure, family, phi: str = "variational",
                               spec=None) -> float:
    """Optimal transport with pairwise component divergences as costs.

    ``phi`` is "variational" or "hellinger2".  By convexity of both divergences the
    result upper-bounds the divergence between the two mixture densities.
    """
    from . import divergences

    if phi not in ("variational", "hellinger2"):
        raise DomainError(f"unknown divergence {phi!r}")
    C = np.zeros((G.k, H.k))
    for i, p in enumerate(G.points):
        for j, q in enumerate(H.points):
            A = MixingMeasure([1.0], [p])
            B = MixingMeasure([1.0], [q])
            res = divergences.distances(A, B, family, spec)
            C[i, j] = res.V if phi == "variational" else res.h ** 2
    cost, _ = transport(G.weights, H.weights, C)
    return cost
