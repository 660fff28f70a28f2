"""Numerical probes of strong identifiability and the weak-identifiability classifiers.

The rank probe stacks, for every parameter point, the density and its parameter
derivatives evaluated on a quasi-random design, normalizes the columns and reads
linear (in)dependence off the singular values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import DegenerateError, DomainError, SchemaError
from .families import Family, GaussianLocCov
from .measures import MixingMeasure, ground_distance

RANK_THRESHOLD = 1e-7
STRUCTURE_TOL = 1e-6
MATCH_TOL = 1e-9


@dataclass
class ProbeResult:
    verdict: str
    sigma_min: float
    sigma_max: float
    ratio: float
    threshold: float
    n_rows: int
    columns: list
    null_vector: np.ndarray | None = None
    null_dim: int = 0
    pattern_cosine: float | None = None
    structure: str | None = None
    structured_residual: float | None = None

    def to_dict(self) -> dict:
        out = {
            "verdict": self.verdict,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "ratio": self.ratio,
            "threshold": self.threshold,
            "rows": self.n_rows,
            "columns": len(self.columns),
            "null_dim": self.null_dim,
        }
        if self.structure is not None:
            out["structure"] = self.structure
            out["structured_residual"] = self.structured_residual
        if self.pattern_cosine is not None:
            out["pattern_cosine"] = self.pattern_cosine
        if self.null_vector is not None:
            out["null_vector"] = [float(v) for v in self.null_vector]
        return out


def _column_labels(family: Family, k: int, order: int) -> list:
    labs = family.labels
    P = len(labs)
    out = []
    for i in range(k):
        out.append((i, "f"))
        out.extend((i, "d", labs[a]) for a in range(P))
        if order >= 2:
            out.extend((i, "dd", labs[a], labs[b]) for a in range(P) for b in range(a, P))
    return out


def probe_matrix(family: Family, points, order: int, X: np.ndarray) -> np.ndarray:
    """Unnormalized probe matrix: one block of columns per parameter point."""
    blocks = []
    P = len(family.labels)
    iu = np.triu_indices(P)
    for p in points:
        b = family.derivatives(p, X, order=order)
        cols = [b.f[:, None], b.grad]
        if order >= 2:
            cols.append(b.hess[:, iu[0], iu[1]])
        blocks.append(np.concatenate(cols, axis=1))
    return np.concatenate(blocks, axis=1)


def probe_design(family: Family, points, N: int, seed) -> np.ndarray:
    """N quasi-random evaluation points drawn around each component in turn."""
    k = len(points)
    counts = [N // k + (1 if i < N % k else 0) for i in range(k)]
    rows = []
    for i, (p, n) in enumerate(zip(points, counts)):
        if n == 0:
            continue
        eng = qmc.Sobol(d=family.dim, scramble=True, seed=np.random.default_rng([int(seed), i]))
        m = int(math.ceil(math.log2(max(n, 2))))
        u = eng.random_base2(m)[:n]
        u = np.clip(u, 1e-12, 1 - 1e-12)
        rows.append(family.probe_map(p, u).reshape(n, family.dim))
    X = np.concatenate(rows)
    keep = np.ones(len(X), dtype=bool)
    for p in points:
        keep &= ~family.on_boundary(p, X)
    return X[keep]


def _gaussian_pattern_basis(family: GaussianLocCov, k: int, order: int, columns: list) -> np.ndarray:
    """Coefficient vectors of the relations d2f/dtheta_u dtheta_v - 2 df/dSigma_uv = 0."""
    index = {c: j for j, c in enumerate(columns)}
    d = family.d1
    basis = []
    for i in range(k):
        for u in range(d):
            for v in range(u, d):
                c = np.zeros(len(columns))
                c[index[(i, "dd", ("loc", u), ("loc", v))]] = 1.0
                c[index[(i, "d", ("mat", u, v))]] = -2.0
                basis.append(c)
    return np.array(basis)


def gaussian_null_pattern(family: GaussianLocCov, k: int, nus, columns: list) -> np.ndarray:
    """Coefficients of sum_i [nu_i^T (d2f/dtheta2) nu_i + <gamma_i, df/dSigma>] with gamma_i = -2 nu_i nu_i^T."""
    index = {c: j for j, c in enumerate(columns)}
    d = family.d1
    c = np.zeros(len(columns))
    for i in range(k):
        nu = np.asarray(nus[i], dtype=float)
        for u in range(d):
            for v in range(u, d):
                mult = 1.0 if u == v else 2.0
                c[index[(i, "dd", ("loc", u), ("loc", v))]] = mult * nu[u] * nu[v]
                c[index[(i, "d", ("mat", u, v))]] = -2.0 * mult * nu[u] * nu[v]
    return c


def rank_probe(family: Family, points, order: int = 1, N: int | None = None, seed: int = 0,
               threshold: float = RANK_THRESHOLD) -> ProbeResult:
    """Singular-value test of linear independence of f and its derivatives up to ``order``.

    Verdict "independent" iff sigma_min/sigma_max > threshold after column normalization.
    """
    points = list(points)
    if order not in (1, 2):
        raise DomainError("order must be 1 or 2")
    for i in range(len(points)):
        family.validate(points[i])
        for j in range(i):
            if ground_distance(points[i], points[j]) <= MATCH_TOL:
                raise DomainError("probe points must be pairwise distinct")
    columns = _column_labels(family, len(points), order)
    if N is None:
        N = 8 * len(columns)
    if N < 4 * len(columns):
        raise DomainError(f"N={N} below 4 x {len(columns)} columns")
    X = probe_design(family, points, N, seed)
    A = probe_matrix(family, points, order, X)
    if not np.all(np.isfinite(A)):
        raise DegenerateError("non-finite entries in the probe matrix")
    norms = np.linalg.norm(A, axis=0)
    if norms.max() == 0:
        raise DegenerateError("probe matrix is identically zero")
    An = A / np.where(norms > 0, norms, 1.0)
    _, s, Vt = np.linalg.svd(An, full_matrices=False)
    smax = float(s[0])
    if smax == 0:
        raise DegenerateError("sigma_max = 0")
    ratio = float(s[-1] / smax)
    null_dim = int(np.sum(s / smax <= threshold))
    res = ProbeResult("independent" if ratio > threshold else "dependent", float(s[-1]), smax, ratio,
                      threshold, len(X), columns)
    res.null_dim = null_dim
    if null_dim == 0:
        return res
    basis = Vt[-null_dim:]
    nv = basis[-1]
    if order == 2:
        first = [j for j, c in enumerate(columns) if c[1] != "dd"]
        s1 = np.linalg.svd(An[:, first], compute_uv=False)
        if s1[-1] / s1[0] <= threshold:
            res.structure = "first-order"
        else:
            y, resid = _rank_one_search(family, len(points), columns, norms, basis, seed)
            res.structured_residual = resid
            if resid > STRUCTURE_TOL:
                res.verdict = "independent"
                res.structure = "unstructured-only"
                return res
            res.verdict = "dependent"
            res.structure = "rank-one"
            nv = y @ basis
    res.null_vector = _unscale(nv, norms)
    if isinstance(family, GaussianLocCov) and order == 2:
        res.pattern_cosine = _pattern_alignment(family, len(points), columns, norms, basis, nv, seed)
    return res


def _unscale(v: np.ndarray, norms: np.ndarray) -> np.ndarray:
    c = v / np.where(norms > 0, norms, 1.0)
    return c / np.max(np.abs(c))


def _hessian_blocks(family: Family, k: int, columns: list, c: np.ndarray) -> list:
    """Per-component symmetric coefficient matrices M_i with sum_ab M_ab d2f/dab matching c."""
    P = len(family.labels)
    pos = {lab: a for a, lab in enumerate(family.labels)}
    blocks = [np.zeros((P, P)) for _ in range(k)]
    for j, col in enumerate(columns):
        if col[1] != "dd":
            continue
        a, b = pos[col[2]], pos[col[3]]
        if a == b:
            blocks[col[0]][a, a] = c[j]
        else:
            blocks[col[0]][a, b] = blocks[col[0]][b, a] = 0.5 * c[j]
    return blocks


def _rank_one_search(family, k, columns, norms, basis, seed, starts: int = 16, iters: int = 200):
    """Minimize the off-rank-one share of the second-order coefficients over the null space.

    The second-order terms of the definition are quadratic forms w^T (d2f) w, so a
    dependence of that kind has every block M_i of rank at most one.  Alternates
    between the top eigenvectors u_i of M_i(y) and the generalized eigenproblem
    max_y sum_i (u_i^T M_i(y) u_i)^2 / |M(y)|^2.  Returns the best combination and
    its residual sum_i (|M_i|^2 - lmax_i^2) / sum_i |M_i|^2.
    """
    inv = 1.0 / np.where(norms > 0, norms, 1.0)
    q = basis.shape[0]
    B = np.array([_hessian_blocks(family, k, columns, row * inv) for row in basis])  # (q, k, P, P)
    Q = np.einsum("aipr,bipr->ab", B, B)
    Q += 1e-14 * np.trace(Q) * np.eye(q)
    Li = np.linalg.inv(np.linalg.cholesky(Q))

    def resid(y):
        Ms = np.einsum("a,aipr->ipr", y, B)
        tot = float(np.sum(Ms * Ms))
        top = float(np.sum(np.max(np.abs(np.linalg.eigvalsh(Ms)), axis=1) ** 2))
        return (tot - top) / tot if tot > 0 else 1.0

    rng = np.random.default_rng([int(seed), 11])
    best_y, best = None, np.inf
    for y in list(np.eye(q)) + list(rng.standard_normal((starts, q))):
        y = y / np.linalg.norm(y)
        val = prev = resid(y)
        for _ in range(iters):
            w, V = np.linalg.eigh(np.einsum("a,aipr->ipr", y, B))
            top = np.argmax(np.abs(w), axis=1)
            U = V[np.arange(k), :, top]                       # (k, P)
            G = np.einsum("ip,aipr,ir->ia", U, B, U)
            w2, V2 = np.linalg.eigh(Li @ (G.T @ G) @ Li.T)
            y = Li.T @ V2[:, -1]
            y /= np.linalg.norm(y)
            val = resid(y)
            if prev - val < 1e-15:
                break
            prev = val
        if val < best:
            best_y, best = y, val
        if best < 1e-14:
            break
    return best_y, float(best)


def _pattern_alignment(family, k, columns, norms, null_rows, v, seed) -> float:
    """Worst of two cosines, both in normalized-column coordinates.

    (i) the reported null vector against the span of the pattern relations;
    (ii) a random instance of the pattern 2 nu nu^T + gamma = 0 against the numerical null space.
    """
    B = _gaussian_pattern_basis(family, k, 2, columns) * norms[None, :]
    Q, _ = np.linalg.qr(B.T)
    cos1 = float(np.linalg.norm(Q.T @ v) / np.linalg.norm(v))
    rng = np.random.default_rng([int(seed), 7])
    nus = rng.standard_normal((k, family.d1))
    c = gaussian_null_pattern(family, k, nus, columns) * norms
    N = null_rows.T
    cos2 = float(np.linalg.norm(N @ (N.T @ c)) / np.linalg.norm(c))
    return min(cos1, cos2)


# --- Gamma -------------------------------------------------------------------

@dataclass
class GammaVerdict:
    verdict: str
    setting: str
    pairs: list = field(default_factory=list)
    warning: str | None = None

    def to_dict(self) -> dict:
        return {"condition": self.verdict, "setting": self.setting,
                "pairs": [list(p) for p in self.pairs], "warning": self.warning}


def _close(x: float, y: float, tol: float = MATCH_TOL) -> bool:
    return abs(x - y) <= tol * max(1.0, abs(x), abs(y))


def gamma_classify(G0: MixingMeasure, setting: str = "exact", tol: float = MATCH_TOL) -> GammaVerdict:
    """Generic vs Pathological true Gamma mixing measures.

    A pair (i, j) is pathological when (|a_i - a_j|, |b_i - b_j|) equals (1, 0),
    or also (2, 0) in the over-fitted setting.
    """
    if setting not in ("exact", "over"):
        raise DomainError("setting must be 'exact' or 'over'")
    if any(set(p.extras) != {"a", "b"} or p.loc.size or p.mat.size for p in G0.points):
        raise SchemaError("gamma_classify expects Gamma (a, b) atoms")
    gaps = [1.0] if setting == "exact" else [1.0, 2.0]
    pairs = []
    pts = G0.points
    for i in range(G0.k):
        for j in range(i + 1, G0.k):
            da = abs(pts[i].extras["a"] - pts[j].extras["a"])
            db = abs(pts[i].extras["b"] - pts[j].extras["b"])
            if _close(db, 0.0, tol) and any(_close(da, g, tol) for g in gaps):
                pairs.append((i, j))
    if pairs:
        return GammaVerdict("Pathological", setting, pairs)
    warn = None
    if any(p.extras["a"] < 1 for p in pts):
        warn = "some shape a < 1; the generic bound assumes a >= 1"
    return GammaVerdict("Generic", setting, [], warn)


# --- skew-normal ---------------------------------------------------------------

@dataclass
class SkewTaxonomy:
    condition: str
    cousin_sets: list
    conformant: list
    k_star: int | None = None
    side_condition: bool | None = None
    standing_assumption: bool = True
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "cousin_sets": [list(s) for s in self.cousin_sets],
            "conformant": self.conformant,
            "k_star": self.k_star,
            "side_condition": self.side_condition,
            "standing_assumption": self.standing_assumption,
            "notes": self.notes,
        }


def _skew_params(G0: MixingMeasure):
    out = []
    for p in G0.points:
        if p.loc.size != 1 or p.mat.shape != (1, 1) or set(p.extras) != {"m"}:
            raise SchemaError("skew_classify expects skew-normal (theta, v, m) atoms")
        out.append((float(p.loc[0]), float(p.mat[0, 0]), float(p.extras["m"])))
    return out


def skew_classify(G0: MixingMeasure, tol: float = MATCH_TOL) -> SkewTaxonomy:
    """Cousin sets, conformance and the S1/S2/S3/Other condition of a skew-normal G0.

    Indices in the output are 0-based.  The standing assumption (distinct scales,
    rescaled scales avoiding the other scales) is checked among atoms sharing a
    location.
    """
    par = _skew_params(G0)
    k = len(par)
    resc = [v / (1 + m * m) for _, v, m in par]
    notes = []
    standing = True
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if i < j and _close(par[i][1], par[j][1], tol):
                standing = False
                notes.append(f"atoms {i} and {j} share the scale")
            if _close(par[i][0], par[j][0], tol) and _close(resc[i], par[j][1], tol):
                standing = False
                notes.append(f"rescaled scale of atom {i} equals the scale of atom {j}")
    cousins = []
    for j in range(k):
        cousins.append([i for i in range(k) if i != j and _close(resc[i], resc[j], tol)
                        and _close(par[i][0], par[j][0], tol)])
    conformant = [None if not I else all(par[i][2] * par[j][2] > 0 for i in I)
                  for j, I in enumerate(cousins)]
    tax = SkewTaxonomy("Other", cousins, conformant, standing_assumption=standing, notes=notes)
    if not standing:
        return tax
    nonempty = [j for j in range(k) if cousins[j]]
    if not nonempty:
        if all(m != 0 for _, _, m in par):
            tax.condition = "S1"
        else:
            notes.append("Gaussian atom without cousins")
        return tax
    bad = [j for j in nonempty if not conformant[j]]
    if not bad:
        tax.condition = "S2"
        return tax
    tax.k_star = max(len(cousins[j]) for j in bad)
    if tax.k_star <= k - 1:
        tax.condition = "S3"
        w = G0.weights
        tax.side_condition = all(
            not (_close(w[i], w[j], tol) and _close(abs(par[i][2]), abs(par[j][2]), tol))
            for i in bad for j in cousins[i])
    return tax


# --- transformations --------------------------------------------------------------

@dataclass
class JacobianReport:
    nonsingular: list
    dets: list
    rel_dets: list
    min_abs_det: float
    threshold: float

    def to_dict(self) -> dict:
        return {"nonsingular": self.nonsingular, "dets": self.dets, "rel_dets": self.rel_dets,
                "min_abs_det": self.min_abs_det, "threshold": self.threshold}


def _flatten(theta, Sigma) -> np.ndarray:
    return np.concatenate([np.ravel(theta), np.ravel(Sigma)])


def modified_jacobian(T, eta, Lam) -> np.ndarray:
    """Jacobian of T with (eta, Lambda) taken as a flat d1 + d2^2 vector (Richardson differences)."""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    Lam = np.atleast_2d(np.asarray(Lam, dtype=float))
    d1, d2 = eta.size, Lam.shape[0]
    z0 = _flatten(eta, Lam)

    def F(z):
        th, S = T(z[:d1], z[d1:].reshape(d2, d2))
        return _flatten(th, S)

    n = z0.size
    J = np.zeros((F(z0).size, n))
    for a in range(n):
        h = np.finfo(float).eps ** (1 / 3) * max(abs(z0[a]), 1.0)

        def D(s, a=a):
            e = np.zeros(n)
            e[a] = s
            return (F(z0 + e) - F(z0 - e)) / (2 * s)
        J[:, a] = (4 * D(h / 2) - D(h)) / 3
    return J


def jacobian_transfer(T, points, threshold: float = 1e-8) -> JacobianReport:
    """Non-singularity of the modified Jacobian of T at each (eta, Lambda) point.

    |det| is judged relative to the Hadamard bound (product of column norms).
    """
    dets, rels, flags = [], [], []
    for eta, Lam in points:
        try:
            J = modified_jacobian(T, eta, Lam)
        except Exception as exc:  # noqa: BLE001 - surfaced as a domain failure
            raise DomainError(f"transformation failed: {exc}") from exc
        if J.shape[0] != J.shape[1]:
            raise SchemaError("T must map onto a space of the same flattened dimension")
        sign, logdet = np.linalg.slogdet(J)
        det = float(sign * math.exp(logdet)) if sign != 0 else 0.0
        scale = float(np.prod(np.linalg.norm(J, axis=0)))
        rel = abs(det) / scale if scale > 0 else 0.0
        dets.append(det)
        rels.append(rel)
        flags.append(bool(rel > threshold))
    return JacobianReport(flags, dets, rels, float(min(abs(d) for d in dets)), threshold)
