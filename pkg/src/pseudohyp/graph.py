"""Spacelike graphs u: D^p -> S^q in Fermi coordinates.

A graph is a simplicial mesh of the closed disk together with a unit vector
u_i in R^{q+1} at every vertex.  Rim vertices with |x| = 1 carry ideal
boundary values; they are pinned and have no embedded point.

Fundamental forms come from a weighted least-squares quadratic fit over a
k-ring stencil.  The fit is done on u in log-map coordinates at the centre
vertex, and derivatives of the embedding are then assembled analytically
through the chart, which keeps the fit well conditioned near |x| = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import Delaunay, cKDTree

from .core import (
    FormContext,
    Ideal,
    Interior,
    PseudoPoint,
    ScoreTarget,
    fermi_embed,
    score_arr,
    score_gradient_arr,
)
from .errors import DegenerateStar, DisconnectedMesh, DomainError, InvalidPoint

RIM_TOL = 1e-12
COND_MAX = 1e10


# Meshes --------------------------------------------------------------------

def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + 5 ** 0.5) * k
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def disk_mesh(p: int, h: float, radius: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lattice mesh of the disk of the given radius in R^p.

    Returns (points, simplices, rim mask).  Rim points sit exactly on the
    sphere of the given radius.
    """
    if p == 2:
        n = int(np.ceil(radius / h)) + 2
        a, b = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1))
        pts = np.stack([(a + 0.5 * b).ravel(), (b * np.sqrt(3) / 2).ravel()], axis=1) * h
        nb = max(8, int(np.ceil(2 * np.pi * radius / h)))
        ang = 2 * np.pi * np.arange(nb) / nb
        rim = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    elif p == 3:
        n = int(np.ceil(radius / h)) + 2
        g = np.arange(-n, n + 1) * h
        pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
        # fixed jitter breaks the cospherical degeneracy of the cubic lattice
        pts = pts + np.random.default_rng(12345).uniform(-0.05, 0.05, pts.shape) * h
        nb = max(24, int(np.ceil(4 * np.pi * radius ** 2 / (0.8 * h * h))))
        rim = radius * _fibonacci_sphere(nb)
    else:
        raise ValueError("meshes are available for p in {2, 3}")
    inner = pts[np.linalg.norm(pts, axis=1) < radius - 0.5 * h]
    points = np.concatenate([inner, rim])
    tri = Delaunay(points)
    simplices = np.asarray(tri.simplices, dtype=np.int64)
    # drop flat simplices (can appear between rim points in 3D)
    vols = np.abs(np.linalg.det(points[simplices[:, 1:]] - points[simplices[:, :1]]))
    simplices = simplices[vols > 1e-12 * h ** p]
    is_rim = np.zeros(len(points), dtype=bool)
    is_rim[len(inner):] = True
    return points, simplices, is_rim


def adjacency(n: int, simplices: np.ndarray) -> sp.csr_matrix:
    k = simplices.shape[1]
    rows, cols = [], []
    for a in range(k):
        for b in range(k):
            if a != b:
                rows.append(simplices[:, a])
                cols.append(simplices[:, b])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    m.data[:] = 1.0
    return m


# Quadratic-fit stencil -----------------------------------------------------

@dataclass(frozen=True)
class Stencil:
    """Per-vertex fit operators; coefficient rows are [d_1..d_p, d_kl (k<=l)]."""

    star: np.ndarray      # (n, S) neighbor indices, padded with the vertex itself
    weight: np.ndarray    # (n, S) weights, zero on padding
    P: np.ndarray         # (n, m, S) least-squares operator
    ok: np.ndarray        # (n,) star has full rank
    rings: int


def _quad_pairs(p: int) -> list[tuple[int, int]]:
    return [(k, l) for k in range(p) for l in range(k, p)]


def build_stencil(xs: np.ndarray, simplices: np.ndarray, rings: int = 2, h: float | None = None) -> Stencil:
    n, p = xs.shape
    A = adjacency(n, simplices)
    eye = sp.identity(n, format="csr")
    reach = eye.copy()
    level = [eye]
    for _ in range(rings):
        reach = ((reach + reach @ A) > 0).astype(float)
        level.append(reach)
    # ring index per neighbor: smallest k with the neighbor inside level k
    ring = sum(((lv > 0).astype(np.int64) for lv in level[1:]), sp.csr_matrix((n, n), dtype=np.int64))
    ring = ring.tocsr()
    ring.sort_indices()
    counts = np.diff(ring.indptr)
    S = int(counts.max()) - 1
    star = np.repeat(np.arange(n)[:, None], S, axis=1)
    weight = np.zeros((n, S))
    for i in range(n):
        lo, hi = ring.indptr[i], ring.indptr[i + 1]
        idx = ring.indices[lo:hi]
        lv = rings + 1 - ring.data[lo:hi]   # data counts how many levels contain j
        keep = idx != i
        idx, lv = idx[keep], lv[keep]
        star[i, :len(idx)] = idx
        weight[i, :len(idx)] = 0.5 ** (lv - 1)
    if h is None:
        h = float(np.median(np.linalg.norm(xs[star[:, 0]] - xs, axis=1)))
    pairs = _quad_pairs(p)
    d = (xs[star] - xs[:, None, :]) / h                      # (n, S, p)
    cols = [d[..., k] for k in range(p)]
    for k, l in pairs:
        cols.append(0.5 * d[..., k] ** 2 if k == l else d[..., k] * d[..., l])
    D = np.stack(cols, axis=-1)                              # (n, S, m)
    DW = D * weight[..., None]
    N = np.einsum("nsa,nsb->nab", DW, D)
    cond = np.linalg.cond(N)
    ok = np.isfinite(cond) & (cond < COND_MAX)
    P = np.full((n, D.shape[-1], S), np.nan)
    P[ok] = np.linalg.solve(N[ok], np.swapaxes(DW[ok], 1, 2))
    scale = np.array([1.0 / h] * p + [1.0 / h ** 2] * len(pairs))
    P *= scale[None, :, None]
    return Stencil(star=star, weight=weight, P=P, ok=ok, rings=rings)


# Forms ---------------------------------------------------------------------

@dataclass
class FormsArrays:
    """Fundamental forms at a batch of vertices (leading axis = vertex)."""

    idx: np.ndarray
    X: np.ndarray        # (n, d) embedded points
    J: np.ndarray        # (n, p, d) coordinate tangent vectors
    K: np.ndarray        # (n, p, p, d) second coordinate derivatives
    g: np.ndarray        # (n, p, p)
    ginv: np.ndarray
    F: np.ndarray        # (n, q, d) orthonormal negative normal frame
    II: np.ndarray       # (n, p, p, q) components along F
    Du: np.ndarray       # (n, p, q+1)

    @property
    def H(self) -> np.ndarray:
        """Mean curvature components (n, q) in the normal frame."""
        p = self.g.shape[-1]
        return np.einsum("nkl,nklj->nj", self.ginv, self.II) / p

    @property
    def H_norm(self) -> np.ndarray:
        return np.linalg.norm(self.H, axis=-1)

    @cached_property
    def gamma(self) -> np.ndarray:
        """Christoffel symbols Γ^m_kl, shape (n, m, k, l)."""
        s = self._signs
        KJ = np.einsum("nkld,d,nmd->nklm", self.K, s, self.J)
        return np.einsum("nma,nkla->nmkl", self.ginv, KJ)

    @property
    def _signs(self) -> np.ndarray:
        d = self.X.shape[-1]
        p = self.g.shape[-1]
        s = np.ones(d)
        s[p:] = -1.0
        return s


def _sphere_log(ui: np.ndarray, uj: np.ndarray) -> np.ndarray:
    c = np.clip(np.einsum("...a,...a->...", ui, uj), -1.0, 1.0)
    v = uj - c[..., None] * ui
    nv = np.linalg.norm(v, axis=-1)
    ang = np.arccos(c)
    fac = np.where(nv > 1e-300, ang / np.where(nv > 1e-300, nv, 1.0), 0.0)
    return v * fac[..., None]


def _normal_frame(ctx: FormContext, X, J, ginv) -> np.ndarray:
    n = X.shape[0]
    s = ctx.signs
    F = np.zeros((n, ctx.q, ctx.dim))
    count = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    for a in range(ctx.q + 1):
        c = np.zeros((n, ctx.dim))
        c[:, ctx.p + a] = 1.0
        v = c + ctx.form(c, X)[:, None] * X
        Jc = np.einsum("nkd,d,nd->nk", J, s, c)
        v = v - np.einsum("nkd,nkl,nl->nd", J, ginv, Jc)
        for j in range(ctx.q):
            use = j < count
            coef = ctx.form(v, F[:, j])
            v = v + np.where(use, coef, 0.0)[:, None] * F[:, j]
        nrm2 = -ctx.form(v, v)
        e2 = np.einsum("nd,nd->n", v, v)
        good = (nrm2 > 1e-12 * np.maximum(e2, 1e-300)) & (count < ctx.q) & (nrm2 > 0)
        safe = np.sqrt(np.where(good, nrm2, 1.0))
        F[rows[good], count[good]] = v[good] / safe[good, None]
        count += good
    if np.any(count < ctx.q):
        raise DegenerateStar("normal frame could not be completed (graph not spacelike?)")
    return F


def compute_forms(ctx: FormContext, xs: np.ndarray, us: np.ndarray, stencil: Stencil,
                  idx: np.ndarray) -> FormsArrays:
    """Vectorised fundamental forms at vertices idx (all must have ok stencils)."""
    p = ctx.p
    idx = np.asarray(idx, dtype=np.int64)
    ui = us[idx]
    w = _sphere_log(ui[:, None, :], us[stencil.star[idx]])
    coef = np.einsum("nms,nsa->nma", stencil.P[idx], w)
    Du = coef[:, :p]
    D2w = np.zeros((len(idx), p, p, ctx.q + 1))
    for r, (k, l) in enumerate(_quad_pairs(p)):
        D2w[:, k, l] = coef[:, p + r]
        D2w[:, l, k] = coef[:, p + r]
    # second-order term of the exponential map at u_i
    D2u = D2w - np.einsum("nka,nla->nkl", Du, Du)[..., None] * ui[:, None, None, :]

    x = xs[idx]
    r2 = np.sum(x * x, axis=1)
    if np.any(r2 >= 1.0):
        raise DomainError("forms requested at a rim vertex")
    sfac = 1.0 - r2
    eye = np.eye(p)
    A = 2.0 * x / sfac[:, None]
    dA = 2.0 * eye[None] / sfac[:, None, None] + 4.0 * x[:, :, None] * x[:, None, :] / sfac[:, None, None] ** 2
    d2A = (4.0 * (np.einsum("nl,km->nklm", x, eye) + np.einsum("nk,ml->nklm", x, eye)
                  + np.einsum("nm,kl->nklm", x, eye)) / sfac[:, None, None, None] ** 2
           + 16.0 * np.einsum("nk,nl,nm->nklm", x, x, x) / sfac[:, None, None, None] ** 3)
    B = 2.0 / sfac - 1.0
    dB = 4.0 * x / sfac[:, None] ** 2
    d2B = 4.0 * eye[None] / sfac[:, None, None] ** 2 + 16.0 * x[:, :, None] * x[:, None, :] / sfac[:, None, None] ** 3

    X = np.concatenate([A, B[:, None] * ui], axis=1)
    Jv = dB[:, :, None] * ui[:, None, :] + B[:, None, None] * Du
    J = np.concatenate([dA, Jv], axis=2)
    Kv = (d2B[..., None] * ui[:, None, None, :]
          + dB[:, :, None, None] * Du[:, None, :, :]
          + dB[:, None, :, None] * Du[:, :, None, :]
          + B[:, None, None, None] * D2u)
    K = np.concatenate([d2A, Kv], axis=3)
    s = ctx.signs
    g = np.einsum("nkd,d,nld->nkl", J, s, J)
    g = 0.5 * (g + np.swapaxes(g, 1, 2))
    ginv = np.linalg.inv(g)
    F = _normal_frame(ctx, X, J, ginv)
    II = -np.einsum("nkld,d,njd->nklj", K, s, F)
    return FormsArrays(idx=idx, X=X, J=J, K=K, g=g, ginv=ginv, F=F, II=II, Du=Du)


# Graph ---------------------------------------------------------------------

@dataclass(frozen=True)
class FundamentalForms:
    """First and second fundamental forms at one vertex."""

    g: np.ndarray
    II: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    point: np.ndarray
    K: np.ndarray

    def shape_operator(self, n) -> np.ndarray:
        """B_n as a matrix on coordinate components: <B_n u, v> = <II(u,v), n>."""
        n = np.asarray(n, dtype=float)
        q = self.normal.shape[0]
        p = self.g.shape[0]
        s = np.ones(len(n))
        s[p:] = -1.0
        # <II(u,v), n> with II(u,v) = sum_j II_j f_j
        fn = np.einsum("jd,d,d->j", self.normal, s, n)[:q]
        second = np.einsum("klj,j->kl", self.II, fn)
        return np.linalg.solve(self.g, second)

    def II_vector(self, a, b) -> np.ndarray:
        """Ambient normal vector II(a, b) for coordinate components a, b."""
        c = np.einsum("k,l,klj->j", a, b, self.II)
        return c @ self.normal


@dataclass(frozen=True)
class CurvatureReport:
    vertex: np.ndarray
    II_norm: np.ndarray
    ric_slack: np.ndarray
    H_norm: np.ndarray
    flagged: np.ndarray


class SpacelikeGraph:
    """Meshed graph of u: D^p -> S^q with cached fundamental forms.

    The graph is immutable after construction; forms are computed lazily for
    all interior vertices at once.
    """

    def __init__(self, ctx: FormContext, xs, us, simplices, mesh_scale: float | None = None,
                 rim=None, rings: int = 2, validate: bool = True, stencil: Stencil | None = None):
        self.ctx = ctx
        self.xs = np.array(xs, dtype=float)
        self.us = np.array(us, dtype=float)
        self.simplices = np.array(simplices, dtype=np.int64)
        n = len(self.xs)
        if self.xs.shape != (n, ctx.p) or self.us.shape != (n, ctx.q + 1):
            raise ValueError("vertex arrays do not match the form context")
        if ctx.q < 1:
            raise ValueError("graphs need q >= 1")
        if validate:
            bad = np.flatnonzero(np.abs(np.linalg.norm(self.us, axis=1) - 1.0) > 1e-10)
            if len(bad):
                raise InvalidPoint(f"non-unit value at vertex {int(bad[0])}")
            r = np.linalg.norm(self.xs, axis=1)
            if np.any(r > 1.0 + RIM_TOL):
                raise DomainError("vertex outside the closed disk")
        if rim is None:
            rim = np.zeros(n, dtype=bool)
            bnd = _boundary_vertices(n, self.simplices)
            rim[bnd] = True
        self.rim = np.asarray(rim, dtype=bool)
        self.at_infinity = np.linalg.norm(self.xs, axis=1) >= 1.0 - RIM_TOL
        if mesh_scale is None:
            e = _edges(self.simplices)
            mesh_scale = float(np.median(np.linalg.norm(self.xs[e[:, 0]] - self.xs[e[:, 1]], axis=1)))
        self.h = float(mesh_scale)
        self.rings = rings
        self._stencil = stencil
        for arr in (self.xs, self.us, self.simplices, self.rim):
            arr.setflags(write=False)

    # construction helpers
    @classmethod
    def from_function(cls, ctx: FormContext, xs, simplices, rim, func, mesh_scale=None, **kw) -> "SpacelikeGraph":
        us = np.array([func(x) for x in xs]) if not _is_vectorised(func) else func(xs)
        return cls(ctx, xs, us, simplices, mesh_scale=mesh_scale, rim=rim, **kw)

    def with_values(self, us) -> "SpacelikeGraph":
        """Same mesh and stencil, new values."""
        return SpacelikeGraph(self.ctx, self.xs, us, self.simplices, self.h, self.rim, self.rings,
                              stencil=self.stencil)

    @property
    def n(self) -> int:
        return len(self.xs)

    @property
    def stencil(self) -> Stencil:
        if self._stencil is None:
            self._stencil = build_stencil(self.xs, self.simplices, self.rings, self.h)
        return self._stencil

    @cached_property
    def interior(self) -> np.ndarray:
        """Vertices with forms: not on the rim and with a full-rank star."""
        return np.flatnonzero(~self.rim & ~self.at_infinity & self.stencil.ok)

    @cached_property
    def flagged(self) -> np.ndarray:
        """Non-rim vertices excluded from curvature reports."""
        return np.flatnonzero(~self.rim & ~self.stencil.ok)

    @cached_property
    def forms(self) -> FormsArrays:
        return compute_forms(self.ctx, self.xs, self.us, self.stencil, self.interior)

    @cached_property
    def _row(self) -> np.ndarray:
        row = np.full(self.n, -1, dtype=np.int64)
        row[self.interior] = np.arange(len(self.interior))
        return row

    def row(self, i: int) -> int:
        if not 0 <= i < self.n:
            raise IndexError(f"vertex {i} out of range")
        r = int(self._row[i])
        if r < 0:
            raise DegenerateStar(f"vertex {i} has no full-rank interior star")
        return r

    @cached_property
    def points(self) -> np.ndarray:
        """Embedded points; NaN rows for vertices at infinity."""
        X = np.full((self.n, self.ctx.dim), np.nan)
        fin = ~self.at_infinity
        X[fin] = fermi_embed(self.xs[fin], self.us[fin], self.ctx)
        return X

    def core(self, radius: float) -> np.ndarray:
        """Interior vertices with |x| <= radius."""
        r = np.linalg.norm(self.xs[self.interior], axis=1)
        return self.interior[r <= radius]

    @cached_property
    def vertex_areas(self) -> np.ndarray:
        """Induced volume per vertex (1/(p+1) of incident simplex volumes)."""
        X = self.points
        p = self.ctx.p
        out = np.zeros(self.n)
        S = self.simplices
        fin = np.all(~self.at_infinity[S], axis=1)
        S = S[fin]
        E = X[S[:, 1:]] - X[S[:, :1]]
        G = np.einsum("nkd,d,nld->nkl", E, self.ctx.signs, E)
        vol = np.sqrt(np.maximum(np.linalg.det(G), 0.0)) / _factorial(p)
        for a in range(p + 1):
            np.add.at(out, S[:, a], vol / (p + 1))
        return out


def _factorial(k: int) -> int:
    out = 1
    for i in range(2, k + 1):
        out *= i
    return out


def _is_vectorised(func) -> bool:
    return getattr(func, "vectorised", False)


def _edges(simplices: np.ndarray) -> np.ndarray:
    k = simplices.shape[1]
    e = np.concatenate([simplices[:, [a, b]] for a in range(k) for b in range(a + 1, k)])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def _boundary_vertices(n: int, simplices: np.ndarray) -> np.ndarray:
    """Vertices on codimension-one faces used by a single simplex."""
    k = simplices.shape[1]
    faces = np.concatenate([np.delete(simplices, a, axis=1) for a in range(k)])
    faces = np.sort(faces, axis=1)
    uniq, cnt = np.unique(faces, axis=0, return_counts=True)
    return np.unique(uniq[cnt == 1].ravel())


def embed_vertex(graph: SpacelikeGraph, i: int) -> PseudoPoint:
    if not 0 <= i < graph.n:
        raise IndexError(f"vertex {i} out of range")
    if graph.at_infinity[i]:
        raise DomainError(f"vertex {i} lies on the ideal boundary")
    return PseudoPoint.normalized(graph.points[i], graph.ctx)


def fundamental_forms(graph: SpacelikeGraph, i: int) -> FundamentalForms:
    r = graph.row(i)
    f = graph.forms
    return FundamentalForms(g=f.g[r], II=f.II[r], tangent=f.J[r], normal=f.F[r], point=f.X[r], K=f.K[r])


# Curvature -------------------------------------------------------------------

def _orthonormalise(f: FormsArrays) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factor L (g = L L^T) and II in the orthonormal tangent frame."""
    L = np.linalg.cholesky(f.g)
    Linv = np.linalg.inv(L)
    II = np.einsum("nak,nklj,nbl->nabj", Linv, f.II, Linv)
    return L, II


def ricci_tensor_arr(f: FormsArrays) -> np.ndarray:
    """Traced Gauss equation, coordinate components (n, p, p)."""
    p = f.g.shape[-1]
    trII = np.einsum("nkl,nklj->nj", f.ginv, f.II)
    # <a, b> = -sum_j a_j b_j for components in the negative frame
    mid = -np.einsum("nj,nabj->nab", trII, f.II)
    last = -np.einsum("nkl,nkaj,nlbj->nab", f.ginv, f.II, f.II)
    return -(p - 1) * f.g + mid - last


def ricci_full_gauss(f: FormsArrays) -> np.ndarray:
    """Ricci from the full Gauss equation, contracted tensorially."""
    g = f.g
    II = f.II
    ip = lambda a, b: -np.einsum("n...j,n...j->n...", a, b)
    # R(U,V,W,Z) = g(V,W)g(U,Z) - g(U,W)g(V,Z) + <II(U,W),II(V,Z)> - <II(U,Z),II(V,W)>
    RD = np.einsum("nvw,nuz->nuvwz", g, g) - np.einsum("nuw,nvz->nuvwz", g, g)
    IIa = -np.einsum("nuwj,nvzj->nuvwz", II, II)
    IIb = -np.einsum("nuzj,nvwj->nuvwz", II, II)
    R = RD + IIa - IIb
    del ip
    return np.einsum("nik,niukv->nuv", f.ginv, R)


def ricci(graph: SpacelikeGraph, i: int, u, v) -> float:
    """Ric(u, v) for coordinate components (length p) or ambient tangent vectors."""
    r = graph.row(i)
    f = graph.forms
    u = _coords(graph, r, u)
    v = _coords(graph, r, v)
    ric = ricci_tensor_arr(_slice(f, r))[0]
    return float(u @ ric @ v)


def _slice(f: FormsArrays, r: int) -> FormsArrays:
    sl = slice(r, r + 1)
    return FormsArrays(idx=f.idx[sl], X=f.X[sl], J=f.J[sl], K=f.K[sl], g=f.g[sl], ginv=f.ginv[sl],
                       F=f.F[sl], II=f.II[sl], Du=f.Du[sl])


def _coords(graph: SpacelikeGraph, r: int, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    p = graph.ctx.p
    if u.shape == (p,):
        return u
    f = graph.forms
    Ju = np.einsum("kd,d,d->k", f.J[r], graph.ctx.signs, u)
    return f.ginv[r] @ Ju


def II_operator_norm(f: FormsArrays, n_dirs: int = 720) -> np.ndarray:
    """sup over g-unit v of the timelike norm of II(v, v), per vertex."""
    _, II = _orthonormalise(f)
    p = II.shape[1]
    if p == 2:
        ang = np.linspace(0, np.pi, n_dirs, endpoint=False)
        V = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        V = _fibonacci_sphere(4 * n_dirs) if p == 3 else np.random.default_rng(0).normal(size=(8 * n_dirs, p))
        V /= np.linalg.norm(V, axis=1, keepdims=True)
    vals = np.einsum("ta,nabj,tb->ntj", V, II, V)
    best = np.argmax(np.sum(vals ** 2, axis=-1), axis=1)
    v = V[best]
    # polish with projected gradient ascent
    for _ in range(30):
        a = np.einsum("na,nabj,nb->nj", v, II, v)
        grad = 4 * np.einsum("nj,nabj,nb->na", a, II, v)
        grad -= np.einsum("na,na->n", grad, v)[:, None] * v
        v = v + 0.05 * grad / (1.0 + np.linalg.norm(grad, axis=1, keepdims=True))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    a_fin = np.einsum("na,nabj,nb->nj", v, II, v)
    return np.maximum(np.sqrt(np.sum(a_fin ** 2, axis=-1)), np.sqrt(np.max(np.sum(vals ** 2, axis=-1), axis=1)))


def ricci_slack_arr(f: FormsArrays) -> np.ndarray:
    """Smallest g-eigenvalue of Ric + (p-1) g."""
    p = f.g.shape[-1]
    M = ricci_tensor_arr(f) + (p - 1) * f.g
    L = np.linalg.cholesky(f.g)
    Linv = np.linalg.inv(L)
    Mo = np.einsum("nak,nkl,nbl->nab", Linv, M, Linv)
    return np.linalg.eigvalsh(0.5 * (Mo + np.swapaxes(Mo, 1, 2)))[:, 0]


def curvature_report(graph: SpacelikeGraph) -> CurvatureReport:
    f = graph.forms
    return CurvatureReport(vertex=graph.interior.copy(), II_norm=II_operator_norm(f),
                           ric_slack=ricci_slack_arr(f), H_norm=f.H_norm, flagged=graph.flagged.copy())


def lipschitz_ratio(graph: SpacelikeGraph) -> float:
    """max over mesh edges of d_{S^q}(u_i,u_j) / d_hemi(x_i,x_j)."""
    e = _edges(graph.simplices)
    w = _hemisphere(graph.xs)
    dh = np.arccos(np.clip(np.sum(w[e[:, 0]] * w[e[:, 1]], axis=1), -1, 1))
    ds = np.arccos(np.clip(np.sum(graph.us[e[:, 0]] * graph.us[e[:, 1]], axis=1), -1, 1))
    return float(np.max(ds / np.maximum(dh, 1e-300)))


def _hemisphere(x: np.ndarray) -> np.ndarray:
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    return np.concatenate([2 * x, 1 - r2], axis=-1) / (1 + r2)


# Intrinsic distance ----------------------------------------------------------

def distance_graph(graph: SpacelikeGraph, reach: float = 4.0, subdiv: int = 4) -> sp.csr_matrix:
    """Weighted graph joining finite vertices within reach*h in the disk.

    Edge weights are induced lengths of the chord x_i -> x_j with u
    interpolated along the great circle, summed over `subdiv` pieces.
    """
    fin = np.flatnonzero(~graph.at_infinity)
    tree = cKDTree(graph.xs[fin])
    pairs = np.array(sorted(tree.query_pairs(reach * graph.h * (1 + 1e-9))), dtype=np.int64).reshape(-1, 2)
    adj = adjacency(graph.n, graph.simplices).tocsr()
    mesh_pairs = np.stack(adj.nonzero(), axis=1)
    mesh_pairs = mesh_pairs[np.all(~graph.at_infinity[mesh_pairs], axis=1)]
    pairs = np.unique(np.concatenate([fin[pairs], np.sort(mesh_pairs, axis=1)]), axis=0)
    i, j = pairs[:, 0], pairs[:, 1]
    w = _chord_lengths(graph, i, j, subdiv)
    ok = np.isfinite(w)
    m = sp.coo_matrix((w[ok], (i[ok], j[ok])), shape=(graph.n, graph.n))
    return (m + m.T).tocsr()


def _chord_lengths(graph: SpacelikeGraph, i, j, subdiv: int) -> np.ndarray:
    ctx = graph.ctx
    t = np.linspace(0.0, 1.0, subdiv + 1)
    xa, xb = graph.xs[i], graph.xs[j]
    ua, ub = graph.us[i], graph.us[j]
    c = np.clip(np.sum(ua * ub, axis=1), -1.0, 1.0)
    om = np.arccos(c)
    pts = []
    for s in t:
        x = (1 - s) * xa + s * xb
        so = np.sin(om)
        small = so < 1e-12
        wa = np.where(small, 1 - s, np.sin((1 - s) * om) / np.where(small, 1.0, so))
        wb = np.where(small, s, np.sin(s * om) / np.where(small, 1.0, so))
        u = wa[:, None] * ua + wb[:, None] * ub
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        pts.append(fermi_embed(x, u, ctx))
    total = np.zeros(len(i))
    for a, b in zip(pts[:-1], pts[1:]):
        c = -ctx.form(a, b)
        total += np.where(c >= 1.0, np.arccosh(np.maximum(c, 1.0)), np.inf)
    return total


class DistanceOracle:
    """Dijkstra distances on the induced-length graph, cached per source."""

    def __init__(self, graph: SpacelikeGraph, reach: float = 4.0, subdiv: int = 4):
        self.graph = graph
        self.W = distance_graph(graph, reach, subdiv)

    def from_sources(self, sources) -> np.ndarray:
        return dijkstra(self.W, directed=False, indices=np.asarray(sources, dtype=np.int64))

    def __call__(self, i: int, j: int) -> float:
        d = float(self.from_sources([i])[0, j])
        if not np.isfinite(d):
            raise DisconnectedMesh(f"no path between {i} and {j}")
        return d


def intrinsic_distance(graph: SpacelikeGraph, i: int, j: int) -> float:
    oracle = graph.__dict__.get("_distance_oracle")
    if oracle is None:
        oracle = DistanceOracle(graph)
        graph.__dict__["_distance_oracle"] = oracle
    return oracle(i, j)


# Score diagnostics -----------------------------------------------------------

def gradient_norms(graph: SpacelikeGraph, target: ScoreTarget, rows=None) -> np.ndarray:
    """Norm of the tangential projection of grad β at interior vertices (by row)."""
    f = graph.forms
    sl = slice(None) if rows is None else rows
    G = score_gradient_arr(target, f.X[sl])
    GJ = np.einsum("nkd,d,nd->nk", f.J[sl], graph.ctx.signs, G)
    return np.sqrt(np.maximum(np.einsum("nk,nkl,nl->n", GJ, f.ginv[sl], GJ), 0.0))


def gradient_norms_via_normal(graph: SpacelikeGraph, target: ScoreTarget, rows=None) -> np.ndarray:
    """Same quantity from <grad, grad> minus the squared normal component."""
    f = graph.forms
    sl = slice(None) if rows is None else rows
    G = score_gradient_arr(target, f.X[sl])
    GF = np.einsum("njd,d,nd->nj", f.F[sl], graph.ctx.signs, G)
    # normal part w = -sum_j <G,f_j> f_j has <w,w> = -sum_j <G,f_j>^2
    return np.sqrt(graph.ctx.form(G, G) + np.sum(GF ** 2, axis=1))


def restricted_gradient_norm(graph: SpacelikeGraph, i: int, target: ScoreTarget) -> float:
    r = graph.row(i)
    return float(gradient_norms(graph, target, np.array([r]))[0])


@dataclass(frozen=True)
class HessianCheck:
    hessian: np.ndarray
    laplacian_residual: float
    hessian_fit: np.ndarray


def busemann_hessian_arr(graph: SpacelikeGraph, target: Ideal, rows=None):
    """RHS Hessian, fitted Hessian and Laplacian residual at interior rows.

    The fitted Hessian differentiates sampled values of b twice through the
    stencil and subtracts the Christoffel term.  Rows whose star touches the
    ideal boundary get NaN.
    """
    f = graph.forms
    ctx = graph.ctx
    rows = np.arange(len(graph.interior)) if rows is None else np.asarray(rows)
    X = f.X[rows]
    th = target.z
    xt = ctx.form(X, th)
    db = np.einsum("nkd,d,d->nk", f.J[rows], ctx.signs, th) / xt[:, None]
    IIth = np.einsum("nklj,njd,d->nkl", f.II[rows], f.F[rows], ctx.signs * th) / xt[:, None, None]
    hess = f.g[rows] - db[:, :, None] * db[:, None, :] + IIth
    ginv = f.ginv[rows]
    grad2 = np.einsum("nk,nkl,nl->n", db, ginv, db)
    trII_th = np.einsum("nkl,nkl->n", ginv, IIth)
    expected = ctx.p - grad2 + trII_th

    vid = graph.interior[rows]
    st = graph.stencil
    star = st.star[vid]
    touching = np.any(graph.at_infinity[star], axis=1)
    Xs = graph.points[star]
    with np.errstate(invalid="ignore"):
        bs = np.log(ctx.form(Xs, th) / ctx.form(target.o.coords, th))
    b0 = score_arr(target, X)
    coef = np.einsum("nms,ns->nm", st.P[vid], np.where(touching[:, None], 0.0, bs - b0[:, None]))
    p = ctx.p
    d1 = coef[:, :p]
    d2 = np.zeros((len(rows), p, p))
    for r, (k, l) in enumerate(_quad_pairs(p)):
        d2[:, k, l] = d2[:, l, k] = coef[:, p + r]
    hfit = d2 - np.einsum("nmkl,nm->nkl", f.gamma[rows], d1)
    lap = np.einsum("nkl,nkl->n", ginv, hfit)
    resid = np.abs(lap - expected)
    resid[touching] = np.nan
    hfit[touching] = np.nan
    return hess, hfit, resid


def busemann_hessian_check(graph: SpacelikeGraph, i: int, theta, o: PseudoPoint) -> HessianCheck:
    tgt = theta if isinstance(theta, Ideal) else Ideal(theta, o)
    r = graph.row(i)
    hess, hfit, resid = busemann_hessian_arr(graph, tgt, np.array([r]))
    return HessianCheck(hessian=hess[0], laplacian_residual=float(resid[0]), hessian_fit=hfit[0])


def normal_projection_arr(graph: SpacelikeGraph, target: ScoreTarget, rows=None):
    """(value, bound, identity value) of -<z^N, z^N> at interior rows."""
    f = graph.forms
    ctx = graph.ctx
    sl = slice(None) if rows is None else rows
    Y = f.X[sl]
    z = target.z
    zf = np.einsum("njd,d,d->nj", f.F[sl], ctx.signs, z)
    value = np.sum(zf ** 2, axis=1)
    yz = ctx.form(Y, z)
    if isinstance(target, Interior):
        bound = (ctx.p - 1) * (yz ** 2 - 1.0)
    else:
        bound = (ctx.p - 1) * yz ** 2
    L = gradient_norms(graph, target, rows)
    ident = (L ** 2 - 1.0) * (float(ctx.form(z, z)) + yz ** 2)
    return value, bound, ident


def normal_projection_bound_check(graph: SpacelikeGraph, i: int, z: ScoreTarget) -> float:
    r = graph.row(i)
    value, bound, _ = normal_projection_arr(graph, z, np.array([r]))
    return float(bound[0] - value[0])


# Exact totally geodesic graphs ----------------------------------------------

def geodesic_graph_values(xs, G: np.ndarray, ctx: FormContext) -> np.ndarray:
    """Values u(x) whose graph is the image under G of {y_1 = ... = y_q = 0}.

    Valid on the closed disk; at |x| = 1 the result is the boundary trace.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    p, q = ctx.p, ctx.q
    normals = G[:, p:p + q].T                  # images of y_1..y_q
    mU = normals[:, :p]
    mV = normals[:, p:]
    r2 = np.sum(xs * xs, axis=1)
    rhs = 2.0 * xs @ mU.T / (1.0 + r2)[:, None]    # (n, q): u . mV_a = rhs_a
    pinv = np.linalg.pinv(mV)                  # (q+1, q)
    up = rhs @ pinv.T
    _, _, vt = np.linalg.svd(mV)
    nvec = vt[-1]
    lam = np.sqrt(np.maximum(1.0 - np.sum(up * up, axis=1), 0.0))
    o_img = G[:, -1]
    out = np.empty((len(xs), q + 1))
    for sgn in (1.0, -1.0):
        u = up + sgn * lam[:, None] * nvec
        Xc = np.concatenate([2 * xs / (1 + r2)[:, None], u], axis=1)
        good = ctx.form(Xc, o_img) < 0
        if sgn > 0:
            out[:] = u
            first = good
        else:
            out[~first] = u[~first]
    return out
