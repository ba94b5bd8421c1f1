"""Discrete maximal graphs with pinned ideal boundary values.

The unknown is the S^q-valued map u on the non-rim vertices of a disk mesh.
The update direction moves the embedded point along its mean curvature
vector, expressed through the chart as a tangent vector to S^q.  A plain
damped explicit flow is available, but at fine mesh scales the default
"hybrid" method switches to a damped Newton iteration on the same residual,
with a sparse Jacobian assembled by coloured finite differences.

Example
-------
>>> from pseudohyp.core import FormContext
>>> from pseudohyp.solver import BoundaryData, SolverConfig, solve_maximal, residual
>>> ctx = FormContext(2, 1)
>>> bd = BoundaryData.constant(ctx, [0.0, 1.0])
>>> g = solve_maximal(bd, 0.1, SolverConfig())
>>> residual(g) < 1e-10
True
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve
from scipy.spatial import ConvexHull

from .core import FormContext, Ideal, Interior, PseudoPoint, ScoreTarget, fermi_boundary
from .errors import InvalidBoundary, NonConvergence, SpacelikeViolation
from .graph import (
    FormsArrays,
    SpacelikeGraph,
    _sphere_log,
    compute_forms,
    disk_mesh,
    gradient_norms,
    normal_projection_arr,
)

log = logging.getLogger(__name__)

LIGHTLIKE_MARGIN = 0.05


# Boundary data ---------------------------------------------------------------

def _slerp(a: np.ndarray, b: np.ndarray, s: np.ndarray) -> np.ndarray:
    c = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    om = np.arccos(c)
    so = np.sin(om)
    small = so < 1e-12
    wa = np.where(small, 1 - s, np.sin((1 - s) * om) / np.where(small, 1.0, so))
    wb = np.where(small, s, np.sin(s * om) / np.where(small, 1.0, so))
    out = wa[..., None] * a + wb[..., None] * b
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


@dataclass(frozen=True)
class BoundaryData:
    """Sampled boundary map ∂D^p -> S^q.

    For p = 2 samples are interpolated along great circles by angle.  For
    p = 3 an exact callable must be supplied.
    """

    ctx: FormContext
    directions: np.ndarray
    values: np.ndarray
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None
    margin: float = LIGHTLIKE_MARGIN

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.directions, dtype=float))
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "values", v)
        if d.shape[1] != self.ctx.p or v.shape != (len(d), self.ctx.q + 1):
            raise InvalidBoundary("boundary sample shapes do not match the form context")
        if np.any(np.abs(np.linalg.norm(d, axis=1) - 1) > 1e-10):
            raise InvalidBoundary("boundary directions must be unit vectors")
        bad = np.flatnonzero(np.abs(np.linalg.norm(v, axis=1) - 1) > 1e-10)
        if len(bad):
            raise InvalidBoundary(f"boundary value {int(bad[0])} is not a unit vector")
        if self.ctx.p != 2 and self.func is None:
            raise InvalidBoundary("boundary data for p != 2 needs an exact callable")
        ratio = self.lipschitz_ratio()
        if ratio > 1.0 - self.margin:
            raise InvalidBoundary(
                f"boundary map Lipschitz ratio {ratio:.4f} exceeds 1 - margin = {1 - self.margin:.4f}")

    @classmethod
    def from_function(cls, ctx: FormContext, func, n: int = 256, margin: float = LIGHTLIKE_MARGIN) -> "BoundaryData":
        if ctx.p == 2:
            ang = 2 * np.pi * np.arange(n) / n
            d = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        else:
            from .graph import _fibonacci_sphere
            d = _fibonacci_sphere(n)
        v = np.asarray(func(d), dtype=float)
        return cls(ctx, d, v, func=func, margin=margin)

    @classmethod
    def constant(cls, ctx: FormContext, y0, n: int = 64) -> "BoundaryData":
        y0 = np.asarray(y0, dtype=float)
        return cls.from_function(ctx, lambda d: np.tile(y0, (len(d), 1)), n)

    def _pairs(self) -> np.ndarray:
        n = len(self.directions)
        if self.ctx.p == 2:
            order = np.argsort(np.arctan2(self.directions[:, 1], self.directions[:, 0]))
            return np.stack([order, np.roll(order, -1)], axis=1)
        hull = ConvexHull(self.directions)
        s = hull.simplices
        e = np.concatenate([s[:, [0, 1]], s[:, [1, 2]], s[:, [0, 2]]])
        return np.unique(np.sort(e, axis=1), axis=0) if n > 3 else e

    def lipschitz_ratio(self) -> float:
        """max over sample neighbours of d_S(values) / d_S(directions)."""
        e = self._pairs()
        a, b = e[:, 0], e[:, 1]
        dd = np.arccos(np.clip(np.sum(self.directions[a] * self.directions[b], axis=1), -1, 1))
        dv = np.arccos(np.clip(np.sum(self.values[a] * self.values[b], axis=1), -1, 1))
        return float(np.max(dv / np.maximum(dd, 1e-300)))

    def evaluate(self, d: np.ndarray) -> np.ndarray:
        """Boundary values at unit directions d."""
        d = np.atleast_2d(np.asarray(d, dtype=float))
        if self.func is not None:
            return np.asarray(self.func(d), dtype=float)
        phi = np.arctan2(self.directions[:, 1], self.directions[:, 0]) % (2 * np.pi)
        order = np.argsort(phi)
        phi, vals = phi[order], self.values[order]
        q = np.arctan2(d[:, 1], d[:, 0]) % (2 * np.pi)
        k = np.searchsorted(phi, q, side="right") - 1      # -1 wraps to the last sample
        k1 = (k + 1) % len(phi)
        lo = phi[k % len(phi)]
        hi = np.where(k1 == 0, phi[0] + 2 * np.pi, phi[k1])
        qq = np.where(q < lo, q + 2 * np.pi, q)
        s = (qq - lo) / (hi - lo)
        return _slerp(vals[k % len(phi)], vals[k1], s)

    def extension(self, xs: np.ndarray) -> np.ndarray:
        """Normalised Poisson extension, used as the initial guess."""
        xs = np.atleast_2d(xs)
        r2 = np.sum(xs * xs, axis=1)
        out = np.empty((len(xs), self.ctx.q + 1))
        rim = r2 >= 1.0 - 1e-12
        if np.any(rim):
            out[rim] = self.evaluate(xs[rim] / np.sqrt(r2[rim])[:, None])
        inn = ~rim
        if np.any(inn):
            n = 512 if self.ctx.p == 2 else 2000
            if self.ctx.p == 2:
                ang = 2 * np.pi * (np.arange(n) + 0.5) / n
                zeta = np.stack([np.cos(ang), np.sin(ang)], axis=1)
            else:
                from .graph import _fibonacci_sphere
                zeta = _fibonacci_sphere(n)
            vals = self.evaluate(zeta)
            acc = np.zeros((int(inn.sum()), self.ctx.q + 1))
            X = xs[inn]
            for a in range(0, n, 128):
                z = zeta[a:a + 128]
                dist = np.linalg.norm(X[:, None, :] - z[None], axis=-1)
                ker = (1 - r2[inn])[:, None] / dist ** self.ctx.p
                acc += ker @ vals[a:a + 128]
            nrm = np.linalg.norm(acc, axis=1, keepdims=True)
            if np.any(nrm < 1e-8):
                raise InvalidBoundary("Poisson extension vanishes; supply an initial guess")
            out[inn] = acc / nrm
        return out

    def ideal_points(self, n: int | None = None) -> list:
        """Boundary points [x + u] for (up to n evenly spaced) samples."""
        idx = np.arange(len(self.directions))
        if n is not None and n < len(idx):
            idx = idx[np.linspace(0, len(idx), n, endpoint=False).astype(int)]
        return [fermi_boundary(self.directions[k], self.values[k], self.ctx) for k in idx]


# Solver ------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    step: Optional[float] = None       # default 0.2 h^2
    tol_residual: float = 1e-4
    max_iter: int = 200_000
    damping: float = 1.0
    method: str = "hybrid"             # "flow", "newton" or "hybrid"
    flow_warmup: int = 20
    newton_max_iter: int = 40
    fd_eps: float = 1e-7

    def __post_init__(self):
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.method not in ("flow", "newton", "hybrid"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class ConvergenceLog:
    rows: list = field(default_factory=list)

    def add(self, it: int, res: float, min_eig: float, phase: str):
        self.rows.append((it, res, min_eig, phase))

    def to_csv(self) -> str:
        lines = ["iter,residual,min_eig_g"]
        lines += [f"{i},{r:.12e},{m:.12e}" for i, r, m, _ in self.rows]
        return "\n".join(lines) + "\n"


def tangent_basis(u: np.ndarray) -> np.ndarray:
    """Orthonormal bases (n, q, q+1) of T_u S^q."""
    _, _, vt = np.linalg.svd(u[:, None, :])
    T = vt[:, 1:, :]
    # fix signs so the basis is deterministic
    piv = np.argmax(np.abs(T), axis=2)
    sgn = np.sign(np.take_along_axis(T, piv[..., None], axis=2))
    return T * sgn


def sphere_exp(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(nv > 1e-300, nv, 1.0)
    out = np.cos(nv) * u + np.sin(nv) * v / safe
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


class _Problem:
    """Residual evaluation for a fixed mesh and stencil."""

    def __init__(self, graph: SpacelikeGraph):
        self.graph = graph
        self.ctx = graph.ctx
        self.xs = graph.xs
        self.stencil = graph.stencil
        self.rows = graph.interior
        self.free = np.flatnonzero(~graph.rim)
        missing = np.setdiff1d(self.free, self.rows)
        if len(missing):
            raise SpacelikeViolation(f"free vertex {int(missing[0])} has a degenerate stencil")
        B = 2.0 / (1.0 - np.sum(self.xs[self.rows] ** 2, axis=1)) - 1.0
        self.B = B

    def forms(self, us) -> FormsArrays:
        return compute_forms(self.ctx, self.xs, us, self.stencil, self.rows)

    def direction_matrix(self, f: FormsArrays, T: np.ndarray) -> np.ndarray:
        """M[n, j, a] = -<B t_a, f_j>."""
        p = self.ctx.p
        FV = f.F[:, :, p:]          # V-components carry the form sign -1
        return np.einsum("n,njb,nab->nja", self.B, FV, T)

    def newton_residual(self, f: FormsArrays, T: np.ndarray) -> np.ndarray:
        """r_a = -<H, B t_a> = sum_j H_j M_ja; frame independent."""
        M = self.direction_matrix(f, T)
        return np.einsum("nj,nja->na", f.H, M)

    def evaluate(self, us):
        f = self.forms(us)
        Hn = f.H_norm
        ev = np.linalg.eigvalsh(f.g)[:, 0]
        return f, float(Hn.max()) if len(Hn) else 0.0, float(ev.min()) if len(ev) else np.inf


def residual(graph: SpacelikeGraph) -> float:
    """sup over interior vertices of the mean curvature norm."""
    Hn = graph.forms.H_norm
    return float(Hn.max()) if len(Hn) else 0.0


def _flow_direction(prob: _Problem, f: FormsArrays, us: np.ndarray) -> np.ndarray:
    T = tangent_basis(us[prob.rows])
    M = prob.direction_matrix(f, T)
    c = np.linalg.solve(M, f.H[..., None])[..., 0]
    return np.einsum("na,nab->nb", c, T)


def _flow(prob: _Problem, us, cfg: SolverConfig, step: float, n_iter: int, logbook: ConvergenceLog,
          it0: int = 0, stop_tol: float = 0.0):
    f, res, mev = prob.evaluate(us)
    it = it0
    tau = step
    for _ in range(n_iter):
        if res <= stop_tol:
            break
        v = _flow_direction(prob, f, us)
        ok = False
        while tau >= step * 2 ** -12:
            trial = us.copy()
            trial[prob.rows] = sphere_exp(us[prob.rows], cfg.damping * tau * v)
            try:
                f2, res2, mev2 = prob.evaluate(trial)
            except Exception:
                tau *= 0.5
                continue
            if mev2 > 0 and np.isfinite(res2) and res2 <= res:
                ok = True
                break
            tau *= 0.5
        it += 1
        if not ok:
            if mev2 <= 0:
                raise SpacelikeViolation(f"flow step lost spacelikeness at iteration {it}")
            break
        us, f, res, mev = trial, f2, res2, mev2
        tau = min(step, 2 * tau)
        logbook.add(it, res, mev, "flow")
    return us, f, res, mev, it


def _colouring(prob: _Problem) -> np.ndarray:
    """Greedy colouring so that no stencil contains two vertices of one colour."""
    n = prob.graph.n
    st = prob.stencil.star[prob.rows]
    rows = np.repeat(np.arange(len(prob.rows)), st.shape[1] + 1)
    cols = np.concatenate([prob.rows[:, None], st], axis=1).ravel()
    S = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(prob.rows), n))
    C = (S.T @ S).tocsr()
    colour = np.full(n, -1, dtype=np.int64)
    for v in prob.free:
        nb = C.indices[C.indptr[v]:C.indptr[v + 1]]
        used = set(colour[nb][colour[nb] >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        colour[v] = c
    return colour


def _jacobian(prob: _Problem, us, T_free, colour, eps: float) -> sp.csr_matrix:
    q = prob.ctx.q
    rows = prob.rows
    free = prob.free
    pos = np.full(prob.graph.n, -1, dtype=np.int64)
    pos[free] = np.arange(len(free))
    rowpos = pos[rows]
    T_rows = T_free[rowpos]
    f0 = prob.forms(us)
    r0 = prob.newton_residual(f0, T_rows)
    st = prob.stencil.star[rows]
    dep = np.concatenate([rows[:, None], st], axis=1)       # (n_rows, S+1)
    I, Jc, V = [], [], []
    for c in range(int(colour.max()) + 1):
        members = free[colour[free] == c]
        if not len(members):
            continue
        mask = np.zeros(prob.graph.n, dtype=bool)
        mask[members] = True
        # for each residual row, the unique coloured vertex in its stencil
        hit = mask[dep]
        has = hit.any(axis=1)
        src = dep[np.arange(len(rows)), np.argmax(hit, axis=1)]
        for a in range(q):
            trial = us.copy()
            trial[members] = sphere_exp(us[members], eps * T_free[pos[members], a])
            r1 = prob.newton_residual(prob.forms(trial), T_rows)
            d = (r1 - r0) / eps
            rr = np.flatnonzero(has)
            for b in range(q):
                I.append(rowpos[rr] * q + b)
                Jc.append(pos[src[rr]] * q + a)
                V.append(d[rr, b])
    n = len(free) * q
    return sp.csr_matrix((np.concatenate(V), (np.concatenate(I), np.concatenate(Jc))), shape=(n, n))


def _newton(prob: _Problem, us, cfg: SolverConfig, logbook: ConvergenceLog, it0: int):
    q = prob.ctx.q
    free = prob.free
    colour = _colouring(prob)
    f, res, mev = prob.evaluate(us)
    it = it0
    pos = np.full(prob.graph.n, -1, dtype=np.int64)
    pos[free] = np.arange(len(free))
    for _ in range(cfg.newton_max_iter):
        if res <= cfg.tol_residual:
            break
        T_free = tangent_basis(us[free])
        Jm = _jacobian(prob, us, T_free, colour, cfg.fd_eps)
        r = prob.newton_residual(f, T_free[pos[prob.rows]]).ravel()
        try:
            delta = spsolve(Jm.tocsc(), -r)
        except Exception:
            break
        if not np.all(np.isfinite(delta)):
            break
        delta = delta.reshape(-1, q)
        lam = cfg.damping
        ok = False
        while lam > 2 ** -10:
            trial = us.copy()
            trial[free] = sphere_exp(us[free], lam * np.einsum("na,nab->nb", delta, T_free))
            try:
                f2, res2, mev2 = prob.evaluate(trial)
            except Exception:
                lam *= 0.5
                continue
            if mev2 > 0 and res2 < res:
                ok = True
                break
            lam *= 0.5
        it += 1
        if not ok:
            break
        us, f, res, mev = trial, f2, res2, mev2
        logbook.add(it, res, mev, "newton")
    return us, f, res, mev, it


def solve_maximal(boundary: BoundaryData, mesh_scale: float, config: SolverConfig | None = None,
                  radius: float = 1.0, initial=None, rings: int = 2,
                  logbook: ConvergenceLog | None = None) -> SpacelikeGraph:
    """Maximal graph on a lattice mesh of the disk with pinned rim values."""
    cfg = config or SolverConfig()
    ctx = boundary.ctx
    logbook = logbook if logbook is not None else ConvergenceLog()
    xs, simplices, rim = disk_mesh(ctx.p, mesh_scale, radius)
    if initial is None:
        us = boundary.extension(xs)
    else:
        us = np.asarray(initial(xs) if callable(initial) else initial, dtype=float)
    if radius >= 1.0:
        us[rim] = boundary.evaluate(xs[rim])
    graph = SpacelikeGraph(ctx, xs, us, simplices, mesh_scale, rim, rings)
    return relax(graph, cfg, logbook)


def relax(graph: SpacelikeGraph, config: SolverConfig | None = None,
          logbook: ConvergenceLog | None = None) -> SpacelikeGraph:
    """Drive the free vertices of a graph to vanishing mean curvature."""
    cfg = config or SolverConfig()
    logbook = logbook if logbook is not None else ConvergenceLog()
    prob = _Problem(graph)
    us = np.array(graph.us)
    step = cfg.step if cfg.step is not None else 0.2 * graph.h ** 2
    f, res, mev = prob.evaluate(us)
    if mev <= 0:
        raise SpacelikeViolation("initial graph is not spacelike")
    logbook.add(0, res, mev, "init")
    it = 0
    if cfg.method == "flow":
        us, f, res, mev, it = _flow(prob, us, cfg, step, cfg.max_iter, logbook, 0, cfg.tol_residual)
    else:
        if cfg.method == "hybrid":
            us, f, res, mev, it = _flow(prob, us, cfg, step, cfg.flow_warmup, logbook, 0, cfg.tol_residual)
        us, f, res, mev, it = _newton(prob, us, cfg, logbook, it)
        if res > cfg.tol_residual and cfg.method == "hybrid":
            us, f, res, mev, it = _flow(prob, us, cfg, step, cfg.max_iter - it, logbook, it, cfg.tol_residual)
    log.info("solver stopped after %d iterations, residual %.3e", it, res)
    out = graph.with_values(us)
    out.__dict__["convergence"] = logbook
    if res > cfg.tol_residual:
        raise NonConvergence(f"residual {res:.3e} above tolerance {cfg.tol_residual:.1e} after {it} iterations")
    return out


# Maximum-principle diagnostics -------------------------------------------------

@dataclass(frozen=True)
class MaxPrincipleReport:
    L: float
    argmax_vertex: int
    argmax_direction: np.ndarray
    argmax_target: int
    lemma_slack: float
    parallel_residual: float
    eigen_residual: float
    n_targets: int
    per_target: np.ndarray


def scan_targets(graph: SpacelikeGraph, n_ideal: int = 64, n_interior: int = 32, seed: int = 0,
                 core_radius: float = 0.8) -> list:
    """Ideal targets from rim vertices and interior targets from core vertices."""
    ctx = graph.ctx
    o = PseudoPoint.origin(ctx)
    rimv = np.flatnonzero(graph.at_infinity)
    out: list = []
    if len(rimv):
        pick = rimv[np.linspace(0, len(rimv), min(n_ideal, len(rimv)), endpoint=False).astype(int)]
        base = graph.points[graph.interior[np.argmin(np.linalg.norm(graph.xs[graph.interior], axis=1))]]
        base = PseudoPoint.normalized(base, ctx)
        for k in pick:
            out.append(Ideal(fermi_boundary(graph.xs[k], graph.us[k], ctx), base))
    rng = np.random.default_rng(seed)
    core = graph.core(core_radius)
    for k in rng.choice(core, size=min(n_interior, len(core)), replace=False):
        out.append(Interior(PseudoPoint.normalized(graph.points[k], ctx)))
    del o
    return out


def max_principle_scan(graph: SpacelikeGraph, targets: list, core_radius: float | None = None) -> MaxPrincipleReport:
    ctx = graph.ctx
    f = graph.forms
    rows = np.arange(len(graph.interior))
    if core_radius is not None:
        rows = rows[np.linalg.norm(graph.xs[graph.interior], axis=1) <= core_radius]
    best = (-np.inf, -1, -1)
    per = np.zeros(len(targets))
    for t, tgt in enumerate(targets):
        use = rows
        if isinstance(tgt, Interior):
            dist = -ctx.form(f.X[rows], tgt.z)
            use = rows[dist > 1.0 + 1e-9]
        gn = gradient_norms(graph, tgt, use)
        k = int(np.argmax(gn))
        per[t] = gn[k]
        if gn[k] > best[0]:
            best = (float(gn[k]), int(use[k]), t)
    L, r, t = best
    tgt = targets[t]
    X = f.X[r]
    z = tgt.z
    from .core import score_gradient_arr
    G = score_gradient_arr(tgt, X[None])[0]
    GJ = np.einsum("kd,d,d->k", f.J[r], ctx.signs, G)
    coef = f.ginv[r] @ GJ
    u = coef @ f.J[r]
    u /= np.sqrt(ctx.form(u, u))
    zz = float(ctx.form(z, z))
    xz = float(ctx.form(X, z))
    den = np.sqrt(zz + xz ** 2)
    zh = z / den
    uz = float(ctx.form(u, zh))
    slack = L ** 2 - ctx.p - (zz / den ** 2) / uz ** 2 * L ** 2 * (2 * L ** 2 - ctx.p - 1) if uz != 0 else L ** 2 - ctx.p
    # z^T parallel to u
    zT = f.ginv[r] @ np.einsum("kd,d,d->k", f.J[r], ctx.signs, zh)
    zT_amb = zT @ f.J[r]
    perp = zT_amb - ctx.form(zT_amb, u) * u
    par_res = float(np.sqrt(max(ctx.form(perp, perp), 0.0)))
    # B_{z^N} u against <x, z>(L^2 - 1) u
    zN = -np.einsum("jd,d,d->j", f.F[r], ctx.signs, zh)
    second = np.einsum("klj,j->kl", f.II[r], -zN)       # <II_kl, z^N>
    uc = f.ginv[r] @ np.einsum("kd,d,d->k", f.J[r], ctx.signs, u)
    Bu = np.linalg.solve(f.g[r], second @ uc)
    diff = Bu - (float(ctx.form(X, zh)) * (L ** 2 - 1)) * uc
    eig_res = float(np.sqrt(max(diff @ f.g[r] @ diff, 0.0)))
    return MaxPrincipleReport(L=L, argmax_vertex=int(graph.interior[r]), argmax_direction=u,
                              argmax_target=t, lemma_slack=float(slack), parallel_residual=par_res,
                              eigen_residual=eig_res, n_targets=len(targets), per_target=per)


def curved_example(ctx: FormContext, amplitude: float = 0.4, n: int = 512) -> BoundaryData:
    """u(φ) = cos α y_0 + sin α y_1 with α = amplitude·sin 2φ (needs q >= 1)."""
    q1 = ctx.q + 1
    y0 = np.zeros(q1)
    y0[-1] = 1.0
    y1 = np.zeros(q1)
    y1[0] = 1.0

    def func(d):
        phi = np.arctan2(d[:, 1], d[:, 0])
        a = amplitude * np.sin(2 * phi)
        return np.cos(a)[:, None] * y0 + np.sin(a)[:, None] * y1

    return BoundaryData.from_function(ctx, func, n)


def normal_projection_slack(graph: SpacelikeGraph, targets: list, core_radius: float | None = None) -> float:
    """min over targets and vertices of bound - value."""
    rows = np.arange(len(graph.interior))
    if core_radius is not None:
        rows = rows[np.linalg.norm(graph.xs[graph.interior], axis=1) <= core_radius]
    worst = np.inf
    for tgt in targets:
        use = rows
        if isinstance(tgt, Interior):
            use = rows[-graph.ctx.form(graph.forms.X[rows], tgt.z) > 1.0 + 1e-9]
        value, bound, _ = normal_projection_arr(graph, tgt, use)
        worst = min(worst, float(np.min(bound - value)))
    return worst
