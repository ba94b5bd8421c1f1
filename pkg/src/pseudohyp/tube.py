"""Normal tubes around maximal graphs and pseudo-Riemannian volumes.

The tube map is ν(x, n, t) = cos t·x + sin t·n for a unit timelike normal n.
Its volume element is taken as det(cos t + sin t B_n)^{1/2} against the
fibre measure (sin t)^{(q-1)/2} dt dS^{q-1}; the README compares this with
the Jacobian of the induced metric.

Volumes of regions of Ĥ^{2,1} are estimated by Monte Carlo in the chart
u = (a, sqrt(1+|a|^2) (sin s, cos s)), a ∈ R^2, where the pseudo-Riemannian
volume density is identically 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .core import FormContext, PseudoPoint
from .errors import NotSupported, PseudoHypError
from .graph import SpacelikeGraph, adjacency, curvature_report
from .groups import OrbitTable, Representation, enumerate_orbit


class NegativeDeterminant(PseudoHypError):
    """The tube density vanishes or changes sign (t at or past a focal radius)."""


@dataclass(frozen=True)
class TubeConfig:
    t_samples: int = 32
    n_samples: int = 16
    mc_samples: int = 200_000
    batches: int = 20
    seed: int = 0

    def __post_init__(self):
        for name in ("t_samples", "n_samples", "mc_samples", "batches"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class VolumeReport:
    area_M: float
    tube_volume: float
    r: float
    t0: float
    pseudo_volume: float
    pseudo_stderr: float
    mu: float
    mu_check_slack: float

    def to_json(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


# Radii and densities -----------------------------------------------------------

def II_sup(graph: SpacelikeGraph, vertices=None) -> float:
    rep = curvature_report(graph)
    vals = rep.II_norm
    if vertices is not None:
        vals = vals[np.isin(rep.vertex, vertices)]
    return float(vals.max()) if len(vals) else 0.0


def radii_from_norm(p: int, II_norm: float) -> tuple[float, float]:
    m = max(np.sqrt(p - 1), II_norm)
    return float(np.arctan(1.0 / m)), float(np.arctan(1.0 / (2.0 * m)))


def tube_radii(graph: SpacelikeGraph, vertices=None) -> tuple[float, float]:
    """(r, t0) from the mesh supremum of the second fundamental form."""
    return radii_from_norm(graph.ctx.p, II_sup(graph, vertices))


def shape_operators(graph: SpacelikeGraph, rows: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """B_n = g^{-1}<II, n> for n = Σ_j c_j f_j, rows of the forms arrays.

    With <f_j, f_j> = -1 the pairing <II_kl, n> equals -Σ_j II_klj c_j.
    """
    f = graph.forms
    pair = -np.einsum("nklj,nj->nkl", f.II[rows], coeffs)
    return np.einsum("nkm,nml->nkl", f.ginv[rows], pair)


def _density(B: np.ndarray, t) -> np.ndarray:
    p = B.shape[-1]
    t = np.asarray(t, dtype=float)
    M = np.cos(t)[..., None, None] * np.eye(p) + np.sin(t)[..., None, None] * B
    return np.linalg.det(M)


def tube_density(graph: SpacelikeGraph, i: int, n, t: float) -> float:
    """det(cos t·I + sin t·B_n)^{1/2} at vertex i for an ambient unit normal n."""
    if not 0.0 < t < np.pi / 2:
        raise ValueError("t must lie in (0, π/2)")
    ctx = graph.ctx
    r = graph.row(i)
    f = graph.forms
    n = np.asarray(n, dtype=float)
    if abs(float(ctx.form(n, n)) + 1.0) > 1e-8:
        raise ValueError("n must satisfy <n, n> = -1")
    c = -np.einsum("jd,d,d->j", f.F[r], ctx.signs, n)
    resid = n - c @ f.F[r]
    if np.abs(resid).max() > 1e-6 * max(1.0, np.abs(n).max()):
        raise ValueError("n is not normal to the graph at this vertex")
    B = shape_operators(graph, np.array([r]), c[None])[0]
    d = float(_density(B, t))
    if d <= 0:
        raise NegativeDeterminant(f"tube density determinant {d:.3e} <= 0 at t = {t:.4f}")
    return float(np.sqrt(d))


def sphere_ball_volume(q: int, t0: float) -> float:
    """Volume of a metric ball of radius t0 in the unit sphere S^q."""
    from scipy.special import gamma
    if q == 0:
        return 1.0
    area = 2 * np.pi ** (q / 2) / gamma(q / 2)     # vol(S^{q-1})
    val, _ = quad(lambda s: np.sin(s) ** (q - 1), 0.0, t0)
    return float(area * val)


def mu_constant(p: int, q: int, t0: float) -> float:
    return 2.0 ** (-p / 2) * sphere_ball_volume(q, t0)


# Areas and tube volumes ----------------------------------------------------------

def dual_areas(graph: SpacelikeGraph) -> np.ndarray:
    """Barycentric dual-cell volumes in the disk coordinates."""
    xs = graph.xs
    S = graph.simplices
    p = graph.ctx.p
    E = xs[S[:, 1:]] - xs[S[:, :1]]
    vol = np.abs(np.linalg.det(E)) / np.prod(np.arange(1, p + 1))
    out = np.zeros(graph.n)
    for a in range(p + 1):
        np.add.at(out, S[:, a], vol / (p + 1))
    return out


def area_elements(graph: SpacelikeGraph, vertices=None) -> tuple[np.ndarray, np.ndarray]:
    """(vertex ids, sqrt(det g)·dual area) over interior vertices (or a subset)."""
    f = graph.forms
    rows = np.arange(len(graph.interior))
    if vertices is not None:
        rows = rows[np.isin(graph.interior, vertices)]
    vid = graph.interior[rows]
    w = np.sqrt(np.linalg.det(f.g[rows])) * dual_areas(graph)[vid]
    return vid, w


def _normal_samples(q: int, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient vectors on S^{q-1} with quadrature weights summing to vol(S^{q-1})."""
    if q == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if q == 2:
        phi = 2 * np.pi * (np.arange(n_samples) + 0.5) / n_samples
        return np.stack([np.cos(phi), np.sin(phi)], axis=1), np.full(n_samples, 2 * np.pi / n_samples)
    rng = np.random.default_rng(0)
    c = rng.normal(size=(n_samples, q))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    from scipy.special import gamma
    return c, np.full(n_samples, 2 * np.pi ** (q / 2) / gamma(q / 2) / n_samples)


def tube_volume(graph: SpacelikeGraph, t0: float, config: TubeConfig | None = None, vertices=None) -> float:
    """Quadrature of the tube density over vertex areas × unit normals × (0, t0)."""
    cfg = config or TubeConfig()
    q = graph.ctx.q
    vid, w = area_elements(graph, vertices)
    rows = graph._row[vid]
    tn, tw = np.polynomial.legendre.leggauss(cfg.t_samples)
    t = 0.5 * t0 * (tn + 1.0)
    tw = 0.5 * t0 * tw
    C, cw = _normal_samples(q, cfg.n_samples)
    fibre = np.sin(t) ** ((q - 1) / 2)
    total = 0.0
    for c, wc in zip(C, cw):
        B = shape_operators(graph, rows, np.broadcast_to(c, (len(rows), q)))
        dets = _density(B[:, None, :, :], t[None, :])          # (n, T)
        if np.any(dets <= 0):
            raise NegativeDeterminant("tube density vanishes inside (0, t0)")
        total += wc * float(np.sum(w[:, None] * np.sqrt(dets) * (fibre * tw)[None, :]))
    return total


def density_profile(graph: SpacelikeGraph, t_values, config: TubeConfig | None = None, vertices=None):
    """Rows (t, min density, max density) over vertices and sampled normals."""
    cfg = config or TubeConfig()
    q = graph.ctx.q
    vid, _ = area_elements(graph, vertices)
    rows = graph._row[vid]
    C, _ = _normal_samples(q, cfg.n_samples)
    out = []
    for t in t_values:
        vals = []
        for c in C:
            B = shape_operators(graph, rows, np.broadcast_to(c, (len(rows), q)))
            vals.append(_density(B, np.full(len(rows), t)))
        v = np.concatenate(vals)
        v = np.sqrt(np.maximum(v, 0.0))
        out.append((float(t), float(v.min()), float(v.max())))
    return out


# Injectivity probe ---------------------------------------------------------------

@dataclass(frozen=True)
class ProbeResult:
    failures: int
    foot_failures: int
    collisions: int
    trials: int


def tube_injectivity_probe(graph: SpacelikeGraph, trials: int = 1000, t_range=None, seed: int = 0,
                           core_radius: float = 0.6) -> ProbeResult:
    """Sample ν(x, n, t) and check that the minimiser of f_u(y) = -<u, y> is x.

    The foot search runs over all finite vertices; a minimiser in the 1-ring
    of x counts as correct.  Distinct parameter triples must also give
    distinct points.
    """
    ctx = graph.ctx
    rng = np.random.default_rng(seed)
    r, _ = tube_radii(graph)
    lo, hi = (0.0, r) if t_range is None else t_range
    core = graph.core(core_radius)
    f = graph.forms
    xv = rng.choice(core, size=trials)
    rows = graph._row[xv]
    c = rng.normal(size=(trials, ctx.q))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    t = rng.uniform(lo, hi, size=trials)
    t = np.clip(t, 1e-6, None)
    n = np.einsum("nj,njd->nd", c, f.F[rows])
    U = np.cos(t)[:, None] * f.X[rows] + np.sin(t)[:, None] * n
    fin = np.flatnonzero(~graph.at_infinity)
    P = graph.points[fin]
    vals = -(U * ctx.signs) @ P.T
    foot = fin[np.argmin(vals, axis=1)]
    A = adjacency(graph.n, graph.simplices).tocsr()
    foot_fail = 0
    for k in range(trials):
        if foot[k] == xv[k]:
            continue
        nb = A.indices[A.indptr[xv[k]]:A.indptr[xv[k] + 1]]
        if foot[k] not in nb:
            foot_fail += 1
    # distinct parameters must give distinct points
    params = np.concatenate([graph.xs[xv], c, t[:, None]], axis=1)
    coll = 0
    for k in range(trials - 1):
        dU = np.abs(U[k + 1:] - U[k]).max(axis=1)
        dp = np.abs(params[k + 1:] - params[k]).max(axis=1)
        coll += int(np.sum((dU < 1e-9) & (dp > 1e-9)))
    return ProbeResult(foot_fail + coll, foot_fail, coll, trials)


# Monte Carlo volumes -------------------------------------------------------------

def chart_point(a: np.ndarray, s: np.ndarray) -> np.ndarray:
    """(a, s) -> (a_1, a_2, sqrt(1+|a|^2) sin s, sqrt(1+|a|^2) cos s) in Ĥ^{2,1}."""
    R = np.sqrt(1.0 + np.sum(a * a, axis=-1))
    return np.concatenate([a, (R * np.sin(s))[..., None], (R * np.cos(s))[..., None]], axis=-1)


def limit_points(table: OrbitTable, count: int = 4000) -> np.ndarray:
    """Attracting eigenlines of the farthest table elements, normalised by <o,θ> = -1."""
    ctx = table.rep.ctx
    order = np.argsort(table.dist)[::-1][:count]
    out = []
    for M in table.mats[order]:
        w, V = np.linalg.eig(M)
        k = np.argmax(np.abs(w))
        if abs(w[k].imag) > 1e-9:
            continue
        v = np.real(V[:, k])
        c = float(ctx.form(v, table.o.coords))
        if abs(c) < 1e-12:
            continue
        out.append(-v / c)
    return np.array(out)


@dataclass(frozen=True)
class MCResult:
    value: float
    stderr: float
    accepted: int
    samples: int
    edge_fraction: float


def _batched(values: np.ndarray, batches: int) -> tuple[float, float]:
    parts = np.array_split(values, batches)
    means = np.array([p.mean() for p in parts])
    return float(means.mean()), float(means.std(ddof=1) / np.sqrt(len(means)))


def pseudo_volume_mc(rep: Representation, o: PseudoPoint | None = None, max_len: int = 12,
                     config: TubeConfig | None = None, rho_max: float | None = None,
                     table: OrbitTable | None = None) -> MCResult:
    """Monte Carlo volume of Ω ∩ F for (p, q) = (2, 1).

    F is the truncated domain {identity minimises -<x, ρ(γ)o>}; Ω is
    approximated by {<x, θ> < 0} over sampled limit points θ.  Points are drawn
    with |a| = sinh ρ, ρ ∝ sinh ρ on [0, rho_max], s uniform, and reweighted.
    """
    ctx = rep.ctx
    if (ctx.p, ctx.q) != (2, 1):
        raise NotSupported("pseudo-volume estimation is implemented for (p, q) = (2, 1) only")
    cfg = config or TubeConfig()
    o = o or PseudoPoint.origin(ctx)
    R = rho_max if rho_max is not None else (rep.domain_radius or 3.0) + 0.5
    if table is None:
        table = enumerate_orbit(rep, o, max_len, max_dist=2 * R + 1.0)
    theta = limit_points(table)
    near = table.subset(table.dist <= 2 * R + 1.0)
    PS = near.points * ctx.signs
    TS = theta * ctx.signs
    rng = np.random.default_rng(cfg.seed)
    n = cfg.mc_samples
    u = rng.uniform(size=n)
    rho = np.arccosh(1.0 + u * (np.cosh(R) - 1.0))
    phi = rng.uniform(0, 2 * np.pi, size=n)
    s = rng.uniform(-np.pi, np.pi, size=n)
    a = np.sinh(rho)[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    X = chart_point(a, s)
    # proposal density in (a, s): sinh ρ/(cosh R - 1) dρ · dφ/2π · ds/2π, and da = sinh ρ cosh ρ dρ dφ
    weight = np.cosh(rho) * (np.cosh(R) - 1.0) * (2 * np.pi) ** 2
    inside = np.zeros(n, dtype=bool)
    for k in range(0, n, 4096):
        Xk = X[k:k + 4096]
        omega = np.max(Xk @ TS.T, axis=1) < 0.0
        vals = -(Xk @ PS.T)
        member = vals[:, 0] <= vals[:, 1:].min(axis=1)
        inside[k:k + 4096] = omega & member
    contrib = np.where(inside, weight, 0.0)
    val, err = _batched(contrib, cfg.batches)
    edge = float(np.mean(inside[rho > 0.97 * R])) if np.any(rho > 0.97 * R) else 0.0
    return MCResult(val, err, int(inside.sum()), n, edge)


def patch_volume_mc(graph: SpacelikeGraph, patch, config: TubeConfig | None = None,
                    xi_max: float = 0.9) -> MCResult:
    """Monte Carlo volume of {u ∈ Ω : the foot of u on the graph lies in `patch`}.

    Ω is cut out by the rim boundary points of the graph.  Sampling uses the
    Fermi chart (ξ, s) with density 4(1+|ξ|^2)/(1-|ξ|^2)^3.
    """
    ctx = graph.ctx
    if (ctx.p, ctx.q) != (2, 1):
        raise NotSupported("patch volumes are implemented for (p, q) = (2, 1) only")
    cfg = config or TubeConfig()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.mc_samples
    rad = xi_max * np.sqrt(rng.uniform(size=n))
    ang = rng.uniform(0, 2 * np.pi, size=n)
    xi = rad[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    s = rng.uniform(-np.pi, np.pi, size=n)
    r2 = rad ** 2
    A = 2 * xi / (1 - r2)[:, None]
    X = chart_point(A, s)
    weight = 4 * (1 + r2) / (1 - r2) ** 3 * (np.pi * xi_max ** 2) * (2 * np.pi)
    rim = np.flatnonzero(graph.at_infinity)
    theta = np.concatenate([graph.xs[rim], graph.us[rim]], axis=1)
    TS = theta * ctx.signs
    fin = np.flatnonzero(~graph.at_infinity)
    PS = graph.points[fin] * ctx.signs
    in_patch = np.zeros(graph.n, dtype=bool)
    in_patch[np.asarray(patch)] = True
    inside = np.zeros(n, dtype=bool)
    for k in range(0, n, 2048):
        Xk = X[k:k + 2048]
        omega = np.max(Xk @ TS.T, axis=1) < 0.0
        foot = fin[np.argmin(-(Xk @ PS.T), axis=1)]
        inside[k:k + 2048] = omega & in_patch[foot]
    contrib = np.where(inside, weight, 0.0)
    val, err = _batched(contrib, cfg.batches)
    edge = float(np.mean(inside[rad > 0.97 * xi_max])) if np.any(rad > 0.97 * xi_max) else 0.0
    return MCResult(val, err, int(inside.sum()), n, edge)


def entropy_volume_product(slope: float, vol: float, genus: int) -> float:
    """δ^2·vol / ||Σ_g|| with ||Σ_g|| = 4g - 4."""
    if genus < 2:
        raise ValueError("genus must be at least 2")
    return float(slope ** 2 * vol / (4 * genus - 4))


def volume_report(graph: SpacelikeGraph, patch, config: TubeConfig | None = None,
                  pseudo: MCResult | None = None) -> VolumeReport:
    cfg = config or TubeConfig()
    r, t0 = tube_radii(graph)
    _, w = area_elements(graph, patch)
    area = float(w.sum())
    tube = tube_volume(graph, t0, cfg, patch)
    pseudo = pseudo or patch_volume_mc(graph, patch, cfg)
    mu = mu_constant(graph.ctx.p, graph.ctx.q, t0)
    return VolumeReport(area, float(tube), r, t0, pseudo.value, pseudo.stderr, mu, float(tube - mu * area))
