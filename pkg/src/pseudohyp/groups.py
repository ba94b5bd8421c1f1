"""Finitely generated groups of isometries and their orbits.

Words are tuples of letter indices.  With n generators, letters 0..n-1 are
the generators and n..2n-1 their inverses.  Text form uses the generator
names, with the inverse written by upper-casing the first character
("a1" -> "A1").
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.stats import linregress

from .core import FormContext, Isometry, PseudoPoint, disk_distance, fermi_project, isometry_defect
from .errors import (
    BadPartition,
    BudgetExceeded,
    InsufficientData,
    InvalidSignature,
    NonCommuting,
)

DEFAULT_CAP = 5_000_000
HASH_SCALE = 1e8


# Representations ---------------------------------------------------------------

@dataclass(frozen=True)
class Representation:
    generators: tuple
    kind: str = "generic"                 # "free", "surface" or "generic"
    genus: Optional[int] = None
    label: str = ""
    names: tuple = ()
    relator: Optional[tuple] = None
    domain_radius: Optional[float] = None  # circumradius of the Dirichlet domain at o

    def __post_init__(self):
        gens = tuple(self.generators)
        if not gens:
            raise ValueError("a representation needs at least one generator")
        ctx = gens[0].ctx
        for g in gens:
            if g.ctx != ctx:
                raise InvalidSignature("generators live in different form contexts")
        if self.kind not in ("free", "surface", "generic"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "free":
            for g in gens:
                if np.abs(g.mat - np.eye(ctx.dim)).max() < 1e-12:
                    raise ValueError("free generators must not be the identity")
        names = tuple(self.names) or tuple(f"g{k}" for k in range(len(gens)))
        if len(names) != len(gens):
            raise ValueError("one name per generator")
        object.__setattr__(self, "generators", gens)
        object.__setattr__(self, "names", names)

    @property
    def ctx(self) -> FormContext:
        return self.generators[0].ctx

    @property
    def rank(self) -> int:
        return len(self.generators)

    @property
    def letters(self) -> np.ndarray:
        mats = [g.mat for g in self.generators] + [g.inverse().mat for g in self.generators]
        return np.array(mats)

    def inverse_letter(self, k: int) -> int:
        n = self.rank
        return (k + n) % (2 * n)

    def letter_name(self, k: int) -> str:
        n = self.rank
        nm = self.names[k % n]
        return nm if k < n else nm[0].upper() + nm[1:]

    def format_word(self, word: Sequence[int]) -> str:
        return ".".join(self.letter_name(k) for k in word) if len(word) else "e"

    def parse_word(self, text: str) -> tuple:
        if text.strip() in ("", "e"):
            return ()
        lookup = {self.letter_name(k): k for k in range(2 * self.rank)}
        toks = text.replace(".", " ").split()
        try:
            return tuple(lookup[t] for t in toks)
        except KeyError as exc:
            raise ValueError(f"unknown letter {exc.args[0]!r}") from None

    def evaluate(self, word: Sequence[int]) -> np.ndarray:
        L = self.letters
        M = np.eye(self.ctx.dim)
        for k in word:
            M = M @ L[k]
        return M

    def relator_residual(self) -> float:
        if self.relator is None:
            return 0.0
        return float(np.abs(self.evaluate(self.relator) - np.eye(self.ctx.dim)).max())

    def conjugated(self, h: np.ndarray, indices=None, label: str | None = None) -> "Representation":
        """Conjugate the selected generators (all by default) by h."""
        hinv = np.linalg.inv(h)
        idx = set(range(self.rank) if indices is None else indices)
        gens = tuple(Isometry(h @ g.mat @ hinv, self.ctx) if k in idx else g
                     for k, g in enumerate(self.generators))
        return Representation(gens, self.kind, self.genus, label or self.label, self.names,
                              self.relator, self.domain_radius)

    def to_json(self) -> dict:
        out = {"p": self.ctx.p, "q": self.ctx.q, "kind": self.kind, "label": self.label,
               "names": list(self.names),
               "generators": [[[repr(float(v)) for v in row] for row in g.mat] for g in self.generators]}
        if self.genus is not None:
            out["genus"] = self.genus
        if self.relator is not None:
            out["relator"] = " ".join(self.letter_name(k) for k in self.relator)
        if self.domain_radius is not None:
            out["domain_radius"] = repr(float(self.domain_radius))
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Representation":
        ctx = FormContext(int(data["p"]), int(data["q"]))
        gens = tuple(Isometry(np.array([[float(v) for v in row] for row in m]), ctx)
                     for m in data["generators"])
        names = tuple(data.get("names", ()))
        rep = cls(gens, data.get("kind", "generic"), data.get("genus"), data.get("label", ""), names,
                  None, float(data["domain_radius"]) if "domain_radius" in data else None)
        if "relator" in data:
            rel = rep.parse_word(data["relator"])
            rep = cls(gens, rep.kind, rep.genus, rep.label, rep.names, rel, rep.domain_radius)
            if rep.relator_residual() > 1e-8:
                raise InvalidSignature(f"relator residual {rep.relator_residual():.2e} exceeds 1e-8")
        return rep


def load_genus2() -> Representation:
    """The shipped regular-octagon genus-2 Fuchsian group in SO(2,1)."""
    text = resources.files("pseudohyp").joinpath("data/genus2.json").read_text()
    return Representation.from_json(json.loads(text))


def block_embed(G, q: int) -> Isometry:
    """Upper block embedding SO(p,1) -> SO(p,q+1).

    G acts on (x_1..x_p, y_{q+1}); the middle block y_1..y_q is fixed.
    """
    if isinstance(G, Isometry):
        if G.ctx.q != 0:
            raise InvalidSignature("block_embed expects an element of signature (p, 1)")
        M = G.mat
    else:
        M = np.asarray(G, dtype=float)
        p0 = M.shape[0] - 1
        Isometry(M, FormContext(p0, 0))
    p = M.shape[0] - 1
    ctx = FormContext(p, q)
    out = np.eye(ctx.dim)
    sel = list(range(p)) + [ctx.dim - 1]
    out[np.ix_(sel, sel)] = M
    if np.linalg.det(M) < 0:
        if q == 0:
            raise InvalidSignature("determinant -1 cannot be corrected without a fixed block")
        out[p, p] = -1.0
    return Isometry(out, ctx)


def block_embed_rep(rep: Representation, q: int, label: str | None = None) -> Representation:
    gens = tuple(block_embed(g, q) for g in rep.generators)
    return Representation(gens, rep.kind, rep.genus, label or f"{rep.label} in SO({rep.ctx.p},{q + 1})",
                          rep.names, rep.relator, rep.domain_radius)


def boost(ctx: FormContext, length: float, axis: int = 0) -> Isometry:
    """Translation of the given length along the geodesic through o in direction e_axis."""
    M = np.eye(ctx.dim)
    c, s = np.cosh(length), np.sinh(length)
    j = ctx.dim - 1
    M[axis, axis] = M[j, j] = c
    M[axis, j] = M[j, axis] = s
    return Isometry(M, ctx)


def schottky_example(q: int = 1, length: float = 3.0) -> Representation:
    """Free group on two translations along perpendicular axes, block embedded."""
    base = FormContext(2, 0)
    a = boost(base, length, 0)
    b = boost(base, length, 1)
    rep = Representation((a, b), "free", label="Schottky", names=("a", "b"))
    return block_embed_rep(rep, q, f"Schottky in SO(2,{q + 1})")


def cyclic_example(ctx: FormContext, length: float = 0.8) -> Representation:
    return Representation((boost(ctx, length),), "free", label="cyclic boost", names=("g",))


# Bending -----------------------------------------------------------------------

def is_algebra_element(K: np.ndarray, ctx: FormContext, tol: float = 1e-10) -> bool:
    J = ctx.J
    return float(np.abs(K.T @ J + J @ K).max()) <= tol * max(1.0, float(np.abs(K).max()))


def wedge_generator(a, b, ctx: FormContext) -> np.ndarray:
    """K = a b^T J - b a^T J, the infinitesimal rotation/boost in span(a, b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.outer(a, b) @ ctx.J - np.outer(b, a) @ ctx.J


def bending_generator(rep: Representation, curve_word) -> np.ndarray:
    """Boost in the plane spanned by the fixed spacelike vector of ρ(c) and e_{p+1}.

    Meant for block-embedded groups with q >= 1, where both vectors are fixed
    by ρ(c).
    """
    ctx = rep.ctx
    if ctx.q < 1:
        raise NonCommuting("bending out of the H^p block needs q >= 1")
    C = rep.evaluate(curve_word)
    w, V = np.linalg.eig(C)
    # eigenvalue-1 eigenvectors inside the H^p block
    sel = list(range(ctx.p)) + [ctx.dim - 1]
    best, vec = np.inf, None
    for k in range(len(w)):
        v = np.real(V[:, k])
        if abs(w[k] - 1) > 1e-6 or np.abs(np.delete(v, sel)).max() > 1e-6:
            continue
        n2 = float(ctx.form(v, v))
        if n2 > 1e-9 and abs(w[k] - 1) < best:
            best, vec = abs(w[k] - 1), v / np.sqrt(n2)
    if vec is None:
        raise NonCommuting("curve element has no fixed spacelike vector in the H^p block")
    e = ctx.basis(ctx.p)
    return wedge_generator(vec, e, ctx)


def bend(rep: Representation, curve_word, K: np.ndarray, t: float, side: Sequence[int]) -> Representation:
    """Conjugate the generators in `side` by exp(tK).

    `side` must be a non-empty proper subset of generator indices; K must lie
    in the Lie algebra and commute with ρ(curve_word).
    """
    side = sorted(set(int(k) for k in side))
    if not side or len(side) >= rep.rank or side[0] < 0 or side[-1] >= rep.rank:
        raise BadPartition("side must be a non-empty proper subset of generator indices")
    K = np.asarray(K, dtype=float)
    ctx = rep.ctx
    if K.shape != (ctx.dim, ctx.dim) or not is_algebra_element(K, ctx):
        raise NonCommuting("K is not an element of the Lie algebra of the form")
    C = rep.evaluate(curve_word)
    comm = float(np.abs(K @ C - C @ K).max())
    if comm > 1e-8 * max(1.0, float(np.abs(C).max())):
        raise NonCommuting(f"K does not commute with the curve element (defect {comm:.2e})")
    if t == 0:
        return rep
    E = expm(t * K)
    return rep.conjugated(E, side, label=f"{rep.label} bent t={t:g}")


# Enumeration -------------------------------------------------------------------

@dataclass
class OrbitTable:
    rep: Representation
    words: list
    mats: np.ndarray
    points: np.ndarray
    dist: np.ndarray
    level: np.ndarray
    max_len: int
    o: PseudoPoint
    complete_radius: float
    intrinsic: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.words)

    def to_csv(self) -> str:
        lines = ["word,dist"]
        lines += [f"{self.rep.format_word(w)},{d:.12g}" for w, d in zip(self.words, self.dist)]
        return "\n".join(lines) + "\n"

    def subset(self, mask) -> "OrbitTable":
        idx = np.flatnonzero(mask)
        return OrbitTable(self.rep, [self.words[i] for i in idx], self.mats[idx], self.points[idx],
                          self.dist[idx], self.level[idx], self.max_len, self.o, self.complete_radius,
                          None if self.intrinsic is None else self.intrinsic[idx])


def _orbit_dist(ctx: FormContext, o: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return np.arccosh(np.maximum(np.abs(ctx.form(pts, o)), 1.0))


def _hash_keys(M: np.ndarray, shift: float) -> list:
    flat = M.reshape(len(M), -1)
    s = np.max(np.abs(flat), axis=1, keepdims=True)
    k = np.rint(flat / s * HASH_SCALE + shift).astype(np.int64)
    k = np.ascontiguousarray(k)
    return [r.tobytes() for r in k]


def enumerate_orbit(rep: Representation, o: PseudoPoint | None = None, max_len: int = 4,
                    max_dist: float | None = None, cap: int = DEFAULT_CAP,
                    margin: float | None = None) -> OrbitTable:
    """Breadth-first enumeration of group elements by word length.

    Free groups enumerate reduced words.  Other kinds deduplicate matrices by
    hashing at relative resolution 1e-8.  With max_dist set, elements farther
    than max_dist + margin from o are kept out of the table and not expanded;
    the margin defaults to the domain circumradius when known.
    """
    if max_len < 0:
        raise ValueError("max_len must be non-negative")
    ctx = rep.ctx
    o = o or PseudoPoint.origin(ctx)
    ov = o.coords
    L = rep.letters
    n2 = len(L)
    if margin is None:
        margin = rep.domain_radius if rep.domain_radius is not None else 0.0
    limit = np.inf if max_dist is None else max_dist + margin

    words: list = [()]
    mats = [np.eye(ctx.dim)[None]]
    levels = [np.zeros(1, dtype=np.int64)]
    front_w = [()]
    front_m = np.eye(ctx.dim)[None]
    front_last = np.array([-1])
    seen_a: set = set()
    seen_b: set = set()
    if rep.kind != "free":
        seen_a.update(_hash_keys(front_m, 0.0))
        seen_b.update(_hash_keys(front_m, 0.5))
    total = 1
    last_level_min = np.inf
    for lev in range(1, max_len + 1):
        if not len(front_m):
            break
        prod = np.einsum("nij,kjl->nkil", front_m, L)          # (N, 2n, d, d)
        parent = np.repeat(np.arange(len(front_m)), n2)
        letter = np.tile(np.arange(n2), len(front_m))
        prod = prod.reshape(-1, ctx.dim, ctx.dim)
        if rep.kind == "free":
            inv_last = np.where(front_last[parent] >= 0, (front_last[parent] + rep.rank) % n2, -1)
            keep = letter != inv_last
        else:
            keep = np.ones(len(prod), dtype=bool)
        pts = prod @ ov
        d = _orbit_dist(ctx, ov, pts)
        keep &= d <= limit
        cand = np.flatnonzero(keep)
        if rep.kind != "free" and len(cand):
            ka = _hash_keys(prod[cand], 0.0)
            kb = _hash_keys(prod[cand], 0.5)
            new = []
            for c, a, b in zip(cand, ka, kb):
                if a in seen_a or b in seen_b:
                    continue
                seen_a.add(a)
                seen_b.add(b)
                new.append(c)
            cand = np.array(new, dtype=np.int64)
        total += len(cand)
        if total > cap:
            raise BudgetExceeded(f"enumeration passed {cap} entries at word length {lev}")
        new_w = [front_w[parent[c]] + (int(letter[c]),) for c in cand]
        words.extend(new_w)
        mats.append(prod[cand])
        levels.append(np.full(len(cand), lev, dtype=np.int64))
        front_w, front_m, front_last = new_w, prod[cand], letter[cand]
        if lev == max_len and len(cand):
            last_level_min = float(d[cand].min())
    M = np.concatenate(mats)
    P = M @ ov
    dist = _orbit_dist(ctx, ov, P)
    dist[0] = 0.0
    complete = last_level_min if rep.kind == "free" else last_level_min - margin
    if max_dist is not None:
        complete = min(complete, max_dist)
    return OrbitTable(rep, words, M, P, dist, np.concatenate(levels), max_len, o, float(complete))


def brute_force_count(rep: Representation, max_len: int, tol: float = 1e-8) -> int:
    """Number of distinct matrices among all products of at most max_len letters.

    Independent of the hashing used by enumerate_orbit: products are compared
    by sorting on a random projection and checking neighbours with allclose.
    """
    L = rep.letters
    allm = [np.eye(rep.ctx.dim)[None]]
    cur = np.eye(rep.ctx.dim)[None]
    for _ in range(max_len):
        cur = np.einsum("nij,kjl->nkil", cur, L).reshape(-1, rep.ctx.dim, rep.ctx.dim)
        allm.append(cur)
    M = np.concatenate(allm).reshape(-1, rep.ctx.dim ** 2)
    s = np.max(np.abs(M), axis=1, keepdims=True)
    N = M / s
    proj = N @ np.random.default_rng(7).normal(size=N.shape[1])
    order = np.argsort(proj)
    N, proj = N[order], proj[order]
    distinct = 0
    reps: list = []
    start = 0
    for i in range(len(N)):
        # candidates close in projection
        while proj[i] - proj[start] > 1e-6:
            start += 1
        dup = False
        for j in range(start, i):
            if np.allclose(N[i], N[j], atol=tol, rtol=0):
                dup = True
                break
        if not dup:
            distinct += 1
    del reps
    return distinct


# Entropy -----------------------------------------------------------------------

@dataclass(frozen=True)
class EntropyEstimate:
    R_grid: np.ndarray
    counts: np.ndarray
    slope: float
    window: tuple
    stderr: float
    fit_stderr: float
    window_spread: float

    def to_csv(self) -> str:
        lines = ["R,N"] + [f"{r:.10g},{int(n)}" for r, n in zip(self.R_grid, self.counts)]
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"slope": self.slope, "stderr": self.stderr, "window": list(self.window),
                "fit_stderr": self.fit_stderr, "window_spread": self.window_spread}


def entropy_estimate(table: OrbitTable, R_grid=None, distances: str = "pseudo",
                     n_grid: int = 81, strict: bool = True) -> EntropyEstimate:
    """Least-squares slope of log N(R) over the window [R_max/2, R_max].

    R_max defaults to the table's complete radius minus log 2.  The reported
    stderr combines the regression standard error with the spread of slopes
    fitted over the two halves of the window, which measures the lattice
    counting error that the regression residuals alone understate.
    With strict=False an explicit grid may run past the covered radius, in
    which case the counts there are lower bounds.
    """
    d = table.dist if distances == "pseudo" else table.intrinsic
    if d is None:
        raise InsufficientData("table has no intrinsic distances")
    cover = table.complete_radius - np.log(2.0)
    if R_grid is None:
        if not np.isfinite(cover) or cover <= 0:
            raise InsufficientData("table is too small for an entropy fit")
        R_max = cover
        R_grid = np.linspace(0.0, R_max, 2 * n_grid - 1)
    R_grid = np.asarray(R_grid, dtype=float)
    if np.any(np.diff(R_grid) <= 0):
        raise ValueError("R_grid must be increasing")
    R_max = float(R_grid[-1])
    if strict and R_max > cover + 1e-12:
        raise InsufficientData(f"R_max {R_max:.3f} exceeds the covered radius {cover:.3f}")
    ds = np.sort(d)
    counts = np.searchsorted(ds, R_grid, side="right")
    win = (R_grid >= 0.5 * R_max) & (R_grid <= R_max)
    if win.sum() < 4 or np.any(counts[win] < 1):
        raise InsufficientData("window holds too few grid points or empty counts")
    Rw = R_grid[win]
    yw = np.log(counts[win])
    fit = linregress(Rw, yw)
    half = len(Rw) // 2
    parts = []
    for sl in (slice(0, half + 1), slice(half, None)):
        if len(Rw[sl]) >= 3 and np.ptp(Rw[sl]) > 0:
            parts.append(linregress(Rw[sl], yw[sl]).slope)
    spread = 0.5 * abs(parts[0] - parts[1]) if len(parts) == 2 else 0.0
    stderr = float(np.hypot(fit.stderr, spread))
    return EntropyEstimate(R_grid, counts, max(float(fit.slope), 0.0), (0.5 * R_max, R_max), stderr,
                           float(fit.stderr), float(spread))


def fermi_intrinsic_distances(table: OrbitTable) -> np.ndarray:
    """Hyperbolic distance between Fermi projections of o and the orbit points.

    Equals the intrinsic distance on the invariant H^p when the group
    preserves the totally geodesic block.
    """
    ctx = table.rep.ctx
    x0, _ = fermi_project(table.o.coords[None], ctx)
    xs, _ = fermi_project(table.points, ctx)
    return disk_distance(np.broadcast_to(x0, xs.shape), xs)


# Spectrum --------------------------------------------------------------------

@dataclass(frozen=True)
class SpectrumEntry:
    word: tuple
    length: float
    lam_max: float
    proximal: bool


def translation_length(g) -> tuple[float, bool]:
    """(log λ_max, proximal flag); returns (0, False) for non-proximal elements."""
    M = g.mat if isinstance(g, Isometry) else np.asarray(g, dtype=float)
    w = np.linalg.eigvals(M)
    mod = np.abs(w)
    order = np.argsort(mod)[::-1]
    top = w[order[0]]
    gap = mod[order[0]] - mod[order[1]] if len(w) > 1 else np.inf
    scale = max(1.0, mod[order[0]])
    if abs(top.imag) > 1e-9 * scale or gap <= 1e-7 * scale or mod[order[0]] <= 1.0 + 1e-12:
        return 0.0, False
    return float(np.log(mod[order[0]])), True


def axis_point(g, ctx: FormContext) -> np.ndarray:
    """Point on the spacelike axis: normalised sum of the extreme eigenvectors."""
    M = g.mat if isinstance(g, Isometry) else np.asarray(g, dtype=float)
    w, V = np.linalg.eig(M)
    mod = np.abs(w)
    vp = np.real(V[:, np.argmax(mod)])
    vm = np.real(V[:, np.argmin(mod)])
    if ctx.form(vp, vm) > 0:
        vm = -vm
    x = vp + vm
    return x / np.sqrt(-ctx.form(x, x))


def axis_translation_estimate(g, ctx: FormContext, j: int = 20) -> float:
    """d(x, g^j x)/j for a point x on the axis.

    M preserves <x, x> = -1, so <y, y> is not recomputed (it cancels badly
    for long words); j is capped so that j·ℓ stays below 30.
    """
    M = g.mat if isinstance(g, Isometry) else np.asarray(g, dtype=float)
    x = axis_point(M, ctx)
    step = float(np.arccosh(max(-ctx.form(x, M @ x), 1.0)))
    j = max(1, min(j, int(30.0 / step))) if step > 0 else j
    y = np.linalg.matrix_power(M, j) @ x
    return float(np.arccosh(max(-ctx.form(x, y), 1.0)) / j)


def length_spectrum(table: OrbitTable) -> list:
    out = []
    for w, M in zip(table.words, table.mats):
        ell, prox = translation_length(M)
        lam = float(np.exp(ell)) if prox else 1.0
        out.append(SpectrumEntry(tuple(w), ell, lam, prox))
    return out


def systole(rep: Representation, max_len: int, table: OrbitTable | None = None, cap: int = DEFAULT_CAP):
    """(word, length) of the shortest proximal element among words up to max_len."""
    table = table or enumerate_orbit(rep, max_len=max_len, cap=cap)
    best_w, best = None, np.inf
    for w, M in zip(table.words[1:], table.mats[1:]):
        ell, prox = translation_length(M)
        if prox and ell < best - 1e-12:
            best_w, best = tuple(w), ell
    return best_w, float(best)


# Fundamental domain ------------------------------------------------------------

@dataclass(frozen=True)
class Membership:
    member: bool
    word: tuple
    tie: bool
    value: float


def _domain_values(table: OrbitTable, x: np.ndarray) -> np.ndarray:
    ctx = table.rep.ctx
    return -ctx.form(table.points, x)


def fundamental_domain_membership(x, rep: Representation, o: PseudoPoint | None = None, max_len: int = 4,
                                  table: OrbitTable | None = None, tie_tol: float = 1e-9) -> Membership:
    """Whether the identity minimises -<x, ρ(γ)o> over the enumerated γ."""
    table = table or enumerate_orbit(rep, o, max_len)
    xv = x.coords if isinstance(x, PseudoPoint) else np.asarray(x, dtype=float)
    vals = _domain_values(table, xv)
    k = int(np.argmin(vals))
    v0 = float(vals[0])
    others = np.delete(vals, 0)
    tie = bool(len(others) and abs(others.min() - v0) <= tie_tol * max(1.0, abs(v0)))
    member = bool(v0 <= vals[k] + tie_tol * max(1.0, abs(v0)))
    return Membership(member, tuple(table.words[k]), tie, float(vals[k]))


def translate_to_domain(table: OrbitTable, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Move points into the truncated domain by the minimising element's inverse."""
    ctx = table.rep.ctx
    vals = -ctx.form(X[:, None, :], table.points[None, :, :])
    k = np.argmin(vals, axis=1)
    G = table.mats[k]
    Ginv = np.einsum("ij,nkj,kl->nil", ctx.J, G, ctx.J)
    return np.einsum("nij,nj->ni", Ginv, X), k


@dataclass(frozen=True)
class TilingReport:
    samples: int
    unique: int
    multiple: int
    none: int
    ties: int


def tiling_check(table: OrbitTable, X: np.ndarray, candidate_radius: float, tie_tol: float = 1e-9) -> TilingReport:
    """Count, per sample x, translates γ^{-1}x (γ within candidate_radius) that pass membership."""
    ctx = table.rep.ctx
    cand = np.flatnonzero(table.dist <= candidate_radius)
    G = table.mats[cand]
    Ginv = np.einsum("ij,nkj,kl->nil", ctx.J, G, ctx.J)
    PS = table.points * ctx.signs
    unique = multiple = none = ties = 0
    for x in X:
        Y = Ginv @ x                                       # (C, d) translates
        vals = -(Y @ PS.T)                                 # (C, N)
        own = vals[:, 0]
        other = vals[:, 1:].min(axis=1)
        tol = tie_tol * np.maximum(1.0, np.abs(own))
        tied = np.abs(other - own) <= tol
        member = own < other - tol
        if tied.any():
            ties += 1
            continue
        n_mem = int(member.sum())
        if n_mem == 1:
            unique += 1
        elif n_mem == 0:
            none += 1
        else:
            multiple += 1
    return TilingReport(len(X), unique, multiple, none, ties)


def hull_samples(ctx: FormContext, n: int, radius: float, rng: np.random.Generator, tilt: float = 0.0) -> np.ndarray:
    """Hyperbolic-uniform points of the H^p block within the given radius of o.

    With tilt > 0 each point is pushed off the block by a random angle in
    [0, tilt) along the first middle axis (requires q >= 1).
    """
    p = ctx.p
    out = np.zeros((n, ctx.dim))
    # radial density sinh^{p-1}(s) by inverse CDF on a grid
    s = np.linspace(0, radius, 4001)
    cdf = np.cumsum(np.sinh(s) ** (p - 1))
    cdf /= cdf[-1]
    r = np.interp(rng.uniform(size=n), cdf, s)
    d = rng.normal(size=(n, p))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    out[:, :p] = np.sinh(r)[:, None] * d
    out[:, -1] = np.cosh(r)
    if tilt > 0:
        if ctx.q < 1:
            raise ValueError("tilt needs q >= 1")
        t = rng.uniform(0, tilt, size=n)
        e = np.zeros(ctx.dim)
        e[p] = 1.0
        out = np.cos(t)[:, None] * out + np.sin(t)[:, None] * e
    return out


# Diameter ------------------------------------------------------------------------

@dataclass(frozen=True)
class DiameterEstimate:
    diameter: float
    riemannian: float
    pairs: int
    samples: int


def diameter_estimate(rep: Representation, o: PseudoPoint | None = None, max_len: int = 4,
                      samples=200, table: OrbitTable | None = None, rng=None, radius: float | None = None,
                      chunk: int = 64) -> DiameterEstimate:
    """Sampled lower estimate of sup_{x,y} min_γ d(x, ρ(γ)y) over the truncated domain.

    `samples` is either a count (points drawn from the H^p block and moved
    into the domain) or an explicit array of points.  Only space-related
    pairs count.  The Riemannian value uses Fermi projections.
    """
    ctx = rep.ctx
    table = table or enumerate_orbit(rep, o, max_len)
    if isinstance(samples, (int, np.integer)):
        rng = rng if rng is not None else np.random.default_rng(0)
        rad = radius if radius is not None else (rep.domain_radius or 2.0)
        X = hull_samples(ctx, int(samples), rad, rng)
    else:
        X = np.atleast_2d(np.asarray(samples, dtype=float))
    X, _ = translate_to_domain(table, X)
    P = table.mats
    diam = 0.0
    riem = 0.0
    xs_f, _ = fermi_project(X, ctx)
    pairs = 0
    GY = np.einsum("gij,nj->gni", P, X)                   # images ρ(γ)y: (N_gamma, n, d)
    gy_f, _ = fermi_project(GY.reshape(-1, ctx.dim), ctx)
    gy_f = gy_f.reshape(GY.shape[0], GY.shape[1], ctx.p)
    for a in range(0, len(X), chunk):
        xa = X[a:a + chunk]
        ip = np.einsum("ad,gnd->agn", xa * ctx.signs, GY)    # (ca, G, n)
        dd = np.arccosh(np.maximum(np.abs(ip), 1.0))
        m = dd.min(axis=1)                                # (ca, n)
        ok = ctx.form(xa[:, None, :], X[None, :, :]) < -1.0 - 1e-12   # space-related pairs
        if ok.any():
            diam = max(diam, float(m[ok].max()))
            pairs += int(ok.sum())
        xa_f = xs_f[a:a + chunk]
        dh = disk_distance(np.broadcast_to(xa_f[:, None, None, :], (len(xa), *gy_f.shape)),
                           np.broadcast_to(gy_f[None], (len(xa), *gy_f.shape)))
        mh = dh.min(axis=1)
        if ok.any():
            riem = max(riem, float(mh[ok].max()))
    return DiameterEstimate(diam, riem, pairs, len(X))
