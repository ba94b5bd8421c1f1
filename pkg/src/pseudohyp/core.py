"""Linear algebra of the signature (p, q+1) form and the hyperboloid model.

Points of the pseudo-hyperbolic space are stored on the double cover

    Ĥ^{p,q} = { v in R^{p+q+1} : <v, v> = -1 },

with coordinates ordered x_1..x_p (positive) then y_1..y_{q+1} (negative).
Ideal points are null vectors, kept un-normalized with a sign fixed against a
basepoint.

Typical use::

    ctx = FormContext(2, 1)
    o = PseudoPoint.origin(ctx)
    x = PseudoPoint(np.cosh(1.0) * o.coords + np.sinh(1.0) * ctx.basis(0), ctx)
    pseudo_distance(o, x)   # 1.0

Most functions also have an array form (suffix ``_arr`` or a leading array
argument) used by the mesh and group code for batched evaluation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
import scipy.linalg

from .errors import DomainError, InvalidPoint, InvalidSignature

EPS_NORM = 1e-12
EPS_ISO = 1e-10


@dataclass(frozen=True)
class FormContext:
    """Signature bookkeeping for the form diag(+1^p, -1^{q+1})."""

    p: int
    q: int

    def __post_init__(self):
        if self.p < 2 or self.q < 0:
            raise InvalidSignature(f"need p >= 2 and q >= 0, got p={self.p}, q={self.q}")

    @property
    def dim(self) -> int:
        return self.p + self.q + 1

    @cached_property
    def signs(self) -> np.ndarray:
        s = np.ones(self.dim)
        s[self.p:] = -1.0
        return s

    @cached_property
    def J(self) -> np.ndarray:
        return np.diag(self.signs)

    def basis(self, i: int) -> np.ndarray:
        e = np.zeros(self.dim)
        e[i] = 1.0
        return e

    def form(self, a, b) -> np.ndarray:
        """Broadcasting form over the last axis."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape[-1] != self.dim or b.shape[-1] != self.dim:
            raise ValueError(f"dimension mismatch: expected {self.dim}")
        return np.sum(a * self.signs * b, axis=-1)


def form(a, b, ctx: FormContext):
    """Value of <a, b> for vectors (or stacks of vectors) of the same context."""
    return ctx.form(a, b)


def _check_vec(v, ctx: FormContext) -> np.ndarray:
    v = np.array(v, dtype=float)
    if v.shape != (ctx.dim,):
        raise InvalidPoint(f"expected shape ({ctx.dim},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidPoint("non-finite coordinates")
    return v


@dataclass(frozen=True)
class PseudoPoint:
    """Unit timelike vector, a point of Ĥ^{p,q}."""

    coords: np.ndarray
    ctx: FormContext

    def __post_init__(self):
        v = _check_vec(self.coords, self.ctx)
        n = self.ctx.form(v, v)
        if abs(n + 1.0) > EPS_NORM * max(1.0, float(v @ v)):
            raise InvalidPoint(f"<v,v> = {n!r}, expected -1")
        v.setflags(write=False)
        object.__setattr__(self, "coords", v)

    @classmethod
    def normalized(cls, v, ctx: FormContext) -> "PseudoPoint":
        """Rescale a timelike vector onto the hyperboloid."""
        v = _check_vec(v, ctx)
        n = ctx.form(v, v)
        if n >= 0:
            raise InvalidPoint("vector is not timelike")
        return cls(v / np.sqrt(-n), ctx)

    @classmethod
    def origin(cls, ctx: FormContext) -> "PseudoPoint":
        return cls(ctx.basis(ctx.dim - 1), ctx)


@dataclass(frozen=True)
class BoundaryPoint:
    """Null vector representing a point of the ideal boundary."""

    z: np.ndarray
    ctx: FormContext

    def __post_init__(self):
        z = _check_vec(self.z, self.ctx)
        e2 = float(z @ z)
        if e2 == 0.0:
            raise InvalidPoint("zero boundary representative")
        if abs(self.ctx.form(z, z)) > EPS_NORM * 10 * e2:
            raise InvalidPoint("boundary representative is not null")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class Isometry:
    """Matrix in SO(p, q+1); columns act on coordinate vectors."""

    mat: np.ndarray
    ctx: FormContext
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.mat, dtype=float)
        d = self.ctx.dim
        if m.shape != (d, d):
            raise InvalidSignature(f"expected {d}x{d} matrix, got {m.shape}")
        if self.check:
            defect = isometry_defect(m, self.ctx)
            scale = max(1.0, float(np.max(np.abs(m))) ** 2)
            if defect > EPS_ISO * scale:
                raise InvalidSignature(f"form defect {defect:.3e}")
            det = np.linalg.det(m)
            if abs(det - 1.0) > EPS_ISO * scale ** (d / 2):
                raise InvalidSignature(f"determinant {det!r}")
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)

    @classmethod
    def identity(cls, ctx: FormContext) -> "Isometry":
        return cls(np.eye(ctx.dim), ctx)

    def __matmul__(self, other):
        if isinstance(other, Isometry):
            return Isometry(self.mat @ other.mat, self.ctx, check=False)
        if isinstance(other, PseudoPoint):
            return PseudoPoint.normalized(self.mat @ other.coords, self.ctx)
        if isinstance(other, BoundaryPoint):
            return BoundaryPoint(self.mat @ other.z, self.ctx)
        return self.mat @ np.asarray(other)

    def inverse(self) -> "Isometry":
        J = self.ctx.J
        return Isometry(J @ self.mat.T @ J, self.ctx, check=False)


def isometry_defect(m: np.ndarray, ctx: FormContext) -> float:
    """max |G^T J G - J|."""
    return float(np.max(np.abs(m.T @ ctx.J @ m - ctx.J)))


def random_isometry(ctx: FormContext, rng: np.random.Generator, scale: float = 1.0) -> Isometry:
    """exp of a random element of so(p, q+1)."""
    a = rng.normal(size=(ctx.dim, ctx.dim)) * scale
    k = (a - a.T) @ ctx.J  # K^T J + J K = 0
    return Isometry(scipy.linalg.expm(k), ctx)


def plane_rotation(ctx: FormContext, i: int, j: int, t: float) -> Isometry:
    """One-parameter subgroup in the coordinate plane (e_i, e_j).

    A boost when the two axes have opposite signs, a rotation otherwise.
    """
    m = np.eye(ctx.dim)
    if ctx.signs[i] == ctx.signs[j]:
        c, s = np.cos(t), np.sin(t)
        m[i, i], m[i, j], m[j, i], m[j, j] = c, -s, s, c
    else:
        c, s = np.cosh(t), np.sinh(t)
        m[i, i], m[i, j], m[j, i], m[j, j] = c, s, s, c
    return Isometry(m, ctx)


class Relation(enum.Enum):
    SpaceRelated = "space-related"
    NotSpaceRelated = "not-space-related"
    Coincident = "coincident"


def classify_pair(x: PseudoPoint, y: PseudoPoint) -> Relation:
    """Space-relation of two points, using representatives with <x,y> < 0."""
    c = -abs(float(x.ctx.form(x.coords, y.coords)))
    if abs(c + 1.0) <= EPS_NORM * max(1.0, float(x.coords @ x.coords)):
        # <x,y> = -1 also holds along lightlike segments; only x = ±y coincide
        sgn = np.sign(float(x.ctx.form(x.coords, y.coords))) or -1.0
        if np.allclose(x.coords, -sgn * y.coords, atol=1e-9, rtol=1e-9):
            return Relation.Coincident
        return Relation.NotSpaceRelated
    return Relation.SpaceRelated if c < -1.0 else Relation.NotSpaceRelated


def pseudo_distance_arr(X, Y, ctx: FormContext) -> np.ndarray:
    """Broadcast pseudo-distance; zero for pairs that are not space-related."""
    c = np.abs(ctx.form(X, Y))
    return np.arccosh(np.maximum(c, 1.0))


def pseudo_distance(x: PseudoPoint, y: PseudoPoint) -> float:
    return float(pseudo_distance_arr(x.coords, y.coords, x.ctx))


@dataclass(frozen=True)
class Interior:
    """Distance-to-o score target."""

    o: PseudoPoint

    @property
    def z(self) -> np.ndarray:
        return self.o.coords

    @property
    def ctx(self) -> FormContext:
        return self.o.ctx

    def transformed(self, g: Isometry) -> "Interior":
        return Interior(g @ self.o)


@dataclass(frozen=True)
class Ideal:
    """Busemann score target at θ, based at o.

    The representative is rescaled at construction so that <o, θ> = -1.
    """

    theta: BoundaryPoint
    o: PseudoPoint

    def __post_init__(self):
        c = float(self.o.ctx.form(self.o.coords, self.theta.z))
        if c == 0.0 or not np.isfinite(c):
            raise DomainError("basepoint is orthogonal to the boundary representative")
        object.__setattr__(self, "theta", BoundaryPoint(-self.theta.z / c, self.o.ctx))

    @property
    def z(self) -> np.ndarray:
        return self.theta.z

    @property
    def ctx(self) -> FormContext:
        return self.o.ctx

    def transformed(self, g: Isometry) -> "Ideal":
        return Ideal(g @ self.theta, g @ self.o)


ScoreTarget = Union[Interior, Ideal]


def score_arr(target: ScoreTarget, X) -> np.ndarray:
    """β_z at each row of X; raises DomainError outside the domain."""
    ctx = target.ctx
    c = ctx.form(X, target.z)
    if isinstance(target, Ideal):
        if np.any(c >= 0):
            raise DomainError("<x, θ> must be negative")
        return np.log(c / ctx.form(target.o.coords, target.z))
    if np.any(c >= -1.0):
        raise DomainError("<o, x> must be < -1")
    return np.arccosh(-c)


def score(target: ScoreTarget, x: PseudoPoint) -> float:
    return float(score_arr(target, x.coords))


def _gradient_denominator(target: ScoreTarget, X) -> tuple[np.ndarray, np.ndarray]:
    ctx = target.ctx
    z = target.z
    xz = ctx.form(X, z)
    den = float(ctx.form(z, z)) + xz ** 2
    if isinstance(target, Ideal) and np.any(xz >= 0):
        raise DomainError("<x, θ> must be negative")
    if isinstance(target, Interior) and np.any(xz >= -1.0):
        raise DomainError("<o, x> must be < -1")
    if np.any(den <= 0):
        raise DomainError("<z,z> + <x,z>^2 must be positive")
    return xz, np.sqrt(den)


def score_gradient_arr(target: ScoreTarget, X) -> np.ndarray:
    """Ambient gradient of β_z, row-wise.

    This is the metric dual of the differential, -(z + <x,z> x) / sqrt(<z,z> + <x,z>^2).
    The overall sign matters only for directional checks; norms and projections
    are sign-blind.
    """
    X = np.asarray(X, dtype=float)
    xz, den = _gradient_denominator(target, X)
    return -(target.z + xz[..., None] * X) / den[..., None]


def score_differential(target: ScoreTarget, x: PseudoPoint, u) -> float:
    """(dβ)_x(u) = -<u,z> / sqrt(<z,z> + <x,z>^2)."""
    ctx = x.ctx
    u = np.asarray(u, dtype=float)
    scale = max(1.0, float(np.linalg.norm(u) * np.linalg.norm(x.coords)))
    if abs(float(ctx.form(u, x.coords))) > 1e3 * EPS_NORM * scale:
        raise DomainError("u is not tangent at x")
    _, den = _gradient_denominator(target, x.coords)
    return float(-ctx.form(u, target.z) / den)


def score_ambient_gradient(target: ScoreTarget, x: PseudoPoint) -> np.ndarray:
    return score_gradient_arr(target, x.coords)


# Fermi chart ---------------------------------------------------------------

def fermi_embed(x, y, ctx: FormContext) -> np.ndarray:
    """Array form of the Fermi chart; x has p columns, y has q+1."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    if np.any(r2 >= 1.0):
        raise DomainError("Fermi chart needs |x| < 1")
    a = 2.0 * x / (1.0 - r2)[..., None]
    b = ((1.0 + r2) / (1.0 - r2))[..., None] * y
    return np.concatenate([a, b], axis=-1)


def fermi_project(X, ctx: FormContext) -> tuple[np.ndarray, np.ndarray]:
    """Inverse chart, row-wise: X -> (x in D^p, y in S^q)."""
    X = np.asarray(X, dtype=float)
    a = X[..., :ctx.p]
    b = X[..., ctx.p:]
    nb = np.linalg.norm(b, axis=-1)
    return a / (1.0 + nb)[..., None], b / nb[..., None]


def fermi_to_hyperboloid(x, y, ctx: FormContext) -> PseudoPoint:
    y = np.asarray(y, dtype=float)
    if y.shape != (ctx.q + 1,) or abs(float(y @ y) - 1.0) > 1e-10:
        raise DomainError("y must be a unit vector in R^{q+1}")
    return PseudoPoint.normalized(fermi_embed(x, y, ctx), ctx)


def fermi_from_hyperboloid(pt: PseudoPoint) -> tuple[np.ndarray, np.ndarray]:
    return fermi_project(pt.coords, pt.ctx)


def fermi_boundary(x, y, ctx: FormContext) -> BoundaryPoint:
    """Boundary extension of the chart, (x, y) -> [x + y] for |x| = 1."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if abs(float(x @ x) - 1.0) > 1e-10 or abs(float(y @ y) - 1.0) > 1e-10:
        raise DomainError("fermi_boundary needs unit x and unit y")
    return BoundaryPoint(np.concatenate([x, y]), ctx)


def projection_differential(X, V, ctx: FormContext) -> np.ndarray:
    """Differential of the projection Ĥ^{p,q} -> D^p applied to V at X."""
    X = np.asarray(X, dtype=float)
    V = np.asarray(V, dtype=float)
    a, b = X[..., :ctx.p], X[..., ctx.p:]
    da, db = V[..., :ctx.p], V[..., ctx.p:]
    nb = np.linalg.norm(b, axis=-1)
    dnb = np.sum(b * db, axis=-1) / nb
    return da / (1.0 + nb)[..., None] - a * (dnb / (1.0 + nb) ** 2)[..., None]


def disk_metric(x, dx) -> np.ndarray:
    """Hyperbolic (Poincaré) metric 4|dx|^2 / (1 - |x|^2)^2 on D^p."""
    x = np.asarray(x, dtype=float)
    dx = np.asarray(dx, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    return 4.0 * np.sum(dx * dx, axis=-1) / (1.0 - r2) ** 2


def disk_distance(x, y) -> np.ndarray:
    """Hyperbolic distance in the Poincaré disk."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d2 = np.sum((x - y) ** 2, axis=-1)
    den = (1.0 - np.sum(x * x, axis=-1)) * (1.0 - np.sum(y * y, axis=-1))
    return np.arccosh(1.0 + 2.0 * d2 / den)
