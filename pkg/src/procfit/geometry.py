"""Geometric primitives: measures, rigid placement, coarse-to-fine dividing, sampling.

Primitives are immutable value objects. Dividing a primitive at level eta
produces 2^(2*eta) candidate cells on its bounding square (or a spherical
lattice of that size); a cell is kept iff its center lies on the solid
region, and it carries the full cell area as its measure. All dividing and
grid sampling is deterministic; only sphere surface sampling consumes
randomness.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

QUADRANTS = ("I", "II", "III", "IV")
ALL_QUADRANTS = frozenset(QUADRANTS)


class Point3(NamedTuple):
    x: float
    y: float
    z: float

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class PointCloud:
    """A finite 3D point set with an optional sampling-spacing hint.

    Parameters
    ----------
    points : (N, 3) array_like
        Point coordinates. Must be finite.
    resolution_hint : float, optional
        Spacing the cloud was sampled at, if known. Used as the default
        inlier threshold and to derive the dividing floor.
    """

    points: np.ndarray
    resolution_hint: Optional[float] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must be an (N, 3) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.resolution_hint is not None and not self.resolution_hint > 0:
            raise ValueError("resolution_hint must be positive")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


# =============================================================================
# PRIMITIVES
# =============================================================================


@dataclass(frozen=True)
class FrameRegion:
    """Planar ring between two concentric axis-aligned squares.

    The solid region is the set of plane points whose Chebyshev distance
    from the center lies in [inner_len/2, outer_len/2], restricted to the
    active quadrants. The plane is the XY plane rotated by rot_z about the
    world z axis and translated to ``center``.
    """

    center: Point3 = Point3(0.0, 0.0, 0.0)
    outer_len: float = 4.0
    inner_len: float = 2.0
    active_quadrants: frozenset = ALL_QUADRANTS
    rot_z: float = 0.0

    def __post_init__(self):
        if not self.outer_len > 0:
            raise ValueError("outer_len must be positive")
        # inner == outer is allowed: it is the legal empty model
        if self.inner_len < 0 or self.inner_len > self.outer_len + 1e-12:
            raise ValueError("need 0 <= inner_len <= outer_len")
        quads = frozenset(self.active_quadrants)
        if not quads or not quads <= ALL_QUADRANTS:
            raise ValueError("active_quadrants must be a non-empty subset of I..IV")
        object.__setattr__(self, "active_quadrants", quads)

    @property
    def gamma(self) -> float:
        return self.outer_len


@dataclass(frozen=True)
class HoledQuad:
    """Planar rectangle with axis-aligned rectangular holes.

    origin is the (u=0, v=0) corner in world space; u_dir and v_dir are
    orthonormal edge directions; holes are (u0, v0, w, h) rectangles in
    local (u, v) coordinates, pairwise disjoint and inside the quad.
    """

    origin: Point3
    u_dir: tuple
    v_dir: tuple
    lu: float
    lv: float
    holes: tuple = ()

    def __post_init__(self):
        u = np.asarray(self.u_dir, dtype=float)
        v = np.asarray(self.v_dir, dtype=float)
        if abs(np.linalg.norm(u) - 1) > 1e-9 or abs(np.linalg.norm(v) - 1) > 1e-9:
            raise ValueError("u_dir and v_dir must be unit vectors")
        if abs(float(np.dot(u, v))) > 1e-9:
            raise ValueError("u_dir and v_dir must be orthogonal")
        if not (self.lu > 0 and self.lv > 0):
            raise ValueError("extents must be positive")
        for u0, v0, w, h in self.holes:
            if w <= 0 or h <= 0:
                raise ValueError("hole extents must be positive")
            if u0 < -1e-9 or v0 < -1e-9 or u0 + w > self.lu + 1e-9 or v0 + h > self.lv + 1e-9:
                raise ValueError("hole outside quad")
        for i, a in enumerate(self.holes):
            for b in self.holes[i + 1 :]:
                if a[0] < b[0] + b[2] and b[0] < a[0] + a[2] and a[1] < b[1] + b[3] and b[1] < a[1] + a[3]:
                    raise ValueError("holes overlap")
        object.__setattr__(self, "u_dir", tuple(u))
        object.__setattr__(self, "v_dir", tuple(v))
        object.__setattr__(self, "holes", tuple(tuple(hh) for hh in self.holes))

    @property
    def gamma(self) -> float:
        # dividing is specified for squares; for a rectangle the bounding
        # square of the longer edge drives the cell size
        return max(self.lu, self.lv)


@dataclass(frozen=True)
class Sphere:
    center: Point3 = Point3(0.0, 0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError("radius must be positive and finite")

    @property
    def gamma(self) -> float:
        # the dividing-extent analog of the square edge: the great circle
        return 2.0 * math.pi * self.radius


Primitive = Union[FrameRegion, HoledQuad, Sphere]


@dataclass(frozen=True)
class SubModel:
    """One cell of a divided primitive: a center sample carrying the cell area."""

    center: Point3
    measure: float
    cell_id: tuple


# =============================================================================
# MEASURE AND DIVIDING
# =============================================================================


def measure(p: Primitive) -> float:
    """Exact analytic area of a primitive."""
    if isinstance(p, FrameRegion):
        full = p.outer_len ** 2 - p.inner_len ** 2
        return full * len(p.active_quadrants) / 4.0
    if isinstance(p, HoledQuad):
        return p.lu * p.lv - sum(w * h for _, _, w, h in p.holes)
    if isinstance(p, Sphere):
        return 4.0 * math.pi * p.radius ** 2
    raise TypeError(f"not a primitive: {type(p).__name__}")


def eta_top(gamma: float, delta: float) -> int:
    """Top dividing level for extent gamma at target resolution delta.

    Non-integer values are rounded up so the finest cell side never
    exceeds the requested resolution equivalent.
    """
    if delta > gamma:
        raise ValueError("resolution coarser than extent")
    if delta <= 0 or gamma <= 0:
        raise ValueError("gamma and delta must be positive")
    return max(1, math.ceil(math.log2(gamma / delta + 1.0)))


def _rot_z_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _frame_membership(u: np.ndarray, v: np.ndarray, p: FrameRegion) -> np.ndarray:
    """Solid-region test for local plane coordinates of a FrameRegion."""
    cheb = np.maximum(np.abs(u), np.abs(v))
    mask = (cheb >= p.inner_len / 2.0) & (cheb <= p.outer_len / 2.0)
    if p.active_quadrants != ALL_QUADRANTS:
        qmask = np.zeros_like(mask)
        if "I" in p.active_quadrants:
            qmask |= (u > 0) & (v > 0)
        if "II" in p.active_quadrants:
            qmask |= (u < 0) & (v > 0)
        if "III" in p.active_quadrants:
            qmask |= (u < 0) & (v < 0)
        if "IV" in p.active_quadrants:
            qmask |= (u > 0) & (v < 0)
        mask &= qmask
    return mask


def _quad_membership(u: np.ndarray, v: np.ndarray, p: HoledQuad) -> np.ndarray:
    mask = (u >= 0) & (u <= p.lu) & (v >= 0) & (v <= p.lv)
    for u0, v0, w, h in p.holes:
        # hole interiors are open: a center exactly on a hole edge stays solid
        mask &= ~((u > u0) & (u < u0 + w) & (v > v0) & (v < v0 + h))
    return mask


def _frame_local_to_world(u: np.ndarray, v: np.ndarray, p: FrameRegion) -> np.ndarray:
    pts = np.column_stack([u, v, np.zeros_like(u)])
    pts = pts @ _rot_z_matrix(p.rot_z).T
    return pts + p.center.to_array()


def _quad_local_to_world(u: np.ndarray, v: np.ndarray, p: HoledQuad) -> np.ndarray:
    ud = np.asarray(p.u_dir)
    vd = np.asarray(p.v_dir)
    return p.origin.to_array() + np.outer(u, ud) + np.outer(v, vd)


@functools.lru_cache(maxsize=16)
def _fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic unit-sphere lattice (golden-angle spiral), n points.

    Cached because the sampler re-divides spheres on every posterior
    evaluation; callers must not mutate the returned array.
    """
    k = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * k + 1.0) / n
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    pts.setflags(write=False)
    return pts


def divide_arrays(p: Primitive, eta: int):
    """Array form of divide: (centers (N,3), measures (N,), cell_ids list).

    This is the hot path used by metric evaluation; `divide` wraps it.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if isinstance(p, Sphere):
        n = 4 ** eta
        centers = p.center.to_array() + p.radius * _fibonacci_sphere(n)
        cell_measure = 4.0 * math.pi * p.radius ** 2 / n
        measures = np.full(n, cell_measure)
        ids = [(eta, k) for k in range(n)]
        return centers, measures, ids

    n = 2 ** eta
    side = p.gamma / n
    if isinstance(p, FrameRegion):
        coords = -p.outer_len / 2.0 + (np.arange(n) + 0.5) * side
        uu, vv = np.meshgrid(coords, coords, indexing="ij")
        rows, cols = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        u, v = uu.ravel(), vv.ravel()
        keep = _frame_membership(u, v, p)
        centers = _frame_local_to_world(u[keep], v[keep], p)
        rows, cols = rows.ravel()[keep], cols.ravel()[keep]
    elif isinstance(p, HoledQuad):
        # square cells of the bounding square; per-axis counts rounded up
        nu = math.ceil(p.lu / side - 1e-12)
        nv = math.ceil(p.lv / side - 1e-12)
        cu = (np.arange(nu) + 0.5) * side
        cv = (np.arange(nv) + 0.5) * side
        uu, vv = np.meshgrid(cu, cv, indexing="ij")
        rows, cols = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
        u, v = uu.ravel(), vv.ravel()
        keep = _quad_membership(u, v, p)
        centers = _quad_local_to_world(u[keep], v[keep], p)
        rows, cols = rows.ravel()[keep], cols.ravel()[keep]
    else:
        raise TypeError(f"not a primitive: {type(p).__name__}")

    measures = np.full(centers.shape[0], side * side)
    ids = [(eta, int(r), int(c)) for r, c in zip(rows, cols)]
    return centers, measures, ids


def divide(p: Primitive, eta: int) -> list:
    """Divide a primitive into level-eta sub-models (center point + cell area)."""
    centers, measures, ids = divide_arrays(p, eta)
    return [
        SubModel(center=Point3(*c), measure=float(m), cell_id=cid)
        for c, m, cid in zip(centers, measures, ids)
    ]


# =============================================================================
# RIGID PLACEMENT AND SAMPLING
# =============================================================================


def rigid_place(p: Primitive, rot_z: float, t: Point3) -> Primitive:
    """Rotate about the world z axis, then translate. Measure is invariant."""
    rot = _rot_z_matrix(rot_z)
    tvec = t.to_array() if isinstance(t, Point3) else np.asarray(t, dtype=float)

    def move(pt: Point3) -> Point3:
        return Point3(*(rot @ pt.to_array() + tvec))

    if isinstance(p, FrameRegion):
        return FrameRegion(
            center=move(p.center),
            outer_len=p.outer_len,
            inner_len=p.inner_len,
            active_quadrants=p.active_quadrants,
            rot_z=p.rot_z + rot_z,
        )
    if isinstance(p, HoledQuad):
        return HoledQuad(
            origin=move(p.origin),
            u_dir=tuple(rot @ np.asarray(p.u_dir)),
            v_dir=tuple(rot @ np.asarray(p.v_dir)),
            lu=p.lu,
            lv=p.lv,
            holes=p.holes,
        )
    if isinstance(p, Sphere):
        return Sphere(center=move(p.center), radius=p.radius)
    raise TypeError(f"not a primitive: {type(p).__name__}")


def sample_uniform(p: Primitive, resolution: float, seed=None) -> PointCloud:
    """Uniformly sample the primitive surface at the given spacing.

    Planar primitives produce a deterministic grid (half-spacing phase from
    the bounding-box corner) restricted to the solid region. Spheres use
    Marsaglia rejection sampling with point count round(area/resolution^2),
    so they need `seed` for reproducibility.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if isinstance(p, Sphere):
        count = int(round(measure(p) / resolution ** 2))
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        pts = np.empty((count, 3))
        got = 0
        while got < count:
            uv = rng.uniform(-1.0, 1.0, size=(2 * (count - got) + 16, 2))
            s = uv[:, 0] ** 2 + uv[:, 1] ** 2
            ok = s < 1.0
            uv, s = uv[ok], s[ok]
            take = min(len(s), count - got)
            uv, s = uv[:take], s[:take]
            root = np.sqrt(1.0 - s)
            pts[got : got + take] = np.column_stack(
                [2.0 * uv[:, 0] * root, 2.0 * uv[:, 1] * root, 1.0 - 2.0 * s]
            )
            got += take
        return PointCloud(p.center.to_array() + p.radius * pts, resolution_hint=resolution)

    if isinstance(p, FrameRegion):
        if resolution >= p.outer_len:
            raise ValueError("resolution must be below the primitive extent")
        n = int(round(p.outer_len / resolution))
        coords = -p.outer_len / 2.0 + (np.arange(n) + 0.5) * resolution
        uu, vv = np.meshgrid(coords, coords, indexing="ij")
        u, v = uu.ravel(), vv.ravel()
        keep = _frame_membership(u, v, p)
        return PointCloud(_frame_local_to_world(u[keep], v[keep], p), resolution_hint=resolution)

    if isinstance(p, HoledQuad):
        if resolution >= max(p.lu, p.lv):
            raise ValueError("resolution must be below the primitive extent")
        nu = max(1, int(round(p.lu / resolution)))
        nv = max(1, int(round(p.lv / resolution)))
        cu = (np.arange(nu) + 0.5) * resolution
        cv = (np.arange(nv) + 0.5) * resolution
        uu, vv = np.meshgrid(cu, cv, indexing="ij")
        u, v = uu.ravel(), vv.ravel()
        keep = _quad_membership(u, v, p) & (u <= p.lu) & (v <= p.lv)
        return PointCloud(_quad_local_to_world(u[keep], v[keep], p), resolution_hint=resolution)

    raise TypeError(f"not a primitive: {type(p).__name__}")
