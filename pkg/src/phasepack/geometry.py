"""Rigid 2D polygon geometry.

Shapes are immutable simple polygons with a cached convex decomposition.
Penetration depth between shapes uses smoothed (log-sum-exp) support
functions over the SAT-complete direction set; the MTV sweep in
``mtv_separate`` is the geometry-only separation baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi
_EPS = 1e-12


class GeometryError(ValueError):
    """Raised for invalid polygon input (self-intersection, degeneracy)."""


def polygon_area(vertices) -> float:
    """Signed shoelace area (positive for counter-clockwise winding)."""
    v = np.asarray(vertices, dtype=np.float64)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_properly_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def is_simple_polygon(vertices) -> bool:
    """True when no two non-adjacent edges intersect."""
    v = np.asarray(vertices, dtype=np.float64)
    n = len(v)
    for i in range(n):
        a1, a2 = v[i], v[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_properly_intersect(a1, a2, v[j], v[(j + 1) % n]):
                return False
    return True


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def wrap_angle(theta: float) -> float:
    """Wrap to [0, 2*pi)."""
    t = math.fmod(theta, TWO_PI)
    return t + TWO_PI if t < 0.0 else t


def wrapped_angle_distance(a: float, b: float) -> float:
    """Shortest angular distance between a and b, in [0, pi]."""
    d = math.fmod(abs(a - b), TWO_PI)
    return min(d, TWO_PI - d)


@dataclass(frozen=True)
class Pose:
    """Rigid pose: translation p (grid units) and rotation theta in [0, 2*pi)."""

    p: np.ndarray
    theta: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64).reshape(2).copy()
        p.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.theta)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class RigidShape:
    """Immutable simple polygon with convex decomposition and bounding data.

    Vertices are counter-clockwise in the shape's local frame; geometry is
    never modified after construction, only posed.
    """

    id: int
    vertices: np.ndarray
    convex_parts: tuple
    circumradius: float
    area: float
    # unit outward edge normals of each convex part, local frame
    part_normals: tuple = field(repr=False, default=())

    @staticmethod
    def from_vertices(shape_id: int, vertices) -> "RigidShape":
        v = np.asarray(vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError(f"shape {shape_id}: need at least 3 2D vertices")
        if not np.all(np.isfinite(v)):
            raise GeometryError(f"shape {shape_id}: non-finite vertex")
        area = polygon_area(v)
        if area < 0:
            v = v[::-1].copy()
            area = -area
        if area < 1e-9:
            raise GeometryError(f"shape {shape_id}: degenerate (area ~ 0) polygon")
        if not is_simple_polygon(v):
            raise GeometryError(f"shape {shape_id}: self-intersecting polygon")
        parts = tuple(_freeze(p) for p in convex_decompose(v))
        normals = tuple(_freeze(_edge_normals(p)) for p in parts)
        centroid = _polygon_centroid(v)
        circumradius = float(np.max(np.linalg.norm(v - centroid, axis=1)))
        return RigidShape(
            id=int(shape_id),
            vertices=_freeze(v),
            convex_parts=parts,
            circumradius=circumradius,
            area=float(area),
            part_normals=normals,
        )


@dataclass(frozen=True)
class Scene:
    """Shapes plus one pose per shape on a rectangular domain."""

    shapes: tuple
    poses: tuple
    domain: tuple = ((0.0, 0.0), (128.0, 128.0))

    def __post_init__(self):
        if len(self.shapes) != len(self.poses):
            raise ValueError("one pose per shape required")
        object.__setattr__(self, "shapes", tuple(self.shapes))
        object.__setattr__(self, "poses", tuple(self.poses))

    def with_poses(self, poses) -> "Scene":
        return replace(self, poses=tuple(poses))

    @property
    def total_shape_area(self) -> float:
        return float(sum(s.area for s in self.shapes))


def _polygon_centroid(v: np.ndarray) -> np.ndarray:
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * np.sum(cross)
    cx = np.sum((x + xn) * cross) / (6.0 * a)
    cy = np.sum((y + yn) * cross) / (6.0 * a)
    return np.array([cx, cy])


def _edge_normals(v: np.ndarray) -> np.ndarray:
    """Unit outward normals of a CCW polygon's edges."""
    e = np.roll(v, -1, axis=0) - v
    n = np.stack([e[:, 1], -e[:, 0]], axis=1)
    lengths = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.maximum(lengths, 1e-30)


def transform_vertices(shape: RigidShape, pose: Pose) -> np.ndarray:
    """World-frame vertices R(theta) @ v + p; winding is preserved."""
    return shape.vertices @ pose.rotation.T + pose.p


# ---------------------------------------------------------------------------
# Convex decomposition: ear-clipping triangulation + greedy convex merging.
# ---------------------------------------------------------------------------

def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _point_in_triangle(p, a, b, c) -> bool:
    d1 = _cross(a, b, p)
    d2 = _cross(b, c, p)
    d3 = _cross(c, a, p)
    return d1 >= -_EPS and d2 >= -_EPS and d3 >= -_EPS


def _triangulate(v: np.ndarray) -> list:
    """Ear-clipping triangulation of a CCW simple polygon (index triples)."""
    idx = list(range(len(v)))
    tris = []
    while len(idx) > 3:
        n = len(idx)
        clipped = False
        for k in range(n):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % n]
            a, b, c = v[i0], v[i1], v[i2]
            if _cross(a, b, c) <= _EPS:  # reflex or collinear corner
                continue
            if any(
                _point_in_triangle(v[j], a, b, c)
                for j in idx
                if j not in (i0, i1, i2)
            ):
                continue
            tris.append([i0, i1, i2])
            idx.pop(k)
            clipped = True
            break
        if not clipped:
            raise GeometryError("triangulation failed; polygon is not simple")
    if abs(_cross(v[idx[0]], v[idx[1]], v[idx[2]])) > _EPS:
        tris.append(idx)
    return tris


def _is_convex_cycle(cycle, v) -> bool:
    n = len(cycle)
    return all(
        _cross(v[cycle[i]], v[cycle[(i + 1) % n]], v[cycle[(i + 2) % n]]) >= -_EPS
        for i in range(n)
    )


def _try_merge(p, q, v):
    """Merge two CCW index cycles sharing a directed edge, if convex."""
    edges_q = {(q[i], q[(i + 1) % len(q)]): i for i in range(len(q))}
    for i in range(len(p)):
        u, w = p[i], p[(i + 1) % len(p)]
        if (w, u) not in edges_q:
            continue
        j = edges_q[(w, u)]
        # p rotated to end at u (closing edge u->w), q rotated to start at u
        pr = p[i + 1:] + p[:i + 1]
        qr = q[j + 1:] + q[:j + 1]
        merged = pr + qr[1:-1]
        if len(set(merged)) == len(merged) and _is_convex_cycle(merged, v):
            return merged
    return None


def convex_decompose(vertices) -> list:
    """Partition a simple polygon into convex pieces.

    Ear-clipping triangulation followed by greedy merging of adjacent parts
    whenever their union stays convex. Parts tile the polygon exactly.
    """
    v = np.asarray(vertices, dtype=np.float64)
    if polygon_area(v) < 0:
        raise GeometryError("convex_decompose expects counter-clockwise input")
    if not is_simple_polygon(v):
        raise GeometryError("convex_decompose rejects self-intersecting input")
    parts = _triangulate(v)
    merged_any = True
    while merged_any:
        merged_any = False
        for i in range(len(parts)):
            for j in range(i + 1, len(parts)):
                m = _try_merge(parts[i], parts[j], v)
                if m is None:
                    m = _try_merge(parts[j], parts[i], v)
                if m is not None:
                    parts[i] = m
                    parts.pop(j)
                    merged_any = True
                    break
            if merged_any:
                break
    return [v[p] for p in parts]


# ---------------------------------------------------------------------------
# Support functions and penetration depth.
# ---------------------------------------------------------------------------

def support(convex_vertices, direction, temperature: float) -> float:
    """Smoothed support value: temperature * logsumexp(dot(d, v) / temperature).

    Upper-bounds the exact support max_v d.v and converges to it as the
    temperature goes to 0. temperature == 0 gives the exact maximum.
    """
    dots = np.asarray(convex_vertices, dtype=np.float64) @ np.asarray(direction, dtype=np.float64)
    m = float(np.max(dots))
    if temperature == 0.0:
        return m
    return m + temperature * float(np.log(np.sum(np.exp((dots - m) / temperature))))


def _sat_directions(part_a, normals_a, rot_i, part_b, normals_b, rot_j):
    """SAT-complete direction set: +/- world edge normals of both parts."""
    na = normals_a @ rot_i.T
    nb = normals_b @ rot_j.T
    return np.concatenate([na, -na, nb, -nb], axis=0)


def _pair_penetration(wa, na, wb, nb, delta_p, temperature):
    """min over directions of h_A(d) + h_B(-d) - d . delta_p for one part pair.

    wa/wb are rotated (not translated) part vertices; na/nb rotated unit
    normals; delta_p = p_j - p_i.
    """
    dirs = np.concatenate([na, -na, nb, -nb], axis=0)
    dots_a = dirs @ wa.T
    dots_b = -dirs @ wb.T
    if temperature == 0.0:
        ha = np.max(dots_a, axis=1)
        hb = np.max(dots_b, axis=1)
    else:
        ma = np.max(dots_a, axis=1)
        mb = np.max(dots_b, axis=1)
        ha = ma + temperature * np.log(np.sum(np.exp((dots_a - ma[:, None]) / temperature), axis=1))
        hb = mb + temperature * np.log(np.sum(np.exp((dots_b - mb[:, None]) / temperature), axis=1))
    g = ha + hb - dirs @ delta_p
    k = int(np.argmin(g))
    return float(g[k]), dirs[k]


def penetration(shape_i: RigidShape, pose_i: Pose, shape_j: RigidShape, pose_j: Pose,
                temperature: float = 0.05) -> float:
    """Smoothed penetration depth between two posed shapes.

    Positive when the shapes interpenetrate (up to log-sum-exp slack of
    temperature * log(vertex count)), negative is the separation gap. For
    non-convex shapes this is the max over convex part pairs of the per-pair
    minimum over the SAT direction set.
    """
    return _deepest_penetration(shape_i, pose_i, shape_j, pose_j, temperature)[0]


def _deepest_penetration(shape_i, pose_i, shape_j, pose_j, temperature):
    ri, rj = pose_i.rotation, pose_j.rotation
    delta_p = pose_j.p - pose_i.p
    best = (-np.inf, None)
    for pa, na in zip(shape_i.convex_parts, shape_i.part_normals):
        wa = pa @ ri.T
        wna = na @ ri.T
        for pb, nb in zip(shape_j.convex_parts, shape_j.part_normals):
            g, d = _pair_penetration(wa, wna, pb @ rj.T, nb @ rj.T, delta_p, temperature)
            if g > best[0]:
                best = (g, d)
    return best


def mtv_separate(scene: Scene, clearance: float = 1.0, max_sweeps: int = 1000):
    """Iteratively push overlapping pairs apart along minimum translation vectors.

    Each sweep resolves every penetrating pair (exact supports) by splitting
    the required translation between the two shapes, overshooting to the given
    clearance so resolved pairs do not immediately re-collide. Geometry is
    untouched; only pose translations change. Returns (scene, converged).
    Ablation baseline only.
    """
    poses = list(scene.poses)
    n = len(scene.shapes)
    converged = False
    for _ in range(max_sweeps):
        moved = False
        for i in range(n):
            for j in range(i + 1, n):
                g, d = _deepest_penetration(scene.shapes[i], poses[i], scene.shapes[j], poses[j], 0.0)
                if g <= 0.0:
                    continue
                shift = 0.5 * (g + clearance) * d
                poses[i] = Pose(poses[i].p - shift, poses[i].theta)
                poses[j] = Pose(poses[j].p + shift, poses[j].theta)
                moved = True
        if not moved:
            converged = True
            break
    return scene.with_poses(poses), converged
