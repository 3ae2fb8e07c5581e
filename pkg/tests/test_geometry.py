import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasepack.geometry import (GeometryError, Pose, RigidShape, Scene,
                                convex_decompose, mtv_separate, penetration,
                                polygon_area, support, transform_vertices,
                                wrapped_angle_distance)

UNIT_SQUARE = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
L_SHAPE = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], dtype=float)


def make_shape(verts, shape_id=0):
    return RigidShape.from_vertices(shape_id, verts)


def star_octagon():
    """Non-convex 8-point star."""
    pts = []
    for k in range(8):
        ang = k * math.pi / 4
        r = 2.0 if k % 2 == 0 else 0.8
        pts.append([r * math.cos(ang), r * math.sin(ang)])
    return np.array(pts)


# --- oracles (independent of library internals) -----------------------------

def oracle_penetration(verts_a, verts_b):
    """Brute-force signed penetration: min over +/- edge normals of both
    polygons of exact support overlap."""
    best = np.inf
    for verts, sign in ((verts_a, 1), (verts_b, 1)):
        edges = np.roll(verts, -1, axis=0) - verts
        for e in edges:
            n = np.array([e[1], -e[0]])
            n = n / np.linalg.norm(n)
            for d in (n, -n):
                g = verts_a @ d
                h = verts_b @ (-d)
                best = min(best, g.max() + h.max())
    return best


def oracle_polygons_intersect(a, b):
    """Convex polygon intersection via point-in-polygon and edge crossings."""
    def inside(p, poly):
        e = np.roll(poly, -1, axis=0) - poly
        rel = p - poly
        return bool(np.all(e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0] >= 0))

    def cross2(u, v):
        return u[0] * v[1] - u[1] * v[0]

    if any(inside(p, b) for p in a) or any(inside(p, a) for p in b):
        return True
    for i in range(len(a)):
        p1, p2 = a[i], a[(i + 1) % len(a)]
        for j in range(len(b)):
            q1, q2 = b[j], b[(j + 1) % len(b)]
            d1 = cross2(q2 - q1, p1 - q1)
            d2 = cross2(q2 - q1, p2 - q1)
            d3 = cross2(p2 - p1, q1 - p1)
            d4 = cross2(p2 - p1, q2 - p1)
            if (d1 > 0) != (d2 > 0) and (d3 > 0) != (d4 > 0):
                return True
    return False


def random_convex(rng, n=6, radius=1.0):
    from scipy.spatial import ConvexHull
    pts = rng.uniform(-radius, radius, size=(max(n, 5) + 3, 2))
    hull = ConvexHull(pts)
    return pts[hull.vertices]  # counter-clockwise


# --- transform_vertices ------------------------------------------------------

def test_transform_identity():
    s = make_shape(UNIT_SQUARE)
    out = transform_vertices(s, Pose(np.zeros(2), 0.0))
    np.testing.assert_allclose(out, s.vertices)


def test_transform_quarter_turn():
    s = make_shape(np.array([[1.0, 0.0], [2.0, 0.0], [1.5, 1.0]]))
    out = transform_vertices(s, Pose(np.zeros(2), math.pi / 2))
    np.testing.assert_allclose(out[0], [0.0, 1.0], atol=1e-12)


def test_transform_rigidity_random():
    rng = np.random.default_rng(7)
    for _ in range(20):
        verts = random_convex(rng, 7, 3.0)
        s = make_shape(verts)
        pose = Pose(rng.normal(size=2) * 10, rng.uniform(0, 2 * math.pi))
        out = transform_vertices(s, pose)
        d_local = np.linalg.norm(s.vertices[:, None] - s.vertices[None], axis=-1)
        d_world = np.linalg.norm(out[:, None] - out[None], axis=-1)
        np.testing.assert_allclose(d_world, d_local, atol=1e-9)


# --- convex decomposition ----------------------------------------------------

def part_is_convex(part):
    n = len(part)
    for i in range(n):
        a, b, c = part[i], part[(i + 1) % n], part[(i + 2) % n]
        ab, bc = b - a, c - b
        if ab[0] * bc[1] - ab[1] * bc[0] < -1e-9:
            return False
    return True


def test_decompose_convex_passthrough():
    pentagon = np.array([[math.cos(a), math.sin(a)]
                         for a in np.linspace(0, 2 * math.pi, 6)[:-1]])
    parts = convex_decompose(pentagon)
    assert len(parts) == 1
    assert abs(polygon_area(parts[0]) - polygon_area(pentagon)) < 1e-12


def test_decompose_l_shape():
    parts = convex_decompose(L_SHAPE)
    assert len(parts) == 2
    total = sum(polygon_area(p) for p in parts)
    assert abs(total - polygon_area(L_SHAPE)) < 1e-6 * polygon_area(L_SHAPE)
    assert all(part_is_convex(p) for p in parts)


def test_decompose_star():
    star = star_octagon()
    parts = convex_decompose(star)
    assert len(parts) >= 2
    assert all(part_is_convex(p) for p in parts)
    total = sum(polygon_area(p) for p in parts)
    assert abs(total - polygon_area(star)) < 1e-6 * polygon_area(star)


def test_decompose_rejects_self_intersection():
    bowtie = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
    with pytest.raises(GeometryError):
        convex_decompose(bowtie)


def test_shape_rejects_degenerate():
    with pytest.raises(GeometryError):
        make_shape(np.array([[0, 0], [1, 1], [2, 2]], dtype=float))


# --- support -----------------------------------------------------------------

def test_support_square_limit():
    d = np.array([1.0, 0.0])
    assert abs(support(UNIT_SQUARE, d, 1e-9) - 0.5) < 1e-7
    assert support(UNIT_SQUARE, d, 0.0) == 0.5


def test_support_bounds():
    d = np.array([1.0, 0.0])
    val = support(UNIT_SQUARE, d, 0.3)
    assert 0.5 <= val <= 0.5 + 0.3 * math.log(4)


def test_support_single_vertex():
    for t in (0.01, 0.5, 3.0):
        assert support(np.array([[2.0, 3.0]]), np.array([0.0, 1.0]), t) == pytest.approx(3.0, abs=1e-12)


@given(st.floats(0.001, 0.5), st.floats(0.5, 2.0))
@settings(max_examples=40, deadline=None)
def test_support_monotone_in_temperature(t_small, factor):
    d = np.array([math.sqrt(0.5), math.sqrt(0.5)])
    lo = support(UNIT_SQUARE, d, t_small)
    hi = support(UNIT_SQUARE, d, t_small * (1 + factor))
    exact = support(UNIT_SQUARE, d, 0.0)
    assert hi >= lo >= exact - 1e-12


# --- penetration -------------------------------------------------------------

def squares_scene(offset):
    a = make_shape(UNIT_SQUARE, 0)
    b = make_shape(UNIT_SQUARE, 1)
    return a, Pose(np.zeros(2), 0.0), b, Pose(np.array(offset, dtype=float), 0.0)


@pytest.mark.parametrize("offset,expected", [
    ((0.4, 0.0), 0.6),
    ((2.0, 0.0), -1.0),
    ((0.0, 0.0), 1.0),
])
def test_penetration_squares(offset, expected):
    a, pa, b, pb = squares_scene(offset)
    wa = transform_vertices(a, pa)
    wb = transform_vertices(b, pb)
    assert oracle_penetration(wa, wb) == pytest.approx(expected, abs=1e-12)
    g = penetration(a, pa, b, pb, temperature=1e-7)
    assert g == pytest.approx(expected, abs=1e-5)


def test_penetration_sat_soundness():
    rng = np.random.default_rng(11)
    t = 0.01
    slack = t * math.log(16)
    for _ in range(200):
        va = random_convex(rng, rng.integers(3, 8))
        vb = random_convex(rng, rng.integers(3, 8)) + rng.normal(scale=1.2, size=2)
        a = make_shape(va, 0)
        b = make_shape(vb, 1)
        g = penetration(a, Pose(np.zeros(2), 0.0), b, Pose(np.zeros(2), 0.0), temperature=t)
        overlapping = oracle_polygons_intersect(va, vb)
        if g > slack:
            assert overlapping
        elif g < -slack:
            assert not overlapping


# --- mtv_separate ------------------------------------------------------------

def test_mtv_no_overlap_unchanged():
    a = make_shape(UNIT_SQUARE, 0)
    b = make_shape(UNIT_SQUARE, 1)
    scene = Scene((a, b), (Pose(np.zeros(2), 0.0), Pose(np.array([3.0, 0.0]), 0.0)))
    out, ok = mtv_separate(scene)
    assert ok
    for before, after in zip(scene.poses, out.poses):
        np.testing.assert_array_equal(before.p, after.p)


def test_mtv_coincident_squares():
    a = make_shape(UNIT_SQUARE, 0)
    b = make_shape(UNIT_SQUARE, 1)
    scene = Scene((a, b), (Pose(np.zeros(2), 0.0), Pose(np.zeros(2), 0.0)))
    out, ok = mtv_separate(scene)
    assert ok
    dist = np.abs(out.poses[1].p - out.poses[0].p).max()
    assert dist >= 1.0
    wa = transform_vertices(a, out.poses[0])
    wb = transform_vertices(b, out.poses[1])
    assert oracle_penetration(wa, wb) <= 0.0


def test_mtv_chain():
    shapes = tuple(make_shape(UNIT_SQUARE, i) for i in range(3))
    poses = (Pose(np.zeros(2), 0.0), Pose(np.array([0.5, 0.1]), 0.0),
             Pose(np.array([1.0, -0.1]), 0.0))
    scene = Scene(shapes, poses)
    out, ok = mtv_separate(scene)
    assert ok
    for i in range(3):
        for j in range(i + 1, 3):
            wa = transform_vertices(out.shapes[i], out.poses[i])
            wb = transform_vertices(out.shapes[j], out.poses[j])
            assert oracle_penetration(wa, wb) <= 1e-6


def test_mtv_preserves_geometry():
    shapes = tuple(make_shape(UNIT_SQUARE, i) for i in range(2))
    scene = Scene(shapes, (Pose(np.zeros(2), 0.0), Pose(np.array([0.2, 0.0]), 0.0)))
    out, _ = mtv_separate(scene)
    for s_in, s_out in zip(scene.shapes, out.shapes):
        assert s_in is s_out
        np.testing.assert_array_equal(s_in.vertices, s_out.vertices)


# --- wrapped angle distance ---------------------------------------------------

@pytest.mark.parametrize("a,b,expected", [
    (0.1, 2 * math.pi - 0.1, 0.2),
    (1.3, 1.3, 0.0),
    (0.0, math.pi, math.pi),
])
def test_wrapped_angle_distance(a, b, expected):
    assert wrapped_angle_distance(a, b) == pytest.approx(expected, abs=1e-12)


@given(st.floats(-10, 10), st.floats(-10, 10))
@settings(max_examples=60, deadline=None)
def test_wrapped_angle_properties(a, b):
    d = wrapped_angle_distance(a, b)
    assert 0.0 <= d <= math.pi + 1e-12
    assert d == pytest.approx(wrapped_angle_distance(b, a), abs=1e-12)


def test_pose_wraps_theta():
    assert Pose(np.zeros(2), 7.0).theta == pytest.approx(7.0 - 2 * math.pi)
    assert Pose(np.zeros(2), -0.5).theta == pytest.approx(2 * math.pi - 0.5)
    assert 0.0 <= Pose(np.zeros(2), 2 * math.pi).theta < 2 * math.pi
