"""Outer optimization loop, scene loading, metrics, and snapshot export.

Each outer iteration: rasterize occupancies, form the pressure field, query
guidance (diffusion tensor + permission), transport pressure, extract the
gated interface drive, update the membrane by ADMM, then project poses.
Terminates when the discrete overlap percentage drops to the stop threshold
or at the iteration cap. `isotropic` mode forces D = I and permission = 1;
`mtv` mode bypasses the membrane entirely and sweeps minimum-translation
separations (ablation baselines).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field as dataclass_field
from xml.etree import ElementTree

import numpy as np

from . import geometry
from .fields import Grid, ScalarField, TensorField, overlap_percentage, \
    pressure_field, rasterize_occupancy, union_occupancy
from .geometry import Pose, RigidShape, Scene
from .guidance import ConstantDirectionProvider, FeatureDumpProvider, \
    GuidanceConfig, SilhouetteProvider, gated_drive
from .membrane import ADMMState, AreaBounds, init_membrane, membrane_update
from .projection import PoseObjective, ProjectionConfig, project_poses, _pose_array
from .transport import AnisotropicOperator, CGConfig, interface_band, \
    interface_flux, smooth_band, solve_transport

MODES = ("semantic", "isotropic", "mtv")


class SceneFormatError(ValueError):
    pass


@dataclass
class Phase2Config:
    tau_stop: float = 0.5          # percent
    max_iters: int = 500
    mode: str = "semantic"
    guidance_spec: str = "const-dir:0,1.0"
    seed: int = 0
    resolution: int = 128
    alpha: float = 0.01            # transport screening
    rho: float = 1.0               # ADMM penalty
    admm_inner_iters: int = 1
    # interface speed cap, in rho units: the gated drive is rescaled so its
    # peak is drive_cap * rho, bounding membrane advance to ~1 cell per outer
    # iteration; the anisotropic pattern (the signal) is preserved
    drive_cap: float = 0.5
    record_timing: bool = True
    guidance: GuidanceConfig = dataclass_field(default_factory=GuidanceConfig)
    cg: CGConfig = dataclass_field(default_factory=CGConfig)
    projection: ProjectionConfig = dataclass_field(default_factory=ProjectionConfig)

    def __post_init__(self):
        if self.tau_stop <= 0:
            raise ValueError("tau_stop must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


METRIC_COLUMNS = ("iter", "overlap_pct", "pressure_sum", "area_u", "E_coll", "E_cont", "ms")


@dataclass
class RunMetrics:
    rows: list = dataclass_field(default_factory=list)

    def append(self, **kwargs):
        self.rows.append(tuple(kwargs[c] for c in METRIC_COLUMNS))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(METRIC_COLUMNS) + "\n")
            for row in self.rows:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in row) + "\n")


@dataclass
class Phase2Result:
    scene: Scene
    membrane: ScalarField
    metrics: RunMetrics
    success: bool
    iterations: int
    overlap_pct: float
    flags: list


def make_provider(spec: str):
    """Parse a guidance spec: const-dir:<deg>,<coherence> | silhouette:<img> | file:<dump>."""
    kind, _, arg = spec.partition(":")
    if kind == "const-dir":
        parts = arg.split(",")
        if len(parts) != 2:
            raise ValueError("const-dir takes '<e1 angle degrees>,<coherence>'")
        return ConstantDirectionProvider(math.radians(float(parts[0])), float(parts[1]))
    if kind == "silhouette":
        return SilhouetteProvider.from_file(arg)
    if kind == "file":
        return FeatureDumpProvider(arg)
    raise ValueError(f"unknown guidance provider spec: {spec!r}")


def phase2_run(scene: Scene, config: Phase2Config, provider=None) -> Phase2Result:
    """Run the feasibility-restoration loop. See the module docstring."""
    if config.mode == "mtv":
        return _mtv_run(scene, config)

    grid = Grid.cover(scene.domain, config.resolution)
    rng = np.random.default_rng(config.seed)
    if config.mode == "semantic" and provider is None:
        provider = make_provider(config.guidance_spec)

    flags = []
    metrics = RunMetrics()
    occs = [rasterize_occupancy(s, p, grid) for s, p in zip(scene.shapes, scene.poses)]
    union = union_occupancy(occs)
    overlap = overlap_percentage(occs)
    bounds = AreaBounds.for_total_area(scene.total_shape_area, grid)
    u = init_membrane(union)
    state = ADMMState.from_membrane(u, rho=config.rho)
    phi_warm = None

    iteration = 0
    while iteration < config.max_iters and overlap > config.tau_stop:
        iteration += 1
        t0 = time.perf_counter()

        pressure = pressure_field(occs, state.u)
        if config.mode == "isotropic":
            D = TensorField.identity(grid)
            permission = ScalarField(grid, np.ones((grid.height, grid.width)))
        else:
            g = provider.guidance(grid, union, rng, iteration - 1, config.guidance)
            D, permission = g.D, g.permission

        operator = AnisotropicOperator.build(D, config.alpha)
        phi, cg_res = solve_transport(pressure, D, config.alpha, cg=config.cg,
                                      warm_start=phi_warm, operator=operator)
        if not cg_res.converged:
            flags.append(f"iter {iteration}: transport CG cap (relres {cg_res.relative_residual:.1e})")
        phi_warm = phi.values

        band = interface_band(state.u)
        w_iface = interface_flux(phi, state.u)
        w_band = smooth_band(w_iface, band=band)
        w_drive = gated_drive(w_band, permission, config.guidance.epsilon)
        # normalize to the per-outer-iteration interface speed budget; the
        # inner cycles each re-apply the drive, so the cap is split over them
        peak = float(w_drive.values.max())
        cap = config.drive_cap * config.rho / max(config.admm_inner_iters, 1)
        if peak > cap:
            w_drive = ScalarField(grid, w_drive.values * (cap / peak))

        state = membrane_update(state, operator, w_drive, union, bounds,
                                cg=config.cg, inner_iters=config.admm_inner_iters)

        anchor = scene
        scene = project_poses(scene, anchor, state.u, config.projection)

        occs = [rasterize_occupancy(s, p, grid) for s, p in zip(scene.shapes, scene.poses)]
        union = union_occupancy(occs)
        overlap = overlap_percentage(occs)

        obj = PoseObjective(scene, scene.poses, state.u, config.projection)
        q = _pose_array(scene)
        e_coll = obj.collision(q)[0]
        e_cont = obj.containment(q)[0]
        ms = (time.perf_counter() - t0) * 1000.0 if config.record_timing else 0.0
        metrics.append(iter=iteration, overlap_pct=overlap,
                       pressure_sum=pressure.sum(), area_u=state.u.sum(),
                       E_coll=e_coll, E_cont=e_cont, ms=ms)

    success = overlap <= config.tau_stop
    return Phase2Result(scene, state.u, metrics, success, iteration, overlap, flags)


def _mtv_run(scene: Scene, config: Phase2Config) -> Phase2Result:
    """Membrane-free baseline: MTV sweeps with per-sweep metrics."""
    grid = Grid.cover(scene.domain, config.resolution)
    metrics = RunMetrics()
    flags = []
    ones = ScalarField(grid, np.ones((grid.height, grid.width)))
    occs = [rasterize_occupancy(s, p, grid) for s, p in zip(scene.shapes, scene.poses)]
    overlap = overlap_percentage(occs)
    iteration = 0
    while iteration < config.max_iters and overlap > config.tau_stop:
        iteration += 1
        t0 = time.perf_counter()
        scene, converged = geometry.mtv_separate(scene, max_sweeps=1)
        occs = [rasterize_occupancy(s, p, grid) for s, p in zip(scene.shapes, scene.poses)]
        overlap = overlap_percentage(occs)
        pressure = pressure_field(occs, ones)
        obj = PoseObjective(scene, scene.poses, ones, config.projection)
        e_coll = obj.collision(_pose_array(scene))[0]
        ms = (time.perf_counter() - t0) * 1000.0 if config.record_timing else 0.0
        metrics.append(iter=iteration, overlap_pct=overlap, pressure_sum=pressure.sum(),
                       area_u=0.0, E_coll=e_coll, E_cont=0.0, ms=ms)
        if converged and overlap > config.tau_stop:
            flags.append(f"iter {iteration}: MTV converged with residual overlap {overlap:.2f}%")
            break
    success = overlap <= config.tau_stop
    return Phase2Result(scene, ones, metrics, success, iteration, overlap, flags)


# ---------------------------------------------------------------------------
# Scene loading.
# ---------------------------------------------------------------------------

def load_scene(path) -> Scene:
    """Load a scene from JSON or from a flat-polygon SVG subset.

    JSON vertices are given in placement coordinates; the loader re-centers
    each shape's local frame on its centroid (so rotations pivot there) and
    folds the shift into the pose, leaving world geometry unchanged. Explicit
    poses, when present, are applied to the vertices as given.
    """
    path = str(path)
    if path.endswith(".svg"):
        return _load_scene_svg(path)
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SceneFormatError(f"{path}: invalid JSON ({exc})") from None
    raw_shapes = doc.get("shapes", [])
    if not raw_shapes:
        raise SceneFormatError(f"{path}: scene has no shapes")
    domain = doc.get("domain", [[0.0, 0.0], [128.0, 128.0]])
    shapes, poses, seen = [], [], set()
    for index, entry in enumerate(raw_shapes):
        shape_id = entry.get("id", index)
        if shape_id in seen:
            raise SceneFormatError(f"{path}: duplicate shape id {shape_id} (element {index})")
        seen.add(shape_id)
        try:
            verts = np.asarray(entry["vertices"], dtype=np.float64)
        except (KeyError, ValueError) as exc:
            raise SceneFormatError(f"{path}: element {index}: bad vertices ({exc})") from None
        raw_pose = entry.get("pose")
        if raw_pose is None:
            base = Pose(np.zeros(2), 0.0)
        else:
            base = Pose(np.asarray(raw_pose.get("p", (0.0, 0.0)), dtype=np.float64),
                        float(raw_pose.get("theta", 0.0)))
        try:
            shape, pose = _recenter(shape_id, verts, base)
        except geometry.GeometryError as exc:
            raise SceneFormatError(f"{path}: element {index}: {exc}") from None
        shapes.append(shape)
        poses.append(pose)
    return Scene(tuple(shapes), tuple(poses), tuple(tuple(p) for p in domain))


def _recenter(shape_id, verts, base: Pose):
    """Shift the local frame to the centroid, folding the shift into the pose."""
    if polygon_area_abs(verts) <= 0:
        raise geometry.GeometryError(f"shape {shape_id}: degenerate polygon")
    centroid = geometry._polygon_centroid(_ccw(verts))
    shape = RigidShape.from_vertices(shape_id, verts - centroid)
    pose = Pose(base.rotation @ centroid + base.p, base.theta)
    return shape, pose


def polygon_area_abs(verts) -> float:
    return abs(geometry.polygon_area(verts))


def _ccw(verts):
    return verts if geometry.polygon_area(verts) >= 0 else verts[::-1]


_SVG_CURVE_COMMANDS = set("CcQqAaSsTt")


def _load_scene_svg(path) -> Scene:
    try:
        tree = ElementTree.parse(path)
    except ElementTree.ParseError as exc:
        raise SceneFormatError(f"{path}: invalid SVG ({exc})") from None
    root = tree.getroot()
    shapes, poses = [], []
    index = 0
    for elem in root.iter():
        tag = elem.tag.rsplit("}", 1)[-1]
        if tag == "polygon":
            pts = _parse_points(elem.get("points", ""), path, index)
        elif tag == "path":
            pts = _parse_path(elem.get("d", ""), path, index)
        else:
            continue
        try:
            shape, pose = _recenter(index, np.asarray(pts), Pose(np.zeros(2), 0.0))
        except geometry.GeometryError as exc:
            raise SceneFormatError(f"{path}: element {index}: {exc}") from None
        shapes.append(shape)
        poses.append(pose)
        index += 1
    if not shapes:
        raise SceneFormatError(f"{path}: no polygon geometry found")
    domain = _svg_domain(root, shapes, poses)
    return Scene(tuple(shapes), tuple(poses), domain)


def _parse_points(text, path, index):
    nums = [float(t) for t in text.replace(",", " ").split()]
    if len(nums) < 6 or len(nums) % 2:
        raise SceneFormatError(f"{path}: element {index}: bad points list")
    return list(zip(nums[0::2], nums[1::2]))


def _parse_path(d, path, index):
    for ch in d:
        if ch in _SVG_CURVE_COMMANDS:
            raise SceneFormatError(
                f"{path}: element {index}: curved path segments are not supported; "
                "flatten the outline to straight segments first")
    tokens = d.replace(",", " ").split()
    pts = []
    cursor = np.zeros(2)
    mode = None
    i = 0
    while i < len(tokens):
        t = tokens[i]
        if t in ("M", "L", "m", "l"):
            mode = t
            i += 1
            continue
        if t in ("Z", "z"):
            break
        if t in ("H", "h", "V", "v"):
            val = float(tokens[i + 1])
            if t == "H":
                cursor = np.array([val, cursor[1]])
            elif t == "h":
                cursor = cursor + np.array([val, 0.0])
            elif t == "V":
                cursor = np.array([cursor[0], val])
            else:
                cursor = cursor + np.array([0.0, val])
            pts.append(cursor.copy())
            i += 2
            continue
        try:
            x, y = float(t), float(tokens[i + 1])
        except (ValueError, IndexError):
            raise SceneFormatError(f"{path}: element {index}: bad path data near {t!r}") from None
        step = np.array([x, y])
        cursor = cursor + step if mode in ("m", "l") else step
        pts.append(cursor.copy())
        i += 2
    if len(pts) < 3:
        raise SceneFormatError(f"{path}: element {index}: path has fewer than 3 points")
    return pts


def _svg_domain(root, shapes, poses):
    vb = root.get("viewBox")
    if vb:
        x0, y0, w, h = (float(v) for v in vb.replace(",", " ").split())
        return ((x0, y0), (x0 + w, y0 + h))
    pts = np.concatenate([geometry.transform_vertices(s, p) for s, p in zip(shapes, poses)])
    lo = pts.min(axis=0) - 10.0
    hi = pts.max(axis=0) + 10.0
    return (tuple(lo), tuple(hi))


# ---------------------------------------------------------------------------
# Snapshot export.
# ---------------------------------------------------------------------------

def export_snapshot(scene: Scene, membrane: ScalarField, path) -> None:
    """Write an SVG: filled shapes (distinct color per id) plus the membrane's
    0.5-contour as stroked segments. Output bytes are deterministic."""
    (x0, y0), (x1, y1) = scene.domain
    height = y1 - y0

    def svg_y(y):
        return y0 + (height - (y - y0))  # flip: world y-up to SVG y-down

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0:.6f} {y0:.6f} '
        f'{x1 - x0:.6f} {y1 - y0:.6f}">',
    ]
    for shape, pose in zip(scene.shapes, scene.poses):
        verts = geometry.transform_vertices(shape, pose)
        pts = " ".join(f"{v[0]:.9f},{svg_y(v[1]):.9f}" for v in verts)
        hue = (shape.id * 137) % 360
        lines.append(f'<polygon id="shape-{shape.id}" points="{pts}" '
                     f'fill="hsl({hue},65%,55%)" stroke="black" stroke-width="0.3"/>')
    segments = _contour_segments(membrane, 0.5)
    if segments:
        parts = []
        for (ax, ay), (bx, by) in segments:
            parts.append(f"M {ax:.9f} {svg_y(ay):.9f} L {bx:.9f} {svg_y(by):.9f}")
        lines.append(f'<path d="{" ".join(parts)}" fill="none" stroke="#1040c0" '
                     'stroke-width="0.5"/>')
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _contour_segments(field: ScalarField, level: float):
    """Marching squares on the cell-center lattice; world-coordinate segments."""
    v = field.values
    grid = field.grid
    xs = grid.cell_centers_x()
    ys = grid.cell_centers_y()
    segs = []

    def interp(pa, pb, va, vb):
        t = (level - va) / (vb - va)
        return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))

    h, w = v.shape
    for r in range(h - 1):
        for c in range(w - 1):
            tl, tr = v[r, c], v[r, c + 1]
            bl, br = v[r + 1, c], v[r + 1, c + 1]
            code = (tl > level) | ((tr > level) << 1) | ((br > level) << 2) | ((bl > level) << 3)
            if code in (0, 15):
                continue
            p_tl = (xs[c], ys[r])
            p_tr = (xs[c + 1], ys[r])
            p_bl = (xs[c], ys[r + 1])
            p_br = (xs[c + 1], ys[r + 1])
            top = interp(p_tl, p_tr, tl, tr) if (tl > level) != (tr > level) else None
            bottom = interp(p_bl, p_br, bl, br) if (bl > level) != (br > level) else None
            left = interp(p_tl, p_bl, tl, bl) if (tl > level) != (bl > level) else None
            right = interp(p_tr, p_br, tr, br) if (tr > level) != (br > level) else None
            edges = {"t": top, "b": bottom, "l": left, "r": right}
            pairs = _MS_CASES[code]
            if code in (5, 10):  # saddle: disambiguate with the center average
                center_above = 0.25 * (tl + tr + bl + br) > level
                pairs = _MS_SADDLE[(code, center_above)]
            for a, b in pairs:
                segs.append((edges[a], edges[b]))
    return segs


_MS_CASES = {
    1: [("l", "t")], 2: [("t", "r")], 3: [("l", "r")], 4: [("r", "b")],
    5: [("l", "t"), ("r", "b")], 6: [("t", "b")], 7: [("l", "b")],
    8: [("b", "l")], 9: [("t", "b")], 10: [("t", "r"), ("b", "l")],
    11: [("r", "b")], 12: [("r", "l")], 13: [("t", "r")], 14: [("l", "t")],
}

_MS_SADDLE = {
    (5, True): [("l", "b"), ("r", "t")],
    (5, False): [("l", "t"), ("r", "b")],
    (10, True): [("t", "r"), ("b", "l")],
    (10, False): [("t", "l"), ("b", "r")],
}
