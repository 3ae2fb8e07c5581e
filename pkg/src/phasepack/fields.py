"""Grid-sampled scalar fields: occupancy rasterization, union, pressure, overlap.

Fields live on a square-cell grid covering the scene domain; values are
row-major with row r at world y = origin_y + (r + 0.5) * cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import RigidShape, Pose, transform_vertices

OCCUPIED_THRESHOLD = 0.1  # a cell counts as occupied above this coverage
DEFAULT_AA_WIDTH = 1.0    # antialiasing ramp width, cells


@dataclass(frozen=True)
class Grid:
    """Square-cell raster over an axis-aligned world box."""

    width: int = 128
    height: int = 128
    origin: tuple = (0.0, 0.0)
    cell: float = 1.0

    @staticmethod
    def cover(domain, resolution: int = 128) -> "Grid":
        """Grid of square cells covering the domain box at the given resolution."""
        (x0, y0), (x1, y1) = domain
        cell = max(x1 - x0, y1 - y0) / resolution
        return Grid(width=resolution, height=resolution, origin=(x0, y0), cell=cell)

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def cell_centers_x(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.width) + 0.5) * self.cell

    def cell_centers_y(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.height) + 0.5) * self.cell

    def world_to_grid(self, pts: np.ndarray) -> np.ndarray:
        """World points -> fractional (col, row) coordinates of the center lattice."""
        p = np.asarray(pts, dtype=np.float64)
        return (p - np.asarray(self.origin)) / self.cell - 0.5


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray
    clipped: bool = False

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), self.clipped)

    def sum(self) -> float:
        return float(self.values.sum())


@dataclass
class TensorField:
    """Per-cell symmetric 2x2 tensor field (components xx, xy, yy)."""

    grid: Grid
    xx: np.ndarray
    xy: np.ndarray
    yy: np.ndarray

    @staticmethod
    def identity(grid: Grid) -> "TensorField":
        shape = (grid.height, grid.width)
        return TensorField(grid, np.ones(shape), np.zeros(shape), np.ones(shape))


def rasterize_occupancy(shape: RigidShape, pose: Pose, grid: Grid,
                        aa_width: float = DEFAULT_AA_WIDTH) -> ScalarField:
    """Soft coverage clamp(0.5 - sdf / w_aa, 0, 1) from the exact polygon SDF.

    Only the shape's bounding window is rasterized; cells outside it are
    exterior by construction. Shapes extending past the grid are clipped and
    the result flagged.
    """
    verts = transform_vertices(shape, pose)
    values = np.zeros((grid.height, grid.width))
    margin = (0.5 * aa_width + 1.0) * grid.cell
    xs = grid.cell_centers_x()
    ys = grid.cell_centers_y()
    lo = verts.min(axis=0) - margin
    hi = verts.max(axis=0) + margin
    c0 = int(np.searchsorted(xs, lo[0], side="left"))
    c1 = int(np.searchsorted(xs, hi[0], side="right"))
    r0 = int(np.searchsorted(ys, lo[1], side="left"))
    r1 = int(np.searchsorted(ys, hi[1], side="right"))
    box_lo = np.asarray(grid.origin)
    box_hi = box_lo + np.array([grid.width, grid.height]) * grid.cell
    clipped = bool(np.any(verts.min(axis=0) < box_lo) or np.any(verts.max(axis=0) > box_hi))
    if c1 > c0 and r1 > r0:
        sdf = kernels.polygon_sdf(verts, xs[c0:c1], ys[r0:r1])
        values[r0:r1, c0:c1] = np.clip(0.5 - sdf / (aa_width * grid.cell), 0.0, 1.0)
    return ScalarField(grid, values, clipped)


def union_occupancy(occupancies) -> ScalarField:
    """Cellwise maximum of per-shape occupancies."""
    if not occupancies:
        raise ValueError("union_occupancy requires at least one field")
    grid = occupancies[0].grid
    values = occupancies[0].values.copy()
    for f in occupancies[1:]:
        np.maximum(values, f.values, out=values)
    return ScalarField(grid, values)


def pressure_field(occupancies, membrane: ScalarField) -> ScalarField:
    """Overlap plus containment pressure.

    P = max(0, sum_i s_i - 1)^2 + max(0, sum_i s_i - u)^2 cellwise; the raw
    (unclamped) occupancy sum is used.
    """
    total = np.zeros_like(membrane.values)
    for f in occupancies:
        total += f.values
    over = np.maximum(0.0, total - 1.0)
    out = np.maximum(0.0, total - membrane.values)
    return ScalarField(membrane.grid, over * over + out * out)


def overlap_percentage(occupancies) -> float:
    """Percent of occupied cells (s > 0.1) covered by two or more shapes."""
    if not occupancies:
        return 0.0
    counts = np.zeros(occupancies[0].values.shape, dtype=np.int32)
    for f in occupancies:
        counts += f.values > OCCUPIED_THRESHOLD
    occupied = int(np.count_nonzero(counts >= 1))
    if occupied == 0:
        return 0.0
    multiple = int(np.count_nonzero(counts >= 2))
    return 100.0 * multiple / occupied
