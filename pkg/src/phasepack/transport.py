"""Anisotropic screened-Poisson transport on the grid.

Discretizes alpha*phi - div(D grad phi) with face-averaged tensors on a
9-point stencil (finite-volume fluxes, cross terms via averaged tangential
differences), symmetrized so conjugate gradient applies. Boundaries are
zero-flux (homogeneous Neumann), which keeps constants in the kernel of the
divergence part: a uniform source P yields phi = P/alpha exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation, gaussian_filter

from . import kernels
from .fields import Grid, ScalarField, TensorField

BAND_HALF_WIDTH = 0.1   # membrane interface band: |u - 0.5| < this
BAND_SMOOTH_SIGMA = 1.5  # cells; kernel truncated to radius 2 so its support
BAND_DILATION = 2        # stays inside the band dilated by this many cells


@dataclass
class CGConfig:
    tol: float = 1e-6
    max_iters: int = 500
    jacobi: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("CG tolerance must be positive")


@dataclass
class CGResult:
    iterations: int
    relative_residual: float
    converged: bool
    residual_norms: np.ndarray


def assemble_divergence_stencil(D: TensorField) -> np.ndarray:
    """9-point stencil coefficients of -div(D grad .), exactly symmetric.

    Fluxes through cell faces use arithmetically averaged face tensors; the
    tangential derivative in the cross term averages the two central
    differences adjacent to the face (indices clamped at the boundary).
    The assembled matrix is symmetrized entry-pair-wise; row and column sums
    are zero, so constants are annihilated exactly.

    Slice-accumulation equivalent of `_assemble_reference` (which spells out
    the flux bookkeeping entry by entry and is kept as the test oracle).
    """
    h, w = D.xx.shape
    n_off = {o: k for k, o in enumerate([(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)])}
    # accumulate the unsymmetrized operator into per-offset planes; tangential
    # indices clamped at the border fold into the offset-0 plane
    coef = np.zeros((9, h, w))

    # x-faces between (r, c) and (r, c+1): a = avg Dxx, b4 = avg Dxy / 4
    a = 0.5 * (D.xx[:, :-1] + D.xx[:, 1:])
    b4 = 0.125 * (D.xy[:, :-1] + D.xy[:, 1:])
    # contributions of F to row (r, c) [sign -1] and row (r, c+1) [sign +1]
    for side, sign in ((0, -1.0), (1, 1.0)):
        rr = slice(None)
        rc = slice(side, w - 1 + side)
        base_dx = 1 - side  # column offset of (r, c+1) seen from the row cell

        def entry(dy, dx, val, rr=rr, rc=rc):
            # clamp tangential row index dy at the grid border by folding
            # border rows into the dy = 0 plane
            if dy == 0:
                coef[n_off[(0, dx)]][rr, rc] += val
                return
            target = coef[n_off[(dy, dx)]]
            clamped = coef[n_off[(0, dx)]]
            if dy == 1:
                target[:-1, rc] += val[:-1]
                clamped[-1:, rc] += val[-1:]
            else:
                target[1:, rc] += val[1:]
                clamped[:1, rc] += val[:1]

        entry(0, base_dx, sign * a)
        entry(0, base_dx - 1, -sign * a)
        entry(1, base_dx - 1, sign * b4)
        entry(-1, base_dx - 1, -sign * b4)
        entry(1, base_dx, sign * b4)
        entry(-1, base_dx, -sign * b4)

    # y-faces between (r, c) and (r+1, c)
    a = 0.5 * (D.yy[:-1, :] + D.yy[1:, :])
    b4 = 0.125 * (D.xy[:-1, :] + D.xy[1:, :])
    for side, sign in ((0, -1.0), (1, 1.0)):
        rr = slice(side, h - 1 + side)
        rc = slice(None)
        base_dy = 1 - side

        def entry(dy, dx, val, rr=rr, rc=rc):
            if dx == 0:
                coef[n_off[(dy, 0)]][rr, rc] += val
                return
            target = coef[n_off[(dy, dx)]]
            clamped = coef[n_off[(dy, 0)]]
            if dx == 1:
                target[rr, :-1] += val[:, :-1]
                clamped[rr, -1:] += val[:, -1:]
            else:
                target[rr, 1:] += val[:, 1:]
                clamped[rr, :1] += val[:, :1]

        entry(base_dy, 0, sign * a)
        entry(base_dy - 1, 0, -sign * a)
        entry(base_dy - 1, 1, sign * b4)
        entry(base_dy - 1, -1, -sign * b4)
        entry(base_dy, 1, sign * b4)
        entry(base_dy, -1, -sign * b4)

    return _symmetrize_stencil(coef)


def _symmetrize_stencil(coef: np.ndarray) -> np.ndarray:
    """(A + A^T)/2 for a 9-point stencil: pair each offset with its negation."""
    h, w = coef.shape[1:]
    out = np.zeros_like(coef)
    out[4] = coef[4]
    for (dy, dx) in [(0, 1), (1, 0), (1, 1), (1, -1)]:
        k = (dy + 1) * 3 + (dx + 1)
        kn = (-dy + 1) * 3 + (-dx + 1)
        # rows (r, c) pair with rows (r + dy, c + dx)
        rs = slice(max(0, -dy), h - max(0, dy))
        cs = slice(max(0, -dx), w - max(0, dx))
        rt = slice(max(0, dy), h - max(0, -dy))
        ct = slice(max(0, dx), w - max(0, -dx))
        fwd = coef[k][rs, cs]
        bwd = coef[kn][rt, ct]
        avg = 0.5 * (fwd + bwd)
        out[k][rs, cs] = avg
        out[kn][rt, ct] = avg
    return out


def _assemble_reference(D: TensorField) -> np.ndarray:
    """COO-style assembly spelling out every flux entry; test oracle only."""
    h, w = D.xx.shape
    rows_r, rows_c, cols_r, cols_c, vals = [], [], [], [], []

    def add(rr, rc, cr, cc, v):
        rows_r.append(rr.ravel())
        rows_c.append(rc.ravel())
        cols_r.append(cr.ravel())
        cols_c.append(cc.ravel())
        vals.append(v.ravel())

    # x-faces between (r, c) and (r, c+1)
    r, c = np.meshgrid(np.arange(h), np.arange(w - 1), indexing="ij")
    a = 0.5 * (D.xx[r, c] + D.xx[r, c + 1])
    b4 = 0.125 * (D.xy[r, c] + D.xy[r, c + 1])  # b/4 with b the averaged D_xy
    rp = np.minimum(r + 1, h - 1)
    rm = np.maximum(r - 1, 0)
    for row_r, row_c, sign in ((r, c, -1.0), (r, c + 1, 1.0)):
        add(row_r, row_c, r, c + 1, sign * a)
        add(row_r, row_c, r, c, -sign * a)
        add(row_r, row_c, rp, c, sign * b4)
        add(row_r, row_c, rm, c, -sign * b4)
        add(row_r, row_c, rp, c + 1, sign * b4)
        add(row_r, row_c, rm, c + 1, -sign * b4)

    # y-faces between (r, c) and (r+1, c)
    r, c = np.meshgrid(np.arange(h - 1), np.arange(w), indexing="ij")
    a = 0.5 * (D.yy[r, c] + D.yy[r + 1, c])
    b4 = 0.125 * (D.xy[r, c] + D.xy[r + 1, c])
    cp = np.minimum(c + 1, w - 1)
    cm = np.maximum(c - 1, 0)
    for row_r, row_c, sign in ((r, c, -1.0), (r + 1, c, 1.0)):
        add(row_r, row_c, r + 1, c, sign * a)
        add(row_r, row_c, r, c, -sign * a)
        add(row_r, row_c, r, cp, sign * b4)
        add(row_r, row_c, r, cm, -sign * b4)
        add(row_r, row_c, r + 1, cp, sign * b4)
        add(row_r, row_c, r + 1, cm, -sign * b4)

    rr = np.concatenate(rows_r)
    rc = np.concatenate(rows_c)
    cr = np.concatenate(cols_r)
    cc = np.concatenate(cols_c)
    # rows already accumulate -div: a cell's outflow face enters its row with -F
    v = np.concatenate(vals)

    coef = np.zeros((9, h, w))
    # A_sym = (A + A^T)/2: accumulate each entry and its transpose at half weight
    k_fwd = (cr - rr + 1) * 3 + (cc - rc + 1)
    k_bwd = (rr - cr + 1) * 3 + (rc - cc + 1)
    np.add.at(coef, (k_fwd, rr, rc), 0.5 * v)
    np.add.at(coef, (k_bwd, cr, cc), 0.5 * v)
    return coef


@dataclass
class AnisotropicOperator:
    """alpha*I - div(D grad .) as a symmetric 9-point stencil operator."""

    grid: Grid
    alpha: float
    coef: np.ndarray

    @staticmethod
    def build(D: TensorField, alpha: float) -> "AnisotropicOperator":
        return AnisotropicOperator(D.grid, float(alpha), assemble_divergence_stencil(D))

    def with_alpha(self, alpha: float) -> "AnisotropicOperator":
        return AnisotropicOperator(self.grid, float(alpha), self.coef)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return kernels.stencil_apply(self.coef, self.alpha, v)

    def solve(self, b: np.ndarray, x0: np.ndarray | None = None,
              cg: CGConfig | None = None):
        cg = cg or CGConfig()
        if x0 is None:
            x0 = np.zeros_like(b)
        x, iters, relres, converged, resnorms = kernels.cg_stencil(
            self.coef, self.alpha, b, x0, cg.tol, cg.max_iters, cg.jacobi)
        return x, CGResult(iters, relres, converged, resnorms)

    def as_dense(self) -> np.ndarray:
        """Dense matrix form, for small-grid oracles only."""
        h, w = self.coef.shape[1:]
        n = h * w
        if n > 64 * 64:
            raise ValueError("dense operator restricted to grids <= 64x64")
        a = np.zeros((n, n))
        for k, (dy, dx) in enumerate(kernels.STENCIL_OFFSETS):
            for r in range(h):
                rr = r + dy
                if not 0 <= rr < h:
                    continue
                for c in range(w):
                    cc = c + dx
                    if 0 <= cc < w:
                        a[r * w + c, rr * w + cc] += self.coef[k, r, c]
        a[np.arange(n), np.arange(n)] += self.alpha
        return a


def solve_transport(P: ScalarField, D: TensorField, alpha: float = 0.01,
                    cg: CGConfig | None = None, warm_start: np.ndarray | None = None,
                    operator: AnisotropicOperator | None = None):
    """Solve alpha*phi - div(D grad phi) = P. Returns (phi, CGResult).

    Non-convergence is flagged on the result; the best iterate is returned.
    """
    op = operator if operator is not None else AnisotropicOperator.build(D, alpha)
    x, res = op.solve(P.values, x0=warm_start, cg=cg)
    return ScalarField(P.grid, x), res


def interface_band(u: ScalarField, half_width: float = BAND_HALF_WIDTH) -> np.ndarray:
    return np.abs(u.values - 0.5) < half_width


def interface_flux(phi: ScalarField, u: ScalarField,
                   half_width: float = BAND_HALF_WIDTH) -> ScalarField:
    """Outward pressure flux -grad(phi) . n on the membrane interface band.

    The outward normal is n = -grad(u)/|grad(u)| (u is ~1 inside, ~0 outside,
    so grad(u) points inward), giving w = grad(phi) . grad(u)/|grad(u)|:
    positive where the transported pressure decays outward across the
    interface, i.e. where interior pressure pushes the membrane out. Off-band
    cells and cells with vanishing |grad(u)| are zero.
    """
    gy_u, gx_u = np.gradient(u.values)
    gy_p, gx_p = np.gradient(phi.values)
    norm = np.hypot(gx_u, gy_u)
    band = interface_band(u, half_width) & (norm >= 1e-8)
    safe = np.maximum(norm, 1e-30)
    w = (gx_p * gx_u + gy_p * gy_u) / safe
    return ScalarField(u.grid, np.where(band, w, 0.0))


def smooth_band(w_iface: ScalarField, band: np.ndarray | None = None,
                sigma: float = BAND_SMOOTH_SIGMA, dilation: int = BAND_DILATION) -> ScalarField:
    """Gaussian-smooth the interface flux, restricted to the dilated band.

    The kernel is truncated at the dilation radius so all smoothed mass stays
    inside the dilated band; the result is clamped at zero from below.
    """
    if band is None:
        band = w_iface.values != 0.0
    dilated = binary_dilation(band, structure=np.ones((3, 3), bool), iterations=dilation)
    sm = gaussian_filter(w_iface.values, sigma=sigma, mode="constant",
                         truncate=dilation / sigma)
    return ScalarField(w_iface.grid, np.where(dilated, np.maximum(sm, 0.0), 0.0))
