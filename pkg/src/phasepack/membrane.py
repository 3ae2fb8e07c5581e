"""Phase-field membrane state and its ADMM update.

The membrane u lives in [0, 1]; its 0.5 level set is the soft feasible-region
boundary. Each outer engine iteration runs a few ADMM cycles alternating a
screened linear solve (u-step), a projection onto the constraint set
{z >= s, z in [0,1], A_min <= sum(z) <= A_max} (z-step), and the dual update.
The published membrane is the feasible iterate z.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from .fields import Grid, ScalarField
from .transport import AnisotropicOperator, CGConfig

logger = logging.getLogger(__name__)

DILATION_RADIUS = 5.0      # cells; initial envelope margin around the shapes
AREA_MARGIN = 1.10         # A_min = total shape area * this
AREA_SUM_TOL = 0.5         # cells; slack when meeting an area bound


@dataclass
class AreaBounds:
    a_min: float
    a_max: float

    @staticmethod
    def for_total_area(total_shape_area: float, grid: Grid) -> "AreaBounds":
        a_min = AREA_MARGIN * total_shape_area / (grid.cell * grid.cell)
        a_max = 2.0 * a_min
        if not 0.0 < a_min < a_max <= grid.n_cells:
            raise ValueError(
                f"area bounds [{a_min:.1f}, {a_max:.1f}] cells do not fit the "
                f"{grid.n_cells}-cell grid")
        return AreaBounds(a_min, a_max)


@dataclass
class ADMMState:
    u: ScalarField
    z: ScalarField
    y: ScalarField
    rho: float = 1.0
    primal_residuals: list = field(default_factory=list)

    @staticmethod
    def from_membrane(u: ScalarField, rho: float = 1.0) -> "ADMMState":
        if rho <= 0:
            raise ValueError("rho must be positive")
        return ADMMState(u=u.copy(), z=u.copy(),
                         y=ScalarField(u.grid, np.zeros_like(u.values)), rho=rho)


def init_membrane(union_occupancy: ScalarField, radius: float = DILATION_RADIUS,
                  aa_width: float = 1.0) -> ScalarField:
    """Initial membrane: occupied set dilated by a disk, with an antialiased rim.

    u(x) = clamp(0.5 - (dist(x, occupied) - radius) / aa_width, 0, 1), which is
    1 on the occupied set, ramps through 0.5 at distance `radius`, and is 0
    beyond. Dilation is extensive, so u >= s everywhere.
    """
    mask = union_occupancy.values > 0.1
    if not mask.any():
        raise ValueError("cannot initialize membrane from empty occupancy")
    dist = distance_transform_edt(~mask)
    u = np.clip(0.5 - (dist - radius) / aa_width, 0.0, 1.0)
    return ScalarField(union_occupancy.grid, u)


def admm_u_step(state: ADMMState, operator: AnisotropicOperator,
                w_drive: ScalarField, cg: CGConfig | None = None) -> ScalarField:
    """Solve (rho*I - div(D grad)) u = rho (z - y) + w_drive; no clamping here."""
    rhs = state.rho * (state.z.values - state.y.values) + w_drive.values
    x, res = operator.with_alpha(state.rho).solve(rhs, x0=state.u.values, cg=cg)
    if not res.converged:
        logger.warning("membrane u-step CG hit iteration cap (relres=%.2e)", res.relative_residual)
    return ScalarField(state.u.grid, x)


def admm_z_step(u_new: ScalarField, y: ScalarField, s: ScalarField,
                bounds: AreaBounds):
    """Project u_new + y onto {z >= s, z <= 1, A_min <= sum(z) <= A_max}.

    Elementwise clamp first; if the cell sum then violates an area bound, a
    uniform shift (bisection over [-1, 1]) is applied before re-clamping until
    the violated bound is met within 0.5 cell. Returns (z, infeasible_flag).
    """
    v = u_new.values + y.values
    lo = s.values

    def clamped(shift):
        return np.clip(v + shift, lo, 1.0)

    if float(lo.sum()) > bounds.a_max + AREA_SUM_TOL:
        logger.warning("membrane constraint set infeasible: occupancy exceeds A_max")
        return ScalarField(u_new.grid, clamped(0.0)), True

    z = clamped(0.0)
    total = float(z.sum())
    if total < bounds.a_min:
        target, into_set = bounds.a_min, 1.0   # accept sums in [A_min, A_min + tol]
    elif total > bounds.a_max:
        target, into_set = bounds.a_max, -1.0  # accept sums in [A_max - tol, A_max]
    else:
        return ScalarField(u_new.grid, z), False

    # [-1, 1] brackets the shift for unit-scale inputs; expand when the
    # unconstrained iterate overshoots that range
    lam_lo, lam_hi = -1.0, 1.0
    while float(clamped(lam_lo).sum()) > target and lam_lo > -1e9:
        lam_lo *= 2.0
    while float(clamped(lam_hi).sum()) < target and lam_hi < 1e9:
        lam_hi *= 2.0
    lam = 0.0
    for _ in range(80):
        lam = 0.5 * (lam_lo + lam_hi)
        t = float(clamped(lam).sum())
        miss = (t - target) * into_set
        if 0.0 <= miss <= AREA_SUM_TOL:
            break
        if t < target:
            lam_lo = lam
        else:
            lam_hi = lam
    return ScalarField(u_new.grid, clamped(lam)), False


def admm_y_step(y: ScalarField, u_new: ScalarField, z_new: ScalarField) -> ScalarField:
    return ScalarField(y.grid, y.values + (u_new.values - z_new.values))


def membrane_update(state: ADMMState, operator: AnisotropicOperator,
                    w_drive: ScalarField, s: ScalarField, bounds: AreaBounds,
                    cg: CGConfig | None = None, inner_iters: int = 10,
                    reset_dual: bool = True) -> ADMMState:
    """Run ADMM cycles and publish the feasible iterate: u <- z.

    By default the auxiliary and dual fields restart from the current
    membrane each call, so the cycles take one bounded evolution step from u
    rather than converging to the static constrained minimizer (whose
    Dirichlet-flat solution is a degenerate uniform haze at the area cap).
    """
    if reset_dual:
        state.z = state.u.copy()
        state.y = ScalarField(state.u.grid, np.zeros_like(state.u.values))
    state.primal_residuals = []
    for _ in range(inner_iters):
        u_new = admm_u_step(state, operator, w_drive, cg)
        z_new, _ = admm_z_step(u_new, state.y, s, bounds)
        state.y = admm_y_step(state.y, u_new, z_new)
        state.u, state.z = u_new, z_new
        state.primal_residuals.append(float(np.linalg.norm(u_new.values - z_new.values)))
    state.u = state.z.copy()
    return state
