"""Pure-numpy kernel backend.

Reference implementations of the hot inner loops; the compiled backend in
``_compiled.pyx`` mirrors these semantics exactly. Keep the two in sync.
"""

import numpy as np

# Offset order for 9-point stencils: index k = (dy + 1) * 3 + (dx + 1),
# i.e. [(-1,-1), (-1,0), (-1,1), (0,-1), (0,0), (0,1), (1,-1), (1,0), (1,1)].
STENCIL_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


def stencil_apply(coef, alpha, v):
    """Apply alpha*v + sum_k coef[k] * shift(v, offset_k).

    coef has shape (9, H, W); coefficients referencing out-of-grid neighbors
    must be zero (the assembler guarantees this).
    """
    h, w = v.shape
    out = alpha * v
    padded = np.pad(v, 1)
    for k, (dy, dx) in enumerate(STENCIL_OFFSETS):
        out += coef[k] * padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    return out


def cg_stencil(coef, alpha, b, x0, tol, maxiter, jacobi=True):
    """Jacobi-preconditioned conjugate gradient for the 9-point stencil operator.

    Returns (x, iterations, relative_residual, converged, residual_norms).
    Residual norms are recorded per iteration, starting with the initial one.
    """
    diag = alpha + coef[4] if jacobi else np.ones_like(b)
    x = np.array(x0, dtype=np.float64, copy=True)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0, True, np.zeros(1)

    r = b - stencil_apply(coef, alpha, x)
    resnorms = [float(np.linalg.norm(r))]
    if resnorms[0] / bnorm <= tol:
        return x, 0, resnorms[0] / bnorm, True, np.asarray(resnorms)

    z = r / diag
    p = z.copy()
    rz = float(np.sum(r * z))
    converged = False
    it = 0
    for it in range(1, maxiter + 1):
        ap = stencil_apply(coef, alpha, p)
        pap = float(np.sum(p * ap))
        if pap <= 0.0:
            break  # operator not SPD along p; bail out with best iterate
        a = rz / pap
        x += a * p
        r -= a * ap
        resnorms.append(float(np.linalg.norm(r)))
        if resnorms[-1] / bnorm <= tol:
            converged = True
            break
        z = r / diag
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, resnorms[-1] / bnorm, converged, np.asarray(resnorms)


def polygon_sdf(verts, xs, ys):
    """Signed distance from each grid sample (ys[i], xs[j]) to the polygon boundary.

    Negative inside (even-odd rule), positive outside. verts is (m, 2) and is
    treated as a closed loop.
    """
    x = np.asarray(xs, dtype=np.float64)[None, :]
    y = np.asarray(ys, dtype=np.float64)[:, None]
    m = len(verts)
    d2min = np.full((y.shape[0], x.shape[1]), np.inf)
    inside = np.zeros((y.shape[0], x.shape[1]), dtype=bool)
    for i in range(m):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % m]
        ex, ey = bx - ax, by - ay
        l2 = ex * ex + ey * ey
        if l2 < 1e-30:
            continue
        t = np.clip(((x - ax) * ex + (y - ay) * ey) / l2, 0.0, 1.0)
        dx = x - (ax + t * ex)
        dy = y - (ay + t * ey)
        d2min = np.minimum(d2min, dx * dx + dy * dy)
        if ay != by:
            cond = ((ay > y) != (by > y)) & (x < (bx - ax) * (y - ay) / (by - ay) + ax)
            inside ^= cond
    return np.sqrt(d2min) * np.where(inside, -1.0, 1.0)


def bilinear_gather(field, gx, gy):
    """Bilinearly sample `field` at fractional grid coordinates.

    gx indexes columns, gy rows. Coordinates are clamped to the grid; the
    returned derivative in a clamped coordinate is zero (the sampled value is
    constant there). Returns (values, d/dgx, d/dgy).
    """
    h, w = field.shape
    cx = np.clip(gx, 0.0, w - 1.0)
    cy = np.clip(gy, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(cx), w - 2).astype(np.intp)
    y0 = np.minimum(np.floor(cy), h - 2).astype(np.intp)
    fx = cx - x0
    fy = cy - y0
    f00 = field[y0, x0]
    f01 = field[y0, x0 + 1]
    f10 = field[y0 + 1, x0]
    f11 = field[y0 + 1, x0 + 1]
    vals = (1 - fy) * ((1 - fx) * f00 + fx * f01) + fy * ((1 - fx) * f10 + fx * f11)
    dx = (1 - fy) * (f01 - f00) + fy * (f11 - f10)
    dy = (1 - fx) * (f10 - f00) + fx * (f11 - f01)
    live_x = (gx > 0.0) & (gx < w - 1.0)
    live_y = (gy > 0.0) & (gy < h - 1.0)
    return vals, np.where(live_x, dx, 0.0), np.where(live_y, dy, 0.0)
