# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend. Semantics mirror kernels/_numpy.py."""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()


cdef void _apply(double[:, :, ::1] coef, double alpha,
                 double[:, ::1] v, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t h = v.shape[0], w = v.shape[1]
    cdef Py_ssize_t r, c, k, dy, dx, rr, cc
    cdef double acc
    # interior: all nine neighbors exist
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            out[r, c] = alpha * v[r, c] \
                + coef[0, r, c] * v[r - 1, c - 1] \
                + coef[1, r, c] * v[r - 1, c] \
                + coef[2, r, c] * v[r - 1, c + 1] \
                + coef[3, r, c] * v[r, c - 1] \
                + coef[4, r, c] * v[r, c] \
                + coef[5, r, c] * v[r, c + 1] \
                + coef[6, r, c] * v[r + 1, c - 1] \
                + coef[7, r, c] * v[r + 1, c] \
                + coef[8, r, c] * v[r + 1, c + 1]
    # border cells: bounds-checked
    for r in range(h):
        if 0 < r < h - 1:
            _apply_cell(coef, alpha, v, out, r, 0, h, w)
            _apply_cell(coef, alpha, v, out, r, w - 1, h, w)
        else:
            for c in range(w):
                _apply_cell(coef, alpha, v, out, r, c, h, w)


cdef inline void _apply_cell(double[:, :, ::1] coef, double alpha,
                             double[:, ::1] v, double[:, ::1] out,
                             Py_ssize_t r, Py_ssize_t c,
                             Py_ssize_t h, Py_ssize_t w) noexcept nogil:
    cdef Py_ssize_t k, rr, cc
    cdef double acc = alpha * v[r, c]
    for k in range(9):
        rr = r + k // 3 - 1
        cc = c + k % 3 - 1
        if 0 <= rr < h and 0 <= cc < w:
            acc += coef[k, r, c] * v[rr, cc]
    out[r, c] = acc


def stencil_apply(coef, alpha, v):
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    out = np.empty_like(v)
    _apply(coef, float(alpha), v, out)
    return out


cdef double _dot(double[:, ::1] a, double[:, ::1] b) noexcept nogil:
    cdef Py_ssize_t r, c
    cdef double acc = 0.0
    for r in range(a.shape[0]):
        for c in range(a.shape[1]):
            acc += a[r, c] * b[r, c]
    return acc


def cg_stencil(coef, alpha, b, x0, tol, maxiter, jacobi=True):
    """Jacobi-preconditioned CG; see _numpy.cg_stencil for the contract."""
    cdef double[:, :, ::1] cf = np.ascontiguousarray(coef, dtype=np.float64)
    cdef double[:, ::1] rhs = np.ascontiguousarray(b, dtype=np.float64)
    cdef double a_ = float(alpha)
    cdef Py_ssize_t h = rhs.shape[0], w = rhs.shape[1]
    cdef Py_ssize_t r_, c_, it
    cdef double bnorm = sqrt(_dot(rhs, rhs))
    if bnorm == 0.0:
        return np.zeros((h, w)), 0, 0.0, True, np.zeros(1)

    x_arr = np.array(x0, dtype=np.float64, copy=True)
    r_arr = np.empty((h, w))
    z_arr = np.empty((h, w))
    p_arr = np.empty((h, w))
    ap_arr = np.empty((h, w))
    cdef double[:, ::1] x = x_arr, res = r_arr, z = z_arr, p = p_arr, ap = ap_arr

    _apply(cf, a_, x, ap)
    for r_ in range(h):
        for c_ in range(w):
            res[r_, c_] = rhs[r_, c_] - ap[r_, c_]
    cdef double cur_res = sqrt(_dot(res, res))
    resnorms = [cur_res]
    if cur_res / bnorm <= tol:
        return x_arr, 0, cur_res / bnorm, True, np.asarray(resnorms)

    cdef bint jac = bool(jacobi)
    cdef double rz = 0.0, rz_new, pap, step, diag
    for r_ in range(h):
        for c_ in range(w):
            diag = a_ + cf[4, r_, c_] if jac else 1.0
            z[r_, c_] = res[r_, c_] / diag
            p[r_, c_] = z[r_, c_]
    rz = _dot(r_arr, z_arr)

    cdef bint converged = False
    it = 0
    for it in range(1, maxiter + 1):
        _apply(cf, a_, p, ap)
        pap = _dot(p_arr, ap_arr)
        if pap <= 0.0:
            break
        step = rz / pap
        for r_ in range(h):
            for c_ in range(w):
                x[r_, c_] += step * p[r_, c_]
                res[r_, c_] -= step * ap[r_, c_]
        cur_res = sqrt(_dot(res, res))
        resnorms.append(cur_res)
        if cur_res / bnorm <= tol:
            converged = True
            break
        for r_ in range(h):
            for c_ in range(w):
                diag = a_ + cf[4, r_, c_] if jac else 1.0
                z[r_, c_] = res[r_, c_] / diag
        rz_new = _dot(r_arr, z_arr)
        for r_ in range(h):
            for c_ in range(w):
                p[r_, c_] = z[r_, c_] + (rz_new / rz) * p[r_, c_]
        rz = rz_new
    return x_arr, it, cur_res / bnorm, converged, np.asarray(resnorms)


def polygon_sdf(verts, xs, ys):
    """Signed distance (negative inside, even-odd rule) on a sample grid."""
    cdef double[:, ::1] vv = np.ascontiguousarray(verts, dtype=np.float64)
    cdef double[::1] x = np.ascontiguousarray(xs, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(ys, dtype=np.float64)
    cdef Py_ssize_t m = vv.shape[0], nh = y.shape[0], nw = x.shape[0]
    out_arr = np.empty((nh, nw))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double px, py, ax, ay, bx, by, ex, ey, l2, t, dx, dy, d2, d2min
    cdef bint inside
    with nogil:
        for i in range(nh):
            py = y[i]
            for j in range(nw):
                px = x[j]
                d2min = 1e300
                inside = False
                for k in range(m):
                    ax = vv[k, 0]
                    ay = vv[k, 1]
                    bx = vv[(k + 1) % m, 0]
                    by = vv[(k + 1) % m, 1]
                    ex = bx - ax
                    ey = by - ay
                    l2 = ex * ex + ey * ey
                    if l2 < 1e-30:
                        continue
                    t = ((px - ax) * ex + (py - ay) * ey) / l2
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                    dx = px - (ax + t * ex)
                    dy = py - (ay + t * ey)
                    d2 = dx * dx + dy * dy
                    if d2 < d2min:
                        d2min = d2
                    if ay != by:
                        if ((ay > py) != (by > py)) and px < (bx - ax) * (py - ay) / (by - ay) + ax:
                            inside = not inside
                out[i, j] = -sqrt(d2min) if inside else sqrt(d2min)
    return out_arr


def bilinear_gather(field, gx, gy):
    """Bilinear sample with derivatives; see _numpy.bilinear_gather."""
    cdef double[:, ::1] f = np.ascontiguousarray(field, dtype=np.float64)
    cdef double[::1] px = np.ascontiguousarray(gx, dtype=np.float64)
    cdef double[::1] py = np.ascontiguousarray(gy, dtype=np.float64)
    cdef Py_ssize_t n = px.shape[0], h = f.shape[0], w = f.shape[1]
    vals_arr = np.empty(n)
    dx_arr = np.empty(n)
    dy_arr = np.empty(n)
    cdef double[::1] vals = vals_arr, ddx = dx_arr, ddy = dy_arr
    cdef Py_ssize_t i, x0, y0
    cdef double cx, cy, fx, fy, f00, f01, f10, f11
    with nogil:
        for i in range(n):
            cx = px[i]
            cy = py[i]
            if cx < 0.0:
                cx = 0.0
            elif cx > w - 1.0:
                cx = w - 1.0
            if cy < 0.0:
                cy = 0.0
            elif cy > h - 1.0:
                cy = h - 1.0
            x0 = <Py_ssize_t>floor(cx)
            y0 = <Py_ssize_t>floor(cy)
            if x0 > w - 2:
                x0 = w - 2
            if y0 > h - 2:
                y0 = h - 2
            fx = cx - x0
            fy = cy - y0
            f00 = f[y0, x0]
            f01 = f[y0, x0 + 1]
            f10 = f[y0 + 1, x0]
            f11 = f[y0 + 1, x0 + 1]
            vals[i] = (1 - fy) * ((1 - fx) * f00 + fx * f01) + fy * ((1 - fx) * f10 + fx * f11)
            if px[i] > 0.0 and px[i] < w - 1.0:
                ddx[i] = (1 - fy) * (f01 - f00) + fy * (f11 - f10)
            else:
                ddx[i] = 0.0
            if py[i] > 0.0 and py[i] < h - 1.0:
                ddy[i] = (1 - fx) * (f10 - f00) + fx * (f11 - f01)
            else:
                ddy[i] = 0.0
    return vals_arr, dx_arr, dy_arr
