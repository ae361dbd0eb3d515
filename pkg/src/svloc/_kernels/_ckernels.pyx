# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Signatures and conventions are identical; see that module for documentation.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport atan2, acos, sqrt, floor, fmod, fabs, M_PI, hypot, INFINITY

cnp.import_array()

cdef double TWO_PI = 2.0 * M_PI


cdef inline double _wrap(double a) nogil:
    return a + TWO_PI * floor((M_PI - a) / TWO_PI)


def wrap_angle(a):
    arr = np.asarray(a, dtype=np.float64)
    return arr + TWO_PI * np.floor((M_PI - arr) / TWO_PI)


def bearing_residuals(const double[:, :, ::1] R, const double[:, ::1] t,
                      const double[:, ::1] y, const double[:, ::1] meas):
    cdef Py_ssize_t n = R.shape[0], i
    out = np.empty((n, 2))
    cdef double[:, ::1] r = out
    cdef double dx, dy, dz, px, py, pz, rho
    with nogil:
        for i in range(n):
            dx = y[i, 0] - t[i, 0]
            dy = y[i, 1] - t[i, 1]
            dz = y[i, 2] - t[i, 2]
            px = R[i, 0, 0] * dx + R[i, 1, 0] * dy + R[i, 2, 0] * dz
            py = R[i, 0, 1] * dx + R[i, 1, 1] * dy + R[i, 2, 1] * dz
            pz = R[i, 0, 2] * dx + R[i, 1, 2] * dy + R[i, 2, 2] * dz
            rho = hypot(px, py)
            r[i, 0] = atan2(rho, pz) - meas[i, 0]
            if rho > 0.0:
                r[i, 1] = _wrap(atan2(py, px) - meas[i, 1])
            else:
                r[i, 1] = _wrap(-meas[i, 1])
    return out


def bearing_linearize(const double[:, :, ::1] R, const double[:, ::1] t,
                      const double[:, ::1] y, const double[:, ::1] meas):
    cdef Py_ssize_t n = R.shape[0], i, a, b
    r_out = np.empty((n, 2))
    jp_out = np.empty((n, 2, 6))
    jy_out = np.empty((n, 2, 3))
    cdef double[:, ::1] r = r_out
    cdef double[:, :, ::1] jp = jp_out
    cdef double[:, :, ::1] jy = jy_out
    cdef double dx, dy, dz, px, py, pz, rho, rs, n2
    cdef double d0[3]
    cdef double d1[3]
    with nogil:
        for i in range(n):
            dx = y[i, 0] - t[i, 0]
            dy = y[i, 1] - t[i, 1]
            dz = y[i, 2] - t[i, 2]
            px = R[i, 0, 0] * dx + R[i, 1, 0] * dy + R[i, 2, 0] * dz
            py = R[i, 0, 1] * dx + R[i, 1, 1] * dy + R[i, 2, 1] * dz
            pz = R[i, 0, 2] * dx + R[i, 1, 2] * dy + R[i, 2, 2] * dz
            rho = hypot(px, py)
            n2 = px * px + py * py + pz * pz
            r[i, 0] = atan2(rho, pz) - meas[i, 0]
            if rho > 0.0:
                r[i, 1] = _wrap(atan2(py, px) - meas[i, 1])
            else:
                r[i, 1] = _wrap(-meas[i, 1])
            rs = rho
            if rs < 1e-12 * sqrt(n2):
                rs = 1e-12 * sqrt(n2)
            d0[0] = pz * px / (rs * n2)
            d0[1] = pz * py / (rs * n2)
            d0[2] = -rho / n2
            d1[0] = -py / (rs * rs)
            d1[1] = px / (rs * rs)
            d1[2] = 0.0
            # d/dw = dr * [p]x
            jp[i, 0, 0] = d0[1] * pz - d0[2] * py
            jp[i, 0, 1] = -d0[0] * pz + d0[2] * px
            jp[i, 0, 2] = d0[0] * py - d0[1] * px
            jp[i, 1, 0] = d1[1] * pz - d1[2] * py
            jp[i, 1, 1] = -d1[0] * pz + d1[2] * px
            jp[i, 1, 2] = d1[0] * py - d1[1] * px
            for a in range(3):
                jp[i, 0, 3 + a] = -d0[a]
                jp[i, 1, 3 + a] = -d1[a]
            # d/dy = dr * R^T
            for b in range(3):
                jy[i, 0, b] = d0[0] * R[i, b, 0] + d0[1] * R[i, b, 1] + d0[2] * R[i, b, 2]
                jy[i, 1, b] = d1[0] * R[i, b, 0] + d1[1] * R[i, b, 1] + d1[2] * R[i, b, 2]
    return r_out, jp_out, jy_out


cdef inline double _obs_cost(double px, double py, double pz,
                             double m0, double m1, double w0, double w1) nogil:
    cdef double norm = sqrt(px * px + py * py + pz * pz)
    if norm == 0.0:
        # a candidate on the camera center has no bearing
        return INFINITY
    cdef double c = pz / norm
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    cdef double et = acos(c) - m0
    cdef double ep = _wrap(atan2(py, px) - m1)
    return w0 * et * et + w1 * ep * ep


def grid_point_cost(const double[:, ::1] grid, const double[:, :, ::1] R,
                    const double[:, ::1] t, const double[:, ::1] meas,
                    const double[:, ::1] w):
    cdef Py_ssize_t g = grid.shape[0], n = R.shape[0], k, j
    out = np.empty(g)
    cdef double[::1] o = out
    cdef double dx, dy, dz, px, py, pz, acc
    with nogil:
        for k in range(g):
            acc = 0.0
            for j in range(n):
                dx = grid[k, 0] - t[j, 0]
                dy = grid[k, 1] - t[j, 1]
                dz = grid[k, 2] - t[j, 2]
                px = R[j, 0, 0] * dx + R[j, 1, 0] * dy + R[j, 2, 0] * dz
                py = R[j, 0, 1] * dx + R[j, 1, 1] * dy + R[j, 2, 1] * dz
                pz = R[j, 0, 2] * dx + R[j, 1, 2] * dy + R[j, 2, 2] * dz
                acc += _obs_cost(px, py, pz, meas[j, 0], meas[j, 1], w[j, 0], w[j, 1])
            o[k] = acc
    return out


def grid_pose_cost(const double[:, ::1] positions, const double[:, :, ::1] rig_rot,
                   const double[:, :, ::1] view_rot, const double[:, ::1] landmarks,
                   const double[:, ::1] meas, const double[:, ::1] w):
    cdef Py_ssize_t ng = positions.shape[0], nr = rig_rot.shape[0], n = view_rot.shape[0]
    cdef Py_ssize_t k, g, j, a, b
    out = np.empty((nr, ng))
    cdef double[:, ::1] o = out
    full_arr = np.empty((n, 3, 3))
    cdef double[:, :, ::1] full = full_arr
    cdef double dx, dy, dz, px, py, pz, acc
    for k in range(nr):
        with nogil:
            for j in range(n):
                for a in range(3):
                    for b in range(3):
                        full[j, a, b] = (rig_rot[k, a, 0] * view_rot[j, 0, b]
                                         + rig_rot[k, a, 1] * view_rot[j, 1, b]
                                         + rig_rot[k, a, 2] * view_rot[j, 2, b])
            for g in range(ng):
                acc = 0.0
                for j in range(n):
                    dx = landmarks[j, 0] - positions[g, 0]
                    dy = landmarks[j, 1] - positions[g, 1]
                    dz = landmarks[j, 2] - positions[g, 2]
                    px = full[j, 0, 0] * dx + full[j, 1, 0] * dy + full[j, 2, 0] * dz
                    py = full[j, 0, 1] * dx + full[j, 1, 1] * dy + full[j, 2, 1] * dz
                    pz = full[j, 0, 2] * dx + full[j, 1, 2] * dy + full[j, 2, 2] * dz
                    acc += _obs_cost(px, py, pz, meas[j, 0], meas[j, 1], w[j, 0], w[j, 1])
                o[k, g] = acc
    return out


def bilinear_sample(const double[:, :, ::1] img, const double[:, ::1] mu,
                    const double[:, ::1] mv):
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1], C = img.shape[2]
    cdef Py_ssize_t h = mu.shape[0], w = mu.shape[1], i, j, c
    cdef Py_ssize_t u0, u1, v0, v1
    cdef double u, v, fu, fv
    out = np.empty((h, w, C))
    cdef double[:, :, ::1] o = out
    with nogil:
        for i in range(h):
            for j in range(w):
                v = mv[i, j]
                if v < 0.0:
                    v = 0.0
                elif v > H - 1.0:
                    v = H - 1.0
                u = fmod(mu[i, j], <double>W)
                if u < 0.0:
                    u = u + W
                u0 = <Py_ssize_t>floor(u)
                v0 = <Py_ssize_t>floor(v)
                fu = u - u0
                fv = v - v0
                u0 = u0 % W
                u1 = (u0 + 1) % W
                v1 = v0 + 1
                if v1 > H - 1:
                    v1 = H - 1
                for c in range(C):
                    o[i, j, c] = ((img[v0, u0, c] * (1.0 - fu) + img[v0, u1, c] * fu) * (1.0 - fv)
                                  + (img[v1, u0, c] * (1.0 - fu) + img[v1, u1, c] * fu) * fv)
    return out


def schur_reduce(double[:, ::1] S, const double[:, :, ::1] T, const double[:, :, ::1] W,
                 const cnp.int64_t[::1] col, const cnp.int64_t[::1] ia, const cnp.int64_t[::1] ib):
    cdef Py_ssize_t p, i, j, a, b, ra, cb
    cdef double acc
    with nogil:
        for p in range(ia.shape[0]):
            a = ia[p]
            b = ib[p]
            ra = col[a]
            cb = col[b]
            for i in range(6):
                for j in range(6):
                    acc = T[a, i, 0] * W[b, j, 0] + T[a, i, 1] * W[b, j, 1] + T[a, i, 2] * W[b, j, 2]
                    S[ra + i, cb + j] -= acc
    return S


def transfer_errors(const double[:, :, ::1] H, const double[:, :, ::1] Hi,
                    const double[:, ::1] src, const double[:, ::1] dst):
    cdef Py_ssize_t m = H.shape[0], n = src.shape[0], k, i
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    cdef double x, y, u, v, w, fx, fy, bx, by, e2
    cdef double inf = float("inf")
    with nogil:
        for k in range(m):
            for i in range(n):
                x = src[i, 0]
                y = src[i, 1]
                u = dst[i, 0]
                v = dst[i, 1]
                w = H[k, 2, 0] * x + H[k, 2, 1] * y + H[k, 2, 2]
                fx = (H[k, 0, 0] * x + H[k, 0, 1] * y + H[k, 0, 2]) / w - u
                fy = (H[k, 1, 0] * x + H[k, 1, 1] * y + H[k, 1, 2]) / w - v
                w = Hi[k, 2, 0] * u + Hi[k, 2, 1] * v + Hi[k, 2, 2]
                bx = (Hi[k, 0, 0] * u + Hi[k, 0, 1] * v + Hi[k, 0, 2]) / w - x
                by = (Hi[k, 1, 0] * u + Hi[k, 1, 1] * v + Hi[k, 1, 2]) / w - y
                e2 = 0.5 * (fx * fx + fy * fy + bx * bx + by * by)
                if e2 == e2 and e2 < inf:
                    o[k, i] = sqrt(e2)
                else:
                    o[k, i] = inf
    return out


cdef inline bint _collinear4(double[4][2] p, double tol) noexcept nogil:
    cdef double lo0 = p[0][0], hi0 = p[0][0], lo1 = p[0][1], hi1 = p[0][1], scale, ax, ay, bx, by
    cdef int i, t
    cdef int tri[4][3]
    tri[0][:] = [0, 1, 2]
    tri[1][:] = [0, 1, 3]
    tri[2][:] = [0, 2, 3]
    tri[3][:] = [1, 2, 3]
    for i in range(1, 4):
        lo0 = min(lo0, p[i][0])
        hi0 = max(hi0, p[i][0])
        lo1 = min(lo1, p[i][1])
        hi1 = max(hi1, p[i][1])
    scale = max(hi0 - lo0, hi1 - lo1) + 1e-300
    for t in range(4):
        ax = p[tri[t][1]][0] - p[tri[t][0]][0]
        ay = p[tri[t][1]][1] - p[tri[t][0]][1]
        bx = p[tri[t][2]][0] - p[tri[t][0]][0]
        by = p[tri[t][2]][1] - p[tri[t][0]][1]
        if fabs(ax * by - ay * bx) < tol * scale * scale:
            return True
    return False


cdef inline void _similarity(double[4][2] p, double* cx, double* cy, double* k) noexcept nogil:
    cdef int i
    cdef double ss = 0.0
    cx[0] = 0.25 * (p[0][0] + p[1][0] + p[2][0] + p[3][0])
    cy[0] = 0.25 * (p[0][1] + p[1][1] + p[2][1] + p[3][1])
    for i in range(4):
        ss += (p[i][0] - cx[0]) ** 2 + (p[i][1] - cy[0]) ** 2
    k[0] = sqrt(2.0) / max(sqrt(ss / 4.0), 1e-300)


cdef bint _solve8(double[8][9] A, double* h) noexcept nogil:
    """Gaussian elimination with partial pivoting on an augmented 8x9 system."""
    cdef int c, r, piv, j
    cdef double best, f, tmp
    for c in range(8):
        piv = c
        best = fabs(A[c][c])
        for r in range(c + 1, 8):
            if fabs(A[r][c]) > best:
                best = fabs(A[r][c])
                piv = r
        if best < 1e-12:
            return False
        if piv != c:
            for j in range(9):
                tmp = A[c][j]
                A[c][j] = A[piv][j]
                A[piv][j] = tmp
        for r in range(c + 1, 8):
            f = A[r][c] / A[c][c]
            if f != 0.0:
                for j in range(c, 9):
                    A[r][j] -= f * A[c][j]
    for r in range(7, -1, -1):
        tmp = A[r][8]
        for j in range(r + 1, 8):
            tmp -= A[r][j] * h[j]
        h[r] = tmp / A[r][r]
    return True


def ransac_score(const double[:, ::1] src, const double[:, ::1] dst, const cnp.int64_t[:, ::1] idx, double tol):
    cdef Py_ssize_t m = idx.shape[0], n = src.shape[0], k, i, j, q
    Hout = np.zeros((m, 3, 3))
    counts_a = np.zeros(m, dtype=np.int64)
    scores_a = np.zeros(m)
    valid_a = np.zeros(m, dtype=bool)
    cdef double[:, :, ::1] Ho = Hout
    cdef cnp.int64_t[::1] counts = counts_a
    cdef double[::1] scores = scores_a
    cdef cnp.uint8_t[::1] valid = valid_a.view(np.uint8)
    cdef double[4][2] s
    cdef double[4][2] d
    cdef double[8][9] A
    cdef double h[8]
    cdef double G[3][3]
    cdef double Gi[3][3]
    cdef double csx, csy, ks, cdx, cdy, kd, x, y, u, v, det, w, fx, fy, bx, by, e2, tol2 = tol * tol
    cdef double inf = float("inf")
    cdef cnp.int64_t cnt
    cdef double sc
    with nogil:
        for k in range(m):
            for q in range(4):
                s[q][0] = src[idx[k, q], 0]
                s[q][1] = src[idx[k, q], 1]
                d[q][0] = dst[idx[k, q], 0]
                d[q][1] = dst[idx[k, q], 1]
            if _collinear4(s, 1e-9) or _collinear4(d, 1e-9):
                continue
            _similarity(s, &csx, &csy, &ks)
            _similarity(d, &cdx, &cdy, &kd)
            for q in range(4):
                x = (s[q][0] - csx) * ks
                y = (s[q][1] - csy) * ks
                u = (d[q][0] - cdx) * kd
                v = (d[q][1] - cdy) * kd
                A[2 * q][0] = x
                A[2 * q][1] = y
                A[2 * q][2] = 1.0
                A[2 * q][3] = 0.0
                A[2 * q][4] = 0.0
                A[2 * q][5] = 0.0
                A[2 * q][6] = -u * x
                A[2 * q][7] = -u * y
                A[2 * q][8] = u
                A[2 * q + 1][0] = 0.0
                A[2 * q + 1][1] = 0.0
                A[2 * q + 1][2] = 0.0
                A[2 * q + 1][3] = x
                A[2 * q + 1][4] = y
                A[2 * q + 1][5] = 1.0
                A[2 * q + 1][6] = -v * x
                A[2 * q + 1][7] = -v * y
                A[2 * q + 1][8] = v
            if not _solve8(A, h):
                continue
            # G = inv(Td) @ Hn @ Ts
            G[0][0] = (h[0] / kd + cdx * h[6]) * ks
            G[0][1] = (h[1] / kd + cdx * h[7]) * ks
            G[0][2] = (h[2] / kd + cdx) - G[0][0] * csx - G[0][1] * csy
            G[1][0] = (h[3] / kd + cdy * h[6]) * ks
            G[1][1] = (h[4] / kd + cdy * h[7]) * ks
            G[1][2] = (h[5] / kd + cdy) - G[1][0] * csx - G[1][1] * csy
            G[2][0] = h[6] * ks
            G[2][1] = h[7] * ks
            G[2][2] = 1.0 - G[2][0] * csx - G[2][1] * csy
            det = (G[0][0] * (G[1][1] * G[2][2] - G[1][2] * G[2][1])
                   - G[0][1] * (G[1][0] * G[2][2] - G[1][2] * G[2][0])
                   + G[0][2] * (G[1][0] * G[2][1] - G[1][1] * G[2][0]))
            if not (fabs(det) > 1e-300 and fabs(det) < inf):
                continue
            Gi[0][0] = (G[1][1] * G[2][2] - G[1][2] * G[2][1]) / det
            Gi[0][1] = (G[0][2] * G[2][1] - G[0][1] * G[2][2]) / det
            Gi[0][2] = (G[0][1] * G[1][2] - G[0][2] * G[1][1]) / det
            Gi[1][0] = (G[1][2] * G[2][0] - G[1][0] * G[2][2]) / det
            Gi[1][1] = (G[0][0] * G[2][2] - G[0][2] * G[2][0]) / det
            Gi[1][2] = (G[0][2] * G[1][0] - G[0][0] * G[1][2]) / det
            Gi[2][0] = (G[1][0] * G[2][1] - G[1][1] * G[2][0]) / det
            Gi[2][1] = (G[0][1] * G[2][0] - G[0][0] * G[2][1]) / det
            Gi[2][2] = (G[0][0] * G[1][1] - G[0][1] * G[1][0]) / det
            cnt = 0
            sc = 0.0
            for i in range(n):
                x = src[i, 0]
                y = src[i, 1]
                u = dst[i, 0]
                v = dst[i, 1]
                w = G[2][0] * x + G[2][1] * y + G[2][2]
                fx = (G[0][0] * x + G[0][1] * y + G[0][2]) / w - u
                fy = (G[1][0] * x + G[1][1] * y + G[1][2]) / w - v
                w = Gi[2][0] * u + Gi[2][1] * v + Gi[2][2]
                bx = (Gi[0][0] * u + Gi[0][1] * v + Gi[0][2]) / w - x
                by = (Gi[1][0] * u + Gi[1][1] * v + Gi[1][2]) / w - y
                e2 = 0.5 * (fx * fx + fy * fy + bx * bx + by * by)
                if e2 < tol2:
                    cnt += 1
                    sc += sqrt(e2)
            for i in range(3):
                for j in range(3):
                    Ho[k, i, j] = G[i][j]
            counts[k] = cnt
            scores[k] = sc
            valid[k] = 1
    return Hout, counts_a, scores_a, valid_a
