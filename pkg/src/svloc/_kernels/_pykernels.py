"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Array arguments are float64 and C-contiguous; callers go through
``svloc._kernels`` which normalizes inputs.
"""

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(a):
    """Wrap angles into (-pi, pi]."""
    return a + TWO_PI * np.floor((np.pi - a) / TWO_PI)


def _directions_to_bearings(p):
    rho = np.hypot(p[:, 0], p[:, 1])
    theta = np.arctan2(rho, p[:, 2])
    phi = np.where(rho > 0.0, np.arctan2(p[:, 1], p[:, 0]), 0.0)
    return theta, phi, rho


def bearing_residuals(R, t, y, meas):
    p = np.einsum("nji,nj->ni", R, y - t)
    theta, phi, _ = _directions_to_bearings(p)
    r = np.empty((p.shape[0], 2))
    r[:, 0] = theta - meas[:, 0]
    r[:, 1] = wrap_angle(phi - meas[:, 1])
    return r


def bearing_linearize(R, t, y, meas):
    """Residuals and Jacobians of bearing factors.

    Pose increments are right-multiplied: ``(R Exp(w), t + R tau)`` with
    increment order ``(w, tau)``.
    """
    n = R.shape[0]
    p = np.einsum("nji,nj->ni", R, y - t)
    theta, phi, rho = _directions_to_bearings(p)
    r = np.empty((n, 2))
    r[:, 0] = theta - meas[:, 0]
    r[:, 1] = wrap_angle(phi - meas[:, 1])

    x, yy, z = p[:, 0], p[:, 1], p[:, 2]
    n2 = x * x + yy * yy + z * z
    rs = np.maximum(rho, 1e-12 * np.sqrt(n2))
    dr = np.zeros((n, 2, 3))
    dr[:, 0, 0] = z * x / (rs * n2)
    dr[:, 0, 1] = z * yy / (rs * n2)
    dr[:, 0, 2] = -rho / n2
    dr[:, 1, 0] = -yy / (rs * rs)
    dr[:, 1, 1] = x / (rs * rs)

    skew = np.zeros((n, 3, 3))
    skew[:, 0, 1] = -z
    skew[:, 0, 2] = yy
    skew[:, 1, 0] = z
    skew[:, 1, 2] = -x
    skew[:, 2, 0] = -yy
    skew[:, 2, 1] = x

    jpose = np.empty((n, 2, 6))
    jpose[:, :, :3] = dr @ skew
    jpose[:, :, 3:] = -dr
    jpoint = dr @ np.transpose(R, (0, 2, 1))
    return r, jpose, jpoint


def _grid_cost(d, meas, w):
    # d: (..., n, 3) directions in the observing frames
    norm = np.linalg.norm(d, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.arccos(np.clip(d[..., 2] / norm, -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    e_theta = theta - meas[:, 0]
    e_phi = wrap_angle(phi - meas[:, 1])
    cost = w[:, 0] * e_theta**2 + w[:, 1] * e_phi**2
    # a candidate on the camera center has no bearing
    cost[norm == 0.0] = np.inf
    return cost.sum(axis=-1)


def grid_point_cost(grid, R, t, meas, w):
    """Bearing cost of every candidate point in ``grid`` (g, 3)."""
    out = np.empty(grid.shape[0])
    step = 4096
    for s in range(0, grid.shape[0], step):
        g = grid[s : s + step]
        diff = g[:, None, :] - t[None, :, :]
        d = np.einsum("nji,gnj->gni", R, diff)
        out[s : s + step] = _grid_cost(d, meas, w)
    return out


def grid_pose_cost(positions, rig_rot, view_rot, landmarks, meas, w):
    """Bearing cost for every (rig rotation, position) candidate pair.

    The observing frame of correspondence ``j`` is ``rig_rot[r] @ view_rot[j]``
    placed at ``positions[g]``. Returns an array of shape (r, g).
    """
    nr = rig_rot.shape[0]
    out = np.empty((nr, positions.shape[0]))
    diff = landmarks[None, :, :] - positions[:, None, :]
    for k in range(nr):
        full = np.einsum("ab,nbc->nac", rig_rot[k], view_rot)
        d = np.einsum("nji,gnj->gni", full, diff)
        out[k] = _grid_cost(d, meas, w)
    return out


def bilinear_sample(img, mu, mv):
    """Sample ``img`` (H, W, C) at real pixel positions.

    Columns wrap around (360 degree panoramas); rows clamp to the pole rows.
    """
    H, W = img.shape[:2]
    v = np.clip(mv, 0.0, H - 1.0)
    u = np.mod(mu, W)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = (u - u0)[..., None]
    fv = (v - v0)[..., None]
    u0 %= W
    u1 = (u0 + 1) % W
    v1 = np.minimum(v0 + 1, H - 1)
    top = img[v0, u0] * (1.0 - fu) + img[v0, u1] * fu
    bot = img[v1, u0] * (1.0 - fu) + img[v1, u1] * fu
    return top * (1.0 - fv) + bot * fv


def schur_reduce(S, T, W, col, ia, ib):
    """Subtract ``T[a] @ W[b].T`` from the 6x6 block of ``S`` at
    (``col[a]``, ``col[b]``) for every pair (a, b) = (ia[p], ib[p]).

    ``S`` is modified in place and returned.
    """
    nc = S.shape[0]
    if len(ia):
        blk = T[ia] @ W[ib].transpose(0, 2, 1)
        six = np.arange(6)
        flat = (col[ia][:, None, None] + six[None, :, None]) * nc + col[ib][:, None, None] + six[None, None, :]
        S -= np.bincount(flat.ravel(), blk.ravel(), minlength=nc * nc).reshape(nc, nc)
    return S


def _project(H, pts):
    h = pts @ np.swapaxes(H[..., :2, :2], -1, -2) + H[..., None, :2, 2]
    w = pts @ H[..., 2, :2][..., :, None] + H[..., None, 2:3, 2]
    return h / w


def transfer_errors(H, Hi, src, dst):
    """RMS symmetric transfer error of every correspondence under every
    homography: ``H`` and its inverse ``Hi`` are (m, 3, 3), the result (m, n).
    Non-finite values (points mapped to infinity) become ``inf``."""
    with np.errstate(all="ignore"):
        fwd = _project(H, src) - dst
        bwd = _project(Hi, dst) - src
        e2 = 0.5 * ((fwd**2).sum(-1) + (bwd**2).sum(-1))
        return np.sqrt(np.where(np.isfinite(e2), e2, np.inf))


def _collinear4(p, tol=1e-9):
    scale = np.ptp(p, axis=-2).max(-1) + 1e-300
    bad = np.zeros(p.shape[:-2], dtype=bool)
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a = p[..., j, :] - p[..., i, :]
        b = p[..., k, :] - p[..., i, :]
        bad |= np.abs(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]) < tol * scale**2
    return bad


def _similarity(p):
    """Hartley normalization (centroid to origin, RMS distance sqrt 2)."""
    c = p.mean(axis=-2)
    rms = np.sqrt(((p - c[..., None, :]) ** 2).sum(-1).mean(-1))
    return c, np.sqrt(2.0) / np.maximum(rms, 1e-300)


def ransac_score(src, dst, idx, tol):
    """Fit a homography to each 4-point sample ``idx[k]`` and score it.

    Samples with three collinear points (in either image), a singular
    system or a singular homography are marked invalid.

    Returns:
        (H (m, 3, 3), inlier counts (m,), summed inlier errors (m,),
        valid (m,) bool); inliers have RMS symmetric transfer error < tol.
    """
    m = len(idx)
    H = np.zeros((m, 3, 3))
    counts = np.zeros(m, dtype=np.int64)
    scores = np.zeros(m)
    s4, d4 = src[idx], dst[idx]
    valid = ~(_collinear4(s4) | _collinear4(d4))
    if not valid.any():
        return H, counts, scores, valid
    s4, d4 = s4[valid], d4[valid]
    cs, ks = _similarity(s4)
    cd, kd = _similarity(d4)
    s = (s4 - cs[:, None, :]) * ks[:, None, None]
    d = (d4 - cd[:, None, :]) * kd[:, None, None]
    A = np.zeros((len(s), 8, 8))
    x, y, u, v = s[..., 0], s[..., 1], d[..., 0], d[..., 1]
    A[:, 0::2, 0], A[:, 0::2, 1], A[:, 0::2, 2] = x, y, 1.0
    A[:, 1::2, 3], A[:, 1::2, 4], A[:, 1::2, 5] = x, y, 1.0
    A[:, 0::2, 6], A[:, 0::2, 7] = -u * x, -u * y
    A[:, 1::2, 6], A[:, 1::2, 7] = -v * x, -v * y
    b = np.empty((len(s), 8))
    b[:, 0::2], b[:, 1::2] = u, v
    ok = np.abs(np.linalg.det(A)) > 1e-14
    h = np.zeros((len(s), 8))
    if ok.any():
        h[ok] = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]
    Hn = np.concatenate([h, np.ones((len(s), 1))], axis=1).reshape(-1, 3, 3)
    Ts = np.zeros((len(s), 3, 3))
    Ts[:, 0, 0] = Ts[:, 1, 1] = ks
    Ts[:, 0, 2], Ts[:, 1, 2], Ts[:, 2, 2] = -ks * cs[:, 0], -ks * cs[:, 1], 1.0
    Tdi = np.zeros((len(s), 3, 3))
    Tdi[:, 0, 0] = Tdi[:, 1, 1] = 1.0 / kd
    Tdi[:, 0, 2], Tdi[:, 1, 2], Tdi[:, 2, 2] = cd[:, 0], cd[:, 1], 1.0
    Hv = Tdi @ Hn @ Ts
    with np.errstate(all="ignore"):
        det = np.linalg.det(Hv)
    ok &= np.isfinite(det) & (np.abs(det) > 1e-300)
    Hv[~ok] = np.eye(3)
    err = transfer_errors(Hv, np.linalg.inv(Hv), src, dst)
    inl = (err < tol) & ok[:, None]
    rows = np.flatnonzero(valid)
    H[rows] = Hv
    counts[rows] = inl.sum(1)
    scores[rows] = np.where(inl, err, 0.0).sum(1)
    valid[rows] = ok
    return H, counts, scores, valid
