"""Hot numerical kernels with a compiled core and a numpy fallback.

The Cython extension ``_ckernels`` is used when it was built; otherwise the
pure numpy module ``_pykernels`` is selected at import. ``use_backend`` swaps
the active implementation at runtime (benchmarks and cross-checks use it).
"""

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = (
    "bearing_residuals",
    "bearing_linearize",
    "grid_point_cost",
    "grid_pose_cost",
    "bilinear_sample",
    "schur_reduce",
    "transfer_errors",
    "ransac_score",
)

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

backend = "cython" if _ckernels is not None else "python"
_impl = BACKENDS[backend]


def use_backend(name):
    """Select the kernel implementation (``"cython"`` or ``"python"``)."""
    global backend, _impl
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}")
    backend = name
    _impl = BACKENDS[name]


def _f(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def wrap_angle(a):
    return _pykernels.wrap_angle(np.asarray(a, dtype=np.float64))


def bearing_residuals(R, t, y, meas):
    return _impl.bearing_residuals(_f(R), _f(t), _f(y), _f(meas))


def bearing_linearize(R, t, y, meas):
    return _impl.bearing_linearize(_f(R), _f(t), _f(y), _f(meas))


def grid_point_cost(grid, R, t, meas, w):
    return _impl.grid_point_cost(_f(grid), _f(R), _f(t), _f(meas), _f(w))


def grid_pose_cost(positions, rig_rot, view_rot, landmarks, meas, w):
    return _impl.grid_pose_cost(
        _f(positions), _f(rig_rot), _f(view_rot), _f(landmarks), _f(meas), _f(w)
    )


def bilinear_sample(img, mu, mv):
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    out = _impl.bilinear_sample(_f(img), _f(mu), _f(mv))
    return out[:, :, 0] if squeeze else out


def schur_reduce(S, T, W, col, ia, ib):
    """In-place ``S[col[a]:+6, col[b]:+6] -= T[a] @ W[b].T`` over pairs."""
    i64 = np.int64
    _impl.schur_reduce(S, _f(T), _f(W), np.ascontiguousarray(col, dtype=i64),
                              np.ascontiguousarray(ia, dtype=i64), np.ascontiguousarray(ib, dtype=i64))
    return S


def transfer_errors(H, Hi, src, dst):
    """(m, n) RMS symmetric transfer errors for homography stacks (m, 3, 3)."""
    return _impl.transfer_errors(_f(H), _f(Hi), _f(src), _f(dst))


def ransac_score(src, dst, idx, tol):
    """Fit and score one homography per 4-point sample; see ``_pykernels``."""
    return _impl.ransac_score(_f(src), _f(dst), np.ascontiguousarray(idx, dtype=np.int64), float(tol))
