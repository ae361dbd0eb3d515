"""Compare the compiled and numpy kernel backends.

Usage: python bench/bench_kernels.py [--repeat N] [--seed S]

Each kernel runs on inputs sized like a typical pipeline call; the table
reports the best wall time over ``--repeat`` runs and the speedup of the
compiled backend. Outputs of the two backends are compared as a sanity
check.
"""

import argparse
import time

import numpy as np

from svloc import _kernels
from svloc.geometry import level_rig_rotation, so3_exp, view_rotation


def _rotations(rng, n):
    return np.array([so3_exp(rng.normal(size=3)) for _ in range(n)])


def _bearings(rng, n):
    return np.column_stack([rng.uniform(0.1, 1.2, n), rng.uniform(-np.pi, np.pi, n)])


def make_cases(seed):
    rng = np.random.default_rng(seed)
    cases = {}

    n = 20000
    R, t, y, meas = _rotations(rng, n), rng.normal(size=(n, 3)), rng.normal(size=(n, 3)) * 20, _bearings(rng, n)
    cases["bearing_residuals"] = (R, t, y, meas)
    cases["bearing_linearize"] = (R, t, y, meas)

    k = 8
    Rk, tk, mk = _rotations(rng, k), rng.normal(size=(k, 3)), _bearings(rng, k)
    w = np.full((k, 2), 4e4)
    grid = rng.uniform(-5, 5, size=(100_000, 3))
    cases["grid_point_cost"] = (grid, Rk, tk, mk, w)

    m = 40
    rig = np.array([level_rig_rotation(a) for a in np.linspace(0, 2 * np.pi, 36, endpoint=False)])
    views = np.array([view_rotation(np.pi / 4 * (j % 8)) for j in range(m)])
    cases["grid_pose_cost"] = (rng.uniform(-3, 3, (1000, 3)), rig, views, rng.normal(size=(m, 3)) * 20,
                               _bearings(rng, m), np.full((m, 2), 4e4))

    img = rng.uniform(size=(512, 1024, 3))
    cases["bilinear_sample"] = (img, rng.uniform(0, 1024, (512, 512)), rng.uniform(0, 512, (512, 512)))

    # rows are observations: pose column per row, pairs of rows sharing a point
    nb, rows, pairs = 60, 2000, 20000
    cases["schur_reduce"] = (np.zeros((6 * nb, 6 * nb)), rng.normal(size=(rows, 6, 3)), rng.normal(size=(rows, 6, 3)),
                             6 * rng.integers(0, nb, rows), rng.integers(0, rows, pairs), rng.integers(0, rows, pairs))

    pts = rng.uniform(0, 512, size=(300, 2))
    H = np.array([[1.02, 0.01, 3.0], [-0.02, 0.98, -2.0], [1e-5, 2e-5, 1.0]])
    proj = pts @ H[:2, :2].T + H[:2, 2]
    proj /= (pts @ H[2, :2] + H[2, 2])[:, None]
    dst = proj + rng.normal(0, 0.5, proj.shape)
    dst[:100] = rng.uniform(0, 512, size=(100, 2))
    stack = np.repeat(H[None], 256, axis=0) + rng.normal(0, 1e-4, (256, 3, 3))
    cases["transfer_errors"] = (stack, np.linalg.inv(stack), pts, dst)
    idx = np.array([rng.choice(len(pts), 4, replace=False) for _ in range(1000)])
    cases["ransac_score"] = (pts, dst, idx, 3.0)
    return cases


def _call(name, args):
    if name == "schur_reduce":
        S = args[0].copy()
        return getattr(_kernels, name)(S, *args[1:])
    return getattr(_kernels, name)(*args)


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.asarray(o, dtype=float).ravel() for o in out])
    return np.asarray(out, dtype=float).ravel()


def bench(name, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = _call(name, args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if "cython" not in _kernels.BACKENDS:
        print("compiled backend not built; only the numpy backend is available")
    backends = [b for b in ("python", "cython") if b in _kernels.BACKENDS]
    cases = make_cases(args.seed)
    print(f"{'kernel':<20}" + "".join(f"{b + ' (ms)':>14}" for b in backends) + f"{'speedup':>10}{'max diff':>12}")
    try:
        for name, case in cases.items():
            times, outs = [], []
            for b in backends:
                _kernels.use_backend(b)
                dt, out = bench(name, case, args.repeat)
                times.append(dt)
                outs.append(_flat(out))
            line = f"{name:<20}" + "".join(f"{1e3 * t:>14.2f}" for t in times)
            if len(times) == 2:
                a, c = outs
                fin = np.isfinite(a) & np.isfinite(c)
                diff = np.abs(a[fin] - c[fin]).max() if fin.any() else 0.0
                line += f"{times[0] / times[1]:>9.1f}x{diff:>12.1e}"
            print(line)
    finally:
        _kernels.use_backend("cython" if "cython" in _kernels.BACKENDS else "python")


if __name__ == "__main__":
    main()
