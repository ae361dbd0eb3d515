"""Sparse Levenberg-Marquardt over pose and point variables.

Factors come in vectorized groups (``FactorGroup``): every factor in a group
has the same residual function and variable kinds, so residuals and
Jacobians are evaluated for the whole group at once. A single factor with
Python callables is just a group of one (``Factor``).

Pose increments are 6-vectors ``(w, tau)`` applied on the right,
``x [+] d = (R Exp(w), t + R tau)``; point increments are additive.

The normal equations are ordered poses first, points last. When no factor
couples two different points the point block is block-diagonal and is
eliminated with a Schur complement; otherwise a sparse LU solve is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import _kernels
from .errors import MissingVariable, NonFiniteResidual, SingularSystem, UnderConstrained
from .geometry import Pose, matrix_from_quat, quat_from_matrix, so3_exp

POSE = "pose"
POINT = "point"
DOF = {POSE: 6, POINT: 3}

LAMBDA_MAX = 1e8


def dcs_scale(chi2, phi):
    """Dynamic Covariance Scaling factor ``min(1, 2 phi / (phi + chi2))``."""
    chi2 = np.asarray(chi2, dtype=float)
    s = np.minimum(1.0, 2.0 * phi / (phi + chi2))
    return float(s) if s.ndim == 0 else s


class DCS:
    """DCS robust kernel. The effective information becomes ``s**2 * info``.

    ``rho`` is the robust cost whose derivative with respect to chi2 is
    exactly ``s**2``, so reweighted Gauss-Newton steps descend on it.
    """

    def __init__(self, phi=1.0):
        if not phi > 0:
            raise ValueError("DCS phi must be positive")
        self.phi = float(phi)

    def scale(self, chi2):
        return np.minimum(1.0, 2.0 * self.phi / (self.phi + chi2))

    def weight(self, chi2):
        return self.scale(chi2) ** 2

    def rho(self, chi2):
        p = self.phi
        return np.where(chi2 <= p, chi2, p * (3.0 * chi2 - p) / (chi2 + p))

    def __repr__(self):
        return f"DCS(phi={self.phi!r})"


@dataclass
class Variable:
    id: Hashable
    kind: str
    value: object
    fixed: bool = False


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 100
    lm_lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12


@dataclass(frozen=True)
class SolveReport:
    initial_cost: float
    final_cost: float
    iterations: int
    termination: str  # converged | max-iters | stalled
    cost_trace: tuple = ()

    def to_dict(self):
        return {
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "termination": self.termination,
            "cost_trace": list(self.cost_trace),
        }


# ------------------------------------------------------------ factor groups


def _check_information(info, dim, n):
    info = np.asarray(info, dtype=float)
    if info.shape == (dim, dim):
        info = np.broadcast_to(info, (n, dim, dim))
    if info.shape != (n, dim, dim):
        raise ValueError(f"information must be ({dim},{dim}) or ({n},{dim},{dim}), got {info.shape}")
    if not np.allclose(info, np.swapaxes(info, 1, 2), rtol=0.0, atol=1e-12 * max(1.0, np.abs(info).max())):
        raise ValueError("information matrix not symmetric")
    if n and np.linalg.eigvalsh(info[: min(n, 1)] if info.strides[0] == 0 else info).min() <= 0:
        raise ValueError("information matrix not positive definite")
    return np.ascontiguousarray(info)


def _retract_slot(kind, val, coord, eps):
    """Perturb every factor's slot value along one local coordinate."""
    if kind == POINT:
        out = val.copy()
        out[:, coord] += eps
        return out
    R, t = val
    if coord < 3:
        w = np.zeros(3)
        w[coord] = eps
        return R @ so3_exp(w), t
    return R, t + eps * R[:, :, coord - 3]


class FactorGroup:
    """``n`` factors sharing one residual function.

    Subclasses set ``kinds`` (variable kind per slot) and ``dim`` and
    implement ``residuals``; they may override ``linearize`` with analytic
    Jacobians. ``values`` passed to both is one entry per slot: ``(R, t)``
    arrays for pose slots, an (n, 3) array for point slots.
    """

    kinds: tuple = ()
    dim: int = 0
    name = "factor"

    def __init__(self, variables, information, kernel=None):
        var = [tuple(v) for v in variables]
        for v in var:
            if len(v) != len(self.kinds):
                raise ValueError(f"{self.name}: expected {len(self.kinds)} variables per factor")
        self.variables = var
        self.information = _check_information(information, self.dim, len(var))
        self.kernel = kernel

    def __len__(self):
        return len(self.variables)

    def residuals(self, values):
        raise NotImplementedError

    def linearize(self, values, eps=1e-7):
        r = self.residuals(values)
        jac = []
        for s, kind in enumerate(self.kinds):
            d = DOF[kind]
            J = np.empty((len(self), self.dim, d))
            for c in range(d):
                vp = list(values)
                vm = list(values)
                vp[s] = _retract_slot(kind, values[s], c, eps)
                vm[s] = _retract_slot(kind, values[s], c, -eps)
                J[:, :, c] = (self.residuals(vp) - self.residuals(vm)) / (2.0 * eps)
            jac.append(J)
        return r, jac

    def measurement_rows(self):
        """Per-factor measurement values for problem dumps."""
        return [[] for _ in range(len(self))]

    def subset(self, mask):
        raise NotImplementedError


def _to_value(kind, val, i):
    if kind == POINT:
        return val[i].copy()
    R, t = val
    return Pose.from_matrix(R[i], t[i])


class Factor(FactorGroup):
    """One factor with Python callables.

    Args:
        variables: ids of the connected variables.
        kinds: kind of each variable, ``"pose"`` or ``"point"``.
        residual: ``residual(*values) -> r`` with ``Pose`` objects for poses
            and 3-arrays for points.
        information: (m, m) symmetric positive definite.
        jacobian: optional ``jacobian(*values) -> [J_1, ...]`` with blocks
            of shape (m, dof_k); central differences are used otherwise.
    """

    name = "callable"

    def __init__(self, variables, kinds, residual: Callable, information, jacobian=None, kernel=None):
        self.kinds = tuple(kinds)
        info = np.atleast_2d(np.asarray(information, dtype=float))
        self.dim = info.shape[0]
        super().__init__([tuple(variables)], info, kernel)
        self.residual_fn = residual
        self.jacobian_fn = jacobian

    def _values(self, values):
        return [_to_value(k, v, 0) for k, v in zip(self.kinds, values)]

    def residuals(self, values):
        return np.asarray(self.residual_fn(*self._values(values)), dtype=float).reshape(1, self.dim)

    def linearize(self, values, eps=1e-7):
        vals = self._values(values)
        r = np.asarray(self.residual_fn(*vals), dtype=float).reshape(1, self.dim)
        if self.jacobian_fn is None:
            blocks = numeric_jacobian(self.residual_fn, vals, eps)
        else:
            blocks = self.jacobian_fn(*vals)
        return r, [np.asarray(b, dtype=float).reshape(1, self.dim, DOF[k]) for b, k in zip(blocks, self.kinds)]


def _boxplus(value, delta):
    if isinstance(value, Pose):
        return value.boxplus(delta)
    return np.asarray(value, dtype=float) + delta


def numeric_jacobian(fn, values: Sequence, eps=1e-7):
    """Central-difference Jacobian blocks of ``fn(*values)``.

    Poses are perturbed through the same right increment the solver uses,
    points additively. Returns one (m, dof) block per value.
    """
    r0 = np.asarray(fn(*values), dtype=float).ravel()
    if not np.all(np.isfinite(r0)):
        raise NonFiniteResidual("residual not finite at the linearization point")
    blocks = []
    for k, v in enumerate(values):
        d = 6 if isinstance(v, Pose) else np.asarray(v).size
        J = np.empty((r0.size, d))
        for c in range(d):
            step = np.zeros(d)
            step[c] = eps
            vp = list(values)
            vm = list(values)
            vp[k] = _boxplus(v, step)
            vm[k] = _boxplus(v, -step)
            rp = np.asarray(fn(*vp), dtype=float).ravel()
            rm = np.asarray(fn(*vm), dtype=float).ravel()
            J[:, c] = (rp - rm) / (2.0 * eps)
        blocks.append(J)
    return blocks


# ------------------------------------------------------------------ problem


class Problem:
    def __init__(self):
        self.variables: dict = {}
        self.groups: list[FactorGroup] = []

    def add_pose(self, vid, pose: Pose, fixed=False):
        self.variables[vid] = Variable(vid, POSE, pose, fixed)

    def add_point(self, vid, xyz, fixed=False):
        self.variables[vid] = Variable(vid, POINT, np.array(xyz, dtype=float).reshape(3), fixed)

    def add(self, group: FactorGroup):
        if len(group):
            self.groups.append(group)
        return group

    def fix(self, ids, fixed=True):
        for vid in ids:
            self.variables[vid].fixed = fixed

    def value(self, vid):
        return self.variables[vid].value

    @property
    def n_factors(self):
        return sum(len(g) for g in self.groups)

    def cost(self):
        return _State(self).cost()

    def dump(self) -> str:
        """Text listing of variables and factors in insertion order."""
        lines = []
        for v in self.variables.values():
            if v.kind == POSE:
                vals = list(v.value.q) + list(v.value.t)
            else:
                vals = list(v.value)
            lines.append(" ".join(["VAR", str(v.id), v.kind, "fixed" if v.fixed else "free"]
                                  + [repr(float(x)) for x in vals]))
        for g, group in enumerate(self.groups):
            meas = group.measurement_rows()
            for i, ids in enumerate(group.variables):
                info = group.information[i][np.triu_indices(group.dim)]
                lines.append(" ".join(
                    ["FACTOR", group.name, f"{g}:{i}", ",".join(str(x) for x in ids),
                     "kernel=" + (repr(group.kernel) if group.kernel else "none"),
                     "meas=" + ",".join(repr(float(x)) for x in meas[i]),
                     "info=" + ",".join(repr(float(x)) for x in info)]))
        return "\n".join(lines) + "\n"


class _State:
    """Array view of a problem's variables plus the free-column layout."""

    def __init__(self, problem: Problem):
        self.problem = problem
        pose_ids = [v.id for v in problem.variables.values() if v.kind == POSE]
        point_ids = [v.id for v in problem.variables.values() if v.kind == POINT]
        self.pose_index = {vid: i for i, vid in enumerate(pose_ids)}
        self.point_index = {vid: i for i, vid in enumerate(point_ids)}
        self.pose_ids, self.point_ids = pose_ids, point_ids
        P, Q = len(pose_ids), len(point_ids)
        self.R = np.empty((P, 3, 3))
        self.t = np.empty((P, 3))
        for i, vid in enumerate(pose_ids):
            p = problem.variables[vid].value
            self.R[i] = matrix_from_quat(p.q)
            self.t[i] = p.t
        self.Y = np.array([problem.variables[vid].value for vid in point_ids], dtype=float).reshape(Q, 3)

        pose_free = np.array([not problem.variables[v].fixed for v in pose_ids], dtype=bool)
        point_free = np.array([not problem.variables[v].fixed for v in point_ids], dtype=bool)
        self.pose_col = np.full(P, -1)
        self.pose_col[pose_free] = 6 * np.arange(pose_free.sum())
        self.nc = 6 * int(pose_free.sum())
        self.point_col = np.full(Q, -1)
        self.point_col[point_free] = self.nc + 3 * np.arange(point_free.sum())
        self.n = self.nc + 3 * int(point_free.sum())
        self.pose_free, self.point_free = pose_free, point_free

        self.slots = []
        touched_pose = np.zeros(P, dtype=bool)
        touched_point = np.zeros(Q, dtype=bool)
        self.point_coupling = False
        for group in problem.groups:
            idx, cols = [], []
            for s, kind in enumerate(group.kinds):
                table = self.pose_index if kind == POSE else self.point_index
                try:
                    ix = np.array([table[v[s]] for v in group.variables], dtype=int)
                except KeyError as exc:
                    raise MissingVariable(f"{group.name} references unknown {kind} {exc.args[0]!r}") from None
                for v in group.variables:
                    if problem.variables[v[s]].kind != kind:
                        raise MissingVariable(f"variable {v[s]!r} is not a {kind}")
                if kind == POSE:
                    touched_pose[ix] = True
                    cols.append(self.pose_col[ix])
                else:
                    touched_point[ix] = True
                    cols.append(self.point_col[ix])
                idx.append(ix)
            pt = [s for s, k in enumerate(group.kinds) if k == POINT]
            for a in range(len(pt)):
                for b in range(a + 1, len(pt)):
                    if np.any(idx[pt[a]] != idx[pt[b]]):
                        self.point_coupling = True
            self.slots.append((idx, cols))
        lonely = [pose_ids[i] for i in np.flatnonzero(pose_free & ~touched_pose)]
        lonely += [point_ids[i] for i in np.flatnonzero(point_free & ~touched_point)]
        if lonely:
            raise UnderConstrained(f"free variables without factors: {lonely[:5]}")

    def values(self, g, R=None, t=None, Y=None):
        R = self.R if R is None else R
        t = self.t if t is None else t
        Y = self.Y if Y is None else Y
        idx, _ = self.slots[g]
        out = []
        for s, kind in enumerate(self.problem.groups[g].kinds):
            if kind == POSE:
                out.append((R[idx[s]], t[idx[s]]))
            else:
                out.append(Y[idx[s]])
        return out

    def cost(self, R=None, t=None, Y=None):
        total = 0.0
        for g, group in enumerate(self.problem.groups):
            r = group.residuals(self.values(g, R, t, Y))
            chi2 = np.einsum("ni,nij,nj->n", r, group.information, r)
            if group.kernel is not None:
                chi2 = group.kernel.rho(chi2)
            total += float(chi2.sum())
        return total

    def write_back(self):
        pv = self.problem.variables
        for i, vid in enumerate(self.pose_ids):
            if self.pose_free[i]:
                pv[vid].value = Pose(quat_from_matrix(self.R[i]), self.t[i].copy())
        for j, vid in enumerate(self.point_ids):
            if self.point_free[j]:
                pv[vid].value = self.Y[j].copy()


class _System:
    """Linearized normal equations split into pose/point blocks."""

    def __init__(self, state: _State):
        self.state = state
        nc, n = state.nc, state.n
        self.g = np.zeros(n)
        self._cc = ([], [], [])
        self._cp = ([], [], [])
        self._pp = ([], [])
        self._all = ([], [], [])
        self.diag = np.zeros(n)
        for gi, group in enumerate(state.problem.groups):
            idx, cols = state.slots[gi]
            if all(np.all(c < 0) for c in cols):
                continue
            r, jac = group.linearize(state.values(gi))
            if not np.all(np.isfinite(r)):
                raise NonFiniteResidual(f"{group.name}: non-finite residual")
            info = group.information
            if group.kernel is not None:
                chi2 = np.einsum("ni,nij,nj->n", r, info, r)
                info = info * group.kernel.weight(chi2)[:, None, None]
            Wr = np.einsum("nij,nj->ni", info, r)
            WJ = [info @ J for J in jac]
            for a, kind_a in enumerate(group.kinds):
                ca = cols[a]
                m = ca >= 0
                if not m.any():
                    continue
                da = DOF[kind_a]
                ga = np.einsum("nji,nj->ni", jac[a][m], Wr[m])
                self.g += np.bincount((ca[m][:, None] + np.arange(da)).ravel(), ga.ravel(), minlength=n)
                for b, kind_b in enumerate(group.kinds):
                    cb = cols[b]
                    mm = m & (cb >= 0)
                    if not mm.any():
                        continue
                    db = DOF[kind_b]
                    blk = np.einsum("nji,njk->nik", jac[a][mm], WJ[b][mm])
                    rows = (ca[mm][:, None, None] + np.arange(da)[None, :, None]) + np.zeros((1, 1, db), dtype=int)
                    cl = (cb[mm][:, None, None] + np.arange(db)[None, None, :]) + np.zeros((1, da, 1), dtype=int)
                    if a == b:
                        dg = np.diagonal(blk, axis1=1, axis2=2)
                        self.diag += np.bincount((ca[mm][:, None] + np.arange(da)).ravel(), dg.ravel(),
                                                 minlength=n)
                    if state.point_coupling:
                        self._all[0].append(rows.ravel())
                        self._all[1].append(cl.ravel())
                        self._all[2].append(blk.ravel())
                    if kind_a == POSE and kind_b == POSE:
                        self._cc[0].append(rows.ravel())
                        self._cc[1].append(cl.ravel())
                        self._cc[2].append(blk.ravel())
                    elif kind_a == POSE and kind_b == POINT:
                        self._cp[0].append(ca[mm])
                        self._cp[1].append((cb[mm] - nc) // 3)
                        self._cp[2].append(blk)
                    elif kind_a == POINT and kind_b == POINT and not state.point_coupling:
                        k = (rows - nc) // 3
                        flat = k * 9 + ((rows - nc) % 3) * 3 + (cl - nc) % 3
                        self._pp[0].append(flat.ravel())
                        self._pp[1].append(blk.ravel())
        self.schur = not state.point_coupling
        if self.schur:
            self._build_blocks()

    def _build_blocks(self):
        nc, npd = self.state.nc, self.state.n - self.state.nc
        if self._cc[0]:
            r = np.concatenate(self._cc[0])
            c = np.concatenate(self._cc[1])
            v = np.concatenate(self._cc[2])
            self.Hcc = np.bincount(r * nc + c, v, minlength=nc * nc).reshape(nc, nc)
        else:
            self.Hcc = np.zeros((nc, nc))
        m = npd // 3
        if self._pp[0]:
            self.Hpp = np.bincount(np.concatenate(self._pp[0]), np.concatenate(self._pp[1]),
                                   minlength=9 * m).reshape(m, 3, 3)
        else:
            self.Hpp = np.zeros((m, 3, 3))
        # pose-point coupling as 6x3 blocks, one per (pose, point) pair
        if self._cp[0]:
            pc = np.concatenate(self._cp[0])
            pq = np.concatenate(self._cp[1])
            W = np.concatenate(self._cp[2])
            key = pc // 6 * max(m, 1) + pq
            uniq, inv = np.unique(key, return_inverse=True)
            if len(uniq) < len(key):
                Wu = np.zeros((len(uniq), 6, 3))
                np.add.at(Wu, inv, W)
                first = np.zeros(len(uniq), dtype=int)
                first[inv[::-1]] = np.arange(len(key))[::-1]
                pc, pq, W = pc[first], pq[first], Wu
        else:
            pc, pq, W = np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros((0, 6, 3))
        self.cp_col, self.cp_point, self.Wcp = pc, pq, W
        self._pairs = _block_pairs(pq)

    def solve(self, lam):
        """Solve ``(H + lam * diag(H)) d = -g``; raises LinAlgError."""
        n, nc = self.state.n, self.state.nc
        damp = lam * np.maximum(self.diag, 1e-12)
        g = self.g
        if not self.schur:
            H = scipy.sparse.csc_matrix(
                (np.concatenate(self._all[2]), (np.concatenate(self._all[0]), np.concatenate(self._all[1]))),
                shape=(n, n)) + scipy.sparse.diags(damp)
            try:
                d = scipy.sparse.linalg.splu(H.tocsc()).solve(-g)
            except RuntimeError as exc:
                raise np.linalg.LinAlgError(str(exc)) from None
            if not np.all(np.isfinite(d)):
                raise np.linalg.LinAlgError("non-finite step")
            return d

        m = (n - nc) // 3
        gc, gp = g[:nc], g[nc:]
        d = np.empty(n)
        if m:
            Hpp = self.Hpp.copy()
            Hpp[:, [0, 1, 2], [0, 1, 2]] += damp[nc:].reshape(m, 3)
            Cinv = np.linalg.inv(Hpp)
            if not np.all(np.isfinite(Cinv)):
                raise np.linalg.LinAlgError("singular point block")
        W, pc, pq = self.Wcp, self.cp_col, self.cp_point
        six = np.arange(6)
        if nc:
            S = self.Hcc + np.diag(damp[:nc])
            rhs = -gc
            if m and len(W):
                T = W @ Cinv[pq]
                ia, ib = self._pairs
                S = _kernels.schur_reduce(np.ascontiguousarray(S), T, W, pc, ia, ib)
                tg = (T @ gp.reshape(m, 3)[pq][:, :, None])[:, :, 0]
                rhs = rhs + np.bincount((pc[:, None] + six).ravel(), tg.ravel(), minlength=nc)
            S = 0.5 * (S + S.T)
            dc = scipy.linalg.cho_solve(scipy.linalg.cho_factor(S, check_finite=False), rhs, check_finite=False)
            d[:nc] = dc
        if m:
            tmp = -gp
            if nc and len(W):
                wd = (W.transpose(0, 2, 1) @ d[:nc][pc[:, None] + six][:, :, None])[:, :, 0]
                tmp = tmp - np.bincount((3 * pq[:, None] + np.arange(3)).ravel(), wd.ravel(), minlength=3 * m)
            d[nc:] = np.einsum("nij,nj->ni", Cinv, tmp.reshape(m, 3)).ravel()
        if not np.all(np.isfinite(d)):
            raise np.linalg.LinAlgError("non-finite step")
        return d


def _block_pairs(point_of_block):
    """All ordered pairs (i, j) of blocks that share a point."""
    q = np.asarray(point_of_block)
    if not len(q):
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    order = np.argsort(q, kind="stable")
    qs = q[order]
    counts = np.bincount(qs)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    L = counts[qs]
    ia_sorted = np.repeat(np.arange(len(qs)), L)
    offs = np.arange(len(ia_sorted)) - np.repeat(np.cumsum(L) - L, L)
    ib_sorted = starts[qs[ia_sorted]] + offs
    return order[ia_sorted], order[ib_sorted]


def _apply_step(state: _State, d):
    R, t, Y = state.R.copy(), state.t.copy(), state.Y.copy()
    fp = state.pose_free
    if fp.any():
        dp = d[: state.nc].reshape(-1, 6)
        Rf = R[fp]
        t[fp] = t[fp] + np.einsum("nij,nj->ni", Rf, dp[:, 3:])
        R[fp] = Rf @ so3_exp(dp[:, :3])
    fq = state.point_free
    if fq.any():
        Y[fq] = Y[fq] + d[state.nc:].reshape(-1, 3)
    return R, t, Y


def solve(problem: Problem, config: SolverConfig | None = None, **overrides) -> SolveReport:
    """Minimize the total (robust) cost of ``problem`` in place.

    Steps are accepted only if they lower the cost; the damping ``lambda``
    is divided by ``lambda_down`` on success and multiplied by ``lambda_up``
    on failure. Converged means relative cost decrease below ``rel_tol`` or
    cost below ``abs_tol``; stalled means no improving step below
    ``lambda = 1e8``.
    """
    cfg = config or SolverConfig()
    if overrides:
        cfg = SolverConfig(**{**cfg.__dict__, **overrides})
    if not problem.groups:
        raise MissingVariable("problem has no factors")
    state = _State(problem)
    cost = state.cost()
    if not math.isfinite(cost):
        raise NonFiniteResidual("initial cost is not finite")
    initial = cost
    trace = [cost]
    lam = cfg.lm_lambda0
    termination = "max-iters"
    iters = 0
    if state.n == 0 or cost < cfg.abs_tol:
        return SolveReport(initial, cost, 0, "converged", tuple(trace))

    while iters < cfg.max_iters:
        iters += 1
        system = _System(state)
        accepted = False
        while True:
            try:
                d = system.solve(lam)
            except (np.linalg.LinAlgError, ValueError):
                if lam >= LAMBDA_MAX:
                    raise SingularSystem(f"normal equations unsolvable at lambda={lam:g}") from None
                lam = min(lam * cfg.lambda_up, LAMBDA_MAX)
                continue
            R, t, Y = _apply_step(state, d)
            new = state.cost(R, t, Y)
            if math.isfinite(new) and new < cost:
                state.R, state.t, state.Y = R, t, Y
                accepted = True
                lam = max(lam / cfg.lambda_down, 1e-15)
                break
            if lam >= LAMBDA_MAX:
                break
            lam = min(lam * cfg.lambda_up, LAMBDA_MAX)
        if not accepted:
            termination = "stalled"
            break
        rel = (cost - new) / max(cost, 1e-300)
        cost = new
        trace.append(cost)
        if cost < cfg.abs_tol or rel < cfg.rel_tol:
            termination = "converged"
            break

    state.write_back()
    return SolveReport(initial, cost, iters, termination, tuple(trace))
