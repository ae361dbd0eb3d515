import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svloc.errors import MissingVariable, NonFiniteResidual, SingularSystem, UnderConstrained
from svloc.factors import BearingFactors, RelativePoseFactors, bearing_information, relative_pose
from svloc.geometry import Pose, predict_bearings
from svloc.nlls import DCS, Factor, Problem, SolverConfig, dcs_scale, numeric_jacobian, solve

CAMS = [Pose.identity(), Pose.from_rotvec([0, 0.2, 0], [3, 0, 0]), Pose.from_rotvec([0.05, -0.2, 0], [-2, 1, 1])]
POINT = np.array([0.5, -0.4, 10.0])


def _bearings(cams, pts):
    R = np.array([c.R for c in cams])
    t = np.array([c.t for c in cams])
    return predict_bearings(R, t, np.broadcast_to(pts, (len(cams), 3)).copy())


def point_problem(start, kernel=None, cams=CAMS, meas=None):
    p = Problem()
    for i, c in enumerate(cams):
        p.add_pose(("x", i), c, fixed=True)
    p.add_point("y", start)
    meas = _bearings(cams, POINT) if meas is None else meas
    p.add(BearingFactors([("x", i) for i in range(len(cams))], ["y"] * len(cams), meas,
                         bearing_information(meas[:, 0], 0.005), kernel))
    return p


# -------------------------------------------------------------------- DCS


def test_dcs_scale_examples():
    assert dcs_scale(0.0, 1.0) == 1.0
    assert dcs_scale(1.0, 1.0) == 1.0
    assert dcs_scale(9.0, 1.0) == pytest.approx(0.2)


@settings(max_examples=200, deadline=None)
@given(chi2=st.floats(0, 1e6), phi=st.floats(1e-3, 1e3))
def test_dcs_scale_in_unit_interval(chi2, phi):
    s = dcs_scale(chi2, phi)
    assert 0.0 < s <= 1.0
    assert (s == 1.0) == (chi2 <= phi)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1e3))
def test_dcs_rho_derivative_is_squared_scale(chi2):
    k = DCS(2.0)
    h = 1e-5 * max(1.0, chi2)
    lo = max(chi2 - h, 0.0)
    slope = (k.rho(chi2 + h) - k.rho(lo)) / (chi2 + h - lo)
    assert slope == pytest.approx(float(k.weight(chi2)), rel=1e-3, abs=1e-9)


def test_dcs_with_huge_phi_is_plain_least_squares():
    meas = _bearings(CAMS, POINT) + np.random.default_rng(0).normal(0, 0.005, (3, 2))
    a = point_problem(POINT + 1.0, meas=meas)
    b = point_problem(POINT + 1.0, DCS(1e12), meas=meas)
    solve(a)
    solve(b)
    assert np.array_equal(a.value("y"), b.value("y"))


# ------------------------------------------------------------------ solve


def test_point_from_three_bearings():
    p = point_problem(POINT + [1.0, -0.5, 3.0])
    rep = solve(p)
    assert np.linalg.norm(p.value("y") - POINT) < 1e-8
    assert rep.termination == "converged"
    assert rep.final_cost < 1e-12


def test_optimal_input_stops_immediately():
    p = point_problem(POINT)
    rep = solve(p)
    assert rep.iterations <= 2 and rep.final_cost == pytest.approx(0.0, abs=1e-20)


def test_free_variable_without_factors():
    p = point_problem(POINT)
    p.add_point("lonely", [0, 0, 1])
    with pytest.raises(UnderConstrained):
        solve(p)
    assert issubclass(UnderConstrained, MissingVariable)


def test_problem_without_factors():
    p = Problem()
    p.add_point("y", [0, 0, 1])
    with pytest.raises(MissingVariable):
        solve(p)


def test_factor_on_unknown_variable():
    p = point_problem(POINT)
    p.add(Factor(["nope"], ["point"], lambda y: y, np.eye(3)))
    with pytest.raises(MissingVariable):
        solve(p)


def test_non_finite_initial_cost():
    p = Problem()
    p.add_point("y", [0, 0, 1])
    p.add(Factor(["y"], ["point"], lambda y: np.full(3, np.nan), np.eye(3)))
    with pytest.raises(NonFiniteResidual):
        solve(p)


def test_unsolvable_normal_equations():
    p = Problem()
    p.add_point("y", [0, 0, 1])
    p.add(Factor(["y"], ["point"], lambda y: y - 1.0, np.eye(3), jacobian=lambda y: [np.full((3, 3), np.inf)]))
    with pytest.raises(SingularSystem), np.errstate(all="ignore"):
        solve(p)


def test_rank_deficient_system_still_steps():
    # the damping floor keeps unobserved directions solvable and unmoved
    p = Problem()
    p.add_point("y", [0, 0, 1])
    p.add(Factor(["y"], ["point"], lambda y: np.array([y[0] - 1.0]), np.eye(1)))
    solve(p)
    assert np.allclose(p.value("y"), [1, 0, 1], atol=1e-6)


def test_fixed_variables_do_not_move():
    p = point_problem(POINT + 2.0)
    before = [p.value(("x", i)).q.copy() for i in range(3)]
    solve(p)
    assert all(np.array_equal(p.value(("x", i)).q, q) for i, q in enumerate(before))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_cost_trace_is_monotone(seed):
    rng = np.random.default_rng(seed)
    meas = _bearings(CAMS, POINT) + rng.normal(0, 0.01, (3, 2))
    p = point_problem(POINT + rng.normal(0, 2.0, 3), DCS(1.0), meas=meas)
    rep = solve(p)
    assert np.all(np.diff(rep.cost_trace) <= 0)
    assert rep.final_cost <= rep.initial_cost


def _chain_problem(seed, T=Pose.identity()):
    """Three poses linked by odometry, five points, noisy bearings."""
    rng = np.random.default_rng(seed)
    truth = [Pose.identity(), Pose.from_rotvec([0, 0.05, 0], [1, 0, 0.2]), Pose.from_rotvec([0, 0.1, 0], [2, 0.1, 0.5])]
    pts = rng.uniform([-5, -2, 8], [5, 2, 20], (5, 3))
    p = Problem()
    for i, x in enumerate(truth):
        init = x.boxplus(rng.normal(0, 0.02, 6)) if i else x
        p.add_pose(i, T @ init, fixed=(i == 0))
    for j, y in enumerate(pts):
        p.add_point(("y", j), T.transform(y + rng.normal(0, 0.5, 3)))
    pi, yj, meas = [], [], []
    for i, x in enumerate(truth):
        for j, y in enumerate(pts):
            pi.append(i)
            yj.append(("y", j))
            meas.append(_bearings([x], y)[0] + rng.normal(0, 0.003, 2))
    meas = np.array(meas)
    p.add(BearingFactors(pi, yj, meas, bearing_information(meas[:, 0], 0.005)))
    rel = [relative_pose(truth[i], truth[i + 1]) for i in range(2)]
    p.add(RelativePoseFactors([0, 1], [1, 2], rel, np.eye(6) * 1e4))
    return p


def test_solution_is_gauge_covariant():
    T = Pose.from_rotvec([0.3, -0.2, 0.9], [4.0, -7.0, 2.0])
    a, b = _chain_problem(5), _chain_problem(5, T)
    cfg = SolverConfig(rel_tol=1e-15, abs_tol=0.0)
    solve(a, cfg)
    solve(b, cfg)
    for j in range(5):
        assert np.allclose(T.transform(a.value(("y", j))), b.value(("y", j)), atol=1e-6)
    for i in range(3):
        pa, pb = T @ a.value(i), b.value(i)
        assert np.allclose(pa.R, pb.R, atol=1e-6) and np.allclose(pa.t, pb.t, atol=1e-6)


def test_dump_is_deterministic():
    assert _chain_problem(1).dump() == _chain_problem(1).dump()
    lines = _chain_problem(1).dump().splitlines()
    assert sum(line.startswith("VAR") for line in lines) == 8
    assert sum(line.startswith("FACTOR") for line in lines) == 17


# -------------------------------------------------------------- jacobians


def test_numeric_jacobian_of_linear_residual():
    A = np.random.default_rng(0).normal(size=(4, 3))
    (J,) = numeric_jacobian(lambda x: A @ x, [np.array([0.3, -1.0, 2.0])])
    assert np.allclose(J, A, atol=1e-6)


def test_numeric_jacobian_zero_block_for_unused_variable():
    J = numeric_jacobian(lambda a, b: 2.0 * a, [np.ones(3), np.ones(2)])
    assert np.all(J[1] == 0.0)


def test_numeric_jacobian_rejects_non_finite():
    with pytest.raises(NonFiniteResidual), np.errstate(all="ignore"):
        numeric_jacobian(lambda x: x / 0.0, [np.zeros(2)])


def test_bearing_jacobian_matches_numeric():
    rng = np.random.default_rng(11)
    x = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3))
    y = x.transform([1.0, -2.0, 8.0])
    meas = np.array([[0.3, 1.0]])
    g = BearingFactors([0], [0], meas, bearing_information([0.3], 0.005))
    _, (jp, jy) = g.linearize([(x.R[None], x.t[None]), y[None]])

    def res(pose, point):
        return g.residuals([(pose.R[None], pose.t[None]), point[None]])[0]

    np_, ny = numeric_jacobian(res, [x, y])
    assert np.allclose(jp[0], np_, rtol=1e-5, atol=1e-8)
    assert np.allclose(jy[0], ny, rtol=1e-5, atol=1e-8)


def test_azimuth_residual_does_not_jump_across_pi():
    # a point almost straight along the camera's -x axis: phi near +-pi
    cam = Pose.identity()
    meas = np.array([[math.pi / 2, math.pi - 1e-4]])
    g = BearingFactors([0], [0], meas, bearing_information(meas[:, 0], 0.005))
    for y in ([-10.0, 0.001, 0.0], [-10.0, -0.001, 0.0]):
        r = g.residuals([(cam.R[None], cam.t[None]), np.array([y])])[0]
        assert abs(r[1]) < 1e-3
