import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svloc.errors import BadFov, DegeneratePoint
from svloc.geometry import (
    Intrinsics,
    PanoImage,
    Pose,
    bearing_of_pixel,
    bearings_of_directions,
    direction_of_bearing,
    direction_of_pano_pixel,
    extract_rectilinear,
    level_rig_rotation,
    pano_pixel_of_direction,
    pixel_directions,
    pixel_of_direction,
    predict_bearing,
    so3_exp,
    so3_log,
    standard_views,
    view_rotation,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)
rotvecs = st.tuples(finite, finite, finite).map(np.array)
translations = st.tuples(*(st.floats(-50, 50, allow_nan=False),) * 3).map(np.array)
poses = st.builds(Pose.from_rotvec, rotvecs, translations)


def _close_pose(a, b, tol=1e-9):
    d = a.inverse() @ b
    return d.rotation_angle() < tol and np.linalg.norm(d.t) < tol


# ---------------------------------------------------------------- bearings


def test_bearing_on_optical_axis_has_zero_azimuth():
    b = bearing_of_pixel(Intrinsics(1, 1, 0, 0, 10, 10), 0, 0)
    assert b.theta == 0.0 and b.phi == 0.0


def test_bearing_of_diagonal_pixel():
    b = bearing_of_pixel(Intrinsics(1, 1, 0, 0, 10, 10), 1, 1)
    assert b.theta == pytest.approx(0.955317, abs=1e-6)
    assert b.phi == pytest.approx(math.pi / 4, abs=1e-12)


def test_bearing_of_pixel_with_offset_principal_point():
    b = bearing_of_pixel(Intrinsics(500, 500, 320, 240, 640, 480), 820, 240)
    assert b.theta == pytest.approx(math.pi / 4, abs=1e-12)
    assert b.phi == pytest.approx(0.0, abs=1e-12)


def test_azimuth_covers_all_quadrants():
    k = Intrinsics(1, 1, 0, 0, 10, 10)
    assert bearing_of_pixel(k, -1, -1).phi == pytest.approx(-3 * math.pi / 4)
    assert bearing_of_pixel(k, -1, 0).phi == pytest.approx(math.pi)


def test_predict_bearing_examples():
    ident = Pose.identity()
    assert tuple(predict_bearing(ident, [0, 0, 5])) == (0.0, 0.0)
    b = predict_bearing(ident, [1, 1, 1])
    assert b.theta == pytest.approx(0.955317, abs=1e-6)
    assert b.phi == pytest.approx(math.pi / 4)
    shifted = Pose(np.array([1.0, 0, 0, 0]), [0, 0, 1])
    assert predict_bearing(shifted, [0, 0, 5]).theta == 0.0


def test_predict_bearing_rejects_coincident_point():
    with pytest.raises(DegeneratePoint):
        predict_bearing(Pose.identity(), [0, 0, 0])


@settings(max_examples=200, deadline=None)
@given(u=st.floats(0.5, 639.5), v=st.floats(0.5, 479.5))
def test_pixel_bearing_pixel_round_trip(u, v):
    k = Intrinsics(525.0, 520.0, 319.5, 239.5, 640, 480)
    b = bearings_of_directions(pixel_directions(k, [[u, v]]))
    uv = pixel_of_direction(k, direction_of_bearing(b[:, 0], b[:, 1]))
    assert np.abs(uv - [u, v]).max() < 1e-6


@settings(max_examples=200, deadline=None)
@given(st.tuples(finite, finite, finite).filter(lambda x: np.linalg.norm(x) > 1e-3))
def test_direction_bearing_direction_round_trip(x):
    d = np.array(x) / np.linalg.norm(x)
    b = bearings_of_directions(d)[0]
    assert 0.0 <= b[0] <= math.pi and -math.pi < b[1] <= math.pi
    assert np.abs(direction_of_bearing(*b) - d).max() < 1e-9


# ------------------------------------------------------------------- poses


@settings(max_examples=100, deadline=None)
@given(poses)
def test_pose_inverse_is_two_sided(p):
    assert abs(np.linalg.norm(p.q) - 1.0) < 1e-9
    assert _close_pose(p @ p.inverse(), Pose.identity())
    assert _close_pose(p.inverse() @ p, Pose.identity())


@settings(max_examples=100, deadline=None)
@given(poses, poses, poses)
def test_pose_composition_is_associative(a, b, c):
    lhs, rhs = (a @ b) @ c, a @ (b @ c)
    assert abs(np.linalg.norm(lhs.q) - 1.0) < 1e-9
    assert np.allclose(lhs.R, rhs.R, atol=1e-9) and np.allclose(lhs.t, rhs.t, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(rotvecs.filter(lambda w: np.linalg.norm(w) < math.pi - 1e-3))
def test_so3_log_inverts_exp(w):
    assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-9)


def test_pose_dict_round_trip():
    p = Pose.from_rotvec([0.1, -0.2, 0.3], [1, 2, 3])
    assert _close_pose(Pose.from_dict(p.to_dict()), p, 1e-15)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(0, 1, 0, 0, 10, 10)
    with pytest.raises(ValueError):
        Intrinsics(1, 1, 10, 0, 10, 10)


# --------------------------------------------------------------- panoramas


def test_forward_direction_maps_to_pano_center():
    W, H = 3584, 1792
    assert np.allclose(pano_pixel_of_direction([1, 0, 0], W, H), [W / 2, H / 2])


def test_up_direction_maps_to_top_row():
    assert pano_pixel_of_direction([0, 0, 1], 3584, 1792)[1] == 0.0


def test_quarter_turn_pano_pixel():
    # yaw is clockwise seen from above: +pi/2 points to the right (-y)
    uv = pano_pixel_of_direction([0, -1, 0], 3584, 1792)
    assert np.allclose(uv, [2688, 896])


@settings(max_examples=300, deadline=None)
@given(yaw=st.floats(-math.pi + 1e-9, math.pi), pitch=st.floats(-math.pi / 2 + 0.01, math.pi / 2 - 0.01))
def test_pano_round_trip(yaw, pitch):
    d = np.array([math.cos(pitch) * math.cos(yaw), -math.cos(pitch) * math.sin(yaw), math.sin(pitch)])
    back = direction_of_pano_pixel(pano_pixel_of_direction(d, 2048, 1024), 2048, 1024)
    assert np.abs(back - d).max() < 1e-9


def test_pano_image_requires_twice_as_wide():
    PanoImage(np.zeros((4, 8)))
    with pytest.raises(ValueError):
        PanoImage(np.zeros((4, 6)))


def test_constant_pano_gives_constant_view():
    pano = PanoImage(np.full((64, 128), 0.25))
    for yaw in (0.0, 1.0, -2.5):
        img, _ = extract_rectilinear(pano, yaw, 0.0, math.pi / 2, 32)
        assert np.allclose(img, 0.25, atol=1e-12)


def test_view_intrinsics_from_fov():
    _, k = extract_rectilinear(PanoImage(np.zeros((16, 32))), 0.0, 0.0, math.pi / 2, 512)
    assert (k.fx, k.fy, k.cx, k.cy) == pytest.approx((256, 256, 256, 256))


def test_bright_pixel_lands_at_view_center():
    H, W = 512, 1024
    px = np.zeros((H, W))
    px[H // 2, W // 2] = 1.0
    img, k = extract_rectilinear(PanoImage(px), 0.0, 0.0, math.pi / 2, 257)
    iy, ix = np.unravel_index(np.argmax(img), img.shape)
    assert abs(ix - k.cx) <= 1 and abs(iy - k.cy) <= 1


def test_bad_fov():
    pano = PanoImage(np.zeros((16, 32)))
    for fov in (0.0, math.pi, -1.0):
        with pytest.raises(BadFov):
            extract_rectilinear(pano, 0.0, 0.0, fov, 8)


def test_standard_views_layout():
    views = standard_views(PanoImage(np.zeros((32, 64))), out_size=16)
    assert len(views) == 8
    yaws = np.array([v.yaw for v in views])
    assert np.allclose(np.diff(yaws), math.pi / 4)
    assert all(v.pitch == 0.0 and v.fov == pytest.approx(math.pi / 2) for v in views)
    f0, f4 = views[0].rotation[:, 2], views[4].rotation[:, 2]
    assert np.allclose(f0, -f4)


def test_adjacent_standard_views_share_half_their_field():
    views = standard_views(None, out_size=16)
    for a, b in zip(views, views[1:] + views[:1]):
        ang = math.acos(np.clip(a.rotation[:, 2] @ b.rotation[:, 2], -1, 1))
        assert math.pi / 2 - ang == pytest.approx(math.pi / 4)


@settings(max_examples=50, deadline=None)
@given(yaw=st.floats(-math.pi, math.pi), pitch=st.floats(-0.5, 0.5))
def test_view_rays_reproject_onto_sampled_pano_pixels(yaw, pitch):
    from svloc.geometry import view_sampling_map

    W, H, n = 512, 256, 24
    mu, mv, k = view_sampling_map(yaw, pitch, math.pi / 2, n, W, H)
    jj, ii = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float))
    rays = pixel_directions(k, np.column_stack([jj.ravel(), ii.ravel()]))
    dirs = rays @ view_rotation(yaw, pitch).T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    uv = pano_pixel_of_direction(dirs, W, H)
    du = np.abs(uv[:, 0] - mu.ravel())
    du = np.minimum(du, W - du)
    assert du.max() < 0.5 and np.abs(uv[:, 1] - mv.ravel()).max() < 0.5


def test_view_rotation_is_proper():
    for yaw in np.linspace(0, 2 * math.pi, 9):
        R = view_rotation(yaw, 0.2)
        assert np.allclose(R.T @ R, np.eye(3)) and np.linalg.det(R) == pytest.approx(1.0)


def test_level_rig_rotation_turns_clockwise():
    # camera forward of view 0 after a quarter turn equals view 2's forward at zero turn
    R0 = level_rig_rotation(0.0) @ view_rotation(math.pi / 2)
    R1 = level_rig_rotation(math.pi / 2) @ view_rotation(0.0)
    assert np.allclose(R0, R1, atol=1e-12)
