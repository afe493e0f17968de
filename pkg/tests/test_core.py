import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldmap.core import (
    ImagePoint,
    PointCloud,
    PoseSE3,
    SeedKeypoint,
    StereoCamera,
    concatenate,
    fit_ellipse,
    pose_error,
    project,
    read_ply,
    se3_apply,
    se3_compose,
    se3_inverse,
    stereo_project,
    transform_cloud,
    triangulate,
    triangulate_many,
    voxel_downsample,
    write_ply,
)
from fieldmap.core.camera import depth_sigma
from fieldmap.errors import BehindCamera, DegenerateMask, NonPositiveDisparity, NonUnitQuaternion

CAM = StereoCamera()

finite = st.floats(-1.0, 1.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)


@st.composite
def poses(draw):
    rv = np.array(draw(vec3)) * np.pi / np.sqrt(3)
    t = np.array(draw(vec3)) * 5.0
    return PoseSE3.from_rotvec(rv, t)


# -- triangulation and projection ------------------------------------------


def test_triangulate_on_axis():
    p = triangulate(ImagePoint(CAM.cx, CAM.cy), ImagePoint(CAM.cx - 50, CAM.cy), CAM)
    np.testing.assert_allclose(p, [0.0, 0.0, 1.0], atol=1e-12)


def test_triangulate_off_axis():
    cam = StereoCamera(cx=320, cy=320, image_size=(640, 640))
    p = triangulate(ImagePoint(370, 320), ImagePoint(320, 320), cam)
    np.testing.assert_allclose(p, [0.1, 0.0, 1.0], atol=1e-12)


@pytest.mark.parametrize("d", [0.0, 0.5, -3.0])
def test_triangulate_rejects_small_disparity(d):
    with pytest.raises(NonPositiveDisparity):
        triangulate(ImagePoint(300, 200), ImagePoint(300 - d, 200), CAM)


def test_triangulate_many_flags_invalid_rows():
    pts, valid = triangulate_many([[320, 240], [320, 240]], [[270, 240], [320, 240]], CAM)
    assert valid.tolist() == [True, False]
    np.testing.assert_allclose(pts[0], [0, 0, 1.0])
    assert np.isnan(pts[1]).all()


def test_project_optical_axis():
    assert project((0, 0, 1), CAM) == ImagePoint(CAM.cx, CAM.cy)


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_project_behind_camera(z):
    with pytest.raises(BehindCamera):
        project((0, 0, z), CAM)


def test_project_right_side_shift():
    left = project((0.2, 0.1, 2.0), CAM, "left")
    right = project((0.2, 0.1, 2.0), CAM, "right")
    assert left.u - right.u == pytest.approx(CAM.fx * CAM.baseline / 2.0)
    assert left.v == right.v


@settings(max_examples=200, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1001, 20.0))
def test_projection_round_trip(x, y, z):
    p = np.array([x, y, z])
    q = triangulate(project(p, CAM, "left"), project(p, CAM, "right"), CAM, d_min=0.0)
    assert np.linalg.norm(q - p) < 1e-6


def test_stereo_project_matches_scalar_projection():
    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.uniform(-1, 1, 20), rng.uniform(-1, 1, 20), rng.uniform(0.5, 5, 20)])
    z = stereo_project(pts, CAM)
    for p, m in zip(pts, z):
        left, right = project(p, CAM, "left"), project(p, CAM, "right")
        np.testing.assert_allclose(m, [left.u, left.v, right.u], atol=1e-9)


def test_depth_sigma_grows_quadratically():
    s1, s2 = depth_sigma([1.0, 2.0], CAM, 1.0)
    assert s2 == pytest.approx(4 * s1)


def test_camera_validation():
    with pytest.raises(ValueError):
        StereoCamera(baseline=0.0)
    with pytest.raises(ValueError):
        StereoCamera(cx=700)


# -- ellipse fit -------------------------------------------------------------


def test_ellipse_disk():
    vv, uu = np.mgrid[0:101, 0:101]
    mask = (uu - 50) ** 2 + (vv - 50) ** 2 <= 100
    e = fit_ellipse(mask)
    assert e.center == pytest.approx((50, 50), abs=1e-9)
    assert e.semi_axes == pytest.approx((10, 10), abs=0.5)


def test_ellipse_single_pixel():
    mask = np.zeros((10, 10), bool)
    mask[3, 4] = True
    with pytest.raises(DegenerateMask):
        fit_ellipse(mask)


def test_ellipse_collinear_pixels():
    mask = np.zeros((10, 10), bool)
    mask[5, 1:9] = True
    with pytest.raises(DegenerateMask):
        fit_ellipse(mask)


def test_ellipse_rectangle():
    mask = np.zeros((80, 80), bool)
    mask[35:45, 20:40] = True  # 20 wide (u), 10 tall (v), centre (29.5, 39.5)
    rows, cols = np.nonzero(mask)
    e = fit_ellipse(mask)
    assert e.center == pytest.approx((cols.mean(), rows.mean()), abs=1e-12)
    assert e.rotation == pytest.approx(0.0, abs=1e-6)
    assert e.semi_axes[0] > e.semi_axes[1]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 29), st.integers(0, 29)), min_size=5, max_size=200, unique=True))
def test_ellipse_center_is_pixel_centroid(pixels):
    mask = np.zeros((30, 30), bool)
    for r, c in pixels:
        mask[r, c] = True
    rows, cols = np.nonzero(mask)
    try:
        e = fit_ellipse(mask)
    except DegenerateMask:
        return
    assert e.center.u == cols.astype(float).sum() / len(cols)
    assert e.center.v == rows.astype(float).sum() / len(rows)


# -- clouds ------------------------------------------------------------------


def test_voxel_merges_close_points():
    out = voxel_downsample(PointCloud([[0.001, 0.001, 0.001], [0.011, 0.001, 0.001]]), 0.03)
    assert len(out) == 1
    np.testing.assert_allclose(out.points[0], [0.006, 0.001, 0.001])


def test_voxel_grid_unchanged():
    g = np.arange(5) * 0.05 + 0.01
    pts = np.stack(np.meshgrid(g, g, g), -1).reshape(-1, 3)
    assert len(voxel_downsample(PointCloud(pts), 0.03)) == len(pts)


def test_voxel_unit_cube_bound():
    pts = np.random.default_rng(0).uniform(0, 1, (1000, 3))
    out = voxel_downsample(PointCloud(pts), 0.5)
    occupied = {tuple(k) for k in np.floor(pts / 0.5).astype(int)}
    assert len(out) == len(occupied) <= 8


def test_voxel_empty_and_invalid():
    assert len(voxel_downsample(PointCloud.empty(), 0.1)) == 0
    with pytest.raises(ValueError):
        voxel_downsample(PointCloud([[0, 0, 0]]), 0.0)


def test_voxel_averages_colors():
    out = voxel_downsample(PointCloud([[0, 0, 0], [0.01, 0, 0]], [[0, 0, 0], [100, 50, 20]]), 0.1)
    assert out.colors.tolist() == [[50, 25, 10]]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.5))
def test_voxel_idempotent(seed, cell):
    pts = np.random.default_rng(seed).uniform(-1, 1, (300, 3))
    once = voxel_downsample(PointCloud(pts), cell)
    twice = voxel_downsample(once, cell)
    assert len(twice) <= len(once) <= len(pts)
    np.testing.assert_allclose(twice.points, once.points, atol=1e-12)


def test_pointcloud_rejects_bad_input():
    with pytest.raises(ValueError):
        PointCloud([[0, 0, np.nan]])
    with pytest.raises(ValueError):
        PointCloud([[0, 0]])


def test_ply_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    cloud = PointCloud(rng.uniform(-1, 1, (50, 3)), rng.integers(0, 256, (50, 3)))
    path = tmp_path / "c.ply"
    write_ply(path, cloud)
    text = path.read_text()
    assert "element vertex 50" in text and "property uchar red" in text
    back = read_ply(path)
    np.testing.assert_allclose(back.points, cloud.points, atol=1e-9)
    assert (back.colors == cloud.colors).all()


def test_ply_empty(tmp_path):
    write_ply(tmp_path / "e.ply", PointCloud.empty())
    assert len(read_ply(tmp_path / "e.ply")) == 0


def test_concatenate_and_transform():
    a = PointCloud([[0, 0, 0]])
    b = PointCloud([[1, 0, 0], [0, 1, 0]])
    assert len(concatenate([a, PointCloud.empty(), b])) == 3
    moved = transform_cloud(b, PoseSE3(translation=(0, 0, 1)))
    np.testing.assert_allclose(moved.points[:, 2], 1.0)


# -- SE3 ---------------------------------------------------------------------


def test_quarter_yaw():
    P = PoseSE3.from_rotvec([0, 0, np.pi / 2])
    np.testing.assert_allclose(P.apply([1, 0, 0]), [0, 1, 0], atol=1e-9)


def test_non_unit_quaternion():
    with pytest.raises(NonUnitQuaternion):
        PoseSE3((1.0, 0.01, 0.0, 0.0))
    q = PoseSE3((1.0 + 1e-8, 0, 0, 0))  # renormalised within tolerance
    assert q.rotation[0] == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(poses())
def test_identity_and_inverse(P):
    I = PoseSE3.identity()
    assert se3_compose(I, P).allclose(P)
    assert se3_compose(P, se3_inverse(P)).allclose(I)
    assert abs(np.linalg.norm(P.rotation) - 1.0) < 1e-9


@settings(max_examples=100, deadline=None)
@given(poses(), poses(), poses())
def test_associativity(a, b, c):
    assert se3_compose(se3_compose(a, b), c).allclose(se3_compose(a, se3_compose(b, c)), atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(poses(), vec3)
def test_apply_inverse(P, x):
    x = np.array(x) * 10
    np.testing.assert_allclose(se3_apply(se3_inverse(P), se3_apply(P, x)), x, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(poses(), poses())
def test_compose_matches_matrices(a, b):
    np.testing.assert_allclose(se3_compose(a, b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-9)


def test_pose_error_values():
    a = PoseSE3.from_rotvec([0, 0, 0.1], (1, 0, 0))
    et, er = pose_error(a, PoseSE3.identity())
    assert et == pytest.approx(1.0)
    assert er == pytest.approx(0.1)


def test_keypoint_validation():
    kp = SeedKeypoint((3, 4))
    assert (kp.u, kp.v) == (3.0, 4.0)
    with pytest.raises(ValueError):
        SeedKeypoint((3, 4), side="top")
    with pytest.raises(ValueError):
        SeedKeypoint((3, 4), bbox=(5, 0, 10, 10))
