import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from painpose.geometry import (
    CameraView,
    CropSpec,
    GeometryError,
    adjust_rotation_for_crop,
    apply_homography,
    axis_angle_matrix,
    crop_ray,
    crop_shear_homography,
    look_at,
    random_rotation,
    read_rig,
    relative_rotation,
    rotate_pose,
    virtual_rotation,
    write_rig,
)


def make_view(view_id, R, f=100.0, cx=63.5, cy=63.5, t=None):
    return CameraView.from_pinhole(view_id, R, f, f, cx, cy, t)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_relative_rotation_identity(rng):
    v = make_view(0, random_rotation(rng))
    np.testing.assert_allclose(relative_rotation(v, v), np.eye(3), atol=1e-15)


def test_relative_rotation_composes(rng):
    vi, vj, vk = (make_view(n, random_rotation(rng)) for n in range(3))
    Rij = relative_rotation(vi, vj)
    Rjk = relative_rotation(vj, vk)
    np.testing.assert_allclose(Rjk @ Rij, relative_rotation(vi, vk), atol=1e-12)


def test_relative_rotation_orthonormal_and_antisymmetric(rng):
    for _ in range(50):
        a, b = make_view(0, random_rotation(rng)), make_view(1, random_rotation(rng))
        R = relative_rotation(a, b)
        # explicit product, not a library orthogonality check
        prod = np.array([[sum(R[r, m] * R[c, m] for m in range(3)) for c in range(3)] for r in range(3)])
        assert np.max(np.abs(prod - np.eye(3))) < 1e-12
        np.testing.assert_allclose(relative_rotation(b, a), R.T, atol=1e-15)


def test_non_orthonormal_rejected():
    with pytest.raises(GeometryError):
        make_view(0, np.diag([1.0, 1.0, 1.1]))
    with pytest.raises(GeometryError):
        make_view(0, np.diag([1.0, 1.0, -1.0]))


def test_intrinsics_validation():
    K = np.array([[100.0, 0, 10], [0, 100, 10], [0, 0, 2.0]])
    with pytest.raises(GeometryError):
        CameraView(0, np.eye(3), K)


def test_rotate_pose_identity_exact(rng):
    P = rng.standard_normal((200, 3))
    assert np.array_equal(rotate_pose(P, np.eye(3)), P)


def test_rotate_pose_round_trip(rng):
    P = rng.standard_normal((200, 3))
    R = random_rotation(rng)
    np.testing.assert_allclose(rotate_pose(rotate_pose(P, R), R.T), P, atol=1e-9)


def test_rotate_pose_axis_convention():
    Rz = axis_angle_matrix(np.array([0.0, 0.0, 1.0]), np.pi / 2)
    P = np.zeros((200, 3))
    P[0] = [1.0, 0.0, 0.0]
    out = rotate_pose(P, Rz)
    np.testing.assert_allclose(out[0], [0.0, 1.0, 0.0], atol=1e-12)


def test_rotate_pose_flat_layout(rng):
    P = rng.standard_normal((200, 3))
    R = random_rotation(rng)
    np.testing.assert_array_equal(rotate_pose(P.reshape(-1), R), rotate_pose(P, R).reshape(-1))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_rotate_pose_isometry(seed):
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((200, 3)) * 3
    out = rotate_pose(P, random_rotation(rng))
    d_in = np.linalg.norm(P[:, None] - P[None], axis=-1)
    d_out = np.linalg.norm(out[:, None] - out[None], axis=-1)
    assert np.max(np.abs(d_in - d_out)) < 1e-9
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), np.linalg.norm(P, axis=1), atol=1e-9)


def test_homography_at_principal_point_is_scale_translation():
    v = make_view(0, np.eye(3), f=120.0, cx=50.0, cy=40.0)
    crop = CropSpec((50.0, 40.0), (32.0, 16.0), (64, 64))
    H = crop_shear_homography(v, crop)
    np.testing.assert_array_equal(virtual_rotation(v, crop), np.eye(3))
    expected = np.array([[2.0, 0, 31.5 - 100.0], [0, 4.0, 31.5 - 160.0], [0, 0, 1.0]])
    np.testing.assert_allclose(H, expected, atol=1e-12)


def test_homography_maps_center_and_is_invertible(rng):
    v = make_view(0, random_rotation(rng), f=90.0)
    crop = CropSpec((20.0, 100.0), (30.0, 30.0), (64, 64))
    H = crop_shear_homography(v, crop)
    x = H @ np.array([20.0, 100.0, 1.0])
    np.testing.assert_allclose(x[:2] / x[2], [31.5, 31.5], atol=1e-6)
    np.testing.assert_allclose(np.linalg.inv(H) @ H, np.eye(3), atol=1e-9)


def test_homography_matches_virtual_camera_projection(rng):
    # a point projected by the crop-adjusted virtual camera lands where H sends
    # its original projection
    R, t = look_at([3.0, -3.0, 2.5], [0.0, 0.0, 0.8])
    v = make_view(1, R, f=110.0, t=t)
    X = np.array([0.4, 0.3, 0.9])
    crop = CropSpec(tuple(v.project(X)), (40.0, 40.0), (64, 64))
    H = crop_shear_homography(v, crop)
    from painpose.geometry import crop_intrinsics

    virt = adjust_rotation_for_crop(v, crop)
    virt_k = CameraView(1, virt.rotation, crop_intrinsics(v, crop), virt.translation)
    np.testing.assert_allclose(apply_homography(H, v.project(X)), virt_k.project(X), atol=1e-9)
    np.testing.assert_allclose(virt_k.project(X), [31.5, 31.5], atol=1e-9)


def test_adjust_rotation_at_principal_point_is_identity(rng):
    v = make_view(0, random_rotation(rng), cx=60.0, cy=70.0)
    assert adjust_rotation_for_crop(v, CropSpec((60.0, 70.0), (20, 20))) == v


def test_adjusted_views_relate_rays(rng):
    # concentric cameras: rays (not just directions) are related by rotation alone
    X = rng.standard_normal(3)
    X[2] = 0.0
    for _ in range(20):
        views = []
        for n in range(2):
            R, _ = look_at([0, 0, 0], X + rng.normal(scale=0.3, size=3))
            views.append(make_view(n, R))
        adj = []
        rays = []
        for v in views:
            crop = CropSpec(tuple(v.project(X) + rng.normal(scale=3, size=2)), (30, 30))
            a = adjust_rotation_for_crop(v, crop)
            adj.append(a)
            ray = a.rotation @ X
            rays.append(ray / np.linalg.norm(ray))
        R = relative_rotation(adj[0], adj[1])
        np.testing.assert_allclose(R @ rays[0], rays[1], atol=1e-6)
        assert np.max(np.abs(adj[0].rotation @ adj[0].rotation.T - np.eye(3))) < 1e-9


def test_ray_alignment(rng):
    v = make_view(0, random_rotation(rng), f=80.0)
    crop = CropSpec((5.0, 120.0), (20, 20))
    aligned = virtual_rotation(v, crop) @ crop_ray(v, crop)
    angle = np.arctan2(np.linalg.norm(np.cross(aligned, [0, 0, 1])), aligned[2])
    assert angle < 1e-7


def test_rig_round_trip_bit_exact(tmp_path, rng):
    views = []
    for n in range(4):
        R = random_rotation(rng)
        views.append(
            CameraView.from_pinhole(n, R, *(rng.uniform(50, 200, 2)), *(rng.uniform(0, 128, 2)), rng.normal(size=3))
        )
    path = tmp_path / "rig.txt"
    write_rig(path, views)
    back = read_rig(path)
    assert back == views
    write_rig(tmp_path / "rig2.txt", back)
    assert (tmp_path / "rig2.txt").read_bytes() == path.read_bytes()


def test_rig_without_translation(tmp_path):
    (tmp_path / "r.txt").write_text("3 1 0 0 0 1 0 0 0 1 100 100 32 32\n")
    (v,) = read_rig(tmp_path / "r.txt")
    assert v.view_id == 3 and np.array_equal(v.translation, np.zeros(3))
    np.testing.assert_array_equal(v.principal_point, [32.0, 32.0])
