"""Rotation algebra and crop normalization for the viewpoint-covariant pose latent.

Conventions
-----------
* ``CameraView.rotation`` maps world coordinates into the camera frame:
  ``x_cam = R @ x_world + t``.
* A pose latent is a ``(200, 3)`` array whose rows are 3-vectors. Rotating the
  latent by ``R`` maps every row as ``row -> R @ row`` (``P @ R.T`` in matrix
  form).
* Pixel coordinates put pixel centers on integers, so the center of a
  ``W x H`` output crop is ``((W - 1) / 2, (H - 1) / 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

POSE_ROWS = 200
POSE_DIM = 3
ORTHO_TOL = 1e-8


class GeometryError(ValueError):
    """Raised for invalid cameras, crops or rotations."""


def check_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise GeometryError(f"rotation must be 3x3, got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise GeometryError("rotation has non-finite entries")
    if np.max(np.abs(R @ R.T - np.eye(3))) > tol:
        raise GeometryError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise GeometryError("rotation has det != +1")
    return R


@dataclass(frozen=True)
class CameraView:
    view_id: int
    rotation: np.ndarray
    intrinsics: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = check_rotation(self.rotation)
        K = np.asarray(self.intrinsics, dtype=np.float64)
        if K.shape != (3, 3):
            raise GeometryError(f"intrinsics must be 3x3, got {K.shape}")
        if K[2, 2] != 1.0 or np.any(K[1:, 0] != 0) or K[2, 1] != 0:
            raise GeometryError("intrinsics must be upper triangular with K[2,2] = 1")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise GeometryError("focal lengths must be positive")
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_pinhole(cls, view_id, rotation, fx, fy, cx, cy, translation=None):
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        if translation is None:
            translation = np.zeros(3)
        return cls(int(view_id), rotation, K, translation)

    @property
    def principal_point(self) -> np.ndarray:
        return self.intrinsics[:2, 2].copy()

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def project(self, points_world: np.ndarray) -> np.ndarray:
        """Project ``(..., 3)`` world points to ``(..., 2)`` pixels."""
        X = np.asarray(points_world, dtype=np.float64)
        cam = X @ self.rotation.T + self.translation
        uvw = cam @ self.intrinsics.T
        return uvw[..., :2] / uvw[..., 2:3]

    def depth(self, points_world: np.ndarray) -> np.ndarray:
        X = np.asarray(points_world, dtype=np.float64)
        return (X @ self.rotation.T + self.translation)[..., 2]

    def __eq__(self, other):
        if not isinstance(other, CameraView):
            return NotImplemented
        return (
            self.view_id == other.view_id
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.intrinsics, other.intrinsics)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


@dataclass(frozen=True)
class CropSpec:
    center: tuple[float, float]
    size: tuple[float, float]
    output_resolution: tuple[int, int] = (64, 64)

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        s = tuple(float(v) for v in self.size)
        r = tuple(int(v) for v in self.output_resolution)
        if len(c) != 2 or len(s) != 2 or len(r) != 2:
            raise GeometryError("crop fields must be 2-vectors")
        if min(s) <= 0 or min(r) <= 0:
            raise GeometryError("crop size and output resolution must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "output_resolution", r)

    @classmethod
    def from_box(cls, box, output_resolution=(64, 64), margin: float = 1.0):
        """Square crop around an ``(x0, y0, x1, y1)`` box."""
        x0, y0, x1, y1 = (float(v) for v in box)
        side = max(x1 - x0, y1 - y0) * margin
        return cls(((x0 + x1) / 2, (y0 + y1) / 2), (side, side), output_resolution)


def relative_rotation(src: CameraView, dst: CameraView) -> np.ndarray:
    """Rotation taking camera-``src`` coordinates to camera-``dst`` coordinates."""
    return dst.rotation @ src.rotation.T


def rotate_pose(pose: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Apply ``row -> R @ row`` to every row of a ``(n, 3)`` pose latent.

    A flat 600-vector is accepted and returned in the same layout.
    """
    R = check_rotation(R)
    P = np.asarray(pose, dtype=np.float64)
    flat = P.ndim == 1
    if flat:
        if P.size % POSE_DIM:
            raise GeometryError(f"flat pose of size {P.size} is not a multiple of 3")
        P = P.reshape(-1, POSE_DIM)
    if P.ndim != 2 or P.shape[1] != POSE_DIM:
        raise GeometryError(f"pose must be (n, 3), got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise GeometryError("pose latent has non-finite entries")
    out = P @ R.T
    return out.reshape(-1) if flat else out


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues formula for a unit ``axis``."""
    k = np.asarray(axis, dtype=np.float64)
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * Kx + (1 - np.cos(angle)) * (Kx @ Kx)


def align_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking direction ``a`` onto direction ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    cross = np.cross(a, b)
    s = np.linalg.norm(cross)
    c = float(a @ b)
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        raise GeometryError("antiparallel directions have no unique minimal rotation")
    # atan2 keeps full precision for tiny angles where arccos does not
    return axis_angle_matrix(cross / s, np.arctan2(s, c))


def crop_ray(view: CameraView, crop: CropSpec) -> np.ndarray:
    """Unit back-projected ray through the crop center, camera frame."""
    u, v = crop.center
    d = np.linalg.solve(view.intrinsics, np.array([u, v, 1.0]))
    if d[2] <= 0:
        raise GeometryError("crop center back-projects behind the camera")
    return d / np.linalg.norm(d)


def virtual_rotation(view: CameraView, crop: CropSpec) -> np.ndarray:
    """Rotation of the camera frame that points the optical axis at the crop center."""
    return align_rotation(crop_ray(view, crop), np.array([0.0, 0.0, 1.0]))


def crop_intrinsics(view: CameraView, crop: CropSpec) -> np.ndarray:
    """Intrinsics of the virtual camera that renders the crop at output resolution."""
    W, H = crop.output_resolution
    sx = W / crop.size[0]
    sy = H / crop.size[1]
    K = view.intrinsics
    return np.array(
        [
            [K[0, 0] * sx, K[0, 1] * sx, (W - 1) / 2.0],
            [0.0, K[1, 1] * sy, (H - 1) / 2.0],
            [0.0, 0.0, 1.0],
        ]
    )


def crop_shear_homography(view: CameraView, crop: CropSpec) -> np.ndarray:
    """Pixel homography from the source frame to the crop-normalized output.

    ``H = K_crop @ R_virt @ K^-1``: the camera is rotated so its axis passes
    through the crop center, then the window is scaled to the output size.
    """
    R_virt = virtual_rotation(view, crop)
    return crop_intrinsics(view, crop) @ R_virt @ np.linalg.inv(view.intrinsics)


def adjust_rotation_for_crop(view: CameraView, crop: CropSpec) -> CameraView:
    """Virtual camera aimed at the crop center (same center, same intrinsics)."""
    R_virt = virtual_rotation(view, crop)
    if np.array_equal(R_virt, np.eye(3)):
        return view
    return CameraView(
        view.view_id,
        R_virt @ view.rotation,
        view.intrinsics,
        R_virt @ view.translation,
    )


def apply_homography(H: np.ndarray, points: np.ndarray) -> np.ndarray:
    P = np.asarray(points, dtype=np.float64)
    ph = np.concatenate([P, np.ones(P.shape[:-1] + (1,))], axis=-1) @ H.T
    return ph[..., :2] / ph[..., 2:3]


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation (QR of a Gaussian matrix with sign fix)."""
    Q, Rm = np.linalg.qr(rng.standard_normal((3, 3)))
    Q = Q * np.sign(np.diag(Rm))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def look_at(eye: Sequence[float], target: Sequence[float], up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera ``(R, t)`` for a camera at ``eye`` looking at ``target``.

    Camera axes: x right, y down, z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return R, -R @ eye


# -- rig manifest -----------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_rig(path: str | Path, views: Iterable[CameraView]) -> None:
    """One line per view: id, 9 rotation entries, fx fy cx cy, tx ty tz."""
    lines = ["# view_id r00 r01 r02 r10 r11 r12 r20 r21 r22 fx fy cx cy tx ty tz"]
    for v in views:
        K = v.intrinsics
        vals = list(v.rotation.reshape(-1)) + [K[0, 0], K[1, 1], K[0, 2], K[1, 2]]
        vals += list(v.translation)
        lines.append(" ".join([str(v.view_id)] + [_fmt(x) for x in vals]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_rig(path: str | Path) -> list[CameraView]:
    views = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (14, 17):
            raise GeometryError(f"bad rig record ({len(parts)} fields): {line!r}")
        vals = [float(x) for x in parts[1:]]
        R = np.array(vals[:9]).reshape(3, 3)
        fx, fy, cx, cy = vals[9:13]
        t = np.array(vals[13:16]) if len(vals) == 16 else None
        views.append(CameraView.from_pinhole(int(parts[0]), R, fx, fy, cx, cy, t))
    return views
