"""Synthetic multi-view stall scenes with known pose, appearance and background.

A stick/ellipsoid quadruped with 8 joints is rendered by four corner cameras.
Subject identity only changes the palette and coat pattern. A positive bag
contains episodes of the hind-left leg held above ``MOTIF_THRESHOLD``; the leg
never gets there during normal behavior.

All randomness is drawn from Philox streams keyed on ``(seed, purpose, ...)``
so any frame can be regenerated in isolation.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .geometry import CameraView, axis_angle_matrix, look_at, read_rig, write_rig

log = logging.getLogger(__name__)

N_JOINTS = 8
JOINT_NAMES = ("withers", "rump", "head", "foot_fl", "foot_fr", "foot_hl", "foot_hr", "tail")

# pose vector: root x/y then the articulation angles
ANGLE_NAMES = ("yaw", "leg_hl", "head_pitch", "leg_fl", "leg_fr", "leg_hr", "tail")
POSE_NAMES = ("root_x", "root_y") + ANGLE_NAMES
ROOT_SLICE = slice(0, 2)
ANGLE_SLICE = slice(2, None)
YAW = 2
LEG_HL = 3
NEUTRAL_POSE = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.8])
POSE_LIMITS = np.array(
    [
        [-1.2, 1.2],
        [-1.2, 1.2],
        [-np.pi, np.pi],
        [-0.6, 1.4],
        [-1.2, 0.9],
        [-0.6, 0.6],
        [-0.6, 0.6],
        [-0.6, 0.6],
        [0.2, 1.5],
    ]
)
NORMAL_HL_RANGE = 0.45
MOTIF_THRESHOLD = 0.8
MOTIF_EPISODE_S = 5.0

_BG, _TRAJ, _NOISE, _PLANT, _PALETTE = 1, 2, 3, 4, 5

_PALETTES = [
    # body, legs, head, mane/tail, pattern
    ((0.62, 0.30, 0.12), (0.25, 0.12, 0.05), (0.55, 0.27, 0.11), (0.30, 0.14, 0.06), (0.80, 0.45, 0.20)),
    ((0.10, 0.10, 0.11), (0.06, 0.06, 0.06), (0.14, 0.13, 0.13), (0.03, 0.03, 0.03), (0.25, 0.25, 0.27)),
    ((0.88, 0.87, 0.83), (0.70, 0.70, 0.68), (0.92, 0.91, 0.88), (0.60, 0.58, 0.55), (0.65, 0.66, 0.70)),
    ((0.42, 0.22, 0.12), (0.08, 0.06, 0.05), (0.40, 0.21, 0.12), (0.05, 0.04, 0.04), (0.95, 0.95, 0.93)),
    ((0.86, 0.70, 0.38), (0.80, 0.66, 0.40), (0.84, 0.68, 0.36), (0.96, 0.93, 0.82), (0.70, 0.52, 0.25)),
    ((0.58, 0.58, 0.60), (0.30, 0.30, 0.32), (0.62, 0.62, 0.64), (0.85, 0.85, 0.86), (0.82, 0.82, 0.84)),
    ((0.30, 0.18, 0.30), (0.20, 0.10, 0.18), (0.35, 0.20, 0.33), (0.10, 0.05, 0.10), (0.70, 0.50, 0.70)),
    ((0.20, 0.35, 0.45), (0.10, 0.18, 0.25), (0.22, 0.38, 0.48), (0.05, 0.10, 0.15), (0.55, 0.75, 0.85)),
]


class SynthDataError(ValueError):
    pass


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for one (seed, purpose, ...) key."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class SceneConfig:
    n_subjects: int = 8
    n_views: int = 4
    image_resolution: tuple[int, int] = (128, 128)
    pose_dof: int = len(ANGLE_NAMES)
    seed: int = 0
    fps: float = 2.0
    noise_sigma: float = 0.01
    shared_stall: bool = False

    def __post_init__(self):
        self.image_resolution = tuple(int(v) for v in self.image_resolution)
        if self.n_views < 2:
            raise SynthDataError("n_views must be >= 2")
        if not 2 <= self.pose_dof <= len(ANGLE_NAMES):
            raise SynthDataError(f"pose_dof must be in [2, {len(ANGLE_NAMES)}]")
        if self.n_subjects < 1:
            raise SynthDataError("n_subjects must be >= 1")
        if min(self.image_resolution) < 16:
            raise SynthDataError("image_resolution too small")
        if self.fps <= 0:
            raise SynthDataError("fps must be positive")


@dataclass
class Palette:
    body: np.ndarray
    legs: np.ndarray
    head: np.ndarray
    mane: np.ndarray
    pattern: np.ndarray
    stripe_freq: float
    stripe_cut: float


@dataclass
class GroundTruthFrame:
    pose_params: np.ndarray
    subject_id: int
    view_id: int
    timestamp: float
    image: np.ndarray  # H x W x 3 float32 in [0, 1]
    keypoints_2d: np.ndarray  # 8 x 2 pixels in this view
    behavior_flag: bool
    box: tuple[float, float, float, float]  # silhouette bounding box x0 y0 x1 y1
    mask: np.ndarray | None = None  # figure coverage in [0, 1]


@dataclass
class Sequence:
    sequence_id: str
    subject_id: int
    label: int  # 1 pain / positive, 0 no-pain
    positive_fraction: float
    timestamps: np.ndarray
    poses: np.ndarray  # T x 9
    flags: np.ndarray  # T bool
    frames: dict[int, list[GroundTruthFrame]] = field(default_factory=dict)  # view_id -> frames


def subject_palette(subject_id: int, seed: int = 0) -> Palette:
    if subject_id < len(_PALETTES):
        body, legs, head, mane, pat = (np.array(c) for c in _PALETTES[subject_id])
    else:
        rng = stream(seed, _PALETTE, subject_id)
        body = rng.uniform(0.05, 0.95, 3)
        legs = np.clip(body * rng.uniform(0.3, 1.0), 0, 1)
        head = np.clip(body + rng.normal(0, 0.05, 3), 0, 1)
        mane = rng.uniform(0.0, 1.0, 3)
        pat = rng.uniform(0.0, 1.0, 3)
    freq = 6.0 + 2.0 * (subject_id % 4)
    cut = 0.55 + 0.1 * ((subject_id // 4) % 3)
    return Palette(body, legs, head, mane, pat, freq, cut)


def pose_is_valid(pose: np.ndarray) -> bool:
    pose = np.asarray(pose, dtype=np.float64)
    return (
        pose.shape == (len(POSE_NAMES),)
        and bool(np.all(np.isfinite(pose)))
        and bool(np.all(pose >= POSE_LIMITS[:, 0] - 1e-9))
        and bool(np.all(pose <= POSE_LIMITS[:, 1] + 1e-9))
    )


def _yaw_matrix(yaw: float) -> np.ndarray:
    return axis_angle_matrix(np.array([0.0, 0.0, 1.0]), yaw)


def skeleton(pose: np.ndarray) -> np.ndarray:
    """World positions of the 8 joints, ``(8, 3)``."""
    rx, ry, yaw, hl, head, fl, fr, hr, tail = pose
    withers = np.array([0.55, 0.0, 1.15])
    rump = np.array([-0.6, 0.0, 1.1])
    head_pt = withers + 0.75 * np.array([np.cos(head), 0.0, np.sin(head)])
    L = 1.0

    def foot(hip, a):
        return hip + L * np.array([np.sin(a), 0.0, -np.cos(a)])

    pts = np.stack(
        [
            withers,
            rump,
            head_pt,
            foot(np.array([0.5, 0.18, 1.0]), fl),
            foot(np.array([0.5, -0.18, 1.0]), fr),
            foot(np.array([-0.5, 0.18, 1.0]), hl),
            foot(np.array([-0.5, -0.18, 1.0]), hr),
            rump + 0.6 * np.array([-np.cos(tail), 0.0, -np.sin(tail)]),
        ]
    )
    return pts @ _yaw_matrix(yaw).T + np.array([rx, ry, 0.0])


def _hips(pose: np.ndarray) -> np.ndarray:
    hips = np.array([[0.5, 0.18, 1.0], [0.5, -0.18, 1.0], [-0.5, 0.18, 1.0], [-0.5, -0.18, 1.0]])
    return hips @ _yaw_matrix(pose[YAW]).T + np.array([pose[0], pose[1], 0.0])


def make_rig(config: SceneConfig) -> list[CameraView]:
    """Cameras evenly spaced around the stall, high up, aimed at its center."""
    W, H = config.image_resolution
    f = 0.5 * W / np.tan(np.deg2rad(42.0))
    views = []
    for v in range(config.n_views):
        ang = np.pi / 4 + 2 * np.pi * v / config.n_views
        eye = [2.7 * np.cos(ang), 2.7 * np.sin(ang), 2.6 + 0.1 * (v % 2)]
        R, t = look_at(eye, [0.0, 0.0, 0.7])
        views.append(CameraView.from_pinhole(v, R, f, f, (W - 1) / 2, (H - 1) / 2, t))
    return views


def _smooth_noise(rng, shape, scale):
    n = rng.standard_normal(shape).astype(np.float32)
    k = max(3, int(scale) | 1)
    return cv2.GaussianBlur(n, (k, k), scale / 2.5)


def make_background(config: SceneConfig, stall_id: int, view_id: int) -> np.ndarray:
    """Procedural stall background for the base (un-nudged) camera."""
    W, H = config.image_resolution
    rng = stream(config.seed, _BG, stall_id, view_id)
    wall = rng.uniform(0.3, 0.8, 3)
    floor = rng.uniform(0.15, 0.6, 3)
    horizon = int(H * rng.uniform(0.3, 0.5))
    img = np.empty((H, W, 3), np.float32)
    rows = np.arange(H)[:, None]
    img[:] = np.where(rows[..., None] < horizon, wall, floor)
    grad = (rows / H - 0.5)[..., None] * rng.uniform(-0.2, 0.2)
    img += grad.astype(np.float32)
    for _ in range(int(rng.integers(3, 6))):
        x0, y0 = rng.integers(0, W), rng.integers(0, H)
        w, h = rng.integers(W // 10, W // 3), rng.integers(H // 10, H // 3)
        img[y0 : y0 + h, x0 : x0 + w] = rng.uniform(0.05, 0.95, 3)
    tex = _smooth_noise(rng, (H, W), 6.0)
    img += 0.06 * tex[..., None]
    return np.clip(img, 0.0, 1.0)


class Scene:
    """Rig, backgrounds and renderer for one configuration."""

    def __init__(self, config: SceneConfig, rig: list[CameraView] | None = None):
        self.config = config
        self.rig = rig if rig is not None else make_rig(config)
        self._bg: dict[tuple[int, int], np.ndarray] = {}
        W, H = config.image_resolution
        self._u, self._v = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))

    def base_view(self, view_id: int) -> CameraView:
        return self.rig[view_id]

    def stall_of(self, subject_id: int) -> int:
        return 0 if self.config.shared_stall else subject_id

    def background(self, stall_id: int, view: CameraView) -> np.ndarray:
        key = (stall_id, view.view_id)
        if key not in self._bg:
            self._bg[key] = make_background(self.config, stall_id, view.view_id)
        base = self.base_view(view.view_id)
        bg = self._bg[key]
        if np.array_equal(view.rotation, base.rotation):
            return bg
        # same center, rotated camera: the background moves by K dR K^-1
        K = base.intrinsics
        dR = view.rotation @ base.rotation.T
        Hm = K @ dR @ np.linalg.inv(K)
        W, H = self.config.image_resolution
        return cv2.warpPerspective(bg, Hm, (W, H), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT)

    # -- rendering ---------------------------------------------------------

    def _capsule(self, view, A, B, radius):
        a, b = view.project(np.stack([A, B]))
        za, zb = view.depth(np.stack([A, B]))
        f = view.intrinsics[0, 0]
        ra, rb = f * radius / za, f * radius / zb
        ab = b - a
        L2 = max(float(ab @ ab), 1e-12)
        s = np.clip(((self._u - a[0]) * ab[0] + (self._v - a[1]) * ab[1]) / L2, 0.0, 1.0)
        dx = self._u - (a[0] + s * ab[0])
        dy = self._v - (a[1] + s * ab[1])
        d = np.sqrt(dx * dx + dy * dy)
        r = ra + s * (rb - ra)
        alpha = np.clip(r - d + 0.5, 0.0, 1.0)
        shade = 1.0 - 0.35 * np.clip(d / np.maximum(r, 1e-6), 0, 1) ** 2
        return alpha, shade, 0.5 * (za + zb)

    def _ellipsoid(self, view, center, axes, Ryaw, palette):
        K_inv = np.linalg.inv(view.intrinsics)
        rays_cam = np.stack([self._u, self._v, np.ones_like(self._u)], -1) @ K_inv.T
        rays_world = rays_cam @ view.rotation  # R^T applied per row
        C = view.center
        # ellipsoid-local unit-sphere coordinates
        o = ((C - center) @ Ryaw) / axes
        d = (rays_world @ Ryaw) / axes
        dd = np.sum(d * d, -1)
        od = d @ o
        tmin = -od / dd
        closest = o + tmin[..., None] * d
        rho = np.linalg.norm(closest, axis=-1)
        f = view.intrinsics[0, 0]
        z = view.depth(center)
        r_pix = f * float(np.mean(axes[1:])) / z
        alpha = np.clip((1.0 - rho) * r_pix + 0.5, 0.0, 1.0)
        disc = np.clip(od * od - dd * (o @ o - 1.0), 0.0, None)
        t_hit = (-od - np.sqrt(disc)) / dd
        p_local = o + t_hit[..., None] * d  # on unit sphere where hit
        normal_world = (p_local / axes) @ Ryaw.T
        normal_world /= np.linalg.norm(normal_world, axis=-1, keepdims=True) + 1e-12
        light = np.array([0.3, 0.2, 0.93])
        shade = 0.55 + 0.45 * np.clip(normal_world @ light, 0, 1)
        stripe = np.sin(palette.stripe_freq * p_local[..., 0] + 2.0 * p_local[..., 2]) > palette.stripe_cut
        color = np.where(stripe[..., None], palette.pattern, palette.body)
        return alpha, shade, color, z

    def render(self, pose, subject_id, view: CameraView, background_id=None, noise_key=None):
        """Return ``(image, mask)`` for one pose in one view."""
        pose = np.asarray(pose, dtype=np.float64)
        pal = subject_palette(subject_id, self.config.seed)
        stall = self.stall_of(subject_id) if background_id is None else background_id
        img = self.background(stall, view).astype(np.float64).copy()
        mask = np.zeros(img.shape[:2])
        J = skeleton(pose)
        hips = _hips(pose)
        Ryaw = _yaw_matrix(pose[YAW])
        body_center = np.array([pose[0], pose[1], 0.0]) + Ryaw @ np.array([-0.02, 0.0, 1.08])
        prims = []
        leg_cols = [pal.legs] * 4
        for h, foot_idx, col in zip(hips, (3, 4, 5, 6), leg_cols):
            prims.append(("cap", (h, J[foot_idx], 0.07), col))
        prims.append(("cap", (J[0], J[2], 0.10), pal.mane))
        prims.append(("cap", (J[2] - 0.001 * (J[2] - J[0]), J[2], 0.15), pal.head))
        prims.append(("cap", (J[1], J[7], 0.05), pal.mane))
        layers = []
        for kind, args, col in prims:
            alpha, shade, z = self._capsule(view, *args)
            layers.append((z, alpha, shade[..., None] * col))
        alpha, shade, color, z = self._ellipsoid(view, body_center, np.array([0.78, 0.27, 0.30]), Ryaw, pal)
        layers.append((z, alpha, shade[..., None] * color))
        for z, alpha, color in sorted(layers, key=lambda l: -l[0]):
            a = alpha[..., None]
            img = img * (1 - a) + color * a
            mask = np.maximum(mask, alpha)
        if noise_key is not None and self.config.noise_sigma > 0:
            rng = stream(self.config.seed, _NOISE, *noise_key)
            img = img + rng.normal(0.0, self.config.noise_sigma, img.shape)
        return np.clip(img, 0.0, 1.0).astype(np.float32), mask.astype(np.float32)

    def render_frame(
        self,
        pose_params,
        subject_id: int,
        view: CameraView,
        background_id=None,
        *,
        timestamp: float = 0.0,
        behavior_flag: bool = False,
        noise_key=None,
    ) -> GroundTruthFrame:
        pose = np.asarray(pose_params, dtype=np.float64)
        if not pose_is_valid(pose):
            raise SynthDataError(f"pose parameters outside joint limits: {pose}")
        image, mask = self.render(pose, subject_id, view, background_id, noise_key)
        kp = view.project(skeleton(pose))
        ys, xs = np.nonzero(mask > 0.5)
        if len(xs):
            box = (float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))
        else:
            box = (float(kp[:, 0].min()), float(kp[:, 1].min()), float(kp[:, 0].max()), float(kp[:, 1].max()))
        return GroundTruthFrame(
            pose, int(subject_id), view.view_id, float(timestamp), image, kp, bool(behavior_flag), box, mask
        )

    # -- sequences -----------------------------------------------------------

    def trajectory(self, n_frames: int, positive_fraction: float, rng: np.random.Generator):
        """Smooth pose track ``(T, 9)`` and behavior flags ``(T,)``."""
        fps = self.config.fps
        T = n_frames
        t = np.arange(T) / fps

        def track(period_s, low, high, wrap=False):
            n_knots = int(np.ceil(T / fps / period_s)) + 2
            knot_t = (np.arange(n_knots) - 0.5) * period_s + rng.uniform(0, period_s)
            if wrap:
                vals = np.cumsum(rng.uniform(low, high, n_knots))
            else:
                vals = rng.uniform(low, high, n_knots)
            # cosine interpolation between knots
            idx = np.clip(np.searchsorted(knot_t, t) - 1, 0, n_knots - 2)
            frac = np.clip((t - knot_t[idx]) / (knot_t[idx + 1] - knot_t[idx]), 0, 1)
            w = 0.5 - 0.5 * np.cos(np.pi * frac)
            return vals[idx] * (1 - w) + vals[idx + 1] * w

        pose = np.tile(NEUTRAL_POSE, (T, 1))
        pose[:, 0] = track(8.0, -0.9, 0.9)
        pose[:, 1] = track(8.0, -0.9, 0.9)
        yaw = track(6.0, -2.0, 2.0, wrap=True) + rng.uniform(-np.pi, np.pi)
        pose[:, YAW] = (yaw + np.pi) % (2 * np.pi) - np.pi
        speed = np.hypot(np.gradient(pose[:, 0]), np.gradient(pose[:, 1])) * fps
        phase = np.cumsum(2.0 + 6.0 * speed) / fps + rng.uniform(0, 2 * np.pi)
        gait = 0.15 + 0.25 * np.clip(speed / 0.3, 0, 1)
        pose[:, 4] = track(4.0, -1.1, 0.8)
        pose[:, 5] = gait * np.sin(phase) + track(5.0, -0.1, 0.1)
        pose[:, 6] = gait * np.sin(phase + np.pi) + track(5.0, -0.1, 0.1)
        pose[:, LEG_HL] = np.clip(gait * np.sin(phase + np.pi) + track(5.0, -0.1, 0.1), -NORMAL_HL_RANGE, NORMAL_HL_RANGE)
        pose[:, 7] = gait * np.sin(phase) + track(5.0, -0.1, 0.1)
        pose[:, 8] = track(3.0, 0.3, 1.4)
        # articulation beyond pose_dof stays neutral
        n_active = self.config.pose_dof
        for j in range(n_active, len(ANGLE_NAMES)):
            pose[:, 2 + j] = NEUTRAL_POSE[2 + j]
        flags = motif_mask(T, positive_fraction, int(round(MOTIF_EPISODE_S * fps)), rng)
        if flags.any():
            starts = np.flatnonzero(flags & ~np.r_[False, flags[:-1]])
            ends = np.flatnonzero(flags & ~np.r_[flags[1:], False])
            for s, e in zip(starts, ends):
                L = e - s + 1
                ph = (np.arange(L) + 0.5) / L
                pose[s : e + 1, LEG_HL] = 0.95 + 0.3 * np.sin(np.pi * ph)
        pose = np.clip(pose, POSE_LIMITS[:, 0], POSE_LIMITS[:, 1])
        return pose, flags

    def generate_sequence(
        self,
        subject_id: int,
        duration: float,
        positive_fraction: float,
        *,
        sequence_index: int = 0,
        views=None,
        render: bool = True,
        t0: float = 0.0,
    ) -> Sequence:
        fps = self.config.fps
        if duration * fps < 10 * fps - 1e-9:
            raise SynthDataError("duration must be >= 10 s")
        if not 0.0 <= positive_fraction <= 1.0:
            raise SynthDataError("positive_fraction must be in [0, 1]")
        T = int(round(duration * fps))
        rng = stream(self.config.seed, _TRAJ, subject_id, sequence_index)
        poses, flags = self.trajectory(T, positive_fraction, rng)
        ts = t0 + np.arange(T) / fps
        label = int(positive_fraction > 0)
        seq = Sequence(
            f"s{subject_id:02d}_q{sequence_index:03d}", subject_id, label, positive_fraction, ts, poses, flags
        )
        if render:
            view_ids = range(self.config.n_views) if views is None else views
            for v in view_ids:
                view = self.rig[v]
                seq.frames[v] = [
                    self.render_frame(
                        poses[n],
                        subject_id,
                        view,
                        timestamp=ts[n],
                        behavior_flag=bool(flags[n]),
                        noise_key=(subject_id, sequence_index, v, n),
                    )
                    for n in range(T)
                ]
        return seq


def motif_mask(T: int, positive_fraction: float, episode: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask with exactly ``round(f * T)`` flagged frames in episodes."""
    m = int(round(positive_fraction * T))
    flags = np.zeros(T, dtype=bool)
    if m == 0:
        return flags
    episode = max(1, episode)
    n_ep = int(np.ceil(m / episode))
    lengths = [episode] * (n_ep - 1) + [m - episode * (n_ep - 1)]
    free = T - m
    # random split of the free frames into n_ep + 1 gaps, inner gaps >= 1 when possible
    inner_min = 1 if free >= n_ep - 1 else 0
    spare = free - inner_min * (n_ep - 1)
    cuts = np.sort(rng.integers(0, spare + 1, n_ep))
    gaps = np.diff(np.r_[0, cuts, spare])
    gaps[1:-1] += inner_min
    pos = 0
    for g, L in zip(gaps[:-1], lengths):
        pos += g
        flags[pos : pos + L] = True
        pos += L
    return flags


def render_frame(pose_params, subject_id, view, background_id=None, *, scene: Scene, **kw) -> GroundTruthFrame:
    return scene.render_frame(pose_params, subject_id, view, background_id, **kw)


def generate_sequence(config: SceneConfig, duration: float, positive_fraction: float, **kw) -> Sequence:
    subject_id = kw.pop("subject_id", 0)
    return Scene(config).generate_sequence(subject_id, duration, positive_fraction, **kw)


def pose_angle_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mean absolute joint-angle difference (radians), yaw wrapped."""
    a = np.asarray(a)[..., ANGLE_SLICE]
    b = np.asarray(b)[..., ANGLE_SLICE]
    d = np.abs(a - b)
    d[..., 0] = np.minimum(d[..., 0], 2 * np.pi - d[..., 0])
    return d.mean(-1)


# -- planted-signal features ------------------------------------------------

class PlantedFeatureMap:
    """Fixed random lift of pose angles into 600-d pose-latent-like features.

    Stands in for a trained encoder when only the classification head is under
    test: the behavior motif is linearly hidden inside a nuisance-heavy code.
    """

    def __init__(self, seed: int, dim: int = 600, n_basis: int = 64, noise: float = 0.3, subject_shift: float = 0.3):
        rng = stream(seed, _PLANT, 0)
        n_in = 2 * len(ANGLE_NAMES)
        self.W1 = rng.normal(0, 1.5, (n_basis, n_in))
        self.b1 = rng.uniform(-np.pi, np.pi, n_basis)
        self.W2 = rng.normal(0, 1.0 / np.sqrt(n_basis), (dim, n_basis))
        self.seed = seed
        self.dim = dim
        self.noise = noise
        self.subject_shift = subject_shift

    def __call__(self, poses: np.ndarray, subject_id: int, key: tuple[int, ...]) -> np.ndarray:
        ang = np.asarray(poses)[:, ANGLE_SLICE]
        x = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
        h = np.cos(x @ self.W1.T + self.b1)
        feats = h @ self.W2.T
        shift = stream(self.seed, _PLANT, 1, subject_id).normal(0, self.subject_shift, self.dim)
        noise = stream(self.seed, _PLANT, 2, *key).normal(0, self.noise, feats.shape)
        return (feats + shift + noise).astype(np.float32)


# -- dataset manifest ---------------------------------------------------------

MANIFEST_FIELDS = [
    "sequence_id",
    "subject_id",
    "label",
    "timestamp",
    "view_id",
    "image_path",
    "behavior_flag",
    "keypoints",
    "box",
    "pose_params",
]


def _join(values) -> str:
    return ";".join(format(float(v), ".17g") for v in np.asarray(values).reshape(-1))


def _split(text: str) -> np.ndarray | None:
    if text is None or text == "":
        return None
    return np.array([float(x) for x in text.split(";")])


def write_dataset(root: str | Path, scene: Scene, sequences: list[Sequence]) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    write_rig(root / "rig.txt", scene.rig)
    (root / "scene.json").write_text(json.dumps(asdict(scene.config), indent=2, sort_keys=True) + "\n")
    with open(root / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for seq in sequences:
            for v in sorted(seq.frames):
                for n, fr in enumerate(seq.frames[v]):
                    rel = f"images/{seq.sequence_id}/v{v}_{n:05d}.png"
                    path = root / rel
                    path.parent.mkdir(parents=True, exist_ok=True)
                    bgr = (np.round(fr.image[..., ::-1] * 255)).astype(np.uint8)
                    cv2.imwrite(str(path), bgr)
                    w.writerow(
                        [
                            seq.sequence_id,
                            seq.subject_id,
                            seq.label,
                            format(fr.timestamp, ".17g"),
                            v,
                            rel,
                            int(fr.behavior_flag),
                            _join(fr.keypoints_2d),
                            _join(fr.box),
                            _join(fr.pose_params),
                        ]
                    )
    return root / "manifest.csv"


@dataclass
class ManifestRow:
    sequence_id: str
    subject_id: int
    label: int
    timestamp: float
    view_id: int
    image_path: str
    behavior_flag: bool | None
    keypoints: np.ndarray | None
    box: np.ndarray | None
    pose_params: np.ndarray | None


def read_manifest(path: str | Path) -> list[ManifestRow]:
    """Read a manifest; flags, keypoints, boxes and poses are optional columns."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"sequence_id", "subject_id", "label", "timestamp", "view_id", "image_path"} - set(
            reader.fieldnames or []
        )
        if missing:
            raise SynthDataError(f"manifest missing columns: {sorted(missing)}")
        for r in reader:
            flag = r.get("behavior_flag", "")
            kp = _split(r.get("keypoints", ""))
            rows.append(
                ManifestRow(
                    r["sequence_id"],
                    int(r["subject_id"]),
                    int(r["label"]),
                    float(r["timestamp"]),
                    int(r["view_id"]),
                    r["image_path"],
                    None if flag in ("", None) else bool(int(flag)),
                    None if kp is None else kp.reshape(-1, 2),
                    _split(r.get("box", "")),
                    _split(r.get("pose_params", "")),
                )
            )
    return rows


def load_dataset(root: str | Path):
    """Return ``(scene, rows)`` from a dataset directory."""
    root = Path(root)
    cfg = json.loads((root / "scene.json").read_text())
    config = SceneConfig(**cfg)
    scene = Scene(config, read_rig(root / "rig.txt"))
    return scene, read_manifest(root / "manifest.csv")


def load_image(root: str | Path, rel: str) -> np.ndarray:
    bgr = cv2.imread(str(Path(root) / rel), cv2.IMREAD_COLOR)
    if bgr is None:
        raise FileNotFoundError(Path(root) / rel)
    return bgr[..., ::-1].astype(np.float32) / 255.0


def load_sequences(root: str | Path) -> tuple[Scene, list[Sequence]]:
    """Rebuild rendered sequences (images loaded, masks absent) from a dataset directory.

    Columns that a manifest omits come back as NaN poses / unflagged frames.
    """
    scene, rows = load_dataset(root)
    grouped: dict[str, list[ManifestRow]] = {}
    for r in rows:
        grouped.setdefault(r.sequence_id, []).append(r)
    sequences = []
    for sid, seq_rows in grouped.items():
        views = sorted({r.view_id for r in seq_rows})
        by_view = {v: sorted((r for r in seq_rows if r.view_id == v), key=lambda r: r.timestamp) for v in views}
        ref = by_view[views[0]]
        ts = np.array([r.timestamp for r in ref])
        if any(not np.array_equal([r.timestamp for r in by_view[v]], ts) for v in views):
            raise SynthDataError(f"sequence {sid}: views disagree on timestamps")
        poses = np.array([r.pose_params if r.pose_params is not None else np.full(len(POSE_NAMES), np.nan) for r in ref])
        flags = np.array([bool(r.behavior_flag) for r in ref])
        seq = Sequence(sid, ref[0].subject_id, ref[0].label, float(flags.mean()), ts, poses, flags)
        for v in views:
            seq.frames[v] = [
                GroundTruthFrame(
                    poses[n], r.subject_id, v, r.timestamp, load_image(root, r.image_path),
                    r.keypoints, bool(r.behavior_flag), None if r.box is None else tuple(r.box),
                )
                for n, r in enumerate(by_view[v])
            ]
        sequences.append(seq)
    return scene, sequences
