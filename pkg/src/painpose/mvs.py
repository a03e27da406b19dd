"""Multi-view synthesis backbone: encoder, decoder, loss and training loop.

The encoder maps a crop-normalized image to a pose latent ``(rows, 3)`` and an
appearance vector. The decoder renders a target view from the pose latent
rotated into that view, an appearance vector taken from another time step of
the same subject and view, and the target view's background.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .geometry import (
    CameraView,
    CropSpec,
    adjust_rotation_for_crop,
    apply_homography,
    crop_shear_homography,
    relative_rotation,
)
from .preprocess import compute_flow_magnitude, select_top_motion, windowed_backgrounds

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "painpose-checkpoint"
CHECKPOINT_VERSION = 1
MIN_SELECTED = 2  # selected frames kept per session at minimum


class MVSError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MVSConfig:
    resolution: int = 64
    pose_rows: int = 200
    appearance_dim: int = 128
    channels: tuple = (16, 32, 64, 128)
    epochs: int = 50
    lr: float = 1e-3
    alpha: float = 2.0
    batch_size: int = 16
    no_appearance_swap: bool = False
    no_background_input: bool = False
    uniform_sampling: bool = False
    seed: int = 0
    perceptual_seed: int = 1234
    composite: bool = False
    batch_norm: bool = True
    steps_per_epoch: int | None = None

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        r = self.resolution
        if r < 8 or r & (r - 1):
            raise MVSError("resolution must be a power of two >= 8")
        if len(self.channels) < self.n_down:
            raise MVSError(f"need {self.n_down} channel entries for resolution {r}")
        if self.pose_rows < 1 or self.appearance_dim < 1:
            raise MVSError("latent sizes must be positive")
        if self.epochs < 1 or self.lr <= 0 or self.batch_size < 1 or self.alpha < 0:
            raise MVSError("invalid optimization hyperparameters")

    @property
    def n_down(self) -> int:
        return int(round(math.log2(self.resolution // 4)))

    def arch(self) -> dict:
        return dict(
            resolution=self.resolution,
            pose_rows=self.pose_rows,
            appearance_dim=self.appearance_dim,
            channels=list(self.channels[: self.n_down]),
            perceptual_seed=self.perceptual_seed,
            composite=self.composite,
            batch_norm=self.batch_norm,
        )


@dataclass
class EncoderOutput:
    pose: torch.Tensor  # B x rows x 3
    appearance: torch.Tensor  # B x appearance_dim


@dataclass
class MVSLossReport:
    mse: torch.Tensor
    perceptual: torch.Tensor
    total: torch.Tensor
    alpha: float

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("mse", "perceptual", "total")} | {"alpha": self.alpha}


def _conv(i, o, norm=False):
    layers = [nn.Conv2d(i, o, 3, padding=1)]
    if norm:
        layers.append(nn.BatchNorm2d(o))
    return nn.Sequential(*layers, nn.ReLU())


class Encoder(nn.Module):
    """Contracting path down to a 4x4 bottleneck with separate pose/appearance heads."""

    def __init__(self, resolution, channels, pose_rows, appearance_dim, norm=False):
        super().__init__()
        layers, c_in = [], 3
        for c in channels:
            layers += [_conv(c_in, c, norm), nn.MaxPool2d(2)]
            c_in = c
        self.features = nn.Sequential(*layers)
        flat = c_in * 16
        self.pose_head = nn.Linear(flat, pose_rows * 3)
        self.app_head = nn.Linear(flat, appearance_dim)
        self.pose_rows = pose_rows

    def forward(self, x):
        h = self.features(x).flatten(1)
        return self.pose_head(h).view(-1, self.pose_rows, 3), self.app_head(h)


class Decoder(nn.Module):
    """Expanding path; appearance joins at the bottleneck, background at full resolution."""

    def __init__(self, resolution, channels, pose_rows, appearance_dim, composite=False, norm=False):
        super().__init__()
        self.composite = composite
        up = list(reversed(channels))
        self.c0 = up[0]
        self.fc = nn.Linear(pose_rows * 3, up[0] * 16)
        layers, c_in = [], up[0] + appearance_dim
        for c in up:
            layers += [_conv(c_in, c, norm), nn.Upsample(scale_factor=2, mode="nearest")]
            c_in = c
        self.expand = nn.Sequential(*layers)
        self.out = nn.Sequential(_conv(c_in + 3, c_in, norm), nn.Conv2d(c_in, 4 if composite else 3, 3, padding=1))

    def forward(self, pose, appearance, background):
        B = pose.shape[0]
        z = torch.relu(self.fc(pose.reshape(B, -1))).view(B, self.c0, 4, 4)
        a = appearance[:, :, None, None].expand(-1, -1, 4, 4)
        h = self.expand(torch.cat([z, a], dim=1))
        out = self.out(torch.cat([h, background], dim=1))
        if not self.composite:
            return torch.sigmoid(out)
        # foreground color and coverage, alpha-blended over the background input
        alpha = torch.sigmoid(out[:, 3:])
        return alpha * torch.sigmoid(out[:, :3]) + (1 - alpha) * background


class FeatureExtractor(nn.Module):
    """Frozen, randomly initialized conv stack standing in for a pretrained network.

    Features are taken before any pooling.
    """

    def __init__(self, seed: int = 1234, channels=(16, 32, 32)):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        layers, c_in = [], 3
        for c in channels:
            conv = nn.Conv2d(c_in, c, 3, stride=2, padding=1)
            with torch.no_grad():
                fan_in = c_in * 9
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) * math.sqrt(2.0 / fan_in))
                conv.bias.zero_()
            layers += [conv, nn.ReLU()]
            c_in = c
        self.net = nn.Sequential(*layers)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        return super().train(False)

    def forward(self, x):
        return self.net(x).flatten(1)


class MVSModel(nn.Module):
    def __init__(self, config: MVSConfig):
        super().__init__()
        self.config = config
        ch = config.channels[: config.n_down]
        self.encoder = Encoder(config.resolution, ch, config.pose_rows, config.appearance_dim, config.batch_norm)
        self.decoder = Decoder(config.resolution, ch, config.pose_rows, config.appearance_dim, config.composite,
                               config.batch_norm)
        self.features = FeatureExtractor(config.perceptual_seed)

    def _check_images(self, x):
        R = self.config.resolution
        if x.dim() != 4 or x.shape[1:] != (3, R, R):
            raise MVSError(f"expected (B, 3, {R}, {R}) images, got {tuple(x.shape)}")

    def encode(self, images: torch.Tensor) -> EncoderOutput:
        self._check_images(images)
        pose, app = self.encoder(images)
        return EncoderOutput(pose, app)

    def decode(self, pose, appearance, background) -> torch.Tensor:
        B = pose.shape[0]
        cfg = self.config
        if pose.shape[1:] != (cfg.pose_rows, 3) or appearance.shape != (B, cfg.appearance_dim):
            raise MVSError("latent shapes do not match the model")
        self._check_images(background)
        if cfg.no_background_input:
            background = torch.zeros_like(background)
        return self.decoder(pose, appearance, background)


def rotate_latent(pose: torch.Tensor, R: torch.Tensor) -> torch.Tensor:
    """Batched ``row -> R @ row``; ``pose`` is ``(B, rows, 3)``, ``R`` is ``(B, 3, 3)``."""
    return pose @ R.transpose(1, 2)


def mvs_loss(predicted, target, feature_extractor, alpha: float = 2.0) -> MVSLossReport:
    if predicted.shape != target.shape:
        raise MVSError("predicted and target shapes differ")
    mse = ((predicted - target) ** 2).flatten(1).mean(1)
    fp, ft = feature_extractor(predicted), feature_extractor(target)
    perceptual = ((fp - ft) ** 2).mean(1)
    total = mse + alpha * perceptual
    return MVSLossReport(mse.mean(), perceptual.mean(), total.mean(), alpha)


# -- numpy <-> torch ----------------------------------------------------------

def to_tensor(images: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """``(..., H, W, 3)`` uint8 or float images to ``(B, 3, H, W)`` floats in [0, 1]."""
    x = np.asarray(images)
    if x.dtype == np.uint8:
        x = x.astype(np.float32) / 255.0
    if x.ndim == 3:
        x = x[None]
    return torch.as_tensor(np.ascontiguousarray(x.transpose(0, 3, 1, 2)), dtype=dtype)


def to_images(x: torch.Tensor) -> np.ndarray:
    return x.detach().cpu().numpy().transpose(0, 2, 3, 1)


def encode(model: MVSModel, images, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode encoding of ``(N, R, R, 3)`` images.

    Returns ``(pose (N, rows, 3), appearance (N, dim))`` as float64 arrays.
    """
    model.eval()
    imgs = np.asarray(images)
    if imgs.ndim == 3:
        imgs = imgs[None]
    poses, apps = [], []
    with torch.no_grad():
        for s in range(0, len(imgs), batch_size):
            out = model.encode(to_tensor(imgs[s : s + batch_size], next(model.parameters()).dtype))
            poses.append(out.pose.double().numpy())
            apps.append(out.appearance.double().numpy())
    return np.concatenate(poses), np.concatenate(apps)


def decode(model: MVSModel, pose, appearance, background) -> np.ndarray:
    model.eval()
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        p = torch.as_tensor(np.asarray(pose), dtype=dtype)
        a = torch.as_tensor(np.asarray(appearance), dtype=dtype)
        if p.dim() == 2:
            p, a = p[None], a[None]
        out = model.decode(p, a, to_tensor(background, dtype))
    return to_images(out)


# -- dataset -------------------------------------------------------------------

@dataclass
class MVSDataset:
    """Crop-normalized multi-view frames, indexed ``[frame, view]``."""

    crops: np.ndarray  # N x V x R x R x 3 uint8
    backgrounds: np.ndarray  # N x V x R x R x 3 uint8, target-view background per frame
    views: list  # N lists of V crop-adjusted CameraViews
    subject_ids: np.ndarray  # N
    timestamps: np.ndarray  # N
    selected: np.ndarray  # N bool, motion-selected frames
    poses: np.ndarray | None = None  # N x 9 ground truth (synthetic)
    masks: np.ndarray | None = None  # N x V x R x R uint8 coverage (synthetic)
    keypoints: np.ndarray | None = None  # N x V x 8 x 2 crop pixels (synthetic)
    flags: np.ndarray | None = None
    base_rotations: np.ndarray | None = None  # V x 3 x 3 un-cropped camera rotations
    sequence_ids: np.ndarray | None = None  # N

    @property
    def n_views(self) -> int:
        return self.crops.shape[1]

    def subset(self, keep: np.ndarray) -> "MVSDataset":
        keep = np.asarray(keep)
        idx = np.flatnonzero(keep) if keep.dtype == bool else keep

        def pick(a):
            return None if a is None else a[idx]

        return MVSDataset(
            self.crops[idx],
            self.backgrounds[idx],
            [self.views[i] for i in idx],
            self.subject_ids[idx],
            self.timestamps[idx],
            self.selected[idx],
            pick(self.poses),
            pick(self.masks),
            pick(self.keypoints),
            pick(self.flags),
            self.base_rotations,
            pick(self.sequence_ids),
        )

    def relative_rotation(self, n: int, i: int, j: int) -> np.ndarray:
        return relative_rotation(self.views[n][i], self.views[n][j])


def _warp(img, H, R, interp=cv2.INTER_AREA):
    return cv2.warpPerspective(img, H, (R, R), flags=interp | cv2.WARP_INVERSE_MAP, borderMode=cv2.BORDER_REPLICATE)


def crop_frame(image: np.ndarray, view: CameraView, box, resolution: int, margin: float = 1.25):
    """Crop-shear ``image`` around ``box``; returns ``(crop, homography, virtual view)``."""
    crop = CropSpec.from_box(box, (resolution, resolution), margin)
    H = crop_shear_homography(view, crop)
    # warpPerspective samples dst(x) = src(H^-1 x); pass H^-1 with WARP_INVERSE_MAP
    out = _warp(image, np.linalg.inv(H), resolution)
    return out, H, adjust_rotation_for_crop(view, crop)


def build_mvs_dataset(
    scene,
    sequences,
    resolution: int = 64,
    motion_percent: float = 1.0,
    background_window_s: float | None = None,
    global_background: bool = False,
    crop_margin: float = 1.25,
) -> MVSDataset:
    """Crop, background and motion-score rendered synthetic sequences.

    Backgrounds are temporal medians per (subject, view) and time window, or
    per view over the whole corpus when ``global_background`` is set. Motion
    selection keeps the top ``motion_percent`` of each session's frames by
    flow magnitude averaged over views (at least ``MIN_SELECTED``).
    """
    V = len(scene.rig)
    crops, bgs, views, subj, ts, sel, poses, masks, kps, flags, seq_ids = ([] for _ in range(11))
    global_bgs = None
    if global_background:
        global_bgs = []
        for v in range(V):
            frames = [fr.image for seq in sequences for fr in seq.frames[v]]
            global_bgs.append(np.median(np.stack(frames), axis=0).astype(np.float32))
    for seq in sequences:
        T = len(seq.timestamps)
        win_idx, win_bgs = [], []
        scores = []
        for v in range(V):
            frames = [fr.image for fr in seq.frames[v]]
            if global_bgs is None:
                idx, bg_list = windowed_backgrounds(frames, seq.timestamps, background_window_s)
            else:
                idx, bg_list = np.zeros(T, dtype=int), [global_bgs[v]]
            win_idx.append(idx)
            win_bgs.append(bg_list)
            scores += compute_flow_magnitude(frames, seq.timestamps, v)
        top = select_top_motion(scores, motion_percent)
        if len(top) < MIN_SELECTED and scores:
            # short sessions: keep the highest-motion timestamps so t' != t stays satisfiable
            mean = {}
            for sc in scores:
                mean.setdefault(sc.timestamp, []).append(sc.magnitude)
            ranked = sorted(mean, key=lambda t: (-np.mean(mean[t]), t))
            top = set(ranked[:MIN_SELECTED])
        for n in range(T):
            c_row, b_row, v_row, m_row, k_row = [], [], [], [], []
            for v in range(V):
                fr = seq.frames[v][n]
                crop, H, virt = crop_frame(fr.image, scene.rig[v], fr.box, resolution, crop_margin)
                bg = _warp(win_bgs[v][win_idx[v][n]], np.linalg.inv(H), resolution)
                c_row.append(np.round(crop * 255).astype(np.uint8))
                b_row.append(np.round(bg * 255).astype(np.uint8))
                v_row.append(virt)
                if fr.mask is not None:
                    m = _warp(fr.mask, np.linalg.inv(H), resolution, cv2.INTER_LINEAR)
                    m_row.append(np.round(np.clip(m, 0, 1) * 255).astype(np.uint8))
                if fr.keypoints_2d is not None:
                    k_row.append(apply_homography(H, fr.keypoints_2d))
            crops.append(c_row)
            bgs.append(b_row)
            views.append(v_row)
            masks.append(m_row)
            kps.append(k_row)
            subj.append(seq.subject_id)
            ts.append(seq.timestamps[n])
            sel.append(float(seq.timestamps[n]) in top)
            poses.append(seq.poses[n])
            flags.append(seq.flags[n])
            seq_ids.append(seq.sequence_id)
    return MVSDataset(
        np.asarray(crops),
        np.asarray(bgs),
        views,
        np.asarray(subj),
        np.asarray(ts, dtype=np.float64),
        np.asarray(sel, dtype=bool),
        np.asarray(poses, dtype=np.float64),
        np.asarray(masks) if all(len(m) == V for m in masks) else None,
        np.asarray(kps) if all(len(k) == V for k in kps) else None,
        np.asarray(flags, dtype=bool),
        np.stack([v.rotation for v in scene.rig]),
        np.asarray(seq_ids),
    )


# -- batches ---------------------------------------------------------------------

@dataclass
class SynthesisBatch:
    input: torch.Tensor  # x_{i,t}
    target: torch.Tensor  # x_{j,t}
    swap: torch.Tensor  # x_{i,t'}
    background: torch.Tensor  # background of view j, cropped like the target
    rotation: torch.Tensor  # R_{i->j}
    frame: np.ndarray
    swap_frame: np.ndarray
    view_in: np.ndarray
    view_out: np.ndarray


def usable_frames(dataset: MVSDataset, subjects=None, uniform: bool = False) -> dict[int, np.ndarray]:
    """Per-subject frame indices eligible for sampling (>= 2 per subject)."""
    pool = np.ones(len(dataset.subject_ids), bool) if uniform else dataset.selected
    out = {}
    for s in np.unique(dataset.subject_ids):
        if subjects is not None and s not in subjects:
            continue
        idx = np.flatnonzero(pool & (dataset.subject_ids == s))
        if len(idx) < 2:
            log.warning("subject %s has %d usable frames; skipped", s, len(idx))
            continue
        out[int(s)] = idx
    return out


def make_training_batch(dataset: MVSDataset, frames_by_subject: dict, rng: np.random.Generator, batch_size: int = 16, frames=None, dtype=torch.float32) -> SynthesisBatch:
    """Sample ``(t, t', i, j)`` tuples: views uniform over ordered pairs, ``t' != t``."""
    if not frames_by_subject:
        raise MVSError("no subject has two usable frames")
    if frames is None:
        allowed = np.concatenate(list(frames_by_subject.values()))
        frames = rng.choice(allowed, batch_size)
    V = dataset.n_views
    owner = {int(n): s for s, idx in frames_by_subject.items() for n in idx}
    i = rng.integers(0, V, len(frames))
    j = rng.integers(0, V, len(frames))
    swap = np.empty(len(frames), dtype=int)
    for b, n in enumerate(frames):
        pool = frames_by_subject[owner[int(n)]]
        choice = pool[rng.integers(len(pool) - 1)]
        # skip t itself without rejection sampling
        swap[b] = choice if choice != n else pool[-1]
    R = np.stack([dataset.relative_rotation(n, a, c) for n, a, c in zip(frames, i, j)])
    return SynthesisBatch(
        to_tensor(dataset.crops[frames, i], dtype),
        to_tensor(dataset.crops[frames, j], dtype),
        to_tensor(dataset.crops[swap, i], dtype),
        to_tensor(dataset.backgrounds[frames, j], dtype),
        torch.as_tensor(R, dtype=dtype),
        np.asarray(frames),
        swap,
        i,
        j,
    )


def synthesize(model: MVSModel, batch: SynthesisBatch, swap_appearance: bool = True) -> torch.Tensor:
    enc = model.encode(batch.input)
    app = model.encode(batch.swap).appearance if swap_appearance else enc.appearance
    return model.decode(rotate_latent(enc.pose, batch.rotation), app, batch.background)


# -- training -----------------------------------------------------------------------

@dataclass
class LossRecord:
    epoch: int
    mse: float
    perceptual: float
    total: float


@dataclass
class MVSTrainResult:
    model: MVSModel
    curve: list[LossRecord]
    train_subjects: list[int]
    held_out: list[int]
    batch_subjects: set = field(default_factory=set)
    seconds: float = 0.0


def config_hash(cfg) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def train_mvs(
    dataset: MVSDataset,
    config: MVSConfig,
    held_out: Sequence[int] = (),
    checkpoint_dir: str | Path | None = None,
    curve_path: str | Path | None = None,
) -> MVSTrainResult:
    """Adam training of the synthesis model on every subject not held out."""
    t_start = time.time()
    held = sorted(int(s) for s in held_out)
    subjects = [int(s) for s in np.unique(dataset.subject_ids) if int(s) not in held]
    frames_by_subject = usable_frames(dataset, set(subjects), config.uniform_sampling)
    if not frames_by_subject:
        raise MVSError("no trainable subjects")
    log.info("mvs training on subjects %s, held out %s", sorted(frames_by_subject), held)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = MVSModel(config)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=config.lr)
    pool = np.concatenate(list(frames_by_subject.values()))
    steps = config.steps_per_epoch or max(1, len(pool) // config.batch_size)
    curve, seen = [], set()
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(np.resize(rng.permutation(pool), steps * config.batch_size))
        sums = np.zeros(3)
        for s in range(steps):
            frames = order[s * config.batch_size : (s + 1) * config.batch_size]
            batch = make_training_batch(dataset, frames_by_subject, rng, config.batch_size, frames)
            seen.update(int(x) for x in dataset.subject_ids[batch.frame])
            pred = synthesize(model, batch, not config.no_appearance_swap)
            rep = mvs_loss(pred, batch.target, model.features, config.alpha)
            if not torch.isfinite(rep.total):
                raise TrainingDiverged(
                    f"non-finite MVS loss at epoch {epoch} step {s}: mse={float(rep.mse.detach())} perceptual={float(rep.perceptual.detach())}"
                )
            opt.zero_grad()
            rep.total.backward()
            opt.step()
            sums += [float(rep.mse.detach()), float(rep.perceptual.detach()), float(rep.total.detach())]
        rec = LossRecord(epoch, *(float(v) for v in sums / steps))
        curve.append(rec)
        log.info("mvs epoch %d total %.5f", epoch, rec.total)
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / f"epoch_{epoch:03d}.pt", model, opt, epoch, config)
    if curve_path is not None:
        write_loss_curve(curve_path, curve)
    model.eval()
    if seen & set(held):
        raise RuntimeError("held-out subject leaked into training batches")
    return MVSTrainResult(model, curve, sorted(frames_by_subject), held, seen, time.time() - t_start)


def write_loss_curve(path, curve: list[LossRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mse", "perceptual", "total"])
        for r in curve:
            w.writerow([r.epoch, repr(r.mse), repr(r.perceptual), repr(r.total)])


def read_loss_curve(path) -> list[LossRecord]:
    with open(path, newline="") as fh:
        return [
            LossRecord(int(r["epoch"]), float(r["mse"]), float(r["perceptual"]), float(r["total"]))
            for r in csv.DictReader(fh)
        ]


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(path, model: nn.Module, optimizer, epoch: int, config, kind: str = "mvs", extra: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "epoch": epoch,
        "config": asdict(config),
        "config_hash": config_hash(config),
        "params": {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise MVSError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise MVSError(f"unsupported checkpoint version {payload.get('version')}")
    return payload


def load_mvs_model(path) -> MVSModel:
    payload = load_checkpoint(path)
    if payload["kind"] != "mvs":
        raise MVSError(f"{path} holds a {payload['kind']} checkpoint")
    model = MVSModel(MVSConfig(**payload["config"]))
    model.load_state_dict({k: torch.as_tensor(v) for k, v in payload["params"].items()})
    model.eval()
    return model
