"""End-to-end glue: corpus generation, segments, backbone features and bags."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .evalharness import encode_pose_features
from .mvs import MVSDataset, MVSModel, build_mvs_dataset, train_mvs
from .painmil import BagOfClips, bag_from_features
from .preprocess import VideoSegment, build_segments
from .synthdata import Scene

log = logging.getLogger(__name__)

SESSION_GAP_S = 3600.0


def generate_corpus(cfg: RunConfig, render: bool = True) -> tuple[Scene, list]:
    """Alternating no-pain / pain sessions for every subject."""
    scene = Scene(cfg.scene_config())
    d = cfg.data
    sequences = []
    for s in range(d.n_subjects):
        for q in range(d.sessions_per_subject):
            pf = d.positive_fraction if q % 2 else 0.0
            sequences.append(
                scene.generate_sequence(s, d.session_duration_s, pf, sequence_index=q, render=render,
                                        t0=q * SESSION_GAP_S)
            )
    return scene, sequences


def prepare_dataset(scene: Scene, sequences, cfg: RunConfig) -> MVSDataset:
    p = cfg.preprocess
    return build_mvs_dataset(scene, sequences, cfg.mvs.resolution, p.motion_percent, p.background_window_s,
                             crop_margin=p.crop_margin)


def corpus_segments(sequences, cfg: RunConfig) -> list[VideoSegment]:
    """Segments per session; each session is one labeled period."""
    out = []
    for seq in sequences:
        ref = seq.frames[min(seq.frames)] if seq.frames else []
        boxes = [fr.box for fr in ref] if ref else [(0, 0, 1, 1)] * len(seq.timestamps)
        t = seq.timestamps
        out += build_segments(seq.sequence_id, seq.subject_id, t, boxes,
                              [(t[0], t[-1] + 1.0 / cfg.data.fps, seq.label)], cfg.data.fps,
                              cfg.preprocess.min_segment_s, cfg.preprocess.max_segment_s)
    return out


def segment_bags(ds: MVSDataset, features: np.ndarray, segments: Sequence[VideoSegment], l: int, step: int = 1,
                 views=None) -> list[BagOfClips]:
    """One bag per (segment, view); frames subsampled by ``step`` then grouped into ``l``-frame clips.

    ``features`` is ``(N, V, dim)`` aligned with the dataset frames.
    """
    if ds.sequence_ids is None:
        raise ValueError("dataset has no sequence ids")
    index = {(str(s), float(t)): n for n, (s, t) in enumerate(zip(ds.sequence_ids, ds.timestamps))}
    views = range(ds.n_views) if views is None else views
    bags = []
    for seg in segments:
        rows = [index[(seg.sequence_id, float(t))] for t in seg.timestamps[::step]]
        if len(rows) < l:
            continue
        for v in views:
            flags = ds.flags[rows] if ds.flags is not None else None
            bags.append(bag_from_features(features[rows, v], seg.bag_label, l, subject_id=seg.subject_id,
                                          segment_id=f"{seg.segment_id}_v{v}", frame_flags=flags))
    return bags


def dataset_features(model: MVSModel, ds: MVSDataset) -> np.ndarray:
    N, V = ds.crops.shape[:2]
    flat = encode_pose_features(model, ds.crops.reshape(N * V, *ds.crops.shape[2:]))
    return flat.reshape(N, V, -1)


class BackboneBags:
    """``test_subject -> bags`` using a backbone trained without that subject.

    Backbones (and their features) are cached per test subject; checkpoints
    and loss curves go to ``<run_dir>/fold_<s>/`` when a run dir is given.
    """

    def __init__(self, ds: MVSDataset, segments, cfg: RunConfig, run_dir: str | Path | None = None,
                 save_checkpoints: bool = True):
        self.ds, self.segments, self.cfg = ds, segments, cfg
        self.run_dir = None if run_dir is None else Path(run_dir)
        self.save_checkpoints = save_checkpoints
        self.models: dict[int, MVSModel] = {}

    def backbone(self, test_subject: int) -> MVSModel:
        if test_subject not in self.models:
            fold = None if self.run_dir is None else self.run_dir / f"fold_{test_subject}"
            ckpt = fold / "checkpoints" if fold is not None and self.save_checkpoints else None
            curve = fold / "mvs_loss.csv" if fold is not None else None
            if fold is not None:
                fold.mkdir(parents=True, exist_ok=True)
            res = train_mvs(self.ds, self.cfg.mvs_config(), held_out=[test_subject], checkpoint_dir=ckpt,
                            curve_path=curve)
            self.models[test_subject] = res.model
        return self.models[test_subject]

    def __call__(self, test_subject: int) -> list[BagOfClips]:
        feats = dataset_features(self.backbone(test_subject), self.ds)
        step = int(round(self.cfg.data.fps / self.cfg.head.clip_fps))
        return segment_bags(self.ds, feats, self.segments, self.cfg.head.l, step)
