"""Motion scoring, background extraction and weak-label segment construction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np

MIN_SEGMENT_S = 10.0
MAX_SEGMENT_S = 120.0
FLOW_FPS = 10.0
TOP_MOTION_PERCENT = 1.0

# Farneback parameters are not given by the method's users; fixed here
FARNEBACK = dict(pyr_scale=0.5, levels=3, winsize=15, iterations=3, poly_n=5, poly_sigma=1.2, flags=0)


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class FlowScore:
    timestamp: float
    view_id: int
    magnitude: float


@dataclass
class VideoSegment:
    segment_id: str
    sequence_id: str
    subject_id: int
    bag_label: int
    timestamps: np.ndarray
    boxes: list = field(default_factory=list)
    fps: float = 2.0

    @property
    def length(self) -> float:
        return len(self.timestamps) / self.fps


def _gray(frame: np.ndarray) -> np.ndarray:
    f = np.asarray(frame)
    if f.dtype != np.uint8:
        f = np.clip(np.round(f * 255.0), 0, 255).astype(np.uint8)
    if f.ndim == 3:
        f = cv2.cvtColor(f, cv2.COLOR_RGB2GRAY)
    return f


def compute_flow_magnitude(frames: Sequence[np.ndarray], timestamps=None, view_id: int = 0) -> list[FlowScore]:
    """Mean dense-flow magnitude for each consecutive frame pair.

    Scores are stamped with the timestamp of the second frame of the pair.
    """
    if len(frames) < 2:
        raise PreprocessError("need at least two frames")
    shape = np.asarray(frames[0]).shape[:2]
    if timestamps is None:
        timestamps = np.arange(len(frames)) / FLOW_FPS
    scores = []
    prev = _gray(frames[0])
    for n in range(1, len(frames)):
        if np.asarray(frames[n]).shape[:2] != shape:
            raise PreprocessError("frame resolution changed within the sequence")
        cur = _gray(frames[n])
        if np.array_equal(prev, cur):
            # OpenCV leaves a ~1e-3 px residual in flat regions of identical frames
            mag = 0.0
        else:
            flow = cv2.calcOpticalFlowFarneback(prev, cur, None, **FARNEBACK)
            mag = float(np.mean(np.hypot(flow[..., 0], flow[..., 1])))
        scores.append(FlowScore(float(timestamps[n]), view_id, mag))
        prev = cur
    return scores


def select_top_motion(scores: Iterable[FlowScore], percent: float = TOP_MOTION_PERCENT) -> set[float]:
    """Timestamps whose magnitude reaches the ``(100 - percent)``-th percentile.

    Ties at the threshold are kept, so at least ``percent`` of the scores are
    returned. Scores sharing a timestamp (several views) are averaged first.
    """
    scores = list(scores)
    if not scores:
        raise PreprocessError("no scores")
    if not 0 < percent <= 100:
        raise PreprocessError("percent must be in (0, 100]")
    by_t: dict[float, list[float]] = {}
    for s in scores:
        by_t.setdefault(s.timestamp, []).append(s.magnitude)
    ts = np.array(sorted(by_t))
    mags = np.array([np.mean(by_t[t]) for t in ts])
    thr = np.percentile(mags, 100.0 - percent)
    return {float(t) for t in ts[mags >= thr]}


def extract_background(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel temporal median."""
    if len(frames) < 3:
        raise PreprocessError("need at least three frames for a median background")
    return np.median(np.stack(frames), axis=0).astype(np.asarray(frames[0]).dtype)


def windowed_backgrounds(frames, timestamps, window_s: float | None) -> tuple[np.ndarray, list[np.ndarray]]:
    """Median background per time window; ``window_s=None`` uses one window.

    Returns ``(window_index_per_frame, backgrounds)``.
    """
    ts = np.asarray(timestamps, dtype=np.float64)
    if window_s is None:
        idx = np.zeros(len(ts), dtype=int)
    else:
        idx = np.floor((ts - ts.min()) / window_s).astype(int)
    bgs = []
    remap = np.empty_like(idx)
    for k, w in enumerate(np.unique(idx)):
        sel = np.flatnonzero(idx == w)
        remap[sel] = k
        chosen = sel if len(sel) >= 3 else np.arange(len(ts))
        bgs.append(extract_background([frames[i] for i in chosen]))
    return remap, bgs


def build_segments(
    sequence_id: str,
    subject_id: int,
    timestamps,
    detections,
    label_periods,
    fps: float = 2.0,
    min_s: float = MIN_SEGMENT_S,
    max_s: float = MAX_SEGMENT_S,
) -> list[VideoSegment]:
    """Cut detected runs into labeled segments.

    ``detections[n]`` is a box or ``None``. ``label_periods`` is a list of
    ``(start, end, label)`` with ``start <= t < end``; frames outside every
    period are unusable. A run breaks at a missing detection, a timestamp gap
    or a label-period boundary; runs are chunked at ``max_s`` and chunks
    shorter than ``min_s`` are dropped.
    """
    ts = np.asarray(timestamps, dtype=np.float64)
    if len(ts) != len(detections):
        raise PreprocessError("timestamps and detections differ in length")
    if len(ts) > 1 and np.any(np.diff(ts) <= 0):
        raise PreprocessError("timestamps must be strictly increasing")
    dt = 1.0 / fps

    def period_of(t):
        for k, (a, b, _) in enumerate(label_periods):
            if a <= t < b:
                return k
        return None

    runs: list[list[int]] = []
    cur: list[int] = []
    cur_period = None
    for n, t in enumerate(ts):
        p = period_of(t)
        ok = detections[n] is not None and p is not None
        contiguous = cur and p == cur_period and t - ts[cur[-1]] <= 1.5 * dt
        if ok and contiguous:
            cur.append(n)
            continue
        if cur:
            runs.append(cur)
        cur = [n] if ok else []
        cur_period = p
    if cur:
        runs.append(cur)

    max_n = int(round(max_s * fps))
    min_n = int(round(min_s * fps))
    segments = []
    for run in runs:
        label = label_periods[period_of(ts[run[0]])][2]
        for start in range(0, len(run), max_n):
            chunk = run[start : start + max_n]
            if len(chunk) < min_n:
                continue
            seg_id = f"{sequence_id}_{len(segments):03d}"
            segments.append(
                VideoSegment(
                    seg_id,
                    sequence_id,
                    int(subject_id),
                    int(label),
                    ts[chunk],
                    [detections[i] for i in chunk],
                    fps,
                )
            )
    return segments


def write_segment_index(path: str | Path, segments: Iterable[VideoSegment]) -> None:
    """JSON-lines segment index: one record per segment."""
    with open(path, "w") as fh:
        for s in segments:
            rec = {
                "segment_id": s.segment_id,
                "sequence_id": s.sequence_id,
                "subject_id": s.subject_id,
                "label": s.bag_label,
                "fps": s.fps,
                "timestamps": [float(t) for t in s.timestamps],
                "crops": [None if b is None else [float(v) for v in b] for b in s.boxes],
            }
            fh.write(json.dumps(rec) + "\n")


def read_segment_index(path: str | Path) -> list[VideoSegment]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        r = json.loads(line)
        out.append(
            VideoSegment(
                r["segment_id"],
                r["sequence_id"],
                int(r["subject_id"]),
                int(r["label"]),
                np.array(r["timestamps"], dtype=np.float64),
                [None if b is None else tuple(b) for b in r["crops"]],
                float(r["fps"]),
            )
        )
    return out
