"""Evaluation protocol: leave-one-subject-out runs, retrieval and swap probes.

All tabulated numbers flow through :func:`run_loso` / :func:`write_run` and
the probe reports; plotting reads only the files written here.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from scipy.stats import binomtest

from .metrics import accuracy, confusion, f1_unweighted
from .painmil import BagOfClips, BagPrediction, EpochRecord, HeadConfig, predict_bags, train_pain_head
from .synthdata import pose_angle_distance

log = logging.getLogger(__name__)

__all__ = [
    "accuracy",
    "confusion",
    "f1_unweighted",
    "FoldResult",
    "LOSOSummary",
    "choose_validation_subject",
    "run_loso",
    "summarize",
    "write_run",
    "read_summary",
    "RetrievalProbe",
    "ProbeReport",
    "nn_probe",
    "to_common_frame",
    "SwapReport",
    "appearance_swap_probe",
]


class EvalError(ValueError):
    pass


# -- leave-one-subject-out -------------------------------------------------------

@dataclass
class FoldResult:
    test_subject: int
    val_subject: int
    history: list[EpochRecord]
    best_epoch: int  # 1-based, chosen on validation F1
    oracle_epoch: int  # 1-based, chosen on test F1 in hindsight
    predictions: list[BagPrediction] = field(default_factory=list)
    head_state: dict | None = None  # weights of the best-validation epoch

    @property
    def true_metrics(self) -> tuple[float, float]:
        r = self.history[self.best_epoch - 1]
        return r.test_f1, r.test_acc

    @property
    def oracle_metrics(self) -> tuple[float, float]:
        r = self.history[self.oracle_epoch - 1]
        return r.test_f1, r.test_acc


@dataclass
class LOSOSummary:
    folds: list[FoldResult]
    true_f1: tuple[float, float]  # (mean, std) over folds, std with ddof=0
    true_acc: tuple[float, float]
    oracle_f1: tuple[float, float]
    oracle_acc: tuple[float, float]
    skipped: list[int] = field(default_factory=list)


def subject_balance(bags: Sequence[BagOfClips]) -> dict[int, float]:
    """Per-subject imbalance ``|pain - no_pain| / total`` over bag labels."""
    counts: dict[int, list[int]] = {}
    for b in bags:
        counts.setdefault(int(b.subject_id), [0, 0])[int(b.label)] += 1
    return {s: abs(c[1] - c[0]) / max(1, sum(c)) for s, c in counts.items()}


def choose_validation_subject(bags: Sequence[BagOfClips], test_subject: int) -> int:
    """Most balanced subject (lowest id on ties); if that is the test subject,
    fall back to the first subject that is not the test subject."""
    balance = subject_balance(bags)
    ids = sorted(balance)
    if len(ids) < 3:
        raise EvalError("leave-one-subject-out needs at least 3 subjects")
    best = min(ids, key=lambda s: (balance[s], s))
    if best != test_subject:
        return best
    return next(s for s in ids if s != test_subject)


BagSource = Sequence[BagOfClips] | Callable[[int], Sequence[BagOfClips]]


def run_loso(
    bags: BagSource,
    config: HeadConfig,
    subjects: Sequence[int] | None = None,
    out_dir: str | Path | None = None,
    run_meta: dict | None = None,
) -> LOSOSummary:
    """Train and score one head per held-out subject.

    ``bags`` is either a fixed list or a callable ``test_subject -> bags``
    producing features from a backbone trained without that subject.
    """
    fixed = None if callable(bags) else list(bags)
    if subjects is None:
        if fixed is None:
            raise EvalError("subjects must be given when bags is a callable")
        subjects = sorted({int(b.subject_id) for b in fixed})
    subjects = [int(s) for s in subjects]
    if len(subjects) < 3:
        raise EvalError("leave-one-subject-out needs at least 3 subjects")
    folds, skipped = [], []
    for test in subjects:
        fold_bags = fixed if fixed is not None else list(bags(test))
        test_bags = [b for b in fold_bags if b.subject_id == test]
        if not test_bags:
            log.warning("subject %d has no segments; fold skipped", test)
            skipped.append(test)
            continue
        val = choose_validation_subject(fold_bags, test)
        val_bags = [b for b in fold_bags if b.subject_id == val]
        train = [b for b in fold_bags if b.subject_id not in (test, val)]
        log.info("fold test=%d val=%d train bags=%d", test, val, len(train))
        res = train_pain_head(train, val_bags, config, test_bags=test_bags)
        test_scores = [r.test_f1 for r in res.history]
        folds.append(
            FoldResult(test, val, res.history, res.best_epoch, int(np.argmax(test_scores)) + 1,
                       predict_bags(res.model, test_bags, config.test_d), res.epoch_states[res.best_epoch - 1])
        )
    summary = summarize(folds, skipped)
    if out_dir is not None:
        write_run(out_dir, summary, run_meta or {})
    return summary


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=0))


def summarize(folds: list[FoldResult], skipped=()) -> LOSOSummary:
    return LOSOSummary(
        folds,
        _mean_std([f.true_metrics[0] for f in folds]),
        _mean_std([f.true_metrics[1] for f in folds]),
        _mean_std([f.oracle_metrics[0] for f in folds]),
        _mean_std([f.oracle_metrics[1] for f in folds]),
        list(skipped),
    )


SUMMARY_FIELDS = ["test_subject", "val_subject", "best_epoch", "oracle_epoch", "true_f1", "true_acc", "oracle_f1", "oracle_acc"]


def write_run(out_dir: str | Path, summary: LOSOSummary, meta: dict) -> Path:
    """Write ``fold_<s>/{metrics,predictions}.csv`` and a root ``summary.csv``.

    ``meta`` (e.g. config hash and seed) is embedded as leading comment lines.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    header = "".join(f"# {k}={meta[k]}\n" for k in sorted(meta))
    for f in summary.folds:
        d = root / f"fold_{f.test_subject}"
        (d / "checkpoints").mkdir(parents=True, exist_ok=True)
        with open(d / "metrics.csv", "w", newline="") as fh:
            fh.write(header)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "val_f1", "val_acc", "test_f1", "test_acc"])
            for r in f.history:
                w.writerow([r.epoch, repr(r.loss), repr(r.val_f1), repr(r.val_acc), repr(r.test_f1), repr(r.test_acc)])
        with open(d / "predictions.csv", "w", newline="") as fh:
            fh.write(header)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["segment_id", "label", "n", "k", "y_no_pain", "y_pain", "predicted", "selected"])
            for p in f.predictions:
                w.writerow([p.segment_id, p.label, p.n, p.k, repr(float(p.y_np)), repr(float(p.y_p)), int(p.predicted),
                            ";".join(str(int(i)) for i in p.selected)])
    with open(root / "summary.csv", "w", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for f in summary.folds:
            w.writerow([f.test_subject, f.val_subject, f.best_epoch, f.oracle_epoch,
                        repr(f.true_metrics[0]), repr(f.true_metrics[1]),
                        repr(f.oracle_metrics[0]), repr(f.oracle_metrics[1])])
        for name, idx in (("mean", 0), ("std", 1)):
            w.writerow([name, "", "", "", repr(summary.true_f1[idx]), repr(summary.true_acc[idx]),
                        repr(summary.oracle_f1[idx]), repr(summary.oracle_acc[idx])])
        for s in summary.skipped:
            w.writerow([f"skipped:{s}", "", "", "", "", "", "", ""])
    return root / "summary.csv"


def read_summary(path: str | Path) -> list[dict]:
    """Per-fold rows of a ``summary.csv`` (aggregate rows excluded)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return [r for r in rows if r["test_subject"].isdigit()]


# -- nearest-neighbor pose retrieval --------------------------------------------------

@dataclass
class RetrievalProbe:
    query: tuple  # (subject, t, view_in, view_out) or any caller-provided id
    ranked: np.ndarray  # gallery indices, nearest first (top entries only)
    rank_of_ground_truth: int | None  # 1-based rank of the first correct gallery item


@dataclass
class ProbeReport:
    probes: list[RetrievalProbe]
    top1: float
    top3: float
    chance_top1: float
    p_value: float  # two-sided binomial test of top-1 hits against chance


def to_common_frame(latents: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Express ``(N, rows, 3)`` camera-frame latents in the world frame.

    ``rotations`` are the (crop-adjusted) world-to-camera rotations; each row
    is mapped by ``R.T``.
    """
    return np.asarray(latents) @ np.asarray(rotations)


def nn_probe(
    query_latents: np.ndarray,
    gallery_latents: np.ndarray,
    query_rotations: np.ndarray | None = None,
    *,
    correct: np.ndarray | None = None,
    query_poses: np.ndarray | None = None,
    gallery_poses: np.ndarray | None = None,
    tolerance_deg: float = 15.0,
    query_ids: Sequence | None = None,
    keep: int = 10,
) -> ProbeReport:
    """Rank gallery latents by L2 distance to each (rotated) query latent.

    A gallery item is correct for a query when ``correct[q, g]`` is set, or,
    given ground-truth poses, when their mean joint-angle difference is within
    ``tolerance_deg``. Chance is the mean fraction of correct gallery items.
    """
    G = np.asarray(gallery_latents, dtype=np.float64)
    if len(G) == 0:
        raise EvalError("empty gallery")
    Q = np.asarray(query_latents, dtype=np.float64)
    if query_rotations is not None:
        Q = Q @ np.swapaxes(np.asarray(query_rotations, dtype=np.float64), -1, -2)
    Q = Q.reshape(len(Q), -1)
    G = G.reshape(len(G), -1)
    if correct is None:
        if query_poses is None or gallery_poses is None:
            raise EvalError("need a correctness matrix or ground-truth poses")
        tol = np.deg2rad(tolerance_deg)
        correct = np.stack([pose_angle_distance(p[None], gallery_poses) <= tol for p in np.asarray(query_poses)])
    correct = np.asarray(correct, dtype=bool)
    d2 = (Q**2).sum(1)[:, None] - 2 * Q @ G.T + (G**2).sum(1)[None]
    probes, hits1, hits3 = [], 0, 0
    for q in range(len(Q)):
        order = np.argsort(d2[q], kind="stable")
        good = np.flatnonzero(correct[q, order])
        rank = int(good[0]) + 1 if len(good) else None
        hits1 += rank == 1
        hits3 += rank is not None and rank <= 3
        qid = tuple(query_ids[q]) if query_ids is not None else (q,)
        probes.append(RetrievalProbe(qid, order[:keep], rank))
    n = len(Q)
    chance = float(correct.mean())
    p = binomtest(int(hits1), n, min(max(chance, 1e-12), 1 - 1e-12)).pvalue if n else 1.0
    return ProbeReport(probes, hits1 / n, hits3 / n, chance, float(p))


# -- appearance swapping -------------------------------------------------------------

@dataclass
class SwapReport:
    color_shift: float  # mean projection of the color change onto the donor direction
    drift_px: float  # mean silhouette-centroid distance to the ground-truth centroid
    self_drift_px: float  # same, for the un-swapped reconstruction
    per_pair_shift: np.ndarray
    per_pair_drift: np.ndarray


def _masked_mean(img, mask):
    w = mask[..., None]
    return (img * w).sum((0, 1)) / max(w.sum(), 1e-9)


def _centroid(mask):
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return np.array([np.nan, np.nan])
    return np.array([xs.mean(), ys.mean()])


def silhouette(recon: np.ndarray, background: np.ndarray, threshold: float = 0.12) -> np.ndarray:
    """Pixels whose color departs from the background by more than ``threshold``."""
    return np.abs(recon - background).max(-1) > threshold


def appearance_swap_probe(
    model,
    recipient_images: np.ndarray,
    donor_images: np.ndarray,
    backgrounds: np.ndarray,
    recipient_masks: np.ndarray,
    recipient_truth: np.ndarray,
    donor_truth: np.ndarray,
    threshold: float = 0.12,
) -> SwapReport:
    """Decode recipient pose with donor appearance over the recipient background.

    ``recipient_truth``/``donor_truth`` are ground-truth renders of the
    recipient's pose with the recipient's and the donor's look respectively;
    the color direction is measured between them on the recipient mask.
    All images are ``(N, R, R, 3)``; masks ``(N, R, R)`` in [0, 1].
    """
    from .mvs import decode, encode

    pose_r, app_r = encode(model, recipient_images)
    _, app_d = encode(model, donor_images)
    self_rec = decode(model, pose_r, app_r, backgrounds)
    swap_rec = decode(model, pose_r, app_d, backgrounds)
    bgs = _float(backgrounds)
    rt, dt = _float(recipient_truth), _float(donor_truth)
    masks = np.asarray(recipient_masks, dtype=np.float64)
    if masks.max() > 1:
        masks = masks / 255.0
    shifts, drifts, self_drifts = [], [], []
    for n in range(len(pose_r)):
        m = masks[n]
        direction = _masked_mean(dt[n], m) - _masked_mean(rt[n], m)
        norm = np.linalg.norm(direction)
        change = _masked_mean(swap_rec[n], m) - _masked_mean(self_rec[n], m)
        shifts.append(float(change @ direction / norm) if norm > 1e-9 else 0.0)
        c_true = _centroid(m > 0.5)
        drifts.append(float(np.linalg.norm(_centroid(silhouette(swap_rec[n], bgs[n], threshold)) - c_true)))
        self_drifts.append(float(np.linalg.norm(_centroid(silhouette(self_rec[n], bgs[n], threshold)) - c_true)))
    shifts, drifts = np.asarray(shifts), np.asarray(drifts)
    return SwapReport(float(np.mean(shifts)), float(np.nanmean(drifts)), float(np.nanmean(self_drifts)), shifts, drifts)


def _float(images):
    x = np.asarray(images)
    return x.astype(np.float64) / 255.0 if x.dtype == np.uint8 else x.astype(np.float64)


# -- frozen-backbone features ----------------------------------------------------------

def encode_pose_features(model, crops: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Flattened pose latents (``N x rows*3``) used as head input features."""
    from .mvs import encode

    pose, _ = encode(model, crops, batch_size)
    return pose.reshape(len(pose), -1).astype(np.float32)


def set_deterministic(threads: int = 1) -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(threads)
