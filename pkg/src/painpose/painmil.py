"""Pain classification head and top-k multiple-instance losses.

A video segment is a bag of fixed-length clips of pose latents. The head
scores every clip; the bag score averages both class confidences over the
``k`` clips with the highest *pain* confidence (shared index set). MIL-OG
instead takes the top ``k`` of each column independently, and ``ce_per_clip``
supervises every clip with the bag label.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .metrics import accuracy, confusion, f1_unweighted

log = logging.getLogger(__name__)

POSE_FEATURES = 600
D_SET = (1, 2, 4, 8)
TEST_D = 8
LOSS_VARIANTS = ("ours_mil", "mil_og", "ce_per_clip")
NO_PAIN, PAIN = 0, 1
PROB_FLOOR = 1e-12


class PainMILError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ClipFeature:
    frames: np.ndarray  # l x 600

    @property
    def l(self) -> int:
        return self.frames.shape[0]


@dataclass
class BagOfClips:
    clips: np.ndarray  # n x l x 600
    label: int
    subject_id: int = -1
    segment_id: str = ""
    frame_flags: np.ndarray | None = None  # hidden per-frame truth, synthetic only

    def __post_init__(self):
        c = np.asarray(self.clips, dtype=np.float32)
        if c.ndim != 3 or c.shape[0] < 1 or c.shape[1] < 1:
            raise PainMILError(f"bag must be (n >= 1, l >= 1, dim), got {c.shape}")
        self.clips = c

    @property
    def n(self) -> int:
        return self.clips.shape[0]

    @property
    def l(self) -> int:
        return self.clips.shape[1]


@dataclass
class MILPrediction:
    per_clip: np.ndarray | torch.Tensor  # n x 2 (no-pain, pain)
    selected: np.ndarray  # indices S, ordered by decreasing pain
    bag: np.ndarray | torch.Tensor  # (y_np, y_p)

    @property
    def k(self) -> int:
        return len(self.selected)


def bag_from_features(features: np.ndarray, label: int, l: int, **kw) -> BagOfClips:
    """Cut a ``T x 600`` feature track into ``T // l`` consecutive clips."""
    feats = np.asarray(features, dtype=np.float32)
    n = len(feats) // l
    if n < 1:
        raise PainMILError(f"track of {len(feats)} frames is shorter than one clip of {l}")
    clips = feats[: n * l].reshape(n, l, feats.shape[1])
    flags = kw.pop("frame_flags", None)
    if flags is not None:
        flags = np.asarray(flags)[: n * l].reshape(n, l)
    return BagOfClips(clips, int(label), frame_flags=flags, **kw)


class PainHead(nn.Module):
    """Per-frame 600->64, concat to 64*l, 64-wide hidden layer, 2-way output."""

    def __init__(self, l: int = 1, in_dim: int = POSE_FEATURES, hidden: int = 64, hidden2: int = 64, dropout: float = 0.5):
        super().__init__()
        self.l = l
        self.in_dim = in_dim
        self.frame_fc = nn.Linear(in_dim, hidden)
        self.clip_fc = nn.Linear(hidden * l, hidden2)
        self.out = nn.Linear(hidden2, 2)
        self.drop = nn.Dropout(dropout)
        self.hparams = dict(l=l, in_dim=in_dim, hidden=hidden, hidden2=hidden2, dropout=dropout)

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        """Logits for ``(n, l, in_dim)`` clips."""
        if clips.dim() != 3 or clips.shape[1] != self.l or clips.shape[2] != self.in_dim:
            raise PainMILError(f"expected (n, {self.l}, {self.in_dim}) clips, got {tuple(clips.shape)}")
        h = self.drop(torch.relu(self.frame_fc(clips)))
        h = h.reshape(h.shape[0], -1)
        h = self.drop(torch.relu(self.clip_fc(h)))
        return self.out(h)


def head_forward(clip, head: PainHead, dropout_active: bool = False) -> np.ndarray:
    """Softmax (no-pain, pain) confidences for one ``l x 600`` clip."""
    frames = clip.frames if isinstance(clip, ClipFeature) else clip
    x = torch.as_tensor(np.asarray(frames), dtype=next(head.parameters()).dtype)[None]
    was_training = head.training
    head.train(dropout_active)
    try:
        with torch.no_grad():
            p = torch.softmax(head(x), dim=-1)[0]
    finally:
        head.train(was_training)
    return p.numpy()


def choose_k(n: int, d: int | None = None, training: bool = False, rng=None, d_set=D_SET, test_d: int = TEST_D) -> int:
    """``k = max(1, n // d)``; ``d`` is drawn from ``d_set`` in training, ``test_d`` otherwise."""
    if n < 1:
        raise PainMILError("n must be >= 1")
    if d is None:
        if training:
            if rng is None:
                raise PainMILError("training mode needs an rng")
            d = int(d_set[rng.integers(len(d_set))])
        else:
            d = test_d
    return max(1, n // int(d))


def _top_indices(values, k):
    """Indices of the ``k`` largest values; equal values keep the lower index first."""
    if isinstance(values, torch.Tensor):
        order = torch.sort(values.detach(), descending=True, stable=True).indices
        return order[:k].cpu().numpy()
    return np.argsort(-np.asarray(values), kind="stable")[:k]


def _check_k(n, k):
    if not 1 <= k <= n:
        raise PainMILError(f"k must satisfy 1 <= k <= n ({n}), got {k}")


def mil_aggregate(per_clip, k: int) -> MILPrediction:
    """Average both classes over the ``k`` clips with the highest pain confidence."""
    n = per_clip.shape[0]
    _check_k(n, k)
    S = _top_indices(per_clip[:, PAIN], k)
    if isinstance(per_clip, torch.Tensor):
        bag = per_clip[torch.as_tensor(S)].mean(0)
    else:
        bag = np.asarray(per_clip)[S].mean(0)
    return MILPrediction(per_clip, S, bag)


def mil_aggregate_og(per_clip, k: int):
    """Independent top-k per class; the result need not sum to one."""
    n = per_clip.shape[0]
    _check_k(n, k)
    S_np = _top_indices(per_clip[:, NO_PAIN], k)
    S_p = _top_indices(per_clip[:, PAIN], k)
    if isinstance(per_clip, torch.Tensor):
        y_np = per_clip[torch.as_tensor(S_np), NO_PAIN].mean()
        y_p = per_clip[torch.as_tensor(S_p), PAIN].mean()
        return torch.stack([y_np, y_p])
    pc = np.asarray(per_clip)
    return np.array([pc[S_np, NO_PAIN].mean(), pc[S_p, PAIN].mean()])


def class_weights(n_pain: float, n_no_pain: float) -> np.ndarray:
    """``(w_no_pain, w_pain)`` scaled by the number of classes so they average one."""
    if n_pain <= 0 or n_no_pain <= 0:
        raise PainMILError("class counts must be positive")
    total = n_pain + n_no_pain
    return np.array([2.0 * (1.0 - n_no_pain / total), 2.0 * (1.0 - n_pain / total)])


def weighted_ce(bag, label: int, class_counts: tuple[float, float]):
    """Class-weighted cross-entropy of a bag vector ``(y_np, y_p)``.

    ``class_counts`` is ``(n_pain, n_no_pain)``.
    """
    w = class_weights(*class_counts)[int(label)]
    if isinstance(bag, torch.Tensor):
        conf = bag[int(label)]
        if float(conf.detach()) < PROB_FLOOR:
            warnings.warn("true-class confidence below floor; clamped", RuntimeWarning, stacklevel=2)
        return -w * torch.log(torch.clamp(conf, min=PROB_FLOOR))
    conf = float(np.asarray(bag)[int(label)])
    if conf < PROB_FLOOR:
        warnings.warn("true-class confidence below floor; clamped", RuntimeWarning, stacklevel=2)
    return float(-w * np.log(max(conf, PROB_FLOOR)))


def hide_and_seek_mask(clip, grid: int, p_hide: float, rng: np.random.Generator) -> np.ndarray:
    """Zero random temporal blocks of ``grid`` frames; one block always survives."""
    frames = clip.frames if isinstance(clip, ClipFeature) else np.asarray(clip)
    l = frames.shape[0]
    n_blocks = int(np.ceil(l / grid))
    hide = rng.random(n_blocks) < p_hide
    if hide.all():
        hide[rng.integers(n_blocks)] = False
    out = frames.copy()
    for b in np.flatnonzero(hide):
        out[b * grid : (b + 1) * grid] = 0
    return out


def parameter_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class HeadConfig:
    l: int = 1
    epochs: int = 10
    lr: float = 1e-3
    loss_variant: str = "ours_mil"
    d_set: tuple = D_SET
    test_d: int = TEST_D
    dropout: float = 0.5
    hidden: int = 64
    hidden2: int = 64
    bags_per_step: int = 4
    hide_and_seek: bool = False
    has_grid: int = 2
    has_p: float = 0.5
    class_count_unit: str = "auto"  # "segments", "frames" or "auto" (frames when l == 1)
    seed: int = 0

    def __post_init__(self):
        if self.loss_variant not in LOSS_VARIANTS:
            raise PainMILError(f"unknown loss variant {self.loss_variant!r}")
        if self.l < 1 or self.epochs < 1 or self.lr <= 0:
            raise PainMILError("invalid head hyperparameters")
        self.d_set = tuple(int(d) for d in self.d_set)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_f1: float
    val_acc: float
    test_f1: float | None = None
    test_acc: float | None = None


@dataclass
class HeadTrainResult:
    model: PainHead  # best validation epoch
    best_epoch: int
    history: list[EpochRecord]
    epoch_states: list[dict] = field(default_factory=list)
    class_counts: tuple[float, float] = (1.0, 1.0)


def count_classes(bags: Sequence[BagOfClips], unit: str, l: int) -> tuple[float, float]:
    if unit == "auto":
        unit = "frames" if l == 1 else "segments"
    if unit == "segments":
        p = sum(1 for b in bags if b.label == PAIN)
        q = sum(1 for b in bags if b.label == NO_PAIN)
    elif unit == "frames":
        p = sum(b.n * b.l for b in bags if b.label == PAIN)
        q = sum(b.n * b.l for b in bags if b.label == NO_PAIN)
    else:
        raise PainMILError(f"unknown class count unit {unit!r}")
    if p == 0 or q == 0:
        raise PainMILError("training bags must contain both classes")
    return float(p), float(q)


def bag_loss(head: PainHead, bag: BagOfClips, cfg: HeadConfig, counts, rng) -> torch.Tensor:
    clips = bag.clips
    if cfg.hide_and_seek:
        clips = np.stack([hide_and_seek_mask(c, cfg.has_grid, cfg.has_p, rng) for c in clips])
    x = torch.as_tensor(clips, dtype=next(head.parameters()).dtype)
    probs = torch.softmax(head(x), dim=-1)
    if cfg.loss_variant == "ce_per_clip":
        w = torch.as_tensor(class_weights(*counts)[bag.label], dtype=probs.dtype)
        return -(w * torch.log(torch.clamp(probs[:, bag.label], min=PROB_FLOOR))).mean()
    k = choose_k(bag.n, training=True, rng=rng, d_set=cfg.d_set)
    if cfg.loss_variant == "ours_mil":
        agg = mil_aggregate(probs, k).bag
    else:
        agg = mil_aggregate_og(probs, k)
    return weighted_ce(agg, bag.label, counts)


@dataclass
class BagPrediction:
    segment_id: str
    n: int
    k: int
    selected: np.ndarray
    y_np: float
    y_p: float
    label: int

    @property
    def predicted(self) -> int:
        return int(self.y_p > self.y_np)


def predict_bags(head: PainHead, bags: Sequence[BagOfClips], test_d: int = TEST_D) -> list[BagPrediction]:
    """Test-time bag scores: shared top-k with ``d = test_d`` for every variant."""
    head.eval()
    out = []
    dtype = next(head.parameters()).dtype
    with torch.no_grad():
        for b in bags:
            probs = torch.softmax(head(torch.as_tensor(b.clips, dtype=dtype)), dim=-1).numpy()
            k = choose_k(b.n, test_d=test_d)
            pred = mil_aggregate(probs, k)
            out.append(BagPrediction(b.segment_id, b.n, k, pred.selected, float(pred.bag[0]), float(pred.bag[1]), b.label))
    return out


def evaluate_bags(head, bags, test_d=TEST_D):
    preds = predict_bags(head, bags, test_d)
    conf = confusion([p.label for p in preds], [p.predicted for p in preds])
    return f1_unweighted(conf), accuracy(conf), preds


def train_pain_head(
    train_bags: Sequence[BagOfClips],
    val_bags: Sequence[BagOfClips],
    config: HeadConfig,
    test_bags: Sequence[BagOfClips] | None = None,
    encoder: nn.Module | None = None,
) -> HeadTrainResult:
    """Train the head on precomputed (frozen-encoder) features.

    After every epoch the head is scored on the validation bags (and on the
    test bags when given, for the hindsight/oracle analysis). The returned
    model is the best-validation epoch, earliest on ties.
    """
    if not train_bags:
        raise PainMILError("no training bags")
    l = train_bags[0].l
    if any(b.l != l for b in train_bags) or l != config.l:
        raise PainMILError(f"all bags must have clip length l={config.l}")
    checksum = parameter_checksum(encoder) if encoder is not None else None
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    head = PainHead(l, train_bags[0].clips.shape[2], config.hidden, config.hidden2, config.dropout)
    opt = torch.optim.Adam(head.parameters(), lr=config.lr)
    counts = count_classes(train_bags, config.class_count_unit, l)
    history, states = [], []
    for epoch in range(1, config.epochs + 1):
        head.train()
        order = rng.permutation(len(train_bags))
        losses = []
        for start in range(0, len(order), config.bags_per_step):
            batch = [train_bags[i] for i in order[start : start + config.bags_per_step]]
            loss = torch.stack([bag_loss(head, b, config, counts, rng) for b in batch]).mean()
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite head loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        vf1, vacc, _ = evaluate_bags(head, val_bags, config.test_d) if val_bags else (float("nan"),) * 3
        rec = EpochRecord(epoch, float(np.mean(losses)), vf1, vacc)
        if test_bags:
            rec.test_f1, rec.test_acc, _ = evaluate_bags(head, test_bags, config.test_d)
        history.append(rec)
        states.append(copy.deepcopy(head.state_dict()))
        log.info("head epoch %d loss %.4f val f1 %.3f", epoch, rec.loss, vf1)
    if encoder is not None and parameter_checksum(encoder) != checksum:
        raise RuntimeError("encoder parameters changed during head training")
    val_scores = [r.val_f1 if np.isfinite(r.val_f1) else -1.0 for r in history]
    best = int(np.argmax(val_scores))
    head.load_state_dict(states[best])
    head.eval()
    return HeadTrainResult(head, best + 1, history, states, counts)


def load_head_state(config: HeadConfig, in_dim: int, state: dict) -> PainHead:
    head = PainHead(config.l, in_dim, config.hidden, config.hidden2, config.dropout)
    head.load_state_dict(state)
    head.eval()
    return head
