"""Desk-scale experiments shared by the acceptance tests.

Each builder is deterministic given its seed and caches its result per
process so several criteria can read one training run.
"""

from __future__ import annotations

import functools
import time
from dataclasses import dataclass

import numpy as np
import torch

from painpose.evalharness import appearance_swap_probe, nn_probe, to_common_frame
from painpose.mvs import MVSConfig, build_mvs_dataset, crop_frame, encode, train_mvs
from painpose.synthdata import Scene, SceneConfig

RIG_SUBJECTS = 8
HELD_OUT = 7
DESK_MVS = dict(channels=(8, 16, 32, 64), steps_per_epoch=120)  # 50 epochs x 120 batches of 16


@dataclass
class A3Result:
    retrieval_top1: float
    retrieval_chance: float
    retrieval_p: float
    shift_full: float
    shift_noapp: float
    drift_full: float
    self_drift_full: float
    loss_drop: float  # 1 - final / first epoch loss (full model)
    seconds: float


def rig_dataset(seed=0, duration=120.0, motion_percent=50.0):
    scene = Scene(SceneConfig(n_subjects=RIG_SUBJECTS, seed=seed))
    seqs = [scene.generate_sequence(s, duration, 0.25) for s in range(RIG_SUBJECTS)]
    return scene, build_mvs_dataset(scene, seqs, 64, motion_percent=motion_percent)


def world_latents(model, ds, idx):
    N, V = len(idx), ds.n_views
    pose, _ = encode(model, ds.crops[idx].reshape(N * V, *ds.crops.shape[2:]))
    rot = np.array([[v.rotation for v in ds.views[n]] for n in idx])
    return to_common_frame(pose.reshape(N, V, *pose.shape[1:]), rot)


def retrieval(model, ds, stride=4, tolerance_deg=15.0):
    """Held-out-subject queries, training-subject gallery, all ordered view pairs."""
    gal = np.flatnonzero(ds.subject_ids != HELD_OUT)
    qry = np.flatnonzero(ds.subject_ids == HELD_OUT)[::stride]
    G, Q = world_latents(model, ds, gal), world_latents(model, ds, qry)
    hits, chance, n = 0.0, 0.0, 0
    for i in range(ds.n_views):
        for j in range(ds.n_views):
            if i == j:
                continue
            rep = nn_probe(Q[:, i], G[:, j], query_poses=ds.poses[qry], gallery_poses=ds.poses[gal],
                           tolerance_deg=tolerance_deg)
            hits += rep.top1 * len(qry)
            chance += rep.chance_top1 * len(qry)
            n += len(qry)
    from scipy.stats import binomtest

    return hits / n, chance / n, binomtest(int(round(hits)), n, chance / n).pvalue


def swap_pairs(scene, n_pairs=48, seed=0, resolution=64):
    """Fresh frames of training subjects plus ground-truth renders with a donor's look."""
    rng = np.random.default_rng(seed)
    subjects = [s for s in range(RIG_SUBJECTS) if s != HELD_OUT]
    seqs = {s: scene.generate_sequence(s, 10.0, 0.0, sequence_index=90 + s) for s in subjects}
    out = {k: [] for k in ("rec", "don", "bg", "mask", "rec_truth", "don_truth")}
    for _ in range(n_pairs):
        a, b = rng.choice(subjects, 2, replace=False)
        v = int(rng.integers(scene.config.n_views))
        na, nb = rng.integers(len(seqs[a].timestamps)), rng.integers(len(seqs[b].timestamps))
        fa, fb = seqs[a].frames[v][na], seqs[b].frames[v][nb]
        view = scene.rig[v]
        crop_a, H, _ = crop_frame(fa.image, view, fa.box, resolution)
        crop_b, _, _ = crop_frame(fb.image, view, fb.box, resolution)
        bg_full = scene.background(scene.stall_of(a), view)
        bg, _, _ = crop_frame(bg_full, view, fa.box, resolution)
        mask, _, _ = crop_frame(fa.mask.astype(np.float32), view, fa.box, resolution)
        truth_a, _ = scene.render(fa.pose_params, int(a), view)
        truth_b, _ = scene.render(fa.pose_params, int(b), view, background_id=scene.stall_of(a))
        truth_a_crop, _, _ = crop_frame(truth_a, view, fa.box, resolution)
        truth_b_crop, _, _ = crop_frame(truth_b, view, fa.box, resolution)
        out["rec"].append(crop_a)
        out["don"].append(crop_b)
        out["bg"].append(bg)
        out["mask"].append(mask)
        out["rec_truth"].append(truth_a_crop)
        out["don_truth"].append(truth_b_crop)
    return {k: np.asarray(v, dtype=np.float32) for k, v in out.items()}


def swap_report(model, pairs):
    return appearance_swap_probe(model, pairs["rec"], pairs["don"], pairs["bg"], pairs["mask"],
                                 pairs["rec_truth"], pairs["don_truth"])


@functools.lru_cache(maxsize=1)
def a3_experiment(seed=0) -> A3Result:
    torch.set_num_threads(1)
    start = time.time()
    scene, ds = rig_dataset(seed)
    full = train_mvs(ds, MVSConfig(**DESK_MVS, seed=seed), held_out=[HELD_OUT])
    noapp = train_mvs(ds, MVSConfig(**DESK_MVS, seed=seed, no_appearance_swap=True), held_out=[HELD_OUT])
    top1, chance, p = retrieval(full.model, ds)
    pairs = swap_pairs(scene, seed=seed)
    rf, rn = swap_report(full.model, pairs), swap_report(noapp.model, pairs)
    drop = 1 - full.curve[-1].total / full.curve[0].total
    return A3Result(top1, chance, p, rf.color_shift, rn.color_shift, rf.drift_px, rf.self_drift_px, drop,
                    time.time() - start)


# --- head-level experiments ------------------------------------------------


def planted_bags(seed, n_subjects=RIG_SUBJECTS, bags_per_subject=10, duration=120.0, positive_fraction=0.25,
                 fps=1.0):
    """Alternating no-pain / pain bags of planted-signal features (one clip per frame)."""
    from painpose.painmil import bag_from_features
    from painpose.synthdata import PlantedFeatureMap

    scene = Scene(SceneConfig(seed=seed, fps=fps))
    fmap = PlantedFeatureMap(seed)
    bags = []
    for s in range(n_subjects):
        for q in range(bags_per_subject):
            label = q % 2
            seq = scene.generate_sequence(s, duration, positive_fraction if label else 0.0, sequence_index=q,
                                          render=False)
            bags.append(bag_from_features(fmap(seq.poses, s, (s, q)), label, 1, subject_id=s,
                                          segment_id=seq.sequence_id, frame_flags=seq.flags))
    return bags


def a4_experiment(seeds=range(5)) -> dict[str, list[float]]:
    """Mean LOSO F1 per loss variant and seed on planted-signal bags."""
    from painpose.evalharness import run_loso
    from painpose.painmil import LOSS_VARIANTS, HeadConfig

    torch.set_num_threads(1)
    out = {v: [] for v in LOSS_VARIANTS}
    for seed in seeds:
        bags = planted_bags(seed)
        for v in LOSS_VARIANTS:
            out[v].append(run_loso(bags, HeadConfig(loss_variant=v, seed=seed)).true_f1[0])
    return out


def a7_setup():
    """Small end-to-end LOSO source: a fresh backbone-backed bag factory per call."""
    from painpose.config import from_dict
    from painpose.pipeline import BackboneBags, corpus_segments, generate_corpus, prepare_dataset

    cfg = from_dict({
        "seed": 0,
        "data": {"n_subjects": 3, "sessions_per_subject": 2, "session_duration_s": 20, "image_resolution": [64, 64]},
        "preprocess": {"motion_percent": 50},
        "mvs": {"resolution": 32, "channels": [8, 16, 32], "epochs": 2, "steps_per_epoch": 5},
        "head": {"epochs": 3},
    })
    scene, seqs = generate_corpus(cfg)
    ds, segments = prepare_dataset(scene, seqs, cfg), corpus_segments(seqs, cfg)
    return (lambda: BackboneBags(ds, segments, cfg)), list(range(cfg.data.n_subjects)), cfg.head_config()


# --- backbone ablation -------------------------------------------------------

A5_TEST = (5, 6, 7)
A5_CONFIG = {
    "data": {"n_subjects": RIG_SUBJECTS, "sessions_per_subject": 4, "session_duration_s": 40,
             "image_resolution": [64, 64]},
    "preprocess": {"motion_percent": 100},
    "mvs": {"resolution": 64, "channels": [8, 16, 32, 64], "epochs": 20, "steps_per_epoch": 60},
}


@dataclass
class A5Result:
    full: list
    nobg: list
    seconds: float


@functools.lru_cache(maxsize=1)
def a5_corpus(seed=0):
    from painpose.config import from_dict
    from painpose.pipeline import corpus_segments, generate_corpus, prepare_dataset

    cfg = from_dict(dict(A5_CONFIG, seed=seed))
    scene, seqs = generate_corpus(cfg)
    return cfg, prepare_dataset(scene, seqs, cfg), corpus_segments(seqs, cfg)


def a5_f1(cfg, ds, segments, seed, no_background):
    """Mean F1 over the held-out folds for one backbone trained without those subjects."""
    import dataclasses

    from painpose.evalharness import run_loso
    from painpose.pipeline import dataset_features, segment_bags

    mvs = dataclasses.replace(cfg.mvs_config(), seed=seed, no_background_input=no_background)
    model = train_mvs(ds, mvs, held_out=list(A5_TEST)).model
    step = int(round(cfg.data.fps / cfg.head.clip_fps))
    bags = segment_bags(ds, dataset_features(model, ds), segments, cfg.head.l, step)
    head = dataclasses.replace(cfg.head_config(), seed=seed)
    return run_loso(bags, head, subjects=list(A5_TEST)).true_f1[0]


def a5_experiment(seeds=range(5)) -> A5Result:
    torch.set_num_threads(1)
    start = time.time()
    cfg, ds, segments = a5_corpus(0)
    full = [a5_f1(cfg, ds, segments, s, False) for s in seeds]
    nobg = [a5_f1(cfg, ds, segments, s, True) for s in seeds]
    return A5Result(full, nobg, time.time() - start)
