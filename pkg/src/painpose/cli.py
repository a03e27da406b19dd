"""Command-line entry point: ``painpose <command> [options]``.

Exit codes: 0 success, 2 validation / missing input, 3 runtime failure
(including non-finite losses and skipped folds in ``eval``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, RunConfig

log = logging.getLogger("painpose")

RUNS_ENV = "PAINPOSE_RUNS"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class InputError(Exception):
    """A referenced input (dataset, checkpoint, run) is missing or malformed."""


# -- run directory helpers ------------------------------------------------------------

def runs_root(args) -> Path:
    return Path(args.runs_root or os.environ.get(RUNS_ENV) or "runs")


def resolve_config(args) -> tuple[RunConfig, Path]:
    """File (explicit or the run's persisted one) plus ``--set`` overrides."""
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    run_id = args.run_id
    if run_id is not None:
        overrides.append(f"run_id={run_id}")
    path = args.config
    if path is None and run_id is not None:
        persisted = runs_root(args) / run_id / "config.yaml"
        path = persisted if persisted.exists() else None
    cfg = cfgmod.load(path, overrides)
    return cfg, runs_root(args) / cfg.run_id


def meta(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.hash(), "seed": cfg.seed, "run_id": cfg.run_id}


def persist_config(cfg: RunConfig, run_dir: Path, stage: str) -> None:
    """Keep ``config.yaml`` as the run's reference; warn when a stage drifts from it."""
    run_dir.mkdir(parents=True, exist_ok=True)
    ref = run_dir / "config.yaml"
    if ref.exists():
        prior = cfgmod.load(ref)
        if prior.hash() != cfg.hash():
            log.warning("config hash %s for %s differs from run config %s", cfg.hash(), stage, prior.hash())
    else:
        cfgmod.dump(cfg, ref)
    cfgmod.dump(cfg, run_dir / f"config.{stage}.yaml")


def guard_output(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir() if path.is_dir() else [path]):
        if not force:
            raise InputError(f"{path} exists; pass --force to overwrite")
        shutil.rmtree(path) if path.is_dir() else path.unlink()


def data_root(cfg: RunConfig, run_dir: Path) -> Path:
    return Path(cfg.data.root) if cfg.data.root else run_dir / "data"


def fold_subjects(cfg: RunConfig, subjects) -> list[int]:
    folds = cfg.protocol.folds
    return sorted(int(s) for s in (folds if folds is not None else subjects))


def write_png(path: Path, image: np.ndarray, info: dict) -> None:
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import image as mpimg

    path.parent.mkdir(parents=True, exist_ok=True)
    mpimg.imsave(path, np.clip(image, 0, 1), metadata={k: str(v) for k, v in info.items()})


# -- shared loaders -----------------------------------------------------------------

def load_corpus(cfg: RunConfig, run_dir: Path):
    from .pipeline import corpus_segments, prepare_dataset
    from .synthdata import load_sequences

    root = data_root(cfg, run_dir)
    if not (root / "manifest.csv").exists():
        raise InputError(f"dataset not found: {root / 'manifest.csv'} (run gen-data first)")
    scene, sequences = load_sequences(root)
    ds = prepare_dataset(scene, sequences, cfg)
    return scene, sequences, ds, corpus_segments(sequences, cfg)


def backbone_path(run_dir: Path, subject: int, cfg: RunConfig) -> Path:
    return run_dir / f"fold_{subject}" / "checkpoints" / "mvs" / f"epoch_{cfg.mvs.epochs:03d}.pt"


def load_backbone(run_dir: Path, subject: int, cfg: RunConfig):
    from .mvs import load_checkpoint, load_mvs_model

    path = backbone_path(run_dir, subject, cfg)
    if not path.exists():
        raise InputError(f"missing checkpoint: {path}")
    extra = load_checkpoint(path).get("extra", {})
    if extra.get("run_config_hash") not in (None, cfg.hash()):
        log.warning("backbone %s was trained under config %s, current is %s", path, extra["run_config_hash"], cfg.hash())
    return load_mvs_model(path)


# -- commands -----------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .pipeline import generate_corpus
    from .synthdata import write_dataset

    cfg, run_dir = resolve_config(args)
    root = data_root(cfg, run_dir)
    guard_output(root, args.force)
    persist_config(cfg, run_dir, "gen-data")
    scene, sequences = generate_corpus(cfg)
    tmp = root.with_name(root.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    write_dataset(tmp, scene, sequences)
    (tmp / "provenance.json").write_text(json.dumps(meta(cfg), sort_keys=True) + "\n")
    tmp.rename(root)
    print(f"wrote {len(sequences)} sessions to {root}")
    return EXIT_OK


def cmd_train_mvs(args) -> int:
    from .mvs import save_checkpoint, train_mvs

    cfg, run_dir = resolve_config(args)
    persist_config(cfg, run_dir, "train-mvs")
    _, _, ds, _ = load_corpus(cfg, run_dir)
    for s in fold_subjects(cfg, np.unique(ds.subject_ids)):
        fold = run_dir / f"fold_{s}"
        ckpt = fold / "checkpoints" / "mvs"
        guard_output(ckpt, args.force)
        res = train_mvs(ds, cfg.mvs_config(), held_out=[s], checkpoint_dir=ckpt, curve_path=fold / "mvs_loss.csv")
        # re-save the final epoch with run provenance attached
        save_checkpoint(ckpt / f"epoch_{cfg.mvs.epochs:03d}.pt", res.model, None, cfg.mvs.epochs, cfg.mvs_config(),
                        extra={"run_config_hash": cfg.hash(), "seed": cfg.seed, "held_out": [s]})
        print(f"fold {s}: backbone trained on subjects {res.train_subjects}, final loss {res.curve[-1].total:.5f}")
    return EXIT_OK


def _fold_bags(cfg, run_dir, ds, segments):
    from .pipeline import dataset_features, segment_bags

    step = int(round(cfg.data.fps / cfg.head.clip_fps))

    def bags(test_subject):
        feats = dataset_features(load_backbone(run_dir, test_subject, cfg), ds)
        return segment_bags(ds, feats, segments, cfg.head.l, step)

    return bags


def cmd_train_pain(args) -> int:
    import torch

    from .evalharness import run_loso
    from .preprocess import write_segment_index

    cfg, run_dir = resolve_config(args)
    persist_config(cfg, run_dir, "train-pain")
    _, _, ds, segments = load_corpus(cfg, run_dir)
    subjects = fold_subjects(cfg, np.unique(ds.subject_ids))
    for s in subjects:
        guard_output(run_dir / f"fold_{s}" / "metrics.csv", args.force)
    write_segment_index(run_dir / "segments.jsonl", segments)
    summary = run_loso(_fold_bags(cfg, run_dir, ds, segments), cfg.head_config(), subjects, run_dir, meta(cfg))
    for f in summary.folds:
        torch.save({"head_config": cfg.head.__dict__, "state": f.head_state, **meta(cfg)},
                   run_dir / f"fold_{f.test_subject}" / "checkpoints" / "head.pt")
    print(f"true F1 {summary.true_f1[0]:.3f} (std {summary.true_f1[1]:.3f}), "
          f"oracle F1 {summary.oracle_f1[0]:.3f} (std {summary.oracle_f1[1]:.3f})")
    for s in summary.skipped:
        print(f"fold {s} skipped: no segments")
    return EXIT_OK


def cmd_eval(args) -> int:
    import torch

    from .evalharness import accuracy, confusion, f1_unweighted
    from .painmil import load_head_state, predict_bags

    cfg, run_dir = resolve_config(args)
    _, _, ds, segments = load_corpus(cfg, run_dir)
    subjects = fold_subjects(cfg, np.unique(ds.subject_ids))
    if args.fold is not None:
        subjects = [args.fold]
    bag_fn = _fold_bags(cfg, run_dir, ds, segments)
    rows, skipped = [], []
    for s in subjects:
        head_path = run_dir / f"fold_{s}" / "checkpoints" / "head.pt"
        if not head_path.exists():
            raise InputError(f"missing checkpoint: {head_path}")
        test_bags = [b for b in bag_fn(s) if b.subject_id == s]
        if not test_bags:
            skipped.append(s)
            print(f"fold {s} skipped: no segments for subject {s}")
            continue
        payload = torch.load(head_path, weights_only=False)
        head = load_head_state(cfg.head_config(), test_bags[0].clips.shape[2], payload["state"])
        preds = predict_bags(head, test_bags, cfg.head.test_d)
        conf = confusion([p.label for p in preds], [int(p.predicted) for p in preds])
        rows.append((s, f1_unweighted(conf), accuracy(conf), len(preds)))
    out = run_dir / "eval.csv"
    with open(out, "w", newline="") as fh:
        fh.write("".join(f"# {k}={v}\n" for k, v in sorted(meta(cfg).items())))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["test_subject", "f1", "accuracy", "n_bags"])
        for r in rows:
            w.writerow([r[0], repr(r[1]), repr(r[2]), r[3]])
        for s in skipped:
            w.writerow([s, "skipped", "skipped", 0])
    for r in rows:
        print(f"fold {r[0]}: F1 {r[1]:.3f} accuracy {r[2]:.3f} ({r[3]} bags)")
    return EXIT_RUNTIME if skipped else EXIT_OK


def cmd_retrieve_nn(args) -> int:
    from .evalharness import nn_probe, to_common_frame
    from .mvs import encode

    cfg, run_dir = resolve_config(args)
    _, _, ds, _ = load_corpus(cfg, run_dir)
    s = args.fold if args.fold is not None else fold_subjects(cfg, np.unique(ds.subject_ids))[0]
    model = load_backbone(run_dir, s, cfg)
    N, V = ds.crops.shape[:2]
    rot = np.array([[v.rotation for v in row] for row in ds.views])
    pose, _ = encode(model, ds.crops.reshape(N * V, *ds.crops.shape[2:]))
    world = to_common_frame(pose.reshape(N, V, *pose.shape[1:]), rot)
    gal = np.flatnonzero(ds.subject_ids != s)
    qry = np.flatnonzero(ds.subject_ids == s)[:: max(1, args.stride)]
    vi, vj = args.view_in, args.view_out
    report = nn_probe(world[qry, vi], world[gal, vj], query_poses=ds.poses[qry], gallery_poses=ds.poses[gal],
                      tolerance_deg=args.tolerance, query_ids=[(int(s), float(ds.timestamps[q]), vi, vj) for q in qry])
    out = run_dir / "retrieval" / f"fold_{s}"
    guard_output(out, args.force)
    out.mkdir(parents=True)
    info = meta(cfg)
    with open(out / "retrieval.csv", "w", newline="") as fh:
        fh.write("".join(f"# {k}={v}\n" for k, v in sorted(info.items())))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_frame", "timestamp", "view_in", "view_out", "nn1", "nn2", "nn3", "rank_of_ground_truth"])
        for q, p in zip(qry, report.probes):
            w.writerow([int(q), repr(float(ds.timestamps[q])), vi, vj, *[int(gal[g]) for g in p.ranked[:3]],
                        p.rank_of_ground_truth or ""])
    with open(out / "retrieval_summary.csv", "w", newline="") as fh:
        fh.write("".join(f"# {k}={v}\n" for k, v in sorted(info.items())))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["top1", "top3", "chance_top1", "p_value", "tolerance_deg", "n_queries"])
        w.writerow([repr(report.top1), repr(report.top3), repr(report.chance_top1), repr(report.p_value),
                    args.tolerance, len(qry)])
    for k, (q, p) in enumerate(zip(qry[: args.strips], report.probes)):
        strip = np.concatenate([ds.crops[q, vi]] + [ds.crops[gal[g], vj] for g in p.ranked[:3]], axis=1)
        write_png(out / "strips" / f"q{k:03d}.png", strip / 255.0, info)
    print(f"top-1 {report.top1:.3f} top-3 {report.top3:.3f} chance {report.chance_top1:.3f} p={report.p_value:.3g}")
    return EXIT_OK


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib import image as mpimg

    cfg, run_dir = resolve_config(args)
    if not run_dir.exists():
        raise InputError(f"run not found: {run_dir}")
    out = run_dir / "plots"
    out.mkdir(exist_ok=True)
    info = {k: str(v) for k, v in meta(cfg).items()}
    written = []
    curves = sorted(run_dir.glob("fold_*/mvs_loss.csv"))
    if curves:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for c in curves:
            rows = _read_csv(c)
            ax.plot([int(r["epoch"]) for r in rows], [float(r["total"]) for r in rows], label=c.parent.name)
        ax.set_xlabel("epoch")
        ax.set_ylabel("synthesis loss")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "loss_curves.png", metadata=info)
        plt.close(fig)
        written.append("loss_curves.png")
    if (run_dir / "summary.csv").exists():
        from .evalharness import read_summary

        rows = read_summary(run_dir / "summary.csv")
        fig, ax = plt.subplots(figsize=(5, 3.5))
        x = np.arange(len(rows))
        ax.bar(x - 0.2, [float(r["true_f1"]) for r in rows], 0.4, label="true")
        ax.bar(x + 0.2, [float(r["oracle_f1"]) for r in rows], 0.4, label="oracle")
        ax.set_xticks(x, [r["test_subject"] for r in rows])
        ax.set_xlabel("test subject")
        ax.set_ylabel("F1")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "fold_f1.png", metadata=info)
        plt.close(fig)
        written.append("fold_f1.png")
    for d in sorted(run_dir.glob("retrieval/fold_*/strips")):
        strips = [mpimg.imread(p)[..., :3] for p in sorted(d.glob("q*.png"))]
        if strips:
            write_png(out / f"retrieval_{d.parent.name}.png", np.concatenate(strips, axis=0), info)
            written.append(f"retrieval_{d.parent.name}.png")
    if not written:
        raise InputError(f"nothing to plot under {run_dir}")
    print("wrote " + ", ".join(str(out / w) for w in written))
    return EXIT_OK


def cmd_export_clips(args) -> int:
    from .preprocess import read_segment_index
    from .synthdata import load_image, read_manifest

    cfg, run_dir = resolve_config(args)
    pred_path = run_dir / f"fold_{args.fold}" / "predictions.csv"
    if not pred_path.exists():
        raise InputError(f"missing predictions: {pred_path}")
    seg_path = run_dir / "segments.jsonl"
    if not seg_path.exists():
        raise InputError(f"missing segment index: {seg_path}")
    segments = {s.segment_id: s for s in read_segment_index(seg_path)}
    root = data_root(cfg, run_dir)
    images = {(r.sequence_id, r.view_id, r.timestamp): r.image_path for r in read_manifest(root / "manifest.csv")}
    preds = sorted(_read_csv(pred_path), key=lambda r: -float(r["y_pain"]))[: args.segments]
    out = run_dir / "clips" / f"fold_{args.fold}"
    guard_output(out, args.force)
    step = int(round(cfg.data.fps / cfg.head.clip_fps))
    l = cfg.head.l
    for rank, p in enumerate(preds):
        seg_id, view = p["segment_id"].rsplit("_v", 1)
        seg = segments[seg_id]
        ts = seg.timestamps[::step]
        for c in [int(i) for i in p["selected"].split(";") if i][: args.clips]:
            frames = [load_image(root, images[(seg.sequence_id, int(view), float(t))]) for t in ts[c * l : (c + 1) * l]]
            write_png(out / f"{rank:02d}_{p['segment_id']}_clip{c:03d}.png", np.concatenate(frames, axis=1),
                      {**meta(cfg), "y_pain": p["y_pain"]})
    print(f"exported clips of {len(preds)} segments to {out}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--run-id")
    common.add_argument("--runs-root", type=Path, help=f"runs directory (default ${RUNS_ENV} or ./runs)")
    common.add_argument("--force", action="store_true", help="overwrite this command's existing outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="painpose", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="render the synthetic multi-view corpus").set_defaults(fn=cmd_gen_data)
    sub.add_parser("train-mvs", parents=[common], help="train one synthesis backbone per fold").set_defaults(fn=cmd_train_mvs)
    sub.add_parser("train-pain", parents=[common], help="train and score the MIL heads").set_defaults(fn=cmd_train_pain)
    p = sub.add_parser("eval", parents=[common], help="score saved heads on their test subjects")
    p.add_argument("--fold", type=int)
    p.set_defaults(fn=cmd_eval)
    p = sub.add_parser("retrieve-nn", parents=[common], help="rotated-latent nearest-neighbor pose retrieval")
    p.add_argument("--fold", type=int)
    p.add_argument("--view-in", type=int, default=0)
    p.add_argument("--view-out", type=int, default=1)
    p.add_argument("--tolerance", type=float, default=15.0, help="pose tolerance in degrees")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--strips", type=int, default=8)
    p.set_defaults(fn=cmd_retrieve_nn)
    sub.add_parser("plot", parents=[common], help="render plots from saved CSV/image artifacts").set_defaults(fn=cmd_plot)
    p = sub.add_parser("export-clips", parents=[common], help="dump top clips of the most painful segments")
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--segments", type=int, default=3)
    p.add_argument("--clips", type=int, default=2)
    p.set_defaults(fn=cmd_export_clips)
    return parser


def main(argv=None) -> int:
    from .mvs import MVSError
    from .mvs import TrainingDiverged as MVSDiverged
    from .painmil import PainMILError, TrainingDiverged as HeadDiverged

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, InputError, MVSError, PainMILError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (MVSDiverged, HeadDiverged) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except RuntimeError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
