"""End-to-end toy experiment: scenes -> triplets -> filter -> train -> eval.

Everything is a pure function of the run configuration, so replaying a
config snapshot reproduces each output file byte-for-byte, at any worker
count.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, save_config
from .corpus import (
    Manifest,
    build_triplets,
    merge_manifests,
    score_manifest,
    supervision_filter,
    write_manifest,
    TripletRenderer,
)
from .embed import EmbeddingHead
from .evalkit import (
    AccuracyReport,
    EvalReport,
    epoch_window_summary,
    flip_rate,
    two_afc_accuracy,
)
from .parallel import ordered_map
from .rng import stream_key
from .score import Decision, two_afc_decide
from .synth import make_scene
from .train import (
    HeadSnapshot,
    TrainingExample,
    _forward,
    prepare_training_set,
    train_loop,
    write_loss_log,
)


@dataclass
class SplitManifests:
    train: Manifest
    test: Manifest


def split_manifest(man: Manifest, seed: int, holdout_mod: int = 5, min_level_gap: int = 2) -> SplitManifests:
    """Deterministic id-hash holdout; eval side keeps clear severity gaps."""
    train_recs, test_recs = [], []
    for rec in man.records:
        held_out = stream_key("split", seed, rec.triplet_id) % holdout_mod == 0
        gap = abs(rec.distortion_neg.level - rec.distortion_pos.level)
        if held_out and gap >= min_level_gap:
            test_recs.append(rec)
        elif not held_out:
            train_recs.append(rec)
    return SplitManifests(
        Manifest(man.seed, {**man.settings, "split": "train"}, train_recs),
        Manifest(man.seed, {**man.settings, "split": "test"}, test_recs),
    )


def embed_example_images(ex: TrainingExample, weight: np.ndarray, bias: np.ndarray) -> dict[str, np.ndarray]:
    return {role: _forward(ex.feats[role], weight, bias).e for role in ("target", "reference", "pos", "neg")}


@dataclass
class ConditionAccuracy:
    aligned: float
    non_aligned: float

    @property
    def gap(self) -> float:
        return abs(self.aligned - self.non_aligned)


def evaluate_checkpoint(
    examples: list[TrainingExample], snap: HeadSnapshot
) -> tuple[ConditionAccuracy, list[Decision], list[Decision], list[str]]:
    """2AFC decisions under both reference conditions.

    Records are consensus-ordered (pos is the better candidate), so the
    correct choice is always 0.
    """
    aligned, non_aligned, scenes = [], [], []
    for ex in examples:
        e = embed_example_images(ex, snap.weight, snap.bias)
        from .embed import Embedding

        aligned.append(two_afc_decide(Embedding(e["target"]), Embedding(e["pos"]), Embedding(e["neg"]), "aligned"))
        non_aligned.append(
            two_afc_decide(Embedding(e["reference"]), Embedding(e["pos"]), Embedding(e["neg"]), "non_aligned")
        )
        scenes.append(ex.scene_id)
    labels = [0] * len(examples)
    acc = ConditionAccuracy(
        two_afc_accuracy(aligned, labels).overall,
        two_afc_accuracy(non_aligned, labels).overall,
    )
    return acc, aligned, non_aligned, scenes


@dataclass
class PipelineResult:
    manifest: Manifest
    filtered: Manifest
    split: SplitManifests
    final_accuracy: ConditionAccuracy
    window_aligned: tuple[float, float]
    window_non_aligned: tuple[float, float]
    flip: float
    report: EvalReport
    out_dir: str | None = None


def run_toy_pipeline(cfg: RunConfig, out_dir=None) -> PipelineResult:
    """Synthesize scenes, build and filter triplets, train, evaluate."""
    scenes = {
        f"scene{i:02d}": make_scene(
            f"scene{i:02d}", cfg.frames_per_scene, cfg.frame_h, cfg.frame_w, seed=cfg.seed
        )
        for i in range(cfg.scenes)
    }
    manifests = [
        build_triplets(
            frames,
            scene_id,
            seed=cfg.seed,
            per_target=cfg.per_target,
            coverage_range=(cfg.coverage_min, cfg.coverage_max),
            theta_sc=cfg.theta_sc,
        )
        for scene_id, frames in sorted(scenes.items())
    ]
    manifest = merge_manifests(manifests, seed=cfg.seed)

    renderer = TripletRenderer(scenes, cfg.feather_sigma)
    scores = score_manifest(manifest, renderer, ("ssim", "gmsd"), jobs=cfg.jobs)
    filtered = supervision_filter(manifest, scores, ("ssim", "gmsd"), (cfg.tau, cfg.tau))

    split = split_manifest(filtered, cfg.seed)
    trainer_cfg = cfg.trainer_config()
    train_set = prepare_training_set(split.train, scenes, cfg.patch_size, cfg.feather_sigma, cfg.jobs)
    test_set = prepare_training_set(split.test, scenes, cfg.patch_size, cfg.feather_sigma, cfg.jobs)

    ckpt_dir = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_dir = os.path.join(str(out_dir), "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
    result = train_loop(train_set, trainer_cfg, out_dir=ckpt_dir)

    window = min(cfg.window, len(result.checkpoints))
    tail = result.checkpoints[-window:]
    evals = ordered_map(lambda snap: evaluate_checkpoint(test_set, snap), tail, cfg.jobs)
    acc_aligned = [e[0].aligned for e in evals]
    acc_non_aligned = [e[0].non_aligned for e in evals]
    final_acc, dec_aligned, dec_non_aligned, scene_ids = evals[-1]

    window_aligned = epoch_window_summary(acc_aligned, window)
    window_non_aligned = epoch_window_summary(acc_non_aligned, window)
    flip = flip_rate(dec_aligned, dec_non_aligned)

    labels = [0] * len(test_set)
    report = EvalReport(
        accuracy=two_afc_accuracy(dec_aligned, labels, scene_ids),
        flip_rate=flip,
        epoch_window=window_aligned,
        metadata={
            "triplets_built": len(manifest.records),
            "triplets_kept": len(filtered.records),
            "train_size": len(train_set),
            "test_size": len(test_set),
            "accuracy_aligned": final_acc.aligned,
            "accuracy_non_aligned": final_acc.non_aligned,
            "accuracy_gap": final_acc.gap,
            "window_non_aligned_mean": window_non_aligned[0],
            "window_non_aligned_std": window_non_aligned[1],
            "seed": cfg.seed,
        },
    )

    if out_dir is not None:
        out = str(out_dir)
        save_config(cfg, os.path.join(out, "config_snapshot.toml"))
        write_manifest(manifest, os.path.join(out, "manifest.jsonl"))
        scores.save(os.path.join(out, "scores.csv"))
        write_manifest(filtered, os.path.join(out, "filtered.jsonl"))
        write_manifest(split.train, os.path.join(out, "train_split.jsonl"))
        write_manifest(split.test, os.path.join(out, "test_split.jsonl"))
        write_loss_log(result.loss_log, os.path.join(out, "loss_log.csv"))
        with open(os.path.join(out, "report.json"), "w") as fh:
            fh.write(report.to_json() + "\n")
        with open(os.path.join(out, "report.txt"), "w") as fh:
            fh.write(report.to_text() + "\n")

    return PipelineResult(
        manifest=manifest,
        filtered=filtered,
        split=split,
        final_accuracy=final_acc,
        window_aligned=window_aligned,
        window_non_aligned=window_non_aligned,
        flip=flip,
        report=report,
        out_dir=str(out_dir) if out_dir is not None else None,
    )
