"""Command-line entry point for the full pipeline.

Configuration precedence: flags > --config TOML file > defaults. Commands
that produce output directories write the resolved config snapshot next to
their outputs so any run can be replayed bit-identically.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, merge_config, save_config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nariqa",
        description="Non-aligned-reference image quality toolkit.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="TOML config file (flags override it)")
    parser.add_argument("--seed", type=int, help="global seed override")
    parser.add_argument("--jobs", type=int, help="data-parallel worker bound")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow", help="dense optical flow between two frames")
    p.add_argument("--prev", required=True)
    p.add_argument("--curr", required=True)
    p.add_argument("--out", required=True, help="binary flow dump path")

    p = sub.add_parser("troi", help="motion mask from two frames")
    p.add_argument("--prev", required=True)
    p.add_argument("--curr", required=True)
    p.add_argument("--coverage", type=float, required=True)
    p.add_argument("--out", required=True, help="mask PNG (0/255 gray)")
    p.add_argument("--soft-out", help="feathered mask PNG")

    p = sub.add_parser("distort", help="apply a catalog distortion")
    p.add_argument("--input", required=True)
    p.add_argument("--type", required=True, dest="type_id")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--coverage", type=float, help="motion-mask coverage (needs --prev)")
    p.add_argument("--prev", help="previous frame for the motion mask")
    p.add_argument("--distortion-seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("triplets", help="corpus construction and filtering")
    tsub = p.add_subparsers(dest="subcommand", required=True)
    tb = tsub.add_parser("build", help="build a triplet manifest from frames")
    tb.add_argument("--frames-dir", required=True, help="one subdirectory of PNGs per scene")
    tb.add_argument("--out", required=True)
    tf = tsub.add_parser("filter", help="dual-scorer supervision filter")
    tf.add_argument("--manifest", required=True)
    tf.add_argument("--frames-dir", help="render and score with in-repo scorers")
    tf.add_argument("--scores", help="existing score table CSV (external scorers)")
    tf.add_argument("--scorers", nargs=2, default=["ssim", "gmsd"])
    tf.add_argument("--scores-out", help="write the computed score table here")
    tf.add_argument("--out", required=True)

    p = sub.add_parser("embed", help="embed an image with a trained head")
    p.add_argument("--input", required=True)
    p.add_argument("--head", help="checkpoint file; omitted = fresh head from seed")
    p.add_argument("--out", required=True)
    p.add_argument("--image-level", action="store_true", help="write the pooled vector")

    p = sub.add_parser("train", help="train the embedding head on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("score", help="cosine quality of test vs reference")
    p.add_argument("--ref", required=True, help="PNG or NVEB embedding file")
    p.add_argument("--test", required=True)
    p.add_argument("--head", help="checkpoint for PNG inputs")
    p.add_argument("--kind", choices=["aligned", "non_aligned"], default="non_aligned")

    p = sub.add_parser("heatmap", help="patch-mismatch heatmap")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--head", help="checkpoint for PNG inputs")
    p.add_argument("--out-png")
    p.add_argument("--out-csv")

    p = sub.add_parser("eval", help="evaluate against labels or DMOS tables")
    p.add_argument("--manifest", help="labeled manifest (2AFC accuracy mode)")
    p.add_argument("--frames-dir")
    p.add_argument("--head")
    p.add_argument("--pred", help="CSV item_id,score (correlation mode)")
    p.add_argument("--dmos", help="CSV item_id,dmos")
    p.add_argument("--orientation", choices=["lower_better", "higher_better"], default="higher_better")
    p.add_argument("--report", help="write JSON report here")

    p = sub.add_parser("study", help="annotation study server")
    ssub = p.add_subparsers(dest="subcommand", required=True)
    sserve = ssub.add_parser("serve")
    sserve.add_argument("--manifest", required=True)
    sserve.add_argument("--port", type=int, default=8765)
    sserve.add_argument("--frames-dir", help="render triplet images for the UI")
    sserve.add_argument("--log", default="votes.jsonl")
    sserve.add_argument("--ui", help="static UI bundle directory")
    sserve.add_argument("--show-aligned", action="store_true")
    sexport = ssub.add_parser("export")
    sexport.add_argument("--manifest", required=True)
    sexport.add_argument("--log", required=True)
    sexport.add_argument("--out", required=True)
    sexport.add_argument("--sidecar")

    sub.add_parser("selftest", help="gradient checks and oracle suites")

    return parser


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    return merge_config(cfg, overrides, source="flags")


def _load_frames_dir(frames_dir):
    """Scene subdirectories of numbered PNGs; a flat directory is one scene."""
    from .imagecore import load_image

    scenes = {}
    entries = sorted(os.listdir(frames_dir))
    subdirs = [e for e in entries if os.path.isdir(os.path.join(frames_dir, e))]
    if subdirs:
        for scene in subdirs:
            files = sorted(
                f for f in os.listdir(os.path.join(frames_dir, scene)) if f.endswith(".png")
            )
            scenes[scene] = [load_image(os.path.join(frames_dir, scene, f)) for f in files]
    else:
        files = [e for e in entries if e.endswith(".png")]
        scenes[os.path.basename(os.path.normpath(frames_dir))] = [
            load_image(os.path.join(frames_dir, f)) for f in files
        ]
    if not scenes or not any(scenes.values()):
        raise FileNotFoundError(f"no PNG frames under {frames_dir}")
    return scenes


def _embedding_from_file(path, head_path, image_level, cfg):
    from .embed import read_embeddings, patch_features, head_forward, image_embedding
    from .imagecore import PatchGrid, load_image

    if str(path).endswith(".nveb"):
        return read_embeddings(path)
    img = load_image(path)
    head = _load_head(head_path, cfg)
    grid = PatchGrid.for_image(img, cfg.patch_size)
    pe = head_forward(patch_features(img, grid), head)
    return image_embedding(pe) if image_level else pe


def _load_head(head_path, cfg):
    from .embed import EmbeddingHead, FEATURE_DIM
    from .train import load_checkpoint

    if head_path:
        return load_checkpoint(head_path, seed=cfg.seed).head
    return EmbeddingHead.initialize(FEATURE_DIM, cfg.embed_dim, cfg.seed)


def _cmd_flow(args, cfg) -> int:
    from .flowtroi import estimate_flow, write_flow
    from .imagecore import load_image

    flow = estimate_flow(load_image(args.prev), load_image(args.curr))
    write_flow(flow, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_troi(args, cfg) -> int:
    from .flowtroi import estimate_flow, feather_mask, flow_magnitude, troi_from_flow
    from .imagecore import load_image, save_gray_png

    flow = estimate_flow(load_image(args.prev), load_image(args.curr))
    mask = troi_from_flow(flow_magnitude(flow), args.coverage)
    save_gray_png(mask.bits.astype(np.uint8) * 255, args.out)
    if args.soft_out:
        save_gray_png(feather_mask(mask, cfg.feather_sigma).soft, args.soft_out)
    print(f"coverage achieved: {mask.coverage:.4f}")
    return 0


def _cmd_distort(args, cfg) -> int:
    from .distort import DistortionSpec, apply_distortion, apply_masked
    from .flowtroi import estimate_flow, feather_mask, flow_magnitude, troi_from_flow
    from .imagecore import load_image, save_image

    img = load_image(args.input)
    spec = DistortionSpec(args.type_id, args.level, seed=args.distortion_seed)
    if args.coverage is not None:
        if not args.prev:
            raise ConfigError("--coverage requires --prev for the motion mask")
        flow = estimate_flow(load_image(args.prev), img)
        mask = feather_mask(troi_from_flow(flow_magnitude(flow), args.coverage), cfg.feather_sigma)
        out = apply_masked(img, spec, mask)
    else:
        out = apply_distortion(img, spec)
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_triplets(args, cfg) -> int:
    from .corpus import (
        ScoreTable,
        build_triplets,
        merge_manifests,
        read_manifest,
        score_manifest,
        supervision_filter,
        write_manifest,
        TripletRenderer,
    )

    if args.subcommand == "build":
        scenes = _load_frames_dir(args.frames_dir)
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
        write_manifest(manifest, args.out)
        save_config(cfg, args.out + ".config.toml")
        print(f"wrote {len(manifest.records)} records to {args.out}")
        return 0

    manifest = read_manifest(args.manifest)
    if args.scores:
        table = ScoreTable.load(args.scores)
    elif args.frames_dir:
        renderer = TripletRenderer(_load_frames_dir(args.frames_dir), cfg.feather_sigma)
        table = score_manifest(manifest, renderer, tuple(args.scorers), jobs=cfg.jobs)
        if args.scores_out:
            table.save(args.scores_out)
    else:
        raise ConfigError("triplets filter needs --scores or --frames-dir")
    filtered = supervision_filter(manifest, table, tuple(args.scorers), (cfg.tau, cfg.tau))
    write_manifest(filtered, args.out)
    sup = filtered.settings["supervision"]
    print(
        f"kept {sup['kept']} / {len(manifest.records)} "
        f"(ambiguous {sup['dropped_ambiguous']}, disagreement {sup['dropped_disagreement']})"
    )
    return 0


def _cmd_embed(args, cfg) -> int:
    from .embed import write_embeddings

    obj = _embedding_from_file(args.input, args.head, args.image_level, cfg)
    write_embeddings(obj, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_train(args, cfg) -> int:
    from .corpus import read_manifest
    from .train import prepare_training_set, train_loop, write_loss_log

    manifest = read_manifest(args.manifest)
    scenes = _load_frames_dir(args.frames_dir)
    os.makedirs(args.out_dir, exist_ok=True)
    examples = prepare_training_set(manifest, scenes, cfg.patch_size, cfg.feather_sigma, cfg.jobs)
    result = train_loop(examples, cfg.trainer_config(), out_dir=args.out_dir)
    write_loss_log(result.loss_log, os.path.join(args.out_dir, "loss_log.csv"))
    save_config(cfg, os.path.join(args.out_dir, "config_snapshot.toml"))
    print(f"trained {cfg.epochs} epochs, {result.state.step} steps -> {args.out_dir}")
    return 0


def _cmd_score(args, cfg) -> int:
    from .embed import Embedding, image_embedding
    from .score import quality_score

    ref = _embedding_from_file(args.ref, args.head, True, cfg)
    test = _embedding_from_file(args.test, args.head, True, cfg)
    if not isinstance(ref, Embedding):
        ref = image_embedding(ref)
    if not isinstance(test, Embedding):
        test = image_embedding(test)
    result = quality_score(ref, test, args.kind)
    print(f"{result.value:.6f}")
    return 0


def _cmd_heatmap(args, cfg) -> int:
    from .embed import PatchEmbeddings
    from .score import patch_mismatch_heatmap, save_heatmap_csv, save_heatmap_png

    ref = _embedding_from_file(args.ref, args.head, False, cfg)
    test = _embedding_from_file(args.test, args.head, False, cfg)
    if not isinstance(ref, PatchEmbeddings) or not isinstance(test, PatchEmbeddings):
        raise ConfigError("heatmap needs patch-level embeddings (grids)")
    hm = patch_mismatch_heatmap(ref, test, beta=cfg.heatmap_beta)
    if args.out_png:
        save_heatmap_png(hm, args.out_png)
    if args.out_csv:
        save_heatmap_csv(hm, args.out_csv)
    print(f"heatmap peak: {hm.processed.max():.4f}")
    return 0


def _cmd_eval(args, cfg) -> int:
    from .evalkit import EvalReport, dmos_correlations, read_dmos_csv

    report = EvalReport(metadata={})
    if args.pred and args.dmos:
        import csv as _csv

        preds = {}
        with open(args.pred, newline="") as fh:
            for row in _csv.DictReader(fh):
                preds[row["item_id"]] = float(row["score"])
        dmos = read_dmos_csv(args.dmos)
        items = sorted(set(preds) & set(dmos))
        p, s = dmos_correlations(
            [preds[i] for i in items], [dmos[i] for i in items], args.orientation
        )
        report.plcc, report.srcc = p, s
        report.metadata["items"] = len(items)
    elif args.manifest:
        report = _eval_manifest(args, cfg)
    else:
        raise ConfigError("eval needs --manifest or --pred/--dmos")
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report.to_json() + "\n")
    print(report.to_text())
    return 0


def _eval_manifest(args, cfg):
    from .corpus import read_manifest
    from .embed import Embedding
    from .evalkit import EvalReport, flip_rate, two_afc_accuracy
    from .pipeline import embed_example_images
    from .score import two_afc_decide
    from .train import prepare_training_set

    if not args.frames_dir:
        raise ConfigError("eval --manifest needs --frames-dir")
    manifest = read_manifest(args.manifest)
    labeled = [rec for rec in manifest.records if rec.label is not None]
    if not labeled:
        raise ConfigError("manifest has no labeled records")
    scenes = _load_frames_dir(args.frames_dir)
    sub = type(manifest)(manifest.seed, manifest.settings, labeled)
    examples = prepare_training_set(sub, scenes, cfg.patch_size, cfg.feather_sigma, cfg.jobs)
    head = _load_head(args.head, cfg)
    aligned, non_aligned, scene_ids = [], [], []
    for ex in examples:
        e = embed_example_images(ex, head.weight, head.bias)
        aligned.append(two_afc_decide(Embedding(e["target"]), Embedding(e["pos"]), Embedding(e["neg"])))
        non_aligned.append(
            two_afc_decide(Embedding(e["reference"]), Embedding(e["pos"]), Embedding(e["neg"]), "non_aligned")
        )
        scene_ids.append(ex.scene_id)
    labels = [rec.label for rec in labeled]
    report = EvalReport(
        accuracy=two_afc_accuracy(non_aligned, labels, scene_ids),
        flip_rate=flip_rate(aligned, non_aligned),
        metadata={
            "accuracy_aligned": two_afc_accuracy(aligned, labels).overall,
            "accuracy_non_aligned": two_afc_accuracy(non_aligned, labels).overall,
            "reference_kind": "non_aligned",
        },
    )
    return report


def _cmd_study(args, cfg) -> int:
    from .corpus import read_manifest
    from .studysrv import StudyAssets, StudyState, make_server

    manifest = read_manifest(args.manifest)
    if args.subcommand == "export":
        state = StudyState(manifest, log_path=args.log, min_raters=cfg.min_raters, theta=cfg.theta)
        labeled = state.export_labels(args.out, args.sidecar)
        state.close()
        print(f"exported {len(labeled.records)} labeled records to {args.out}")
        return 0
    assets = None
    if args.frames_dir:
        assets = StudyAssets(manifest, _load_frames_dir(args.frames_dir), args.show_aligned)
    state = StudyState(
        manifest, log_path=args.log, min_raters=cfg.min_raters, theta=cfg.theta, seed=cfg.seed
    )
    server = make_server(state, assets, port=args.port, ui_dir=args.ui)
    print(f"study server on http://127.0.0.1:{server.server_address[1]}/ (ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        state.close()
    return 0


def _cmd_selftest(args, cfg) -> int:
    import tempfile

    from .corpus import ssim
    from .distort import DistortionSpec, apply_distortion, catalog_list
    from .evalkit import plcc, srcc
    from .flowtroi import estimate_flow, flow_magnitude, select_top_fraction
    from .imagecore import Image, load_image, mse, save_image
    from .score import patch_mismatch_heatmap
    from .embed import PatchEmbeddings
    from .synth import shifted_pair, textured_rgb
    from .train import check_gradients, kl_regularizer

    failures = []

    def check(name, ok):
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
        if not ok:
            failures.append(name)

    err = check_gradients(seed=cfg.seed)
    check(f"gradient fidelity ({err:.2e} <= 1e-4)", err <= 1e-4)
    corrupted = check_gradients(seed=cfg.seed, corruption_factor=1.01)
    check(f"gradient mutation detected ({corrupted:.2e} > 1e-3)", corrupted > 1e-3)
    kl = kl_regularizer(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1.0)
    check("kl closed-form case", abs(kl - 0.46212) <= 1e-4)
    check("plcc hand case", abs(plcc([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) <= 1e-12)
    check("srcc hand case", abs(srcc([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) <= 1e-12)

    img = Image(textured_rgb(64, 64, ("selftest",))).to_uint8()
    zero_flow = estimate_flow(img, img)
    check("zero flow on identical frames", not zero_flow.u.any() and not zero_flow.v.any())
    prev, curr = shifted_pair(64, 64, 3, -2, seed=cfg.seed)
    f = estimate_flow(prev, curr)
    ok = (f.u[20:-20, 20:-20] == 3) & (f.v[20:-20, 20:-20] == -2)
    check("translation recovery >= 95%", ok.mean() >= 0.95)
    mag = flow_magnitude(f)
    bits = select_top_fraction(mag, 0.5)
    check("troi pre-cleanup count exact", bits.sum() == int(np.ceil(0.5 * mag.size)))

    check("catalog has 34 types", len(catalog_list()) == 34)
    mses = [
        mse(img, apply_distortion(img, DistortionSpec("gaussian-blur", lv)))
        for lv in (1, 3, 5)
    ]
    check("blur severity increases mse", mses[0] < mses[1] < mses[2])
    check("ssim identity", abs(ssim(img, img) - 1.0) <= 1e-12)

    rng = np.random.default_rng(cfg.seed)
    vecs = rng.normal(size=(9, 8))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    grid = PatchEmbeddings(3, 3, vecs)
    hm = patch_mismatch_heatmap(grid, grid)
    check("identical-grid heatmap all zero", not hm.processed.any())

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "x.png")
        save_image(img, path)
        check("codec round-trip", np.array_equal(load_image(path).data, img.data))

    if failures:
        print(f"{len(failures)} self-test failure(s)")
        return 1
    print("all self-tests passed")
    return 0


_COMMANDS = {
    "flow": _cmd_flow,
    "troi": _cmd_troi,
    "distort": _cmd_distort,
    "triplets": _cmd_triplets,
    "embed": _cmd_embed,
    "train": _cmd_train,
    "score": _cmd_score,
    "heatmap": _cmd_heatmap,
    "eval": _cmd_eval,
    "study": _cmd_study,
    "selftest": _cmd_selftest,
}


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _resolve_config(args)
        return _COMMANDS[args.command](args, cfg)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
