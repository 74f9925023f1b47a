"""Command-line workflows: corpus synthesis, training, comparison, applications.

Every subcommand prints line-delimited JSON records on stdout; failures print
one machine-readable error record on stderr and exit nonzero.  Global flags
override FORENSIM_* environment variables, which override the JSON config
file, which overrides defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import apps, checkpoint, evalharness, tracelab
from .config import Settings, resolve_settings, settings_record
from .errors import ConfigurationError, ForensimError
from .extractor import ExtractorModel, PhaseAHyper, desk_config, paper_config, train_phase_a
from .patches import EntropyThresholds, Patch, center_crop, entropy, tile
from .similarity import PhaseBHyper, SimilaritySystem, train_phase_b


def _emit(record: dict):
    sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")


def _load_image(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"image file {path} does not exist")
    return np.asarray(Image.open(p).convert("RGB"))


def _load_system(settings: Settings) -> SimilaritySystem:
    if not settings.model:
        raise ConfigurationError("no model checkpoint given (use --model or FORENSIM_MODEL)")
    loaded = checkpoint.load_checkpoint(settings.model)
    if isinstance(loaded, ExtractorModel):
        raise ConfigurationError(
            f"{settings.model} holds a phase-A extractor only; run train-b to get a usable comparator"
        )
    # explicit settings override what the checkpoint stored; untouched
    # defaults keep the checkpoint's own calibration
    if settings.sources.get("eta") != "default":
        loaded.threshold = settings.eta
    band_set = {settings.sources.get("entropy_min"), settings.sources.get("entropy_max")} - {"default"}
    if band_set:
        loaded.entropy_thresholds = EntropyThresholds(settings.entropy_min, settings.entropy_max)
    return loaded


def _settings(args) -> Settings:
    return resolve_settings(flags={k: getattr(args, k, None) for k in
                                   ("model", "eta", "threshold", "patch_size", "seed",
                                    "entropy_min", "entropy_max", "overlap", "config")})


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    s = _settings(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    if args.kind == "camera":
        sets = tracelab.desk_camera_sets()
        models = sets["A"] + sets["B"] + sets["C"]
        scenes = tracelab.scene_bank(args.scenes, s.seed, size=args.scene_size)
        for model in models:
            (out / model.id).mkdir(exist_ok=True)
            for si, scene in enumerate(scenes):
                img = tracelab.render_camera(model, scene, seed=s.seed)
                rel = f"{model.id}/scene{si:03d}.png"
                Image.fromarray(img).save(out / rel)
                split = "train" if si < args.scenes * 3 // 4 else "eval"
                records.append({"path": rel, "pipeline_id": model.id, "split": split, "seed": s.seed})
    elif args.kind == "manipulation":
        base = tracelab.SyntheticCameraModel("manip_base", "RGGB", "bilinear", 0.45, 0.3, 2.0, 95)
        scenes = tracelab.scene_bank(args.scenes, s.seed, size=args.scene_size)
        rng = np.random.default_rng(s.seed)
        for si, scene in enumerate(scenes):
            rendered = tracelab.render_camera(base, scene, seed=s.seed)
            for name, spec in tracelab.MANIPULATIONS.items():
                param = spec.sample_parameter(rng)
                img = tracelab.apply_manipulation(rendered, spec, param)
                rel = f"{name}/scene{si:03d}.png"
                (out / name).mkdir(exist_ok=True)
                Image.fromarray(img).save(out / rel)
                split = "train" if spec.known and si < args.scenes * 3 // 4 else "eval"
                records.append(
                    {"path": rel, "manipulation": name, "parameter": param, "split": split, "seed": s.seed}
                )
    elif args.kind == "splice":
        cases = tracelab.splice_corpus(args.forged, args.clean, seed=s.seed, scene_size=args.scene_size)
        for i, case in enumerate(cases):
            rel = f"case{i:03d}.png"
            Image.fromarray(case.image).save(out / rel)
            rec = {"path": rel, "forged": case.forged, "host": case.host_id,
                   "donor": case.donor_id, "split": "eval", "seed": s.seed}
            if case.forged:
                mask_rel = f"case{i:03d}_mask.png"
                Image.fromarray(case.mask * 255).save(out / mask_rel)
                rec["mask"] = mask_rel
            records.append(rec)
    tracelab.write_manifest(records, out / "manifest.jsonl")
    _emit({"command": "synth", "kind": args.kind, "out": str(out), "items": len(records)})
    return 0


def _phase_a_pool(settings: Settings, args):
    if getattr(args, "data", None):
        root = Path(args.data)
        pool = []
        for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            for img_path in sorted(class_dir.glob("*.png")) + sorted(class_dir.glob("*.jpg")):
                img = _load_image(img_path)
                pool.extend(
                    tile(img, settings.patch_size, 0.0, source_id=str(img_path), trace_label=class_dir.name)
                )
        if not pool:
            raise ConfigurationError(f"no class-labeled images under {root}")
        return pool
    bundle = tracelab.build_camera_bundle(
        seed=settings.seed,
        patch_size=settings.patch_size,
        train_scenes=args.scenes,
        eval_scenes=2,
        patches_per_pipeline=args.patches_per_class,
        train_pair_count=4,
        narrow_pair_count=4,
        eval_pair_count=4,
    )
    return bundle.phase_a_patches


def _cmd_train_a(args) -> int:
    s = _settings(args)
    config = paper_config(s.patch_size) if args.profile == "paper" else desk_config(s.patch_size)
    hyper = PhaseAHyper(epochs=args.epochs, lr0=args.lr0, batch_size=args.batch_size, seed=s.seed)
    pool = _phase_a_pool(s, args)
    model = train_phase_a(config, pool, hyper)
    checkpoint.save_checkpoint(model, args.out)
    _emit(
        {
            "command": "train-a",
            "out": args.out,
            "classes": model.provenance.get("classes"),
            "patches": len(pool),
            "final_loss": model.phase_a_history[-1],
            "loss_history": model.phase_a_history,
        }
    )
    return 0


def _cmd_train_b(args) -> int:
    s = _settings(args)
    loaded = checkpoint.load_checkpoint(args.base)
    if isinstance(loaded, SimilaritySystem):
        extractor = loaded.extractor
    else:
        extractor = loaded
    bundle = tracelab.build_camera_bundle(
        seed=s.seed,
        patch_size=extractor.config.patch_size,
        train_scenes=args.scenes,
        eval_scenes=2,
        train_pair_count=args.pairs,
        narrow_pair_count=4,
        eval_pair_count=4,
    )
    hyper = PhaseBHyper(epochs=args.epochs, lr0=args.lr0, batch_size=args.batch_size, seed=s.seed)
    extractor, sim = train_phase_b(
        extractor, bundle.phase_b_pairs, hyper=hyper, freeze_extractor=args.frozen,
        provenance=bundle.provenance(),
    )
    system = SimilaritySystem(
        extractor, sim, threshold=s.eta,
        entropy_thresholds=EntropyThresholds(s.entropy_min, s.entropy_max),
    )
    checkpoint.save_checkpoint(system, args.out)
    _emit(
        {
            "command": "train-b",
            "out": args.out,
            "pairs": len(bundle.phase_b_pairs),
            "frozen": bool(args.frozen),
            "final_loss": sim.phase_b_history[-1],
        }
    )
    return 0


def _cmd_compare(args) -> int:
    s = _settings(args)
    system = _load_system(s)
    size = system.patch_size
    a = Patch(center_crop(_load_image(args.image_a), size))
    b = Patch(center_crop(_load_image(args.image_b), size))
    result = system.compare(a, b, enforce_entropy=not args.no_entropy_filter)
    _emit({"command": "compare", **result.to_json(),
           "decision_bit": 1 if result.decision else 0})
    return 0


def _cmd_localize(args) -> int:
    s = _settings(args)
    system = _load_system(s)
    image = _load_image(args.image)
    try:
        r, c = (int(v) for v in args.ref.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"--ref expects 'row,col', got {args.ref!r}") from exc
    lmap = apps.localize(image, system, (r, c), eta=system.threshold,
                         block_size=s.patch_size, overlap=s.overlap)
    doc = lmap.to_json()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, sort_keys=True))
    if args.overlay:
        Image.fromarray(apps.overlay_image(image, lmap)).save(args.overlay)
    flags = lmap.flags()
    _emit({"command": "localize", "grid": doc["grid_dims"], "reference": doc["reference"],
           "eta": doc["eta"], "flagged": int(flags.sum()),
           "out": args.out, "overlay": args.overlay})
    return 0


def _cmd_detect(args) -> int:
    s = _settings(args)
    system = _load_system(s)
    image = _load_image(args.image)
    forged, score = apps.detect_forgery(image, system, threshold=s.threshold,
                                        block_size=s.patch_size, overlap=s.overlap)
    _emit({"command": "detect", "image": args.image, "score": score,
           "threshold": s.threshold, "forged": bool(forged)})
    return 0


def _cmd_verify_db(args) -> int:
    s = _settings(args)
    system = _load_system(s)
    root = Path(args.directory)
    paths = sorted(list(root.glob("*.png")) + list(root.glob("*.jpg")) + list(root.glob("*.jpeg")))
    if len(paths) < 2:
        raise ConfigurationError(f"{root} holds {len(paths)} images; need at least 2")
    images = [_load_image(p) for p in paths]
    verdict = apps.verify_database(
        images, system, patches_per_image=args.patches_per_image,
        threshold=s.threshold, image_ids=[p.name for p in paths],
    )
    _emit({"command": "verify-db", **verdict.to_json()})
    return 0


def _cmd_eval(args) -> int:
    s = _settings(args)
    system = _load_system(s)
    bundle = tracelab.build_camera_bundle(
        seed=s.seed,
        patch_size=system.patch_size,
        train_scenes=2,
        eval_scenes=args.scenes,
        train_pair_count=4,
        narrow_pair_count=4,
        eval_pair_count=args.pairs,
    )
    records = [{"settings": settings_record(s)}]
    evaluations = {}
    for split, pairs in sorted(bundle.eval_pairs.items()):
        ev = evalharness.evaluate_pairs(system, pairs)
        evaluations[split] = ev
        records.append({"split": split, "accuracy": ev.accuracy, "pairs": int(len(ev.labels))})
    ev = evaluations["known_known"]
    idx = np.flatnonzero(ev.kept)
    pairs = bundle.eval_pairs["known_known"]
    fl = system.extractor.extract_batch([pairs.left[i] for i in idx])
    fr = system.extractor.extract_batch([pairs.right[i] for i in idx])
    for metric, res in evalharness.distance_baselines(fl, fr, pairs.labels[idx]).items():
        records.append({"baseline": metric, "accuracy": res.accuracy, "threshold": res.threshold})
    if args.matrix:
        cm = evalharness.comparison_matrix(
            _subset_pairs(pairs, idx), decisions=ev.decisions
        )
        evalharness.render_comparison_matrix(cm, args.matrix)
        records.append({"matrix_image": args.matrix})
    text = evalharness.report_lines(records)
    if args.report:
        Path(args.report).write_text(text)
    sys.stdout.write(text)
    return 0


def _subset_pairs(pairs, idx):
    from .similarity import PairDataset

    return PairDataset([pairs.left[i] for i in idx], [pairs.right[i] for i in idx], pairs.labels[idx])


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model checkpoint path")
    common.add_argument("--eta", type=float, help="similarity decision threshold")
    common.add_argument("--threshold", type=float, help="application decision threshold")
    common.add_argument("--patch-size", dest="patch_size", type=int, choices=(128, 256))
    common.add_argument("--seed", type=int)
    common.add_argument("--entropy-min", dest="entropy_min", type=float)
    common.add_argument("--entropy-max", dest="entropy_max", type=float)
    common.add_argument("--overlap", type=float)
    common.add_argument("--config", help="JSON config file")

    parser = argparse.ArgumentParser(prog="forensim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("camera", "manipulation", "splice"), default="camera")
    p.add_argument("--scenes", type=int, default=6)
    p.add_argument("--scene-size", dest="scene_size", type=int, default=512)
    p.add_argument("--forged", type=int, default=8)
    p.add_argument("--clean", type=int, default=8)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train-a", parents=[common], help="pretrain the feature extractor")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="directory of per-class image subdirectories")
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--lr0", type=float, default=0.001)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=50)
    p.add_argument("--scenes", type=int, default=8)
    p.add_argument("--patches-per-class", dest="patches_per_class", type=int, default=128)
    p.set_defaults(func=_cmd_train_a)

    p = sub.add_parser("train-b", parents=[common], help="train the pair comparator")
    p.add_argument("--base", required=True, help="phase-A checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--frozen", action="store_true", help="hold the extractor fixed")
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--lr0", type=float, default=0.005)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=50)
    p.add_argument("--scenes", type=int, default=8)
    p.add_argument("--pairs", type=int, default=600)
    p.set_defaults(func=_cmd_train_b)

    p = sub.add_parser("compare", parents=[common], help="same-or-different trace for two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--no-entropy-filter", action="store_true")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("localize", parents=[common], help="score blocks against a reference block")
    p.add_argument("image")
    p.add_argument("--ref", required=True, help="reference block as row,col")
    p.add_argument("--out", help="write the map document here")
    p.add_argument("--overlay", help="write a rendered overlay image here")
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("detect", parents=[common], help="mean-similarity forgery check")
    p.add_argument("image")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("verify-db", parents=[common], help="database consistency verdict")
    p.add_argument("directory")
    p.add_argument("--patches-per-image", dest="patches_per_image", type=int, default=4)
    p.set_defaults(func=_cmd_verify_db)

    p = sub.add_parser("eval", parents=[common], help="desk-scale evaluation report")
    p.add_argument("--scenes", type=int, default=3)
    p.add_argument("--pairs", type=int, default=120)
    p.add_argument("--report", help="also write records to this file")
    p.add_argument("--matrix", help="write the rate-matrix image here")
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ForensimError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "OSError", "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
