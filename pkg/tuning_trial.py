"""Scratch harness for tuning desk-scale training recipes. Not part of the package."""
import argparse
import time

import numpy as np

from forensim import tracelab
from forensim.extractor import desk_config, train_phase_a, PhaseAHyper
from forensim.similarity import train_phase_b, PhaseBHyper, SimilaritySystem
from forensim.evalharness import evaluate_pairs

ap = argparse.ArgumentParser()
ap.add_argument("--scenes", type=int, default=24)
ap.add_argument("--eval-scenes", type=int, default=10)
ap.add_argument("--epochs-a", type=int, default=36)
ap.add_argument("--epochs-b", type=int, default=12)
ap.add_argument("--lr-a", type=float, default=0.02)
ap.add_argument("--lr-b", type=float, default=0.02)
ap.add_argument("--batch", type=int, default=25)
ap.add_argument("--pairs", type=int, default=1600)
ap.add_argument("--eval-pairs", type=int, default=360)
ap.add_argument("--patch", type=int, default=128)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--no-constrain", action="store_true")
ap.add_argument("--wide", action="store_true")
ap.add_argument("--overlap", type=float, default=0.0)
ap.add_argument("--symmetrize", action="store_true")
ap.add_argument("--constrain-b", action="store_true")
ap.add_argument("--per-pipeline", type=int, default=480)
ap.add_argument("--per-pair", action="store_true")
ap.add_argument("--swap-aug", action="store_true")
args = ap.parse_args()

T0 = time.time()
bundle = tracelab.build_camera_bundle(
    seed=args.seed,
    patch_size=args.patch,
    train_scenes=args.scenes,
    eval_scenes=args.eval_scenes,
    patches_per_pipeline=args.per_pipeline,
    train_pair_count=args.pairs,
    eval_pair_count=args.eval_pairs,
    tile_overlap=args.overlap,
)
print(f"bundle {time.time()-T0:.0f}s  phaseA={len(bundle.phase_a_patches)} "
      f"pairs={len(bundle.phase_b_pairs)}")
bundle.check_disjoint()

cfg = desk_config(args.patch, 2)
if args.wide:
    from dataclasses import replace
    blocks = tuple(replace(b, kernel_count=b.kernel_count * 3 // 2) for b in cfg.conv_blocks)
    cfg = replace(cfg, conv_blocks=blocks, fc_widths=(48, 48), first_layer_kernels=blocks[0].kernel_count)

t0 = time.time()
ha = PhaseAHyper(epochs=args.epochs_a, lr0=args.lr_a, halve_every=max(4, args.epochs_a // 3),
                 batch_size=args.batch, momentum=0.9, seed=args.seed)
ext = train_phase_a(cfg, bundle.phase_a_patches, ha,
                    constrain_first_layer=not args.no_constrain)
print(f"phase A {time.time()-t0:.0f}s loss {ext.phase_a_history[0]:.3f}->{ext.phase_a_history[-1]:.3f}")

t0 = time.time()
hb = PhaseBHyper(epochs=args.epochs_b, lr0=args.lr_b, halve_every=max(4, args.epochs_b // 3),
                 batch_size=args.batch, momentum=0.9, seed=args.seed)
train_pairs = bundle.phase_b_pairs
if args.swap_aug:
    from forensim.similarity import PairDataset
    train_pairs = PairDataset(
        train_pairs.left + train_pairs.right,
        train_pairs.right + train_pairs.left,
        np.concatenate([train_pairs.labels, train_pairs.labels]),
    )
ext2, sim = train_phase_b(ext, train_pairs, hyper=hb,
                          constrain_first_layer=args.constrain_b)
print(f"phase B {time.time()-t0:.0f}s loss {sim.phase_b_history[0]:.3f}->{sim.phase_b_history[-1]:.3f}")

system = SimilaritySystem(ext2, sim)
tr = evaluate_pairs(system, bundle.phase_b_pairs.slice(range(400)) if hasattr(bundle.phase_b_pairs, "slice") else bundle.phase_b_pairs)
print(f"train pairs: acc={tr.accuracy:.3f}")
for split, pairs in bundle.eval_pairs.items():
    ev = evaluate_pairs(system, pairs, symmetrize=args.symmetrize)
    same = ev.labels == 1
    sacc = float(np.mean(ev.decisions[same] == 1)) if same.any() else float("nan")
    dacc = float(np.mean(ev.decisions[~same] == 0)) if (~same).any() else float("nan")
    print(f"{split}: acc={ev.accuracy:.3f} same={sacc:.3f} diff={dacc:.3f} "
          f"kept={int(ev.kept.sum())}/{len(pairs)}")
    if args.per_pair:
        from collections import defaultdict
        cells = defaultdict(lambda: [0, 0])
        for k, i in enumerate(np.flatnonzero(ev.kept)):
            key = tuple(sorted((pairs.left[i].trace_label, pairs.right[i].trace_label)))
            cells[key][0] += int(ev.decisions[k] == ev.labels[k])
            cells[key][1] += 1
        for key in sorted(cells):
            ok, n = cells[key]
            print(f"    {key[0]:>7s} vs {key[1]:<7s} {ok:3d}/{n:<3d} = {ok/n:.2f}")
print(f"total {time.time()-T0:.0f}s")
