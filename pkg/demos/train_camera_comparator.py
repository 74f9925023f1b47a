"""Train a small camera-trace comparator and measure what it learned.

Walks the full recipe end to end at toy scale: render scenes through several
synthetic camera pipelines, pretrain the extractor to classify pipelines,
retrain the pair head to answer "same pipeline or not", then evaluate on
held-out scenes, including pipelines never seen in training.  Finishes in a
couple of minutes on one CPU core; accuracies land well below the full-scale
numbers but the orderings (known above unknown, learned above raw distances)
already show.

Run:  python3 demos/train_camera_comparator.py [--out demos/out]
"""

import argparse
import pathlib

import numpy as np

from forensim.checkpoint import save_checkpoint
from forensim.evalharness import distance_baselines, evaluate_pairs
from forensim.extractor import PhaseAHyper, desk_config, train_phase_a
from forensim.similarity import PhaseBHyper, SimilaritySystem, train_phase_b
from forensim.tracelab import build_camera_bundle

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="demos/out", help="where to write the checkpoint")
args = parser.parse_args()

# --- the experiment data: 8 pipelines, disjoint train/eval scenes ----------
print("rendering scenes through the pipeline sets ...")
bundle = build_camera_bundle(
    seed=7,
    patch_size=128,
    train_scenes=10,
    eval_scenes=6,
    patches_per_pipeline=160,
    train_pair_count=900,
    narrow_pair_count=300,
    eval_pair_count=240,
)
print(f"  phase A patches: {len(bundle.phase_a_patches)}")
print(f"  training pairs:  {len(bundle.phase_b_pairs)} (balance {bundle.phase_b_pairs.balance():.2f})")

# --- phase A: learn features by classifying the known pipelines ------------
print("phase A: pipeline classification pretraining ...")
extractor = train_phase_a(
    desk_config(128),
    bundle.phase_a_patches,
    PhaseAHyper(epochs=10, lr0=0.02, halve_every=4, batch_size=25, seed=7),
)
hist = extractor.phase_a_history
print(f"  loss {hist[0]:.3f} -> {hist[-1]:.3f} over {len(hist)} epochs")

# --- phase B: learn the pair decision on top ---------------------------------
print("phase B: same-or-different pair training ...")
extractor, sim = train_phase_b(
    extractor,
    bundle.phase_b_pairs,
    hyper=PhaseBHyper(epochs=8, lr0=0.02, halve_every=4, batch_size=25, seed=7),
    provenance=bundle.provenance(),
)
print(f"  loss {sim.phase_b_history[0]:.3f} -> {sim.phase_b_history[-1]:.3f}")

system = SimilaritySystem(extractor, sim)

# --- evaluation: held-out scenes, three pipeline regimes --------------------
for split, pairs in bundle.eval_pairs.items():
    ev = evaluate_pairs(system, pairs, symmetrize=True)
    print(f"  {split:17s} accuracy {ev.accuracy:.3f} on {len(ev.labels)} kept pairs")

# --- how much does the learned comparison buy over raw distances? ----------
pairs = bundle.eval_pairs["known_known"]
ev = evaluate_pairs(system, pairs, symmetrize=True)
idx = np.flatnonzero(ev.kept)
fl = system.extractor.extract_batch([pairs.left[i] for i in idx])
fr = system.extractor.extract_batch([pairs.right[i] for i in idx])
for name, result in sorted(distance_baselines(fl, fr, ev.labels).items()):
    print(f"  {name:12s} best-threshold accuracy {result.accuracy:.3f}")
print(f"  learned      accuracy {ev.accuracy:.3f}")

out_dir = pathlib.Path(args.out)
out_dir.mkdir(parents=True, exist_ok=True)
path = out_dir / "camera_demo.fsim"
save_checkpoint(system, path)
print(f"saved the trained system to {path}")
