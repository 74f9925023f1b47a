"""Decide whether a set of images all came from one capture pipeline.

The statistic behind the verdict: every image pair gets the median of its
cross-image patch similarity scores, and the decision compares the (M-2)th
lowest median against the threshold.  One foreign image among M drags down
exactly M-1 medians, which is precisely what that rank order catches; this
script shows the medians for a consistent set and then for the same set with
one image swapped to a different pipeline.

Pass --model to reuse a checkpoint from train_camera_comparator.py; without
it the script trains a small comparator first (about two minutes).

Run:  python3 demos/database_verification.py [--model demos/out/camera_demo.fsim]
"""

import argparse

from forensim.apps import verify_database
from forensim.checkpoint import load_checkpoint
from forensim.extractor import PhaseAHyper, desk_config, train_phase_a
from forensim.similarity import PhaseBHyper, SimilaritySystem, train_phase_b
from forensim.tracelab import build_camera_bundle, desk_camera_sets, make_scene, render_camera

parser = argparse.ArgumentParser()
parser.add_argument("--model", help="checkpoint to reuse; trains a fresh one when omitted")
args = parser.parse_args()

if args.model:
    system = load_checkpoint(args.model)
    print(f"loaded comparator from {args.model}")
else:
    print("training a small comparator first (pass --model to skip this) ...")
    bundle = build_camera_bundle(
        seed=7, patch_size=128, train_scenes=10, eval_scenes=2,
        patches_per_pipeline=160, train_pair_count=900, eval_pair_count=8,
    )
    ext = train_phase_a(
        desk_config(128), bundle.phase_a_patches,
        PhaseAHyper(epochs=10, lr0=0.02, halve_every=4, batch_size=25, seed=7),
    )
    ext, sim = train_phase_b(
        ext, bundle.phase_b_pairs,
        hyper=PhaseBHyper(epochs=8, lr0=0.02, halve_every=4, batch_size=25, seed=7),
    )
    system = SimilaritySystem(ext, sim)

sets = desk_camera_sets()
main, other = sets["A"][0], sets["B"][0]

# five fresh scenes, all through the same pipeline
scenes = [make_scene(600 + k, size=512) for k in range(5)]
consistent = [render_camera(main, s, seed=20 + k) for k, s in enumerate(scenes)]
# the same database with image 2 captured by a different pipeline
tampered = list(consistent)
tampered[2] = render_camera(other, scenes[2], seed=22)


def report(title, images):
    verdict = verify_database(images, system, patches_per_image=4, threshold=0.5)
    print(f"{title}: {verdict.verdict} (statistic {verdict.statistic:.3f} vs threshold {verdict.threshold})")
    for (i, j), median in sorted(verdict.pair_medians.items()):
        print(f"    images {i}-{j}: median score {median:.3f}")


report("all five from one pipeline", consistent)
report("image 2 swapped to another pipeline", tampered)
