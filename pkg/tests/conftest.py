"""Shared fixtures.

Two tiers: `micro_*`/`quick_*` fixtures are deliberately tiny and exercise
wiring, not recognition quality.  The `desk_*` fixtures below them train the
full desk-scale systems that the acceptance gates measure; they are expensive
(minutes each) and session-scoped so the whole suite pays for them once."""

import copy

import numpy as np
import pytest
from PIL import Image

from forensim import tracelab
from forensim.checkpoint import save_checkpoint
from forensim.extractor import PhaseAHyper, desk_config, train_phase_a
from forensim.patches import entropy as patch_entropy
from forensim.similarity import PairDataset, PhaseBHyper, SimilaritySystem, train_phase_b

# single place to adjust the desk-scale training recipe used by the gates
DESK_SEED = 0
DESK_TRAIN_SCENES = 32
DESK_EVAL_SCENES = 10
DESK_PAIRS = 4800
DESK_EVAL_PAIRS = 360
DESK_PHASE_A = dict(epochs=36, lr0=0.02, halve_every=12, batch_size=25, momentum=0.9)
DESK_PHASE_B = dict(epochs=12, lr0=0.02, halve_every=4, batch_size=25, momentum=0.9)


@pytest.fixture(scope="session")
def micro_bundle():
    return tracelab.build_camera_bundle(
        seed=0,
        patch_size=128,
        train_scenes=3,
        eval_scenes=2,
        scene_size=256,
        patches_per_pipeline=12,
        train_pair_count=60,
        narrow_pair_count=30,
        eval_pair_count=24,
    )


@pytest.fixture(scope="session")
def quick_system(micro_bundle):
    ext = train_phase_a(
        desk_config(128),
        micro_bundle.phase_a_patches,
        PhaseAHyper(epochs=2, batch_size=16, seed=0),
    )
    ext, sim = train_phase_b(
        ext, micro_bundle.phase_b_pairs, hyper=PhaseBHyper(epochs=2, batch_size=16, seed=0)
    )
    return SimilaritySystem(ext, sim)


@pytest.fixture(scope="session")
def quick_checkpoint(quick_system, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "desk128.fsim"
    save_checkpoint(quick_system, path)
    return str(path)


@pytest.fixture(scope="session")
def desk_bundle():
    return tracelab.build_camera_bundle(
        seed=DESK_SEED,
        patch_size=128,
        train_scenes=DESK_TRAIN_SCENES,
        eval_scenes=DESK_EVAL_SCENES,
        train_pair_count=DESK_PAIRS,
        narrow_pair_count=DESK_PAIRS // 2,
        eval_pair_count=DESK_EVAL_PAIRS,
    )


@pytest.fixture(scope="session")
def desk_phase_a(desk_bundle):
    """Camera-classification pretrained extractor, kept pristine for ablations."""
    return train_phase_a(
        desk_config(128),
        desk_bundle.phase_a_patches,
        PhaseAHyper(seed=DESK_SEED, **DESK_PHASE_A),
    )


@pytest.fixture(scope="session")
def desk_system(desk_bundle, desk_phase_a):
    ext, sim = train_phase_b(
        copy.deepcopy(desk_phase_a),
        desk_bundle.phase_b_pairs,
        hyper=PhaseBHyper(seed=DESK_SEED, **DESK_PHASE_B),
        provenance=desk_bundle.provenance(),
    )
    return SimilaritySystem(ext, sim)


@pytest.fixture(scope="session")
def manip_bundle():
    return tracelab.build_manipulation_bundle(seed=DESK_SEED, patch_size=128)


@pytest.fixture(scope="session")
def manip_system(manip_bundle, desk_phase_a):
    """Editing-trace comparator: the camera-pretrained extractor retargeted on
    manipulation pairs."""
    ext, sim = train_phase_b(
        copy.deepcopy(desk_phase_a),
        manip_bundle.phase_b_pairs,
        hyper=PhaseBHyper(seed=DESK_SEED, **DESK_PHASE_B),
        provenance=manip_bundle.provenance(),
    )
    return SimilaritySystem(ext, sim)


@pytest.fixture(scope="session")
def splice_cases():
    return tracelab.splice_corpus(forged_count=20, clean_count=20, seed=DESK_SEED)


# 256-pixel sibling of desk_system for the recompression-robustness ordering.
# Overlapped tiling keeps the per-pipeline patch count comparable; epochs are
# trimmed because each forward pass costs four times as much.
DESK_PHASE_A_256 = dict(epochs=20, lr0=0.02, halve_every=7, batch_size=25, momentum=0.9)
DESK_PHASE_B_256 = dict(epochs=8, lr0=0.02, halve_every=4, batch_size=25, momentum=0.9)


@pytest.fixture(scope="session")
def desk_system_256():
    bundle = tracelab.build_camera_bundle(
        seed=DESK_SEED,
        patch_size=256,
        train_scenes=DESK_TRAIN_SCENES,
        eval_scenes=4,
        train_pair_count=2400,
        narrow_pair_count=4,
        eval_pair_count=4,
        tile_overlap=2.0 / 3.0,
    )
    ext = train_phase_a(
        desk_config(256),
        bundle.phase_a_patches,
        PhaseAHyper(seed=DESK_SEED, **DESK_PHASE_A_256),
    )
    ext, sim = train_phase_b(
        ext,
        bundle.phase_b_pairs,
        hyper=PhaseBHyper(seed=DESK_SEED, **DESK_PHASE_B_256),
        provenance=bundle.provenance(),
    )
    return SimilaritySystem(ext, sim)


@pytest.fixture(scope="session")
def recompression_evals():
    """{patch_size: {quality: PairDataset}} on a scene stream disjoint from training."""
    return {
        128: tracelab.build_recompression_eval(qualities=(95, 75), seed=DESK_SEED, patch_size=128, pair_count=240),
        256: tracelab.build_recompression_eval(
            qualities=(95, 75), seed=DESK_SEED, patch_size=256, pair_count=240, tile_overlap=0.5
        ),
    }


@pytest.fixture(scope="session")
def entropy_band_pairs():
    """Camera pairs bucketed by patch entropy band.

    Patch entropies over rendered scenes are bimodal, so pairing at random
    almost never lands both patches inside the same narrow band; building the
    pairs per bucket populates the low and mid bands directly.  The scene mix
    is heavy in flat content to fill the low bucket at all."""
    sets = tracelab.desk_camera_sets()
    models = sets["A"] + sets["B"]
    bank = tracelab.scene_bank(
        10, DESK_SEED + 83_000, size=512, flat_fraction=0.45, smooth_fraction=0.30
    )
    pool = tracelab.camera_patch_pool(models, bank, 128, seed=DESK_SEED, scene_offset=30_000)
    chunks = []
    for lo, hi in ((0.0, 1.75), (2.0, 2.75)):
        bucket = [p for p in pool if lo <= patch_entropy(p.pixels) <= hi]
        chunks.append(tracelab.make_pairs(bucket, "camera", 240, seed=DESK_SEED + 11))
    return PairDataset(
        [p for c in chunks for p in c.left],
        [p for c in chunks for p in c.right],
        np.concatenate([c.labels for c in chunks]),
    )


@pytest.fixture(scope="session")
def rendered_images(tmp_path_factory):
    """PNG files: two scenes through pipeline A0, one through A1, one flat."""
    sets = tracelab.desk_camera_sets()
    a0, a1 = sets["A"][0], sets["A"][1]
    scenes = tracelab.scene_bank(3, seed=11, size=256)
    d = tmp_path_factory.mktemp("imgs")
    paths = {}
    for name, model, scene in (
        ("a0_s0", a0, scenes[0]),
        ("a0_s1", a0, scenes[1]),
        ("a1_s0", a1, scenes[2]),
    ):
        img = tracelab.render_camera(model, scene, seed=5)
        p = d / f"{name}.png"
        Image.fromarray(img).save(p)
        paths[name] = str(p)
    flat = np.full((128, 128, 3), 130, dtype=np.uint8)
    p = d / "flat.png"
    Image.fromarray(flat).save(p)
    paths["flat"] = str(p)
    return paths
