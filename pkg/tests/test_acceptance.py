"""End-to-end acceptance gates, one test per shipped guarantee.

Three tiers.  Numerical exactness: the training gradients, the scoring
pipeline, the entropy statistic, the forgery statistic and the checkpoint
format are held against independent oracles at tight tolerances.  Recognition
quality: the desk-scale recipes must clear absolute accuracy bars and the
orderings (fine-tuned over frozen, diverse over narrow, mild over strong
recompression, larger patches over smaller, mid-entropy over low) that justify
the system's design choices.  Applications: splice localization, database
verification and forgery ranking must work end to end on generated corpora.

The desk fixtures in conftest train real systems, so this module dominates
suite runtime; everything is seeded and CPU-only.
"""

import collections
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from forensim import nn
from forensim.apps import block_pixel_mask, forgery_score, localize, verify_database
from forensim.checkpoint import load_checkpoint, save_checkpoint
from forensim.evalharness import (
    distance_baselines,
    evaluate_pairs,
    mean_average_precision,
    run_ablation,
)
from forensim.extractor import ExtractorModel, desk_config
from forensim.patches import EntropyThresholds, entropy, grid_shape, tile
from forensim.similarity import (
    PairDataset,
    PhaseBHyper,
    SimilarityModel,
    desk_similarity_config,
)
from conftest import DESK_SEED
from straightline import straight_line_score
from test_apps import StubSystem, double_sum_oracle, make_db, textured_image, verdict_oracle

# ---------------------------------------------------------------------------
# numerical core


FD_EPS = 1e-5
FD_TOL = 1e-4


def _rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / denom)


def _conv_flat(ext, x):
    """The conv stage of the feature forward pass, stopped at the flatten."""
    out = x
    for conv, bnorm, act, pool in ext.blocks:
        out, _ = conv.forward(out, True)
        if bnorm is not None:
            out, _ = bnorm.forward(out, True)
        out, _ = act.forward(out, True)
        if pool is not None:
            out, _ = pool.forward(out, True)
    return out.reshape(out.shape[0], -1)


def _mlp_feat(ext, flat):
    out, _ = ext.fc1.forward(flat, True)
    out, _ = ext.fc_act.forward(out, True)
    out, _ = ext.fc2.forward(out, True)
    out, _ = ext.fc_act.forward(out, True)
    return out


def test_pair_loss_gradients_match_central_differences():
    """Analytic gradients of the full pair-training chain vs finite differences.

    Every trainable parameter of the 128px extractor and the similarity layers
    is perturbed by +-1e-5 in float64; the conv-stage activations are reused
    when the perturbed parameter sits above them, which keeps the full sweep
    inside the one-minute budget without changing any loss value.
    """
    t0 = time.perf_counter()
    ext = ExtractorModel(desk_config(128), seed=3, dtype=np.float64)
    sim = SimilarityModel(desk_similarity_config(ext.config.feature_dim), seed=4, dtype=np.float64)
    rng = np.random.default_rng(5)
    xa = ext.to_input(rng.integers(0, 256, size=(2, 128, 128, 3), dtype=np.uint8))
    xb = ext.to_input(rng.integers(0, 256, size=(2, 128, 128, 3), dtype=np.uint8))
    labels = np.array([1, 0])

    # analytic gradients via the exact code path the pair phase trains with
    fa, ca = ext.forward_features(xa, train=True)
    fb, cb = ext.forward_features(xb, train=True)
    logits, cache = sim.forward_pair(fa, fb, train=True)
    base_loss, dlogits = nn.cross_entropy(logits, labels)
    dfa, dfb, sim_grads = sim.backward_pair(dlogits, cache)
    ext_grads: dict[str, np.ndarray] = {}
    ext.backward_features(dfa, ca, ext_grads)
    ext.backward_features(dfb, cb, ext_grads)

    params = {f"ext/{k}": v for k, v in ext.params(include_head=False).items()}
    params.update({f"sim/{k}": v for k, v in sim.params().items()})
    analytic = {f"ext/{k}": v for k, v in ext_grads.items()}
    analytic.update({f"sim/{k}": v for k, v in sim_grads.items()})
    assert sorted(params) == sorted(analytic)

    def full_loss():
        la, _ = sim.forward_pair(_mlp_feat(ext, _conv_flat(ext, xa)), _mlp_feat(ext, _conv_flat(ext, xb)), train=True)
        return nn.cross_entropy(la, labels)[0]

    # batch-mode normalization reads only the current batch, so conv outputs
    # are unaffected by parameters above the flatten and can be cached
    flat_a, flat_b = _conv_flat(ext, xa), _conv_flat(ext, xb)

    def mlp_loss():
        la, _ = sim.forward_pair(_mlp_feat(ext, flat_a), _mlp_feat(ext, flat_b), train=True)
        return nn.cross_entropy(la, labels)[0]

    assert full_loss() == base_loss == mlp_loss()

    worst_name, worst = "", 0.0
    n_checked = 0
    for name in sorted(params):
        arr = params[name]
        loss_fn = full_loss if name.startswith("ext/conv") else mlp_loss
        fd = np.zeros_like(arr)
        view, fd_view = arr.reshape(-1), fd.reshape(-1)
        for i in range(view.size):
            orig = view[i]
            view[i] = orig + FD_EPS
            up = loss_fn()
            view[i] = orig - FD_EPS
            down = loss_fn()
            view[i] = orig
            fd_view[i] = (up - down) / (2.0 * FD_EPS)
        n_checked += view.size
        err = _rel_err(fd, analytic[name])
        if err > worst:
            worst_name, worst = name, err
    elapsed = time.perf_counter() - t0
    assert n_checked > 20_000  # the sweep really covered the whole chain
    assert worst < FD_TOL, f"max relative gradient error {worst:.2e} at {worst_name}"
    assert elapsed < 60.0, f"gradient verification took {elapsed:.1f}s"


def test_scores_match_straight_line_oracle_on_100_random_models():
    """The production scoring path vs a loop-and-index reimplementation.

    One hundred independently initialized 128px systems, each scored on a
    fresh random pair; the two code paths share nothing but the parameter
    arrays and must agree to 1e-10.
    """
    worst = 0.0
    for trial in range(100):
        ext = ExtractorModel(desk_config(128), seed=200 + trial, dtype=np.float64)
        sim = SimilarityModel(desk_similarity_config(ext.config.feature_dim), seed=900 + trial, dtype=np.float64)
        rng = np.random.default_rng(5_000 + trial)
        pa, pb = rng.integers(0, 256, size=(2, 128, 128, 3), dtype=np.uint8)
        fa = ext.extract_batch(pa[None])
        fb = ext.extract_batch(pb[None])
        fast = float(sim.scores(fa, fb)[0])
        slow = straight_line_score(ext, sim, pa, pb)
        worst = max(worst, abs(fast - slow))
    assert worst < 1e-10, f"worst pipeline-vs-oracle gap {worst:.2e}"


def _entropy_oracle(pixels):
    """Brute force: per-value counting loop over the luma plane, nats."""
    px = np.asarray(pixels, dtype=np.float64)
    y = 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]
    luma = np.clip(np.rint(y), 0, 255).astype(int)
    counts = collections.Counter(int(v) for v in luma.ravel())
    h = 0.0
    for _, c in sorted(counts.items()):
        p = c / luma.size
        h -= p * math.log(p)
    return h


def test_entropy_matches_brute_force_and_closed_forms():
    rng = np.random.default_rng(21)
    worst = 0.0
    for trial in range(200):
        size = int(rng.integers(16, 129))
        spread = int(rng.integers(2, 256))
        base = rng.integers(0, spread, size=(size // 4, size // 4, 3))
        patch = np.repeat(np.repeat(base, 4, axis=0), 4, axis=1)[:size, :size].astype(np.uint8)
        if trial % 3 == 0:
            patch = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        worst = max(worst, abs(entropy(patch) - _entropy_oracle(patch)))
    assert worst < 1e-12, f"worst brute-force gap {worst:.2e}"

    constant = np.full((64, 64, 3), 177, dtype=np.uint8)
    assert entropy(constant) == 0.0

    # every luma level equally often -> the maximum, ln 256
    levels = np.arange(256, dtype=np.uint8).repeat(256).reshape(256, 256)
    uniform = np.stack([levels] * 3, axis=-1)
    assert abs(entropy(uniform) - math.log(256)) < 1e-12


def test_forgery_statistic_is_the_exact_double_sum():
    """Mean similarity over 1000 random stub matrices equals the ordered
    double sum with self-pairs included, bit for bit, with and without
    filter-rejected blocks in the image."""
    strips = {
        n: np.concatenate([textured_image(900 + 16 * n + b, 32) for b in range(n)], axis=1)
        for n in range(1, 10)
    }
    rng = np.random.default_rng(17)
    rejected_runs = 0
    for trial in range(1000):
        n = int(rng.integers(1, 9))
        matrix = rng.random((n, n))
        if trial % 5 == 0:
            # one extra block that the stub's filter rejects; the statistic
            # must run over exactly the n kept blocks
            drop = int(rng.integers(n + 1))
            score = forgery_score(
                strips[n + 1], StubSystem(matrix=matrix, reject=(drop,)), block_size=32, overlap=0.0
            )
            rejected_runs += 1
        else:
            score = forgery_score(strips[n], StubSystem(matrix=matrix), block_size=32, overlap=0.0)
        assert score == double_sum_oracle(matrix)
    assert rejected_runs == 200


def test_checkpoint_round_trip_is_bitwise_stable(desk_system, desk_bundle, tmp_path):
    first = tmp_path / "first.fsim"
    second = tmp_path / "second.fsim"
    save_checkpoint(desk_system, first)
    loaded = load_checkpoint(first)
    save_checkpoint(loaded, second)
    assert first.read_bytes() == second.read_bytes()

    probes = desk_bundle.eval_pairs["known_known"].left[:16]
    before = desk_system.extractor.extract_batch(probes)
    after = loaded.extractor.extract_batch(probes)
    assert np.array_equal(before, after)
    assert np.array_equal(
        desk_system.similarity.scores(before, before[::-1]),
        loaded.similarity.scores(after, after[::-1]),
    )


# ---------------------------------------------------------------------------
# desk-scale recognition gates


def test_camera_accuracy_clears_known_and_unknown_bars(desk_system, desk_bundle):
    kk = evaluate_pairs(desk_system, desk_bundle.eval_pairs["known_known"], symmetrize=True).accuracy
    uu = evaluate_pairs(desk_system, desk_bundle.eval_pairs["unknown_unknown"], symmetrize=True).accuracy
    assert kk >= 0.85, f"known-pipeline accuracy {kk:.3f} below 0.85"
    assert uu >= 0.70, f"unknown-pipeline accuracy {uu:.3f} below 0.70"
    assert kk >= uu, f"known {kk:.3f} should not trail unknown {uu:.3f}"


def _balanced_subset(pairs, count):
    same = [i for i, y in enumerate(pairs.labels) if y == 1][: count // 2]
    diff = [i for i, y in enumerate(pairs.labels) if y == 0][: count - count // 2]
    keep = same + diff
    return PairDataset([pairs.left[i] for i in keep], [pairs.right[i] for i in keep], pairs.labels[keep])


def test_ablation_orderings_hold_at_matched_seeds(desk_bundle, desk_phase_a):
    """Fine-tuning the extractor must beat freezing it, and the diverse pair
    set must beat the narrow one, with identical data and seeds otherwise."""
    bundle = replace(
        desk_bundle,
        phase_b_pairs=_balanced_subset(desk_bundle.phase_b_pairs, 2000),
        narrow_pairs=_balanced_subset(desk_bundle.narrow_pairs, 2000),
    )
    hyper = PhaseBHyper(seed=DESK_SEED, epochs=10, lr0=0.02, halve_every=4, batch_size=25, momentum=0.9)
    acc = {
        variant: run_ablation(variant, bundle, base_extractor=desk_phase_a, phase_b_hyper=hyper, seed=DESK_SEED).accuracy
        for variant in ("unfrozen_AB", "frozen_AB", "unfrozen_B")
    }
    assert acc["unfrozen_AB"] >= acc["frozen_AB"], f"fine-tuned {acc['unfrozen_AB']:.3f} < frozen {acc['frozen_AB']:.3f}"
    assert acc["unfrozen_AB"] >= acc["unfrozen_B"], f"diverse {acc['unfrozen_AB']:.3f} < narrow {acc['unfrozen_B']:.3f}"


def test_learned_similarity_beats_fixed_distance_baselines(desk_system, desk_bundle):
    """The trained comparison must outscore every fixed feature-space distance
    even after each distance gets its own exhaustive threshold sweep."""
    pairs = desk_bundle.eval_pairs["known_known"]
    ev = evaluate_pairs(desk_system, pairs, symmetrize=True)
    idx = np.flatnonzero(ev.kept)
    fl = desk_system.extractor.extract_batch([pairs.left[i] for i in idx])
    fr = desk_system.extractor.extract_batch([pairs.right[i] for i in idx])
    baselines = distance_baselines(fl, fr, ev.labels)
    best = max(baselines.values(), key=lambda r: r.accuracy)
    assert ev.accuracy >= best.accuracy, (
        f"learned {ev.accuracy:.3f} < {best.metric} at its best threshold {best.accuracy:.3f}"
    )


def test_recompression_quality_and_patch_size_orderings(desk_system, desk_system_256, recompression_evals):
    acc = {}
    for size, system in ((128, desk_system), (256, desk_system_256)):
        for quality, pairs in recompression_evals[size].items():
            acc[size, quality] = evaluate_pairs(system, pairs, symmetrize=True).accuracy
    summary = {f"{s}px@q{q}": round(a, 3) for (s, q), a in acc.items()}
    assert acc[128, 95] >= acc[128, 75], f"mild recompression must score at least as high: {summary}"
    assert acc[256, 95] >= acc[256, 75], f"mild recompression must score at least as high: {summary}"
    assert acc[256, 95] >= acc[128, 95], f"larger patches must hold up at q95: {summary}"
    assert acc[256, 75] >= acc[128, 75], f"larger patches must hold up at q75: {summary}"


def test_manipulation_accuracy_known_and_held_out_ops(manip_system, manip_bundle):
    known = evaluate_pairs(manip_system, manip_bundle.eval_pairs["known"], symmetrize=True).accuracy
    unknown = evaluate_pairs(manip_system, manip_bundle.eval_pairs["unknown"], symmetrize=True).accuracy
    assert known >= 0.80, f"known-operation accuracy {known:.3f} below 0.80"
    assert unknown >= 0.60, f"held-out-operation accuracy {unknown:.3f} below 0.60"


def test_mid_entropy_band_outperforms_low_band(desk_system, entropy_band_pairs):
    """Pairs whose patches sit in the mid-entropy band must be decided at
    least as accurately as near-flat pairs, which is what justifies filtering
    the low band out in production."""
    ev = evaluate_pairs(desk_system, entropy_band_pairs, enforce_entropy=False, symmetrize=True)
    low = ev.band_accuracy(EntropyThresholds(0.0, 1.75))
    mid = ev.band_accuracy(EntropyThresholds(2.0, 2.75))
    assert mid >= low, f"mid-band {mid:.3f} below low-band {low:.3f}"


# ---------------------------------------------------------------------------
# applications


def _fully_inside_and_outside_cells(gt, rows, cols, block, stride):
    inside, outside = [], []
    for r in range(rows):
        for c in range(cols):
            window = gt[r * stride : r * stride + block, c * stride : c * stride + block]
            if window.all():
                inside.append((r, c))
            elif not window.any():
                outside.append((r, c))
    return inside, outside


def _pixel_iou(a, b):
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 0.0


def test_splice_localization_and_reference_swap(splice_cases, desk_system):
    """With a reference block on the untouched side the flagged region must
    overlap the insert (IoU > 0.3 on average); swapping the reference into the
    insert must flag the complementary region instead."""
    block, overlap, stride = 128, 0.5, 64
    host_ious, swap_ious = [], []
    for case in splice_cases:
        if not case.forged:
            continue
        rows, cols = grid_shape(case.image.shape[:2], block, overlap)
        reliable = desk_system.reliability_mask(tile(case.image, block, overlap))
        gt = case.mask.astype(bool)
        inside, outside = _fully_inside_and_outside_cells(gt, rows, cols, block, stride)
        host_ref = next((rc for rc in outside if reliable[rc[0] * cols + rc[1]]), None)
        donor_ref = next((rc for rc in inside if reliable[rc[0] * cols + rc[1]]), None)
        assert host_ref is not None and donor_ref is not None

        host_map = localize(case.image, desk_system, host_ref, eta=0.5, block_size=block, overlap=overlap)
        host_ious.append(_pixel_iou(block_pixel_mask(host_map, case.image.shape).astype(bool), gt))
        donor_map = localize(case.image, desk_system, donor_ref, eta=0.5, block_size=block, overlap=overlap)
        swap_ious.append(_pixel_iou(block_pixel_mask(donor_map, case.image.shape).astype(bool), ~gt))
    assert len(host_ious) == 20
    mean_host, mean_swap = float(np.mean(host_ious)), float(np.mean(swap_ious))
    assert mean_host > 0.3, f"host-side mean IoU {mean_host:.3f}"
    assert mean_swap > 0.3, f"swapped-reference mean complement IoU {mean_swap:.3f}"


def test_database_verification_oracle_thresholds_and_order():
    """Stubbed scores: the verdict must equal the hand-computed rank statistic
    for 2, 5 and 10 images across all three database types, flip exactly at
    the statistic, and ignore image order."""
    for m in (2, 5, 10):
        for kind in ("consistent", "foreign", "all_different"):
            images, scorer, score_sets = make_db(m, kind, seed=m * 10 + len(kind))
            verdict = verify_database(images, system=None, threshold=0.5, pair_scorer=scorer)
            stat, consistent = verdict_oracle(score_sets, m, 0.5)
            assert verdict.statistic == stat
            assert verdict.consistent == consistent

            at_stat = verify_database(images, system=None, threshold=stat, pair_scorer=scorer)
            above = verify_database(images, system=None, threshold=stat + 1e-9, pair_scorer=scorer)
            assert at_stat.consistent and not above.consistent

            perm = np.random.default_rng(m).permutation(m)
            shuffled = verify_database([images[i] for i in perm], system=None, threshold=0.5, pair_scorer=scorer)
            assert shuffled.statistic == verdict.statistic
            assert shuffled.consistent == verdict.consistent


def test_forgery_ranking_beats_chance_by_wide_margin(splice_cases, desk_system):
    scores = np.array([forgery_score(case.image, desk_system) for case in splice_cases])
    labels = np.array([case.forged for case in splice_cases], dtype=int)
    ap = mean_average_precision(scores, labels)
    rng = np.random.default_rng(99)
    chance = float(np.mean([mean_average_precision(rng.permutation(scores), labels) for _ in range(400)]))
    assert ap >= chance + 0.3, f"ranking quality {ap:.3f} vs chance {chance:.3f}"
