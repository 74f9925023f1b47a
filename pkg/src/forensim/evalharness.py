"""Evaluation harness: comparison matrices, baselines, ablations, ranking metrics.

Everything here is read-only over trained models and deterministic given its
inputs, so experiment results are reproducible from (bundle seed, run seed)
alone.  Accuracy always means the fraction of pairs whose same/different
decision matches the pair label.
"""

from __future__ import annotations

import copy
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UndefinedMetricError
from .extractor import ExtractorConfig, PhaseAHyper, desk_config, train_phase_a
from .patches import EntropyThresholds, entropy
from .similarity import (
    DEFAULT_THRESHOLD,
    PairDataset,
    PhaseBHyper,
    SimilarityConfig,
    SimilaritySystem,
    train_phase_b,
)

DISTANCE_METRICS = ("1-norm", "2-norm", "inf-norm", "bray-curtis", "cosine")

ABLATION_VARIANTS = (
    "green_only",
    "green_constrained",
    "no_elementwise",
    "no_entropy_filter",
    "frozen_B",
    "frozen_AB",
    "unfrozen_B",
    "unfrozen_AB",
)


# ---------------------------------------------------------------------------
# pair evaluation


@dataclass
class PairEvaluation:
    scores: np.ndarray
    decisions: np.ndarray
    labels: np.ndarray
    entropy_left: np.ndarray
    entropy_right: np.ndarray
    kept: np.ndarray  # entropy-filter mask actually applied (all True when not enforced)

    @property
    def accuracy(self) -> float:
        if not len(self.labels):
            raise UndefinedMetricError("no pairs to score")
        return float(np.mean(self.decisions == self.labels))

    def band_accuracy(self, band: EntropyThresholds) -> float:
        """Accuracy restricted to pairs whose patches BOTH fall in the band."""
        inside = np.array(
            [band.contains(a) and band.contains(b) for a, b in zip(self.entropy_left, self.entropy_right)]
        )
        if not inside.any():
            raise UndefinedMetricError(f"no pairs with both entropies in [{band.min_nats}, {band.max_nats}]")
        return float(np.mean(self.decisions[inside] == self.labels[inside]))


def evaluate_pairs(
    system: SimilaritySystem,
    pairs: PairDataset,
    eta: float | None = None,
    enforce_entropy: bool = True,
    symmetrize: bool = False,
) -> PairEvaluation:
    """Score a labeled pair set; the entropy filter drops unreliable pairs.

    With `enforce_entropy` the filter (an evaluation-time device) excludes
    any pair with an out-of-band patch before accuracy is computed; the
    returned arrays cover only the kept pairs, with the mask reported.
    `symmetrize` averages both presentation orders of each pair.
    """
    ent_l = np.array([entropy(p.pixels) for p in pairs.left])
    ent_r = np.array([entropy(p.pixels) for p in pairs.right])
    if enforce_entropy:
        band = system.entropy_thresholds
        kept = np.array([band.contains(a) and band.contains(b) for a, b in zip(ent_l, ent_r)])
    else:
        kept = np.ones(len(pairs), dtype=bool)
    if not kept.any():
        raise UndefinedMetricError("entropy filter removed every pair")
    idx = np.flatnonzero(kept)
    fl = system.extractor.extract_batch([pairs.left[i] for i in idx])
    fr = system.extractor.extract_batch([pairs.right[i] for i in idx])
    scores = np.concatenate(
        [system.similarity.scores(fl[s : s + 512], fr[s : s + 512]) for s in range(0, len(fl), 512)]
    )
    if symmetrize:
        reverse = np.concatenate(
            [system.similarity.scores(fr[s : s + 512], fl[s : s + 512]) for s in range(0, len(fr), 512)]
        )
        scores = 0.5 * (scores + reverse)
    eta = system.threshold if eta is None else eta
    decisions = (scores > eta).astype(np.int64)
    return PairEvaluation(
        scores=scores,
        decisions=decisions,
        labels=pairs.labels[idx],
        entropy_left=ent_l[idx],
        entropy_right=ent_r[idx],
        kept=kept,
    )


# ---------------------------------------------------------------------------
# comparison matrix


@dataclass
class ComparisonMatrix:
    """Per-class-pair correct-comparison rates.

    Diagonal cells hold the rate at which same-class pairs were called
    "same"; off-diagonal cells the rate at which cross-class pairs were
    called "different".  Cells with no pairs are NaN (absent), never 0.
    """

    labels: list
    rates: np.ndarray
    counts: np.ndarray

    def rate(self, a, b) -> float:
        i, j = self.labels.index(a), self.labels.index(b)
        return float(self.rates[i, j])

    def overall_accuracy(self) -> float:
        total = self.counts.sum()
        if total == 0:
            raise UndefinedMetricError("empty comparison matrix")
        # unordered aggregation: each cell pair (i,j)/(j,i) holds the same data
        mask = self.counts > 0
        upper = np.triu(mask)
        return float((self.rates[upper] * self.counts[upper]).sum() / self.counts[upper].sum())

    def to_records(self) -> list[dict]:
        out = []
        for i, a in enumerate(self.labels):
            for j, b in enumerate(self.labels):
                if j < i:
                    continue
                out.append(
                    {
                        "cell": [a, b],
                        "rate": None if self.counts[i, j] == 0 else float(self.rates[i, j]),
                        "pairs": int(self.counts[i, j]),
                    }
                )
        return out


def comparison_matrix(pairs: PairDataset, comparator=None, decisions=None) -> ComparisonMatrix:
    """Aggregate per-pair decisions into class-pair correct rates.

    `comparator(patch_a, patch_b) -> 0/1` is called per pair unless
    precomputed `decisions` are supplied.  Pair patches must carry class
    labels (trace_label); correctness on the diagonal means "judged same",
    off the diagonal "judged different".
    """
    if (comparator is None) == (decisions is None):
        raise ConfigurationError("provide exactly one of comparator or decisions")
    la = [p.trace_label for p in pairs.left]
    lb = [p.trace_label for p in pairs.right]
    if any(x is None for x in la + lb):
        raise ConfigurationError("comparison_matrix needs class labels on every patch")
    if decisions is None:
        decisions = np.array([int(comparator(a, b)) for a, b in zip(pairs.left, pairs.right)])
    decisions = np.asarray(decisions)
    if len(decisions) != len(pairs):
        raise ConfigurationError("decisions length must match pair count")

    classes = sorted(set(la) | set(lb))
    k = len(classes)
    index = {c: i for i, c in enumerate(classes)}
    correct = np.zeros((k, k), dtype=np.int64)
    counts = np.zeros((k, k), dtype=np.int64)
    for a, b, d in zip(la, lb, decisions):
        i, j = index[a], index[b]
        same = i == j
        ok = (d == 1) if same else (d == 0)
        for r, c in {(i, j), (j, i)}:
            counts[r, c] += 1
            correct[r, c] += int(ok)
    with np.errstate(invalid="ignore"):
        rates = np.where(counts > 0, correct / np.maximum(counts, 1), np.nan)
    return ComparisonMatrix(labels=classes, rates=rates, counts=counts)


def render_comparison_matrix(cm: ComparisonMatrix, path) -> None:
    """Cell-shaded rate matrix with printed percentages."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    k = len(cm.labels)
    fig, ax = plt.subplots(figsize=(1.1 * k + 2, 1.1 * k + 1.5))
    shown = np.where(np.isnan(cm.rates), 0.0, cm.rates)
    ax.imshow(shown, vmin=0.0, vmax=1.0, cmap="Blues")
    for i in range(k):
        for j in range(k):
            txt = "--" if cm.counts[i, j] == 0 else f"{cm.rates[i, j] * 100:.1f}"
            ax.text(j, i, txt, ha="center", va="center", fontsize=8)
    ax.set_xticks(range(k), cm.labels, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(k), cm.labels, fontsize=8)
    ax.set_title("correct comparison rate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# fixed-distance baselines


def _distances(metric: str, fa: np.ndarray, fb: np.ndarray):
    diff = fa - fb
    if metric == "1-norm":
        return np.abs(diff).sum(axis=1), np.ones(len(fa), dtype=bool)
    if metric == "2-norm":
        return np.sqrt((diff**2).sum(axis=1)), np.ones(len(fa), dtype=bool)
    if metric == "inf-norm":
        return np.abs(diff).max(axis=1), np.ones(len(fa), dtype=bool)
    if metric == "bray-curtis":
        den = np.abs(fa + fb).sum(axis=1)
        ok = den > 0
        out = np.zeros(len(fa))
        out[ok] = np.abs(diff[ok]).sum(axis=1) / den[ok]
        return out, ok
    if metric == "cosine":
        na = np.linalg.norm(fa, axis=1)
        nb = np.linalg.norm(fb, axis=1)
        ok = (na > 0) & (nb > 0)
        out = np.zeros(len(fa))
        out[ok] = 1.0 - (fa[ok] * fb[ok]).sum(axis=1) / (na[ok] * nb[ok])
        return out, ok
    raise ConfigurationError(f"unknown metric {metric!r}")


def pair_distance(metric: str, a: np.ndarray, b: np.ndarray) -> float:
    d, ok = _distances(metric, np.atleast_2d(np.asarray(a, dtype=np.float64)), np.atleast_2d(np.asarray(b, dtype=np.float64)))
    if not ok[0]:
        raise UndefinedMetricError(f"{metric} undefined for this pair (zero norm)")
    return float(d[0])


def best_threshold_accuracy(distances: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Exact best accuracy of the rule "same iff distance <= t".

    Candidate thresholds are the midpoints between consecutive sorted
    distinct distances plus sentinels outside the range, so the sweep is
    exhaustive over all achievable decision partitions.
    """
    d = np.asarray(distances, dtype=np.float64)
    y = np.asarray(labels)
    if len(d) == 0:
        raise UndefinedMetricError("no distances to sweep")
    uniq = np.unique(d)
    cands = [uniq[0] - 1.0]
    cands.extend(((uniq[:-1] + uniq[1:]) / 2.0).tolist())
    cands.append(uniq[-1] + 1.0)
    best_t, best_acc = cands[0], -1.0
    for t in cands:
        acc = float(np.mean((d <= t).astype(np.int64) == y))
        if acc > best_acc:
            best_t, best_acc = float(t), acc
    return best_t, best_acc


@dataclass
class BaselineResult:
    metric: str
    threshold: float
    accuracy: float
    pairs_used: int


def distance_baselines(
    features_left: np.ndarray,
    features_right: np.ndarray,
    labels: np.ndarray,
    metrics=DISTANCE_METRICS,
) -> dict[str, BaselineResult]:
    """Best-threshold accuracy of fixed feature-space distances.

    Pairs where a metric is undefined (zero-norm vectors under cosine) are
    excluded from that metric with a warning rather than scored arbitrarily.
    """
    fa = np.asarray(features_left, dtype=np.float64)
    fb = np.asarray(features_right, dtype=np.float64)
    y = np.asarray(labels)
    if fa.shape != fb.shape or len(fa) != len(y):
        raise ConfigurationError("feature arrays and labels must align")
    out = {}
    for metric in metrics:
        d, ok = _distances(metric, fa, fb)
        if not ok.all():
            warnings.warn(f"{metric}: excluded {int((~ok).sum())} undefined pairs", stacklevel=2)
        if not ok.any():
            raise UndefinedMetricError(f"{metric}: no pairs with a defined distance")
        t, acc = best_threshold_accuracy(d[ok], y[ok])
        out[metric] = BaselineResult(metric, t, acc, int(ok.sum()))
    return out


# ---------------------------------------------------------------------------
# ranking metrics


def average_precision(ranking: np.ndarray, positives: np.ndarray) -> float:
    order = np.argsort(-np.asarray(ranking, dtype=np.float64), kind="stable")
    rel = np.asarray(positives).astype(bool)[order]
    n_pos = int(rel.sum())
    hits = 0
    total = 0.0
    for k, r in enumerate(rel, start=1):
        if r:
            hits += 1
            total += hits / k
    return total / n_pos


def mean_average_precision(forgery_scores, forged_labels) -> float:
    """Average precision of "forged" detection ranked by ascending mean similarity.

    Low scores indicate forgery, so the ranking is by negated score; ties
    keep input order.
    """
    scores = np.asarray(forgery_scores, dtype=np.float64)
    labels = np.asarray(forged_labels).astype(int)
    if len(scores) != len(labels):
        raise ConfigurationError("scores and labels must align")
    if labels.min(initial=1) == labels.max(initial=0) or len(labels) == 0:
        raise UndefinedMetricError("need at least one forged and one clean example")
    return average_precision(-scores, labels)


def relative_error_increase(acc_reference_pct: float, acc_variant_pct: float) -> float:
    """REI of a variant vs the reference, both accuracies in percent."""
    if acc_reference_pct >= 100.0:
        raise UndefinedMetricError("REI undefined at 100% reference accuracy")
    return (acc_reference_pct - acc_variant_pct) / (100.0 - acc_reference_pct)


# ---------------------------------------------------------------------------
# ablations


@dataclass
class AblationResult:
    variant: str
    accuracy: float
    eval_split: str
    details: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"variant": self.variant, "accuracy": self.accuracy, "split": self.eval_split, **self.details}


def run_ablation(
    variant: str,
    bundle,
    base_extractor=None,
    phase_a_hyper: PhaseAHyper | None = None,
    phase_b_hyper: PhaseBHyper | None = None,
    eval_split: str = "known_known",
    eta: float = DEFAULT_THRESHOLD,
    seed: int = 0,
) -> AblationResult:
    """Train and score one named system variant on a generated bundle.

    Variants reuse the bundle's data and the given seeds, so two variants
    differ only in the ablated mechanism.  `base_extractor` supplies a
    pretrained phase A model for the RGB variants (it is deep-copied, never
    mutated); green variants always pretrain their own.
    """
    if variant not in ABLATION_VARIANTS:
        raise ConfigurationError(f"unknown ablation variant {variant!r}; choose from {ABLATION_VARIANTS}")
    if eval_split not in bundle.eval_pairs:
        raise ConfigurationError(f"bundle has no eval split {eval_split!r}")
    phase_a_hyper = phase_a_hyper or PhaseAHyper(epochs=4, seed=seed)
    phase_b_hyper = phase_b_hyper or PhaseBHyper(epochs=4, seed=seed)

    green = variant in ("green_only", "green_constrained")
    narrow = variant in ("frozen_B", "unfrozen_B")
    frozen = variant in ("frozen_B", "frozen_AB")
    pairs = bundle.narrow_pairs if narrow else bundle.phase_b_pairs
    if pairs is None:
        raise ConfigurationError(f"bundle lacks the pair split needed by {variant!r}")

    if green or base_extractor is None:
        if not bundle.phase_a_patches:
            raise ConfigurationError("bundle lacks phase A patches for extractor pretraining")
        config = desk_config(bundle.patch_size, in_channels=1 if green else 3)
        ext = train_phase_a(
            config,
            bundle.phase_a_patches,
            phase_a_hyper,
            constrain_first_layer=(variant == "green_constrained"),
            provenance=bundle.provenance(),
        )
    else:
        ext = copy.deepcopy(base_extractor)

    sim_config = SimilarityConfig(
        feature_dim=ext.config.feature_dim,
        hidden_dim=64 if ext.config.scale_profile == "desk" else 2048,
        use_elementwise=(variant != "no_elementwise"),
    )
    ext, sim = train_phase_b(
        ext,
        pairs,
        config=sim_config,
        hyper=phase_b_hyper,
        freeze_extractor=frozen,
        constrain_first_layer=(variant == "green_constrained"),
        provenance=bundle.provenance(),
    )
    system = SimilaritySystem(ext, sim)
    enforce = variant != "no_entropy_filter"
    result = evaluate_pairs(system, bundle.eval_pairs[eval_split], eta=eta, enforce_entropy=enforce)
    return AblationResult(
        variant=variant,
        accuracy=result.accuracy,
        eval_split=eval_split,
        details={"pairs_scored": int(len(result.labels)), "seed": seed},
    )


def report_lines(records) -> str:
    """Line-delimited JSON for harness outputs."""
    return "\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n"
