"""Similarity network: decides whether two deep features share a forensic trace.

Both features pass through one shared dense mapping (hard sharing, so the
score cannot depend on argument order through that layer), are combined with
their elementwise product, and a small classifier emits P(similar).  Scores
above the decision threshold mean "same trace"; the boundary itself counts
as different.

Training phase B optimizes the similarity network and, by default, keeps
tuning the feature extractor through it.  Freezing the extractor is kept as
a comparison variant, not the default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigurationError, DimensionError, UnreliablePatchError
from .extractor import ExtractorModel, PhaseAHyper, apply_residual_constraint, patches_to_array
from .patches import EntropyThresholds, Patch, entropy

DEFAULT_THRESHOLD = 0.5
SIMILAR = 1  # index of the "same trace" output neuron


@dataclass(frozen=True)
class SimilarityConfig:
    feature_dim: int
    hidden_dim: int = 2048
    combiner_dim: int = 64
    use_elementwise: bool = True

    def __post_init__(self):
        if min(self.feature_dim, self.hidden_dim, self.combiner_dim) < 1:
            raise ConfigurationError("similarity layer widths must be positive")

    @property
    def concat_dim(self) -> int:
        return (3 if self.use_elementwise else 2) * self.hidden_dim


def paper_similarity_config(feature_dim: int = 200) -> SimilarityConfig:
    return SimilarityConfig(feature_dim=feature_dim, hidden_dim=2048)


def desk_similarity_config(feature_dim: int = 32) -> SimilarityConfig:
    return SimilarityConfig(feature_dim=feature_dim, hidden_dim=64)


class SimilarityModel:
    """Maps a pair of feature vectors to a similarity score in [0, 1]."""

    def __init__(self, config: SimilarityConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.provenance: dict = {}
        rng = np.random.default_rng(seed)
        self.fc_a = nn.Dense(config.feature_dim, config.hidden_dim, rng=rng, dtype=dtype)
        self.fc_b = nn.Dense(config.concat_dim, config.combiner_dim, rng=rng, dtype=dtype)
        self.head = nn.Dense(config.combiner_dim, 2, rng=rng, dtype=dtype)
        self.relu = nn.Activation("relu")

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for k, v in self.fc_a.params().items():
            out[f"fcA/{k}"] = v
        for k, v in self.fc_b.params().items():
            out[f"fcB/{k}"] = v
        for k, v in self.head.params().items():
            out[f"head/{k}"] = v
        return out

    def set_param(self, name: str, value: np.ndarray):
        store = self.params()
        if name not in store:
            raise ConfigurationError(f"unknown parameter {name!r}")
        if store[name].shape != value.shape:
            raise DimensionError(f"{name}: expected shape {store[name].shape}, got {value.shape}")
        store[name][...] = value.astype(store[name].dtype)

    # -- forward / backward ----------------------------------------------

    def intermediate(self, feat: np.ndarray, train: bool = False):
        """Shared per-feature mapping (dense + relu); same weights for both inputs."""
        h, c1 = self.fc_a.forward(feat, train)
        h, c2 = self.relu.forward(h, train)
        return h, (c1, c2)

    def concat_features(self, ha: np.ndarray, hb: np.ndarray) -> np.ndarray:
        if self.config.use_elementwise:
            return np.concatenate([ha, hb, ha * hb], axis=-1)
        return np.concatenate([ha, hb], axis=-1)

    def forward_pair(self, fa: np.ndarray, fb: np.ndarray, train: bool = False):
        if fa.shape != fb.shape:
            raise DimensionError(f"feature shapes differ: {fa.shape} vs {fb.shape}")
        if fa.shape[-1] != self.config.feature_dim:
            raise DimensionError(
                f"expected {self.config.feature_dim}-dim features, got {fa.shape[-1]}"
            )
        ha, ca = self.intermediate(fa, train)
        hb, cb = self.intermediate(fb, train)
        concat = self.concat_features(ha, hb)
        z, c3 = self.fc_b.forward(concat, train)
        z, c4 = self.relu.forward(z, train)
        logits, c5 = self.head.forward(z, train)
        return logits, (ca, cb, ha, hb, c3, c4, c5)

    def backward_pair(self, dlogits: np.ndarray, cache):
        """Returns (dfa, dfb, grads); shared-layer gradients from both towers merge."""
        ca, cb, ha, hb, c3, c4, c5 = cache
        grads: dict[str, np.ndarray] = {}
        d, g = self.head.backward(dlogits, c5)
        nn.accumulate(grads, g, "head/")
        d, _ = self.relu.backward(d, c4)
        d, g = self.fc_b.backward(d, c3)
        nn.accumulate(grads, g, "fcB/")
        h = self.config.hidden_dim
        dha = d[:, :h].copy()
        dhb = d[:, h : 2 * h].copy()
        if self.config.use_elementwise:
            dprod = d[:, 2 * h :]
            dha += dprod * hb
            dhb += dprod * ha
        dfa = self._backward_intermediate(dha, ca, grads)
        dfb = self._backward_intermediate(dhb, cb, grads)
        return dfa, dfb, grads

    def _backward_intermediate(self, dh, cache, grads):
        c1, c2 = cache
        d, _ = self.relu.backward(dh, c2)
        d, g = self.fc_a.backward(d, c1)
        nn.accumulate(grads, g, "fcA/")
        return d

    def scores(self, fa: np.ndarray, fb: np.ndarray) -> np.ndarray:
        """Similarity scores for batched feature pairs (evaluation mode)."""
        logits, _ = self.forward_pair(np.atleast_2d(fa), np.atleast_2d(fb))
        return nn.softmax(logits)[:, SIMILAR]

    def similarity(self, fa: np.ndarray, fb: np.ndarray) -> float:
        return float(self.scores(fa, fb)[0])


def similarity(
    extractor: ExtractorModel,
    sim_model: SimilarityModel,
    x1,
    x2,
    symmetrize: bool = False,
) -> float:
    """Full-chain similarity score for a patch pair: extract, map, combine, softmax.

    `symmetrize` averages S(x1,x2) with S(x2,x1); off by default because the
    plain score is what the decision rule is calibrated on.
    """
    fa = extractor.extract(x1).values
    fb = extractor.extract(x2).values
    if symmetrize:
        return (sim_model.similarity(fa, fb) + sim_model.similarity(fb, fa)) / 2.0
    return sim_model.similarity(fa, fb)


def decide(score: float, eta: float = DEFAULT_THRESHOLD) -> int:
    """Threshold decision: 1 = same trace iff score > eta; the boundary is 'different'."""
    return 1 if score > eta else 0


def compare(extractor: ExtractorModel, sim_model: SimilarityModel, x1, x2, eta: float = DEFAULT_THRESHOLD) -> int:
    return decide(similarity(extractor, sim_model, x1, x2), eta)


def feature_similarity(model: SimilarityModel, fa, fb) -> float:
    fa = fa.values if hasattr(fa, "values") else np.asarray(fa)
    fb = fb.values if hasattr(fb, "values") else np.asarray(fb)
    return model.similarity(fa, fb)


def symmetry_gap(model: SimilarityModel, fa: np.ndarray, fb: np.ndarray) -> float:
    """|S(a,b) - S(b,a)| for batched features; diagnostic, not an invariant.

    Hard sharing makes the per-feature mapping order-free, but the concat
    order still distinguishes the arguments, so the gap is small rather
    than exactly zero.
    """
    ab = model.scores(fa, fb)
    ba = model.scores(fb, fa)
    return float(np.max(np.abs(ab - ba)))


# -- pair dataset ----------------------------------------------------------


@dataclass
class PairDataset:
    """Patch pairs with binary labels: 1 = same trace source, 0 = different."""

    left: list
    right: list
    labels: np.ndarray

    def __post_init__(self):
        if not (len(self.left) == len(self.right) == len(self.labels)):
            raise DimensionError("pair dataset columns must have equal length")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        bad = set(np.unique(self.labels)) - {0, 1}
        if bad:
            raise ConfigurationError(f"pair labels must be 0/1, found {sorted(bad)}")

    def __len__(self):
        return len(self.labels)

    def balance(self) -> float:
        return float(self.labels.mean()) if len(self.labels) else float("nan")


@dataclass(frozen=True)
class PhaseBHyper:
    """Joint training hyperparameters (defaults are the production recipe)."""

    epochs: int = 30
    lr0: float = 0.005
    halve_every: int = 3
    batch_size: int = 50
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0


def train_phase_b(
    extractor: ExtractorModel,
    pairs: PairDataset,
    config: SimilarityConfig | None = None,
    hyper: PhaseBHyper = PhaseBHyper(),
    freeze_extractor: bool = False,
    constrain_first_layer: bool = False,
    provenance: dict | None = None,
) -> tuple[ExtractorModel, SimilarityModel]:
    """Train the similarity network on labeled pairs; returns (extractor, sim).

    By default the extractor keeps learning through the pair loss (the
    extractor passed in is updated in place); `freeze_extractor=True` holds
    it fixed and trains only the similarity layers.  `constrain_first_layer`
    keeps the first-layer residual projection active during fine-tuning, for
    extractors pretrained with the same constraint.
    """
    if len(pairs) == 0:
        raise ConfigurationError("phase B needs a nonempty pair dataset")
    if len(set(pairs.labels.tolist())) < 2:
        raise ConfigurationError("phase B needs both same and different pairs")
    if config is None:
        config = SimilarityConfig(
            feature_dim=extractor.config.feature_dim,
            hidden_dim=2048 if extractor.config.scale_profile == "paper" else 64,
        )
    if config.feature_dim != extractor.config.feature_dim:
        raise ConfigurationError(
            f"similarity expects {config.feature_dim}-dim features but the "
            f"extractor produces {extractor.config.feature_dim}"
        )
    sim = SimilarityModel(config, seed=hyper.seed, dtype=extractor.dtype)
    left = patches_to_array(pairs.left)
    right = patches_to_array(pairs.right)
    y = pairs.labels

    sim_params = {f"sim/{k}": v for k, v in sim.params().items()}
    ext_params = {} if freeze_extractor else {
        f"ext/{k}": v for k, v in extractor.params(include_head=False).items()
    }
    opt = nn.SGD({**sim_params, **ext_params}, hyper.momentum, hyper.weight_decay)
    rng = np.random.default_rng(hyper.seed + 1)
    history = []
    for epoch in range(1, hyper.epochs + 1):
        lr = nn.lr_at_epoch(epoch, hyper.lr0, hyper.halve_every)
        order = rng.permutation(len(pairs))
        losses = []
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            xa = extractor.to_input(left[idx])
            xb = extractor.to_input(right[idx])
            train_ext = not freeze_extractor
            fa, ca = extractor.forward_features(xa, train=train_ext)
            fb, cb = extractor.forward_features(xb, train=train_ext)
            logits, pair_cache = sim.forward_pair(fa, fb, train=True)
            loss, dlogits = nn.cross_entropy(logits, y[idx])
            dfa, dfb, sim_grads = sim.backward_pair(dlogits, pair_cache)
            grads: dict[str, np.ndarray] = {}
            nn.accumulate(grads, sim_grads, "sim/")
            if not freeze_extractor:
                ext_grads: dict[str, np.ndarray] = {}
                extractor.backward_features(dfa, ca, ext_grads)
                extractor.backward_features(dfb, cb, ext_grads)
                nn.accumulate(grads, ext_grads, "ext/")
            opt.step(grads, lr)
            if constrain_first_layer and not freeze_extractor:
                apply_residual_constraint(extractor)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    sim.phase_b_history = history
    sim.provenance = dict(provenance or {})
    sim.provenance.update(
        phase="B",
        frozen_extractor=freeze_extractor,
        constrained_first_layer=constrain_first_layer,
        hyper=vars(hyper) | {},
        seed=hyper.seed,
    )
    return extractor, sim


# -- combined system -------------------------------------------------------


@dataclass
class ComparisonResult:
    score: float
    decision: bool  # True = same trace
    threshold: float
    entropy_a: float
    entropy_b: float

    def to_json(self) -> dict:
        return {
            "score": self.score,
            "decision": "similar" if self.decision else "different",
            "threshold": self.threshold,
            "entropy": [self.entropy_a, self.entropy_b],
        }


@dataclass
class SimilaritySystem:
    """Extractor + similarity net + decision rule, as one deployable unit."""

    extractor: ExtractorModel
    similarity: SimilarityModel
    threshold: float = DEFAULT_THRESHOLD
    entropy_thresholds: EntropyThresholds = field(default_factory=EntropyThresholds)

    def __post_init__(self):
        if not (0.0 <= self.threshold <= 1.0):
            raise ConfigurationError("decision threshold must lie in [0, 1]")
        if self.extractor.config.feature_dim != self.similarity.config.feature_dim:
            raise ConfigurationError("extractor and similarity feature widths differ")

    @property
    def patch_size(self) -> int:
        return self.extractor.config.patch_size

    def decide(self, score: float) -> bool:
        """Boundary convention: a score exactly at the threshold is 'different'."""
        return score > self.threshold

    def score_pair(self, patch_a, patch_b) -> float:
        fa = self.extractor.extract(patch_a).values
        fb = self.extractor.extract(patch_b).values
        return self.similarity.similarity(fa, fb)

    def compare(self, patch_a, patch_b, enforce_entropy: bool = False) -> ComparisonResult:
        ha = _patch_entropy(patch_a)
        hb = _patch_entropy(patch_b)
        if enforce_entropy:
            for name, h in (("first", ha), ("second", hb)):
                if not self.entropy_thresholds.contains(h):
                    raise UnreliablePatchError(
                        f"{name} patch entropy {h:.3f} outside "
                        f"[{self.entropy_thresholds.min_nats}, {self.entropy_thresholds.max_nats}]",
                        entropy=h,
                    )
        score = self.score_pair(patch_a, patch_b)
        return ComparisonResult(score, self.decide(score), self.threshold, ha, hb)

    def score_matrix(self, patches) -> np.ndarray:
        """All-pairs similarity scores; features computed once per patch."""
        feats = self.extractor.extract_batch(patches)
        n = len(feats)
        out = np.empty((n, n), dtype=np.float64)
        for i in range(n):
            fa = np.repeat(feats[i : i + 1], n, axis=0)
            out[i] = self.similarity.scores(fa, feats)
        return out

    def reliability_mask(self, patches) -> np.ndarray:
        band = self.entropy_thresholds
        return np.array([band.contains(_patch_entropy(p)) for p in patches], dtype=bool)


def _patch_entropy(patch) -> float:
    pixels = patch.pixels if isinstance(patch, Patch) else np.asarray(patch)
    return entropy(pixels)
