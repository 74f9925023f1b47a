"""CNN feature extractor: maps an RGB patch to a compact forensic feature vector.

The network is a stack of convolutional blocks (conv, optional batch norm,
activation, pooling) followed by two fully connected layers; the activations
of the last fully connected layer are the deep feature.  The same parameter
set serves both inputs of a patch pair (hard sharing), so feature extraction
is order-invariant by construction.

Two scale profiles exist.  "paper" is the full-size production architecture:
five conv blocks, 6 first-layer kernels, 200/200 tanh fully connected layers.
"desk" is a deliberately small variant with the same structure so training
and gradient verification run in seconds on a CPU.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .errors import ConfigurationError, DimensionError
from .patches import Patch

FEATURE_DIM = 200  # fc2 width in the paper profile


@dataclass(frozen=True)
class ConvBlockSpec:
    """One convolutional block: conv, then optional norm, activation, pooling."""

    kernel_size: int
    kernel_count: int
    stride: int = 1
    pool: str = "max"  # "max" | "avg" | "global_avg" | "none"
    pool_size: int = 3
    pool_stride: int = 2
    normalize: bool = True
    activation: str = "tanh"


@dataclass(frozen=True)
class ExtractorConfig:
    patch_size: int
    conv_blocks: tuple[ConvBlockSpec, ...]
    fc_widths: tuple[int, int] = (FEATURE_DIM, FEATURE_DIM)
    num_phase_a_classes: int = 2
    first_layer_kernels: int = 6
    scale_profile: str = "paper"
    fc_activation: str = "tanh"
    in_channels: int = 3

    def __post_init__(self):
        if not self.conv_blocks:
            raise ConfigurationError("need at least one conv block")
        if self.num_phase_a_classes < 1:
            raise ConfigurationError("num_phase_a_classes must be positive")
        if self.conv_blocks[0].kernel_count != self.first_layer_kernels:
            raise ConfigurationError(
                "first_layer_kernels must match conv_blocks[0].kernel_count"
            )
        if self.scale_profile == "paper":
            if len(self.conv_blocks) != 5:
                raise ConfigurationError("paper profile has exactly 5 conv blocks")
            if self.fc_widths != (FEATURE_DIM, FEATURE_DIM):
                raise ConfigurationError("paper profile uses 200/200 fc widths")
            if self.fc_activation != "tanh":
                raise ConfigurationError("paper profile uses tanh fc layers")
            first = self.conv_blocks[0]
            if self.in_channels != 3 or first.kernel_count != 6 or first.kernel_size != 5:
                raise ConfigurationError(
                    "paper profile first layer is 6 kernels of 5x5 over 3 channels"
                )

    @property
    def feature_dim(self) -> int:
        return self.fc_widths[1]


def paper_config(patch_size: int = 256, num_classes: int = 2) -> ExtractorConfig:
    """Production architecture; valid for 128 and 256 pixel inputs.

    conv5 uses 1x1 kernels so the pooling geometry closes for both input
    sizes; all other blocks use 5x5 kernels with 3x3/2 max pooling, batch
    norm and tanh from block 2 on, and average pooling on the last block.
    """
    if patch_size not in (128, 256):
        raise ConfigurationError("paper profile supports patch sizes 128 and 256")
    blocks = (
        ConvBlockSpec(5, 6, 1, pool="max", normalize=False, activation="linear"),
        ConvBlockSpec(5, 64, 1, pool="max"),
        ConvBlockSpec(5, 64, 1, pool="max"),
        ConvBlockSpec(5, 128, 1, pool="max"),
        ConvBlockSpec(1, 128, 1, pool="avg"),
    )
    return ExtractorConfig(
        patch_size=patch_size,
        conv_blocks=blocks,
        num_phase_a_classes=num_classes,
        scale_profile="paper",
    )


def desk_config(patch_size: int = 128, num_classes: int = 2, in_channels: int = 3) -> ExtractorConfig:
    """Reduced-width profile for CPU-speed experiments and tests.

    Keeps the block structure (plain first conv, normalized tanh blocks,
    pooling, spatial map flattened into the fc stack) but shrinks kernel
    counts and fc widths; the first conv stride grows with the patch so the
    spatial cost stays flat across sizes.  The last block pools spatially
    instead of averaging globally: a global mean of the (roughly symmetric)
    tanh responses would wash out the response-energy differences the traces
    live in.
    """
    stride1 = 4 if patch_size >= 192 else 2
    blocks = (
        ConvBlockSpec(5, 4, stride1, pool="max", normalize=False, activation="linear"),
        ConvBlockSpec(5, 8, 1, pool="max"),
        ConvBlockSpec(3, 16, 1, pool="max"),
    )
    return ExtractorConfig(
        patch_size=patch_size,
        conv_blocks=blocks,
        fc_widths=(32, 32),
        num_phase_a_classes=num_classes,
        first_layer_kernels=4,
        scale_profile="desk",
        in_channels=in_channels,
    )


@dataclass(frozen=True)
class PhaseAHyper:
    """Extractor pretraining hyperparameters (defaults are the production recipe)."""

    epochs: int = 30
    lr0: float = 0.001
    halve_every: int = 3
    batch_size: int = 50
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0


@dataclass
class DeepFeature:
    """Feature vector read from the last fully connected layer."""

    values: np.ndarray

    def __len__(self):
        return len(self.values)


def patches_to_array(patches) -> np.ndarray:
    """Stack Patch objects (or raw arrays) into one (n, H, W, 3) uint8 array."""
    arrs = [p.pixels if isinstance(p, Patch) else np.asarray(p) for p in patches]
    sizes = {a.shape for a in arrs}
    if len(sizes) != 1:
        raise DimensionError(f"patches have mixed shapes: {sorted(sizes)}")
    return np.stack(arrs)


class ExtractorModel:
    """Feature extractor plus the Phase A classification head.

    The head exists only for pretraining; ``extract`` reads the fc2
    activations and never touches it.
    """

    def __init__(self, config: ExtractorConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.provenance: dict = {}
        rng = np.random.default_rng(seed)
        self.blocks = []
        ch = config.in_channels
        h = w = config.patch_size
        for bi, spec in enumerate(config.conv_blocks):
            # a conv bias is dead weight when the mean subtraction of a batch
            # norm cancels it: directly (own block) or through a linear
            # activation and shift-equivariant pooling (next block)
            following = config.conv_blocks[bi + 1] if bi + 1 < len(config.conv_blocks) else None
            shift_cancelled = spec.normalize or (
                spec.activation == "linear" and following is not None and following.normalize
            )
            conv = nn.Conv2D(
                ch, spec.kernel_count, spec.kernel_size, spec.stride,
                rng=rng, dtype=dtype, bias=not shift_cancelled,
            )
            if bi == 0:
                _zero_dc_init(conv)
            h, w = conv.out_hw(h, w)
            bnorm = nn.BatchNorm2D(spec.kernel_count, dtype=dtype) if spec.normalize else None
            act = nn.Activation(spec.activation)
            pool = None
            if spec.pool == "max":
                pool = nn.MaxPool2D(spec.pool_size, spec.pool_stride)
            elif spec.pool == "avg":
                pool = nn.AvgPool2D(spec.pool_size, spec.pool_stride)
            elif spec.pool == "global_avg":
                pool = nn.GlobalAvgPool()
            elif spec.pool != "none":
                raise ConfigurationError(f"unknown pool kind {spec.pool!r}")
            if isinstance(pool, (nn.MaxPool2D, nn.AvgPool2D)):
                if h < spec.pool_size or w < spec.pool_size:
                    raise ConfigurationError(
                        f"block output {h}x{w} too small for {spec.pool_size}x{spec.pool_size} pooling"
                    )
                h = (h - spec.pool_size) // spec.pool_stride + 1
                w = (w - spec.pool_size) // spec.pool_stride + 1
            elif isinstance(pool, nn.GlobalAvgPool):
                h = w = 1
            self.blocks.append((conv, bnorm, act, pool))
            ch = spec.kernel_count
        self.flat_dim = ch * h * w
        self.fc1 = nn.Dense(self.flat_dim, config.fc_widths[0], rng=rng, dtype=dtype)
        self.fc2 = nn.Dense(config.fc_widths[0], config.fc_widths[1], rng=rng, dtype=dtype)
        self.fc_act = nn.Activation(config.fc_activation)
        self.head = nn.Dense(config.fc_widths[1], config.num_phase_a_classes, rng=rng, dtype=dtype)

    # -- parameter bookkeeping -------------------------------------------

    def params(self, include_head=True) -> dict[str, np.ndarray]:
        out = {}
        for i, (conv, bnorm, _, _) in enumerate(self.blocks, start=1):
            for k, v in conv.params().items():
                out[f"conv{i}/{k}"] = v
            if bnorm is not None:
                for k, v in bnorm.params().items():
                    out[f"conv{i}/bn/{k}"] = v
        for k, v in self.fc1.params().items():
            out[f"fc1/{k}"] = v
        for k, v in self.fc2.params().items():
            out[f"fc2/{k}"] = v
        if include_head:
            for k, v in self.head.params().items():
                out[f"head/{k}"] = v
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (_, bnorm, _, _) in enumerate(self.blocks, start=1):
            if bnorm is not None:
                for k, v in bnorm.buffers().items():
                    out[f"conv{i}/bn/{k}"] = v
        return out

    def set_param(self, name: str, value: np.ndarray):
        """Overwrite one named parameter or buffer in place (shape-checked)."""
        store = {**self.params(), **self.buffers()}
        if name not in store:
            raise ConfigurationError(f"unknown parameter {name!r}")
        if store[name].shape != value.shape:
            raise DimensionError(f"{name}: expected shape {store[name].shape}, got {value.shape}")
        store[name][...] = value.astype(store[name].dtype)

    # -- forward / backward ----------------------------------------------

    def to_input(self, patches) -> np.ndarray:
        """uint8 (n, H, W, 3) or Patch list -> NCHW float in [-0.5, 0.5].

        Centering keeps the unnormalized first conv from being dominated by
        the DC response, which would let max pooling select on brightness
        instead of local structure.
        """
        arr = patches_to_array(patches) if not isinstance(patches, np.ndarray) else patches
        if arr.ndim == 3:
            arr = arr[None]
        if arr.shape[1] != self.config.patch_size or arr.shape[2] != self.config.patch_size:
            raise DimensionError(
                f"model expects {self.config.patch_size}px patches, got {arr.shape[1]}x{arr.shape[2]}"
            )
        x = arr.astype(self.dtype) / 255.0 - 0.5
        x = x.transpose(0, 3, 1, 2)
        if self.config.in_channels == 1:
            x = x[:, 1:2]  # green channel only (ablation variants)
        elif self.config.in_channels != 3:
            raise ConfigurationError("in_channels must be 1 or 3")
        return np.ascontiguousarray(x)

    def forward_features(self, x: np.ndarray, train: bool = False):
        """Run the conv/fc stack; returns (features, cache) for backprop."""
        caches = []
        out = x
        for conv, bnorm, act, pool in self.blocks:
            out, c = conv.forward(out, train)
            caches.append(("conv", conv, c))
            if bnorm is not None:
                out, c = bnorm.forward(out, train)
                caches.append(("bn", bnorm, c))
            out, c = act.forward(out, train)
            caches.append(("act", act, c))
            if pool is not None:
                out, c = pool.forward(out, train)
                caches.append(("pool", pool, c))
        shape_before = out.shape
        out = out.reshape(out.shape[0], -1)
        if out.shape[1] != self.flat_dim:
            raise DimensionError(
                f"flattened width {out.shape[1]} != configured {self.flat_dim}; "
                "patch size does not match the model config"
            )
        caches.append(("flatten", None, shape_before))
        out, c = self.fc1.forward(out, train)
        caches.append(("fc1", self.fc1, c))
        out, c = self.fc_act.forward(out, train)
        caches.append(("act", self.fc_act, c))
        out, c = self.fc2.forward(out, train)
        caches.append(("fc2", self.fc2, c))
        out, c = self.fc_act.forward(out, train)
        caches.append(("act", self.fc_act, c))
        return out, caches

    def backward_features(self, dfeat: np.ndarray, caches, grads: dict[str, np.ndarray]):
        """Backprop from the feature vector to the input, accumulating into `grads`."""
        d = dfeat
        block_idx = len(self.blocks)
        for kind, layer, cache in reversed(caches):
            if kind == "flatten":
                d = d.reshape(cache)
                continue
            d, g = layer.backward(d, cache)
            if kind == "conv":
                nn.accumulate(grads, g, f"conv{block_idx}/")
                block_idx -= 1
            elif kind == "bn":
                nn.accumulate(grads, g, f"conv{block_idx}/bn/")
            elif kind in ("fc1", "fc2"):
                nn.accumulate(grads, g, f"{kind}/")
        return d

    def forward_classifier(self, x: np.ndarray, train: bool = False):
        feat, caches = self.forward_features(x, train)
        logits, head_cache = self.head.forward(feat, train)
        return logits, (caches, head_cache)

    # -- public API ---------------------------------------------------------

    def extract(self, patch) -> DeepFeature:
        """Deep feature of one patch (deterministic, evaluation mode)."""
        feat, _ = self.forward_features(self.to_input([patch] if isinstance(patch, Patch) else patch))
        return DeepFeature(values=feat[0])

    def extract_batch(self, patches) -> np.ndarray:
        """(n, feature_dim) features for a batch of same-size patches."""
        feats = []
        for start in range(0, len(patches), 256):
            chunk = patches[start : start + 256]
            out, _ = self.forward_features(self.to_input(chunk))
            feats.append(out)
        return np.concatenate(feats, axis=0)


def extract(model: ExtractorModel, patch) -> DeepFeature:
    return model.extract(patch)


def gradients(model: ExtractorModel, batch) -> dict[str, np.ndarray]:
    """Analytic gradients of the Phase A loss for one batch, by parameter name.

    `batch` is (patches, integer labels).  Exposed so the finite-difference
    verification can compare against the exact same path training uses.
    """
    patches, labels = batch
    if len(patches) == 0:
        raise ConfigurationError("batch must be nonempty")
    x = model.to_input(patches)
    labels = np.asarray(labels)
    logits, (caches, head_cache) = model.forward_classifier(x, train=True)
    _, dlogits = nn.cross_entropy(logits, labels)
    grads: dict[str, np.ndarray] = {}
    dfeat, g = model.head.backward(dlogits, head_cache)
    nn.accumulate(grads, g, "head/")
    model.backward_features(dfeat, caches, grads)
    return grads


def phase_a_loss(model: ExtractorModel, batch) -> float:
    patches, labels = batch
    logits, _ = model.forward_classifier(model.to_input(patches), train=True)
    loss, _ = nn.cross_entropy(logits, np.asarray(labels))
    return loss


def _zero_dc_init(conv) -> None:
    """Remove each kernel slice's spatial mean at init, preserving its norm.

    A first layer whose kernels start with zero DC response is blind to
    locally flat content, so early gradients point at pixel-level texture
    differences instead of scene brightness.  Init-time conditioning only;
    the kernels train without any constraint afterwards.
    """
    W = conv.W
    if W.shape[2] * W.shape[3] < 2:  # a 1x1 kernel has no nonzero zero-mean form
        return
    flat = W.reshape(W.shape[0], W.shape[1], -1).astype(np.float64)
    before = np.linalg.norm(flat, axis=2, keepdims=True)
    flat -= flat.mean(axis=2, keepdims=True)
    after = np.linalg.norm(flat, axis=2, keepdims=True)
    flat *= before / np.maximum(after, 1e-12)
    conv.W[...] = flat.reshape(W.shape).astype(W.dtype)


def apply_residual_constraint(model: ExtractorModel):
    """Project first-layer kernels to the prediction-residual form.

    Center tap is forced to -1 and the surrounding taps are rescaled to sum
    to +1 (per input channel).  Used only by the constrained-first-layer
    ablation variant.
    """
    W = model.blocks[0][0].W
    k = W.shape[2]
    c = k // 2
    for i in range(W.shape[0]):
        for j in range(W.shape[1]):
            ker = W[i, j]
            center = ker[c, c]
            rest = ker.sum() - center
            if abs(rest) < 1e-12:
                ker[c, c] = 0.0
                ker += 1.0 / (k * k - 1)
                ker[c, c] = 0.0
                rest = ker.sum()
            else:
                ker[c, c] = 0.0
            ker /= rest
            ker[c, c] = -1.0


class _LabelCodec:
    def __init__(self, labels):
        self.classes = sorted(set(labels))
        self.index = {c: i for i, c in enumerate(self.classes)}

    def encode(self, labels):
        return np.array([self.index[l] for l in labels], dtype=np.int64)


def train_phase_a(
    config: ExtractorConfig,
    dataset,
    hyper: PhaseAHyper = PhaseAHyper(),
    dtype=np.float32,
    constrain_first_layer: bool = False,
    provenance: dict | None = None,
) -> ExtractorModel:
    """Pretrain the extractor as a source-pipeline classifier.

    `dataset` is a sequence of Patch objects whose trace_label names the
    source pipeline class.  Mini-batch SGD on softmax cross-entropy; the
    head stays inside the returned model but extract() never uses it.
    """
    patches = list(dataset)
    labels = [p.trace_label for p in patches]
    if any(l is None for l in labels):
        raise ConfigurationError("every training patch needs a trace_label")
    codec = _LabelCodec(labels)
    if len(codec.classes) < 2:
        raise ConfigurationError("phase A needs at least 2 classes")
    config = replace(config, num_phase_a_classes=len(codec.classes))
    model = ExtractorModel(config, seed=hyper.seed, dtype=dtype)
    if constrain_first_layer:
        apply_residual_constraint(model)
    pixels = patches_to_array(patches)
    y = codec.encode(labels)
    opt = nn.SGD(model.params(include_head=True), hyper.momentum, hyper.weight_decay)
    rng = np.random.default_rng(hyper.seed + 1)
    history = []
    for epoch in range(1, hyper.epochs + 1):
        lr = nn.lr_at_epoch(epoch, hyper.lr0, hyper.halve_every)
        order = rng.permutation(len(patches))
        losses = []
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            x = model.to_input(pixels[idx])
            logits, (caches, head_cache) = model.forward_classifier(x, train=True)
            loss, dlogits = nn.cross_entropy(logits, y[idx])
            grads: dict[str, np.ndarray] = {}
            dfeat, g = model.head.backward(dlogits, head_cache)
            nn.accumulate(grads, g, "head/")
            model.backward_features(dfeat, caches, grads)
            opt.step(grads, lr)
            if constrain_first_layer:
                apply_residual_constraint(model)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    model.phase_a_history = history
    model.provenance = dict(provenance or {})
    model.provenance.update(
        phase="A",
        classes=codec.classes,
        hyper=vars(hyper) | {},
        seed=hyper.seed,
    )
    return model
