"""Verify the training gradients against central finite differences.

The training loop consumes analytic gradients backpropagated through the
whole chain: conv blocks, batch norm, pooling, the fc stack, the two-tower
similarity layers and the softmax loss.  This script perturbs a random sample
of individual parameters by +-1e-5 in float64 and compares the resulting loss
slope against the analytic value, which catches sign errors, transposed
matrices and wrong normalization constants immediately.

The full-suite version sweeps every parameter; sampling keeps this
walkthrough under half a minute.

Run:  python3 demos/gradient_check_walkthrough.py
"""

import numpy as np

from forensim import nn
from forensim.extractor import ExtractorModel, desk_config
from forensim.similarity import SimilarityModel, desk_similarity_config

EPS = 1e-5
COORDS_PER_ARRAY = 12

extractor = ExtractorModel(desk_config(128), seed=1, dtype=np.float64)
sim = SimilarityModel(desk_similarity_config(extractor.config.feature_dim), seed=2, dtype=np.float64)
rng = np.random.default_rng(3)
xa = extractor.to_input(rng.integers(0, 256, size=(2, 128, 128, 3), dtype=np.uint8))
xb = extractor.to_input(rng.integers(0, 256, size=(2, 128, 128, 3), dtype=np.uint8))
labels = np.array([1, 0])


def pair_loss():
    fa, _ = extractor.forward_features(xa, train=True)
    fb, _ = extractor.forward_features(xb, train=True)
    logits, _ = sim.forward_pair(fa, fb, train=True)
    return nn.cross_entropy(logits, labels)[0]


# analytic gradients, via the exact path the pair-training phase uses
fa, ca = extractor.forward_features(xa, train=True)
fb, cb = extractor.forward_features(xb, train=True)
logits, cache = sim.forward_pair(fa, fb, train=True)
loss, dlogits = nn.cross_entropy(logits, labels)
dfa, dfb, sim_grads = sim.backward_pair(dlogits, cache)
ext_grads: dict[str, np.ndarray] = {}
extractor.backward_features(dfa, ca, ext_grads)
extractor.backward_features(dfb, cb, ext_grads)
print(f"loss at the starting point: {loss:.6f}")

params = {f"extractor {k}": v for k, v in extractor.params(include_head=False).items()}
params.update({f"similarity {k}": v for k, v in sim.params().items()})
analytic = {f"extractor {k}": v for k, v in ext_grads.items()}
analytic.update({f"similarity {k}": v for k, v in sim_grads.items()})

worst = 0.0
print(f"checking {COORDS_PER_ARRAY} random coordinates in each parameter array ...")
for name in sorted(params):
    arr, grad = params[name].reshape(-1), analytic[name].reshape(-1)
    for i in rng.choice(arr.size, size=min(COORDS_PER_ARRAY, arr.size), replace=False):
        orig = arr[i]
        arr[i] = orig + EPS
        up = pair_loss()
        arr[i] = orig - EPS
        down = pair_loss()
        arr[i] = orig
        fd = (up - down) / (2 * EPS)
        scale = max(abs(fd), abs(grad[i]), 1e-8)
        worst = max(worst, abs(fd - grad[i]) / scale)
    print(f"  {name:28s} ok (worst so far {worst:.2e})")

print(f"largest relative disagreement: {worst:.2e}  (tolerance 1e-4)")
assert worst < 1e-4
