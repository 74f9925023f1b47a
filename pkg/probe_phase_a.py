"""Scratch probe: unconstrained phase A convergence across hyper combos. Not part of the package."""
import time

import numpy as np

from forensim import tracelab
from forensim.extractor import desk_config, train_phase_a, PhaseAHyper, patches_to_array

bundle = tracelab.build_camera_bundle(
    seed=0, patch_size=128, train_scenes=32, eval_scenes=10,
    patches_per_pipeline=480, train_pair_count=8, eval_pair_count=8,
)
print(f"pool {len(bundle.phase_a_patches)}", flush=True)

COMBOS = [
    ("P4 lr.05 h12 e36 b25", dict(epochs=36, lr0=0.05, halve_every=12, batch_size=25)),
    ("P1 lr.02 h24 e72 b25", dict(epochs=72, lr0=0.02, halve_every=24, batch_size=25)),
    ("P2 lr.005 h24 e72 b25", dict(epochs=72, lr0=0.005, halve_every=24, batch_size=25)),
    ("P3 lr.02 h12 e36 b50", dict(epochs=36, lr0=0.02, halve_every=12, batch_size=50)),
]

for name, kw in COMBOS:
    t0 = time.time()
    ext = train_phase_a(desk_config(128), bundle.phase_a_patches,
                        PhaseAHyper(momentum=0.9, seed=0, **kw))
    hist = ext.phase_a_history
    marks = [hist[i] for i in range(0, len(hist), max(1, len(hist) // 8))] + [hist[-1]]
    print(f"{name}: {time.time()-t0:.0f}s  " + " ".join(f"{v:.3f}" for v in marks), flush=True)
    if hist[-1] < 0.45:
        print(f"{name} converged; stopping sweep", flush=True)
        break
