"""Scratch probe: low-level artifact separability per camera pair. Not part of the package."""
import itertools

import numpy as np
from scipy.ndimage import gaussian_filter

from forensim import tracelab

SCENES = 6
PATCH = 128


def patch_stats(img):
    """Simple trace-sensitive statistics for one uint8 RGB patch."""
    x = img.astype(np.float64) / 255.0
    lum = x.mean(axis=2)
    resid = lum - gaussian_filter(lum, 1.2)
    hf = resid.std()
    # blockiness: extra gradient energy on 8-pixel JPEG grid boundaries
    gcol = np.abs(np.diff(lum, axis=1))
    on = gcol[:, 7::8].mean()
    off = np.delete(gcol, slice(7, None, 8), axis=1).mean()
    blocky = on - off
    # demosaic trace: checkerboard correlation of the green channel residual
    g = x[:, :, 1] - gaussian_filter(x[:, :, 1], 1.2)
    even = g[::2, ::2].ravel()
    odd = g[1::2, 1::2].ravel()
    n = min(len(even), len(odd))
    checker = float(np.corrcoef(even[:n], odd[:n])[0, 1])
    # chroma HF: color channels diverge at high frequency under CFA interpolation
    cd = (x[:, :, 0] - x[:, :, 1])
    chf = (cd - gaussian_filter(cd, 1.2)).std()
    return np.array([hf, blocky, checker, chf, lum.mean(), lum.std()])


def main():
    sets = tracelab.desk_camera_sets()
    models = sets["A"] + sets["B"] + sets["C"]
    bank = tracelab.scene_bank(SCENES, seed=99, size=512)
    feats = {}
    for m in models:
        rows = []
        for si, scene in enumerate(bank):
            img = tracelab.render_camera(m, scene, seed=si)
            for r in range(0, img.shape[0] - PATCH + 1, PATCH):
                for c in range(0, img.shape[1] - PATCH + 1, PATCH):
                    rows.append(patch_stats(img[r:r + PATCH, c:c + PATCH]))
        feats[m.id] = np.array(rows)
    names = ["hf", "blocky", "checker", "chromaHF", "mean", "std"]
    print(f"{'pair':24s} " + " ".join(f"{n:>9s}" for n in names) + "   best")
    for a, b in itertools.combinations(models, 2):
        fa, fb = feats[a.id], feats[b.id]
        d = np.abs(fa.mean(0) - fb.mean(0)) / np.sqrt(fa.var(0) + fb.var(0) + 1e-12)
        tag = ""
        if {a.id, b.id} <= {m.id for m in sets["A"] + sets["B"]}:
            tag = "KK"
        elif {a.id, b.id} <= {m.id for m in sets["C"]}:
            tag = "UU"
        else:
            tag = "KU"
        line = f"{a.id} vs {b.id:8s} " + " ".join(f"{v:9.2f}" for v in d)
        print(f"{line}   {d.max():5.2f} {names[int(d.argmax())]:8s} {tag}")


if __name__ == "__main__":
    main()
