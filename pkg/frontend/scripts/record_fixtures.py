"""Record HTTP fixtures for the frontend contract tests.

Boots the real service in-process, trains a small comparator (or loads one
from --model), uploads a synthetic splice, and stores each JSON response
verbatim under test/fixtures/. The splice pairs a clean pipeline with a
heavy-noise pipeline and carries a flat corner, so the fixtures exhibit the
three behaviors the UI tests lean on: complementary overlays under reference
swap, a bimodal score distribution, and an entropy-rejected block.

Run from the repository root with the Python package installed:

    python3 frontend/scripts/record_fixtures.py [--model path/to/checkpoint]
"""

import argparse
import base64
import io
import json
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient
from PIL import Image

from forensim import tracelab
from forensim.checkpoint import save_checkpoint
from forensim.extractor import PhaseAHyper, desk_config, train_phase_a
from forensim.server import create_app
from forensim.similarity import PhaseBHyper, SimilaritySystem, train_phase_b

FIXTURES = Path(__file__).resolve().parent.parent / "test" / "fixtures"
SEED = 7
ETA = 0.5
INSERT = (192, 384, 256, 448)  # row0, row1, col0, col1 (half-open pixel bounds)


def train_small_system() -> SimilaritySystem:
    bundle = tracelab.build_camera_bundle(
        seed=SEED,
        patch_size=128,
        train_scenes=16,
        eval_scenes=4,
        train_pair_count=1200,
        eval_pair_count=120,
    )
    ext = train_phase_a(
        desk_config(128),
        bundle.phase_a_patches,
        PhaseAHyper(epochs=24, lr0=0.02, halve_every=8, batch_size=25, momentum=0.9, seed=SEED),
    )
    ext, sim = train_phase_b(
        ext,
        bundle.phase_b_pairs,
        hyper=PhaseBHyper(epochs=12, lr0=0.02, halve_every=4, batch_size=25, momentum=0.9, seed=SEED),
    )
    return SimilaritySystem(ext, sim)


def build_splice() -> np.ndarray:
    sets = tracelab.desk_camera_sets()
    host_cam = sets["A"][3]  # clean, noise-free pipeline
    donor_cam = sets["A"][1]  # heavy-noise pipeline: a strong, learnable contrast
    scene = np.array(tracelab.make_scene(31, size=512, kind="textured"))
    scene[:128, :128] = 128  # flat corner -> entropy-rejected blocks
    host = tracelab.render_camera(host_cam, scene, seed=SEED)
    donor = tracelab.render_camera(donor_cam, scene, seed=SEED)
    r0, r1, c0, c1 = INSERT
    composite = host.copy()
    composite[r0:r1, c0:c1] = donor[r0:r1, c0:c1]
    return composite


def png_b64(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def cell_zones(grid: dict) -> tuple[list[list[int]], list[list[int]]]:
    """Grid cells fully inside the insert and cells fully outside it."""
    r0, r1, c0, c1 = INSERT
    size, stride = grid["block_size"], grid["stride"]
    inside, outside = [], []
    for r in range(grid["rows"]):
        for c in range(grid["cols"]):
            top, left = r * stride, c * stride
            bot, right = top + size, left + size
            if top >= r0 and bot <= r1 and left >= c0 and right <= c1:
                inside.append([r, c])
            elif bot <= r0 or top >= r1 or right <= c0 or left >= c1:
                outside.append([r, c])
    return inside, outside


def iou(a: set, b: set) -> float:
    return len(a & b) / max(1, len(a | b))


def pick_references(matrix: dict, inside: list, outside: list) -> tuple[list, list]:
    """Host/donor references whose eta-0.5 flag sets best match the splice zones."""
    grid = matrix["grid"]
    cols = grid["cols"]
    scores = np.asarray(matrix["scores"])
    reliable = np.asarray(matrix["reliable"])
    rel = lambda cells: {r * cols + c for r, c in cells if reliable[r * cols + c]}
    in_set, out_set = rel(inside), rel(outside)

    def best(candidates: list, target: set) -> tuple[list, float]:
        ranked = []
        for r, c in candidates:
            flat = r * cols + c
            if not reliable[flat]:
                continue
            flags = {j for j in np.flatnonzero(scores[flat] <= ETA) if j != flat and reliable[j]}
            ranked.append((iou(flags, target), [r, c]))
        ranked.sort(key=lambda t: (-t[0], t[1]))
        return ranked[0][1], ranked[0][0]

    host_ref, host_iou = best(outside, in_set)
    donor_ref, donor_iou = best(inside, out_set)
    print(f"host_ref {host_ref} flags-vs-insert IoU {host_iou:.2f}")
    print(f"donor_ref {donor_ref} flags-vs-host IoU {donor_iou:.2f}")
    if host_iou < 0.5 or donor_iou < 0.5:
        raise SystemExit("fixture splice does not localize cleanly; adjust the recipe before recording")
    return host_ref, donor_ref


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", help="checkpoint to serve instead of training a fresh one")
    args = ap.parse_args()

    FIXTURES.mkdir(parents=True, exist_ok=True)
    if args.model:
        ckpt_path = args.model
    else:
        print("training fixture comparator (a few minutes on one core) ...")
        system = train_small_system()
        ckpt_path = str(FIXTURES / "analyst_fixture.fsim")
        save_checkpoint(system, ckpt_path)

    client = TestClient(create_app(model_paths=[ckpt_path]))
    save = lambda name, doc: (FIXTURES / name).write_text(json.dumps(doc, indent=1) + "\n")

    models = client.get("/v1/models").json()
    save("models.json", models)
    model_id = models["models"][0]["model_id"]

    composite = build_splice()
    Image.fromarray(composite).save(FIXTURES / "splice.png")
    upload = client.post("/v1/images", json={"image_b64": png_b64(composite)}).json()
    save("upload.json", upload)
    image_id = upload["image_id"]

    matrix = client.post("/v1/score-matrix", json={"image_id": image_id}).json()
    save("score_matrix.json", matrix)
    scores = np.asarray(matrix["scores"])
    grid_cols = matrix["grid"]["cols"]
    if scores.min() <= 0.0 or scores.max() >= 1.0:
        raise SystemExit("expected strictly interior scores; the eta edge-case tests need them")

    inside, outside = cell_zones(matrix["grid"])
    host_ref, donor_ref = pick_references(matrix, inside, outside)
    save("localize_host.json", client.post(
        "/v1/localize", json={"image_id": image_id, "ref_block": host_ref, "eta": ETA}).json())
    save("localize_donor.json", client.post(
        "/v1/localize", json={"image_id": image_id, "ref_block": donor_ref, "eta": ETA}).json())

    # compare partners chosen from the matrix so each decision is unambiguous
    host_flat = host_ref[0] * grid_cols + host_ref[1]
    reliable = np.asarray(matrix["reliable"])
    out_flat = [r * grid_cols + c for r, c in outside if reliable[r * grid_cols + c]]
    in_flat = [r * grid_cols + c for r, c in inside if reliable[r * grid_cols + c]]
    similar_to = max((j for j in out_flat if j != host_flat), key=lambda j: scores[host_flat, j])
    different_to = min(in_flat, key=lambda j: scores[host_flat, j])
    assert scores[host_flat, similar_to] > ETA and scores[host_flat, different_to] <= ETA

    def compare(partner_flat: int) -> dict:
        partner = [partner_flat // grid_cols, partner_flat % grid_cols]
        reply = client.post("/v1/compare", json={
            "patch_a": {"image_id": image_id, "block": host_ref},
            "patch_b": {"image_id": image_id, "block": partner},
        })
        assert reply.status_code == 200, reply.text
        return reply.json()

    cmp_diff = compare(different_to)
    cmp_same = compare(similar_to)
    if cmp_diff["decision"] != "different" or cmp_same["decision"] != "similar":
        raise SystemExit("compare fixtures disagree with the matrix; rerecord with another seed")
    save("compare_different.json", cmp_diff)
    save("compare_similar.json", cmp_same)

    flat_block = [0, 0]
    err = client.post("/v1/localize", json={"image_id": image_id, "ref_block": flat_block})
    if err.status_code != 422:
        raise SystemExit(f"expected the flat block to be refused, got {err.status_code}")
    save("error_unreliable_ref.json", {"status": err.status_code, "body": err.json()})

    save("meta.json", {
        "model_id": model_id,
        "image_file": "splice.png",
        "eta": ETA,
        "insert_px": list(INSERT),
        "inside_cells": inside,
        "outside_cells": outside,
        "host_ref": host_ref,
        "donor_ref": donor_ref,
        "unreliable_block": flat_block,
    })
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
