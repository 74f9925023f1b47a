"""End-to-end tests for the command-line workflows.

Each subcommand is driven through `cli.main` in-process.  Success prints
line-delimited JSON on stdout and returns 0; failures print one JSON error
record on stderr and return nonzero."""

import json
import os

import numpy as np
import pytest
from PIL import Image

from forensim import cli
from forensim.checkpoint import load_checkpoint
from forensim.extractor import ExtractorModel
from forensim.similarity import SimilaritySystem
from forensim.tracelab import read_manifest


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for key in [k for k in os.environ if k.startswith("FORENSIM_")]:
        monkeypatch.delenv(key)


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    out = [json.loads(line) for line in captured.out.splitlines() if line.strip()]
    err = [json.loads(line) for line in captured.err.splitlines() if line.strip()]
    return code, out, err


# ---------------------------------------------------------------------------
# synth


def test_synth_camera_writes_corpus_and_manifest(tmp_path, capsys):
    out = tmp_path / "corpus"
    code, records, err = run_cli(
        capsys, "synth", "--out", str(out), "--kind", "camera",
        "--scenes", "2", "--scene-size", "192", "--seed", "4",
    )
    assert code == 0 and not err
    assert records[-1]["items"] == 16  # 8 pipelines x 2 scenes
    manifest = read_manifest(out / "manifest.jsonl")
    assert len(manifest) == 16
    pipelines = {r["pipeline_id"] for r in manifest}
    assert len(pipelines) == 8
    first = manifest[0]
    assert set(first) == {"path", "pipeline_id", "split", "seed"}
    img = np.asarray(Image.open(out / first["path"]))
    assert img.shape == (192, 192, 3)


def test_synth_is_seed_reproducible(tmp_path, capsys):
    outs = []
    for run, seed in (("r1", 7), ("r2", 7), ("r3", 8)):
        out = tmp_path / run
        code, _, _ = run_cli(
            capsys, "synth", "--out", str(out), "--kind", "camera",
            "--scenes", "1", "--scene-size", "128", "--seed", str(seed),
        )
        assert code == 0
        outs.append(out)
    m1, m2, m3 = (p.joinpath("manifest.jsonl").read_bytes() for p in outs)
    assert m1 == m2
    first_image = read_manifest(outs[0] / "manifest.jsonl")[0]["path"]
    assert (outs[0] / first_image).read_bytes() == (outs[1] / first_image).read_bytes()
    assert (outs[0] / first_image).read_bytes() != (outs[2] / first_image).read_bytes()


def test_synth_splice_records_masks_for_forged_cases(tmp_path, capsys):
    out = tmp_path / "splices"
    code, records, err = run_cli(
        capsys, "synth", "--out", str(out), "--kind", "splice",
        "--forged", "2", "--clean", "1", "--scene-size", "192",
    )
    assert code == 0
    manifest = read_manifest(out / "manifest.jsonl")
    assert len(manifest) == 3
    forged = [r for r in manifest if r["forged"]]
    assert len(forged) == 2
    for r in forged:
        mask = np.asarray(Image.open(out / r["mask"]))
        assert set(np.unique(mask)) <= {0, 255} and mask.any()
    assert all("mask" not in r for r in manifest if not r["forged"])


def test_synth_manipulation_covers_every_operation(tmp_path, capsys):
    out = tmp_path / "manip"
    code, records, err = run_cli(
        capsys, "synth", "--out", str(out), "--kind", "manipulation",
        "--scenes", "1", "--scene-size", "160",
    )
    assert code == 0
    manifest = read_manifest(out / "manifest.jsonl")
    assert len(manifest) == 11
    assert {r["manipulation"] for r in manifest} == {
        "unaltered", "resize_bilinear", "gaussian_blur_5x5", "median_blur",
        "awg_noise", "jpeg_compression", "unsharp_mask", "adaptive_hist_eq",
        "wiener_filter", "web_dither", "salt_pepper",
    }


# ---------------------------------------------------------------------------
# training


def class_image_dirs(tmp_path):
    rng = np.random.default_rng(0)
    root = tmp_path / "classes"
    for cls in ("one", "two"):
        d = root / cls
        d.mkdir(parents=True)
        for k in range(2):
            base = rng.integers(40, 216, size=(32, 32, 3))
            img = np.repeat(np.repeat(base, 4, axis=0), 4, axis=1).astype(np.uint8)
            Image.fromarray(img).save(d / f"img{k}.png")
    return root


def test_train_a_from_class_directories(tmp_path, capsys):
    root = class_image_dirs(tmp_path)
    out = tmp_path / "phase_a.fsim"
    code, records, err = run_cli(
        capsys, "train-a", "--data", str(root), "--out", str(out),
        "--epochs", "1", "--batch-size", "4",
    )
    assert code == 0 and not err
    rec = records[-1]
    assert rec["classes"] == ["one", "two"] and rec["patches"] == 4
    assert len(rec["loss_history"]) == 1
    assert isinstance(load_checkpoint(out), ExtractorModel)


def test_train_a_rejects_empty_data_directory(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code, _, err = run_cli(
        capsys, "train-a", "--data", str(tmp_path / "empty"), "--out", str(tmp_path / "x.fsim"),
    )
    assert code == 1
    assert err[0]["error"] == "ConfigurationError"


def test_train_b_builds_a_full_system(tmp_path, capsys):
    root = class_image_dirs(tmp_path)
    base = tmp_path / "a.fsim"
    code, _, _ = run_cli(
        capsys, "train-a", "--data", str(root), "--out", str(base),
        "--epochs", "1", "--batch-size", "4",
    )
    assert code == 0
    out = tmp_path / "ab.fsim"
    code, records, err = run_cli(
        capsys, "train-b", "--base", str(base), "--out", str(out),
        "--scenes", "2", "--pairs", "12", "--epochs", "1", "--batch-size", "6",
        "--eta", "0.45",
    )
    assert code == 0 and not err
    assert records[-1]["pairs"] == 12 and records[-1]["frozen"] is False
    system = load_checkpoint(out)
    assert isinstance(system, SimilaritySystem)
    assert system.threshold == 0.45


# ---------------------------------------------------------------------------
# applications against a trained checkpoint


def test_compare_same_pipeline_images(capsys, quick_checkpoint, rendered_images):
    code, records, err = run_cli(
        capsys, "compare", rendered_images["a0_s0"], rendered_images["a0_s1"],
        "--model", quick_checkpoint,
    )
    assert code == 0 and not err
    rec = records[-1]
    assert 0.0 <= rec["score"] <= 1.0
    assert rec["decision_bit"] in (0, 1)


def test_compare_eta_controls_the_decision(capsys, quick_checkpoint, rendered_images):
    args = ("compare", rendered_images["a0_s0"], rendered_images["a1_s0"], "--model", quick_checkpoint)
    _, low, _ = run_cli(capsys, *args, "--eta", "0.0")
    _, high, _ = run_cli(capsys, *args, "--eta", "1.0")
    assert low[-1]["decision_bit"] == 1  # every score clears eta 0
    assert high[-1]["decision_bit"] == 0  # no score clears eta 1
    assert low[-1]["score"] == high[-1]["score"]


def test_compare_flat_image_trips_the_entropy_filter(capsys, quick_checkpoint, rendered_images):
    args = ("compare", rendered_images["flat"], rendered_images["a0_s0"], "--model", quick_checkpoint)
    code, _, err = run_cli(capsys, *args)
    assert code == 1
    assert err[0]["error"] == "UnreliablePatchError"
    code, records, err = run_cli(capsys, *args, "--no-entropy-filter")
    assert code == 0 and not err
    assert 0.0 <= records[-1]["score"] <= 1.0


def test_flag_beats_environment_for_eta(capsys, quick_checkpoint, rendered_images, monkeypatch):
    args = ("compare", rendered_images["a0_s0"], rendered_images["a0_s1"], "--model", quick_checkpoint)
    monkeypatch.setenv("FORENSIM_ETA", "1.0")
    _, records, _ = run_cli(capsys, *args)
    assert records[-1]["decision_bit"] == 0  # env eta 1.0 applies
    _, records, _ = run_cli(capsys, *args, "--eta", "0.0")
    assert records[-1]["decision_bit"] == 1  # flag wins over env


def test_localize_writes_map_and_overlay(tmp_path, capsys, quick_checkpoint, rendered_images):
    map_path = tmp_path / "map.json"
    overlay_path = tmp_path / "overlay.png"
    code, records, err = run_cli(
        capsys, "localize", rendered_images["a0_s0"], "--ref", "0,0",
        "--model", quick_checkpoint, "--out", str(map_path), "--overlay", str(overlay_path),
    )
    assert code == 0 and not err
    rec = records[-1]
    assert rec["grid"] == [3, 3] and rec["reference"] == [0, 0]
    doc = json.loads(map_path.read_text())
    assert doc["eta"] == rec["eta"]
    assert np.asarray(doc["scores"]).shape == (3, 3)
    overlay = np.asarray(Image.open(overlay_path))
    assert overlay.shape == (256, 256, 3)


def test_localize_rejects_malformed_and_out_of_grid_refs(capsys, quick_checkpoint, rendered_images):
    base = ("localize", rendered_images["a0_s0"], "--model", quick_checkpoint)
    code, _, err = run_cli(capsys, *base, "--ref", "topleft")
    assert code == 1 and err[0]["error"] == "ConfigurationError"
    code, _, err = run_cli(capsys, *base, "--ref", "9,9")
    assert code == 1 and err[0]["error"] == "ConfigurationError"


def test_detect_reports_score_against_threshold(capsys, quick_checkpoint, rendered_images):
    code, records, err = run_cli(
        capsys, "detect", rendered_images["a0_s0"], "--model", quick_checkpoint,
        "--threshold", "0.0",
    )
    assert code == 0 and not err
    rec = records[-1]
    assert 0.0 <= rec["score"] <= 1.0
    assert rec["forged"] is False  # nothing scores below threshold 0


def test_verify_db_over_a_directory(tmp_path, capsys, quick_checkpoint, rendered_images):
    d = tmp_path / "db"
    d.mkdir()
    for name in ("a0_s0", "a0_s1"):
        img = Image.open(rendered_images[name])
        img.save(d / f"{name}.png")
    code, records, err = run_cli(
        capsys, "verify-db", str(d), "--model", quick_checkpoint, "--patches-per-image", "2",
    )
    assert code == 0 and not err
    rec = records[-1]
    assert rec["verdict"] in ("consistent", "inconsistent")
    assert 0.0 <= rec["statistic"] <= 1.0
    # two images -> exactly one pair median, named by file
    assert [m["pair"] for m in rec["pair_medians"]] == [["a0_s0.png", "a0_s1.png"]]


def test_verify_db_needs_at_least_two_images(tmp_path, capsys, quick_checkpoint, rendered_images):
    d = tmp_path / "single"
    d.mkdir()
    Image.open(rendered_images["a0_s0"]).save(d / "only.png")
    code, _, err = run_cli(capsys, "verify-db", str(d), "--model", quick_checkpoint)
    assert code == 1 and err[0]["error"] == "ConfigurationError"


def test_eval_emits_split_and_baseline_records(tmp_path, capsys, quick_checkpoint):
    report = tmp_path / "report.jsonl"
    code, records, err = run_cli(
        capsys, "eval", "--model", quick_checkpoint, "--scenes", "2", "--pairs", "16",
        "--report", str(report),
    )
    assert code == 0 and not err
    assert records[0]["settings"]["eta"]["source"] == "default"
    splits = {r["split"] for r in records if "split" in r}
    assert splits == {"known_known", "known_unknown", "unknown_unknown"}
    baselines = {r["baseline"] for r in records if "baseline" in r}
    assert baselines == {"1-norm", "2-norm", "inf-norm", "bray-curtis", "cosine"}
    lines = report.read_text().splitlines()
    assert [json.loads(l) for l in lines] == records


# ---------------------------------------------------------------------------
# failure records


def test_missing_model_is_a_machine_readable_error(capsys, rendered_images):
    code, out, err = run_cli(capsys, "compare", rendered_images["a0_s0"], rendered_images["a0_s1"])
    assert code == 1 and not out
    assert err[0]["error"] == "ConfigurationError"
    assert "model" in err[0]["message"]


def test_missing_image_file_is_a_machine_readable_error(capsys, quick_checkpoint):
    code, _, err = run_cli(
        capsys, "compare", "/no/such/left.png", "/no/such/right.png", "--model", quick_checkpoint,
    )
    assert code == 1
    assert err[0]["error"] == "ConfigurationError"
    assert "does not exist" in err[0]["message"]


def test_phase_a_checkpoint_rejected_for_applications(tmp_path, capsys, rendered_images):
    root = class_image_dirs(tmp_path)
    base = tmp_path / "a_only.fsim"
    code, _, _ = run_cli(
        capsys, "train-a", "--data", str(root), "--out", str(base),
        "--epochs", "1", "--batch-size", "4",
    )
    assert code == 0
    code, _, err = run_cli(
        capsys, "compare", rendered_images["a0_s0"], rendered_images["a0_s1"], "--model", str(base),
    )
    assert code == 1
    assert err[0]["error"] == "ConfigurationError"
    assert "phase-A extractor" in err[0]["message"]


def test_invalid_setting_value_is_rejected(capsys, quick_checkpoint, rendered_images):
    code, _, err = run_cli(
        capsys, "compare", rendered_images["a0_s0"], rendered_images["a0_s1"],
        "--model", quick_checkpoint, "--eta", "1.5",
    )
    assert code == 1 and err[0]["error"] == "ConfigurationError"
