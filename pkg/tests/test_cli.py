import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from angiokit import BinaryMask, GrayImage
from angiokit.cli import main
from angiokit.fileio import dump_json, write_gray_png, write_mask_png

from shapes import constant_bar, dumbbell_mask


def _digest_dir(path: Path) -> dict:
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(path.iterdir())
        if p.is_file()
    }


@pytest.fixture
def workspace(tmp_path):
    rng = np.random.default_rng(81)
    ws = tmp_path

    # masks for severity / eval-seg
    write_mask_png(BinaryMask(dumbbell_mask(512, 512, 12, 3)), ws / "dumbbell.png")
    write_mask_png(BinaryMask(constant_bar()), ws / "bar.png")
    write_mask_png(BinaryMask(np.zeros((32, 32), bool)), ws / "empty.png")

    gt_dir = ws / "gt"
    pred_dir = ws / "pred"
    for i in range(4):
        m = rng.random((48, 48)) < 0.3
        m[20:28, 10:40] = True
        noisy = m ^ (rng.random((48, 48)) < 0.05)
        noisy[22, 22] = True
        write_mask_png(BinaryMask(m), gt_dir / f"case{i}.png")
        write_mask_png(BinaryMask(noisy), pred_dir / f"case{i}.png")

    # detection fixtures
    manifest = {
        "images": [
            {
                "id": "a", "path": "a.png", "width": 64, "height": 64,
                "lesions": [
                    {"bbox": [10, 10, 30, 30], "mld_point": [20, 20], "mld_px": 3.0},
                    {"bbox": [40, 40, 60, 60], "mld_point": [50, 50], "mld_px": 5.0},
                ],
            },
            {
                "id": "b", "path": "b.png", "width": 64, "height": 64,
                "lesions": [
                    {"bbox": [5, 5, 25, 25], "mld_point": [15, 15], "mld_px": 4.0},
                ],
            },
        ]
    }
    dump_json(manifest, ws / "manifest.json")
    detections = {
        "detections": [
            {"image_id": "a", "bbox": [11, 11, 31, 31], "confidence": 0.9},
            {"image_id": "a", "bbox": [2, 2, 8, 8], "confidence": 0.4},
            {"image_id": "b", "bbox": [5, 5, 25, 25], "confidence": 0.8},
        ]
    }
    dump_json(detections, ws / "detections.json")
    dump_json([3.2, 4.1, 4.0], ws / "det_mlds.json")

    # augmentation sources
    src_dir = ws / "src"
    aug_manifest = {"images": []}
    for i in range(2):
        img = GrayImage(rng.integers(0, 256, (48, 48), dtype=np.uint8))
        write_gray_png(img, src_dir / f"s{i}.png")
        aug_manifest["images"].append({
            "id": f"s{i}", "path": str(src_dir / f"s{i}.png"),
            "width": 48, "height": 48,
            "lesions": [{"bbox": [8, 8, 28, 28], "mld_point": None, "mld_px": None}],
        })
    dump_json(aug_manifest, ws / "aug_manifest.json")

    # agreement pairs
    with open(ws / "pairs.csv", "w") as fh:
        fh.write("pred_mld,gt_mld\n")
        gt = [2.0, 3.5, 5.0, 8.0, 9.5, 3.0, 7.0, 11.0]
        for g in gt:
            fh.write(f"{g + 1.0},{g}\n")
    return ws


def test_severity_command(workspace):
    out = workspace / "sev.json"
    prof = workspace / "prof.csv"
    code = main([
        "severity", str(workspace / "dumbbell.png"),
        "--out", str(out), "--profile-csv", str(prof),
    ])
    assert code == 0
    rep = json.loads(out.read_text())
    assert abs(rep["ds_percent"] - 75.0) <= 3.0
    lines = prof.read_text().strip().splitlines()
    assert lines[0] == "index,x,y,radius"
    assert len(lines) > 100


def test_severity_bar_ds_zero(workspace):
    out = workspace / "bar.json"
    assert main(["severity", str(workspace / "bar.png"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["ds_percent"] == 0.0


def test_severity_empty_mask_exits_2(workspace, capsys):
    out = workspace / "nope.json"
    code = main(["severity", str(workspace / "empty.png"), "--out", str(out)])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_severity_crop_context(workspace):
    ctx = workspace / "ctx.json"
    dump_json({"x_offset": 100.0, "y_offset": 50.0, "x_scale": 1.0, "y_scale": 1.0}, ctx)
    out1 = workspace / "s1.json"
    out2 = workspace / "s2.json"
    main(["severity", str(workspace / "dumbbell.png"), "--out", str(out1)])
    main(["severity", str(workspace / "dumbbell.png"), "--out", str(out2),
          "--crop-context", str(ctx)])
    a = json.loads(out1.read_text())
    b = json.loads(out2.read_text())
    assert b["mld_point"][0] == a["mld_point"][0] + 100
    assert b["mld_px"] == a["mld_px"]


def test_eval_detect_overlap(workspace):
    out = workspace / "ov.json"
    code = main([
        "eval-detect", str(workspace / "manifest.json"), str(workspace / "detections.json"),
        "--mode", "overlap", "--out", str(out),
    ])
    assert code == 0
    metrics = json.loads(out.read_text())
    assert set(metrics) == {"image_level", "lesion_level"}
    lesion = metrics["lesion_level"]
    assert abs(lesion["precision"] - 2 / 3) < 1e-9
    assert abs(lesion["recall"] - 2 / 3) < 1e-9


def test_eval_detect_mld_with_ctp(workspace):
    out = workspace / "mld.json"
    code = main([
        "eval-detect", str(workspace / "manifest.json"), str(workspace / "detections.json"),
        "--mode", "mld", "--out", str(out),
        "--ctp", "--ctp-as-tp", "--det-mlds", str(workspace / "det_mlds.json"),
    ])
    assert code == 0
    metrics = json.loads(out.read_text())
    assert (metrics["tp"], metrics["fp"], metrics["fn"]) == (2, 1, 1)
    base = metrics["treating_ctps_as_fps"]
    assert abs(base["mld_precision"] - 2 / 3) < 1e-9
    assert metrics["ctp"]["count"] == 1  # the stray box MLD 4.1 sits mid-distribution
    boosted = metrics["treating_ctps_as_tps"]
    assert boosted["mld_precision"] == 1.0
    assert boosted["mld_recall"] >= base["mld_recall"]


def test_eval_detect_no_detections_exits_3(workspace):
    empty = workspace / "none.json"
    dump_json({"detections": []}, empty)
    out = workspace / "und.json"
    code = main([
        "eval-detect", str(workspace / "manifest.json"), str(empty),
        "--mode", "overlap", "--out", str(out),
    ])
    assert code == 3
    metrics = json.loads(out.read_text())
    assert metrics["image_level"]["precision"] is None
    assert metrics["lesion_level"]["recall"] == 0.0


def test_eval_detect_schema_violation_exits_2(workspace, capsys):
    bad = workspace / "bad.json"
    bad.write_text('{"detections": [{"image_id": "a", "bbox": [1, 2, 3], "confidence": 0.5}]}')
    code = main([
        "eval-detect", str(workspace / "manifest.json"), str(bad),
        "--mode", "overlap", "--out", str(workspace / "x.json"),
    ])
    assert code == 2


def test_eval_seg_identical_dirs(workspace):
    out = workspace / "seg_id.csv"
    code = main(["eval-seg", str(workspace / "gt"), str(workspace / "gt"), "--out", str(out)])
    assert code == 0
    rows = out.read_text().strip().splitlines()
    header = rows[0].split(",")
    assert header == ["name", "acc", "prec", "rec", "dice", "iou", "cldice", "mhd"]
    for row in rows[1:-2]:
        cells = row.split(",")
        assert float(cells[4]) == 1.0  # dice
        assert float(cells[7]) == 0.0  # mhd
    mean_row = rows[-2].split(",")
    assert mean_row[0] == "mean" and float(mean_row[4]) == 1.0


def test_eval_seg_summary_matches_rows(workspace):
    out = workspace / "seg.csv"
    code = main(["eval-seg", str(workspace / "gt"), str(workspace / "pred"), "--out", str(out)])
    assert code == 0
    rows = [r.split(",") for r in out.read_text().strip().splitlines()]
    body = rows[1:-2]
    mean_row, sd_row = rows[-2], rows[-1]
    for col in range(1, 8):
        vals = [float(r[col]) for r in body if r[col] != ""]
        mu = sum(vals) / len(vals)
        sd = (sum((v - mu) ** 2 for v in vals) / len(vals)) ** 0.5
        assert abs(float(mean_row[col]) - mu) < 1e-9
        assert abs(float(sd_row[col]) - sd) < 1e-9


def test_eval_seg_unpaired_exits_2(workspace, capsys):
    extra = workspace / "pred" / "stray.png"
    write_mask_png(BinaryMask(np.ones((8, 8), bool)), extra)
    code = main([
        "eval-seg", str(workspace / "gt"), str(workspace / "pred"),
        "--out", str(workspace / "z.csv"),
    ])
    extra.unlink()
    assert code == 2
    assert "stray.png" in capsys.readouterr().err


def test_augment_static_counts_and_determinism(workspace):
    out1 = workspace / "aug1"
    out2 = workspace / "aug2"
    argv = ["augment", str(workspace / "aug_manifest.json"), "--tiers", "static",
            "--seed", "123"]
    assert main(argv + ["--out-dir", str(out1), "--jobs", "1"]) == 0
    assert main(argv + ["--out-dir", str(out2), "--jobs", "8"]) == 0
    d1, d2 = _digest_dir(out1), _digest_dir(out2)
    assert d1 == d2
    assert len([n for n in d1 if n.endswith(".png")]) == 16  # 2 sources x 8

    manifest = json.loads((out1 / "manifest.json").read_text())
    assert len(manifest["images"]) == 16
    for entry in manifest["images"]:
        assert entry["provenance"]["tiers"] == ["static"]
        assert entry["lesions"][0]["bbox"] == [8, 8, 28, 28]


def test_augment_full_pyramid_provenance(workspace):
    out = workspace / "aug3"
    code = main([
        "augment", str(workspace / "aug_manifest.json"),
        "--tiers", "static,dynamic,composite", "--seed", "7",
        "--out-dir", str(out),
    ])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["images"]) == 16 + 4
    tiers = {tuple(e["provenance"]["tiers"]) for e in manifest["images"]}
    assert ("static", "dynamic") in tiers
    assert ("static", "dynamic", "composite") in tiers


def test_augment_invalid_tiers_exits_2(workspace):
    code = main([
        "augment", str(workspace / "aug_manifest.json"), "--tiers", "composite",
        "--out-dir", str(workspace / "aug4"),
    ])
    assert code == 2


def test_agree_command(workspace):
    out = workspace / "agree.json"
    code = main(["agree", str(workspace / "pairs.csv"), "--out", str(out)])
    assert code == 0
    rep = json.loads(out.read_text())
    assert abs(rep["mad"] - 1.0) < 1e-9
    assert abs(rep["sd"]) < 1e-9
    assert rep["rec"] == 1.0
    points = (workspace / "agree.points.csv").read_text().strip().splitlines()
    assert points[0] == "mean,diff"
    assert len(points) == 9


def test_agree_malformed_csv_exits_2(workspace, capsys):
    bad = workspace / "bad.csv"
    bad.write_text("pred,gt\n1.0\n")
    assert main(["agree", str(bad), "--out", str(workspace / "a.json")]) == 2


def test_outputs_byte_identical_across_runs(workspace):
    pairs = [
        (["severity", str(workspace / "dumbbell.png")], "r1.json"),
        (["eval-detect", str(workspace / "manifest.json"), str(workspace / "detections.json"),
          "--mode", "mld"], "r2.json"),
        (["agree", str(workspace / "pairs.csv")], "r3.json"),
    ]
    for argv, name in pairs:
        out_a = workspace / ("a_" + name)
        out_b = workspace / ("b_" + name)
        assert main(argv + ["--out", str(out_a)]) == 0
        assert main(argv + ["--out", str(out_b)]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()
