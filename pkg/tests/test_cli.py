import json
from pathlib import Path

import numpy as np
import pytest

from irforge.cli import run
from irforge.library import save_library, toy_library
from irforge.rng import derive_stream
from irforge.types import Annotation, BBox, GrayImage, SkyMask


def test_help(capsys):
    assert run(["--help"]) == 0
    assert "synth" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [[], ["bogus"], ["eval"], ["exchange-demo", "--frob"],
                                  ["exchange-demo", "--mechanism", "diagonal"]])
def test_usage_errors(argv, capsys):
    assert run(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_exchange_demo(capsys, tmp_path):
    assert run(["exchange-demo", "--c", "8", "--h", "4", "--w", "4", "--p", "0.5", "--seed", "1",
                "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["I_topk"]) == 4 and len(out["m"]) == 8
    assert out["max_abs_diff_vs_oracle"] < 1e-12
    assert (tmp_path / "weights.bin").exists() and (tmp_path / "weights.bin.json").exists()


def test_exchange_demo_zero_k(capsys):
    assert run(["exchange-demo", "--c", "2", "--p", "0.25"]) == 1
    assert "nothing to exchange" in capsys.readouterr().err


def test_synth_eval_stats(tmp_path, capsys):
    out = tmp_path / "d"
    assert run(["synth", "--demo", "2", "--seed", "7", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["images"] == 2 and summary["reference_mean_targets_per_image"] == pytest.approx(13.335, abs=1e-3)

    gt = {d.name: (d / "boxes.txt").read_text().split("\n") for d in (out / "annotations").iterdir()}
    preds = [{"image_id": k, "bbox": [int(v) for v in line.split()], "score": 0.9}
             for k, lines in gt.items() for line in lines if line]
    (tmp_path / "p.json").write_text(json.dumps(preds))
    assert run(["eval", "--pred", str(tmp_path / "p.json"), "--gt", str(out),
                "--iou", "0.5", "--interp", "elevenpoint"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ap_05"] == 1.0 and report["selected"]["ap"] == 1.0 and report["selected"]["recall"] == 1.0

    assert run(["eval", "--pred", str(tmp_path / "p.json"), "--gt", str(out), "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("metric,value")

    assert run(["stats", "--data", str(out), "--out", str(tmp_path / "s")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["total_targets"] == summary["total_targets"]
    assert (tmp_path / "s" / "stats.json").exists()


def test_synth_config_file_and_overrides(tmp_path, toy_inputs, capsys):
    cfg = dict(toy_inputs, seed=3, out_dir=str(tmp_path / "o"), targets_min=2, targets_max=3)
    (tmp_path / "gen.json").write_text(json.dumps(cfg))
    assert run(["synth", "--config", str(tmp_path / "gen.json"), "--clusters-max", "1"]) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert all(2 <= e["targets"] <= 3 for e in manifest["images"])


def test_synth_bad_config(tmp_path, capsys):
    (tmp_path / "gen.json").write_text(json.dumps({"sed": 3}))
    assert run(["synth", "--config", str(tmp_path / "gen.json")]) == 1
    assert "sed" in capsys.readouterr().err


def test_missing_files_exit_2(tmp_path, capsys):
    assert run(["eval", "--pred", str(tmp_path / "none.json"), "--gt", str(tmp_path)]) == 2
    assert run(["stats", "--data", str(tmp_path / "nowhere")]) == 2


def test_augment(tmp_path, capsys):
    GrayImage(np.full((64, 64), 30, dtype=np.uint8)).save(tmp_path / "img.png")
    SkyMask(np.ones((64, 64), dtype=bool)).save(tmp_path / "sky.png")
    save_library(toy_library(derive_stream(0, 0), 4), tmp_path / "lib")
    Annotation((BBox(1, 1, 3, 3),), ((2.0, 2.0),), np.zeros((64, 64))).save(tmp_path / "ann")
    argv = ["augment", "--image", str(tmp_path / "img.png"), "--mask", str(tmp_path / "sky.png"),
            "--annotation", str(tmp_path / "ann"), "--library", str(tmp_path / "lib"),
            "--out", str(tmp_path / "out"), "--seed", "4"]
    assert run(argv) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["targets_before"] == 1 and res["targets_after"] >= 9
    ann = Annotation.load(tmp_path / "out" / "annotation")
    assert len(ann) == res["targets_after"] and ann.boxes[0] == BBox(1, 1, 3, 3)
