import json
import math
import os
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

import dibrqa


def find_cli():
    env = os.environ.get("DIBRQA_CLI")
    if env:
        return env
    local = Path(__file__).resolve().parents[2] / "build" / "dibrqa"
    if local.exists():
        return str(local)
    return shutil.which("dibrqa")


def test_image_round_trip(tmp_path):
    img, seg = dibrqa.synthetic_scene(24, 32, 3)
    assert img.shape == (24, 32, 3) and img.dtype == np.float32
    assert seg.shape == (24, 32)
    dibrqa.save_image(img, tmp_path / "a.png")
    back = dibrqa.load_image(tmp_path / "a.png")
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-6
    rot = dibrqa.rotate_ccw(img, 1)
    assert rot.shape == (32, 24, 3)
    assert np.array_equal(rot, np.rot90(img, 1))


def test_masks():
    img, seg = dibrqa.synthetic_scene(64, 64, 5)
    m1 = dibrqa.mask_type1(seg, 2)
    m2 = dibrqa.mask_type2(m1, 3, 0)
    assert m1.dtype == np.uint8 and m1.sum() > 0
    assert np.array_equal(m2[:, 3:], m1[:, :-3])
    labels = dibrqa.slic_segment(img, 12)
    assert labels.shape == (64, 64) and labels.min() == 0
    try:
        m3 = dibrqa.mask_type3(labels, "medium", seed=1, fraction=0.5)
        assert m3.sum() > 0
    except dibrqa.DibrqaError as e:
        assert e.code == "NoEligibleSegments"
    holes = dibrqa.punch_holes(img, m1)
    assert np.all(holes[m1 == 1] == 0)
    assert np.array_equal(holes[m1 == 0], img[m1 == 0])


def test_statistics():
    a, b = [1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 5.0]
    assert dibrqa.rmse(a, b) == pytest.approx(0.5, abs=1e-12)
    assert dibrqa.pcc(a, a) == pytest.approx(1.0)
    assert dibrqa.scc(a, [math.exp(x) for x in b]) == pytest.approx(1.0)
    t, df, p = dibrqa.t_test([1, 2, 3, 4, 5], [2, 4, 6, 8, 10, 12])
    assert t < 0 and 0 < p < 0.1
    dmos = [("A1", 1.5), ("A2", 3.9), ("A3", 4.2), ("A4", 2.6), ("A5", 2.1), ("A6", 3.1), ("A7", 4.8)]
    assert dibrqa.rank_algorithms(dmos, lower_is_better=True) == ["A1", "A5", "A4", "A6", "A2", "A3", "A7"]
    assert dibrqa.kendall_tau(["a", "b", "c"], ["a", "b", "c"]) == 1.0
    assert dibrqa.normalized_time(0.05) == pytest.approx(1.0)
    with pytest.raises(dibrqa.DibrqaError) as err:
        dibrqa.normalized_time(1.0, 0.0)
    assert err.value.code == "NonPositiveBaseline"


def test_svr_recovers_planted_line():
    rng = np.random.default_rng(0)
    x = rng.random((30, 3))
    y = 2.0 * x[:, 0] + 1.0
    w, b = dibrqa.train_svr(x.tolist(), y.tolist(), c=1000.0, tube_epsilon=0.0)
    assert np.max(np.abs(x @ np.array(w) + b - y)) < 1e-6


def test_cli_pipeline_through_bindings(tmp_path):
    cli = find_cli()
    if cli is None:
        pytest.skip("dibrqa CLI not built")
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for i in range(4):
        img, _ = dibrqa.synthetic_scene(32, 32, 10 + i)
        dibrqa.save_image(img, corpus / f"s{i}.png")
    run = lambda *args: subprocess.run([cli, *map(str, args)], check=True, capture_output=True, text=True)
    run("prepare-masks", "--corpus", corpus, "--types", "III", "--out", tmp_path / "masks.jsonl")
    cfg = tmp_path / "toy.json"
    cfg.write_text(json.dumps({"arch": "custom", "custom_channels": [4, 8], "bottleneck": 8, "epochs": 2, "batch_size": 2}))
    run("--config", cfg, "train-inpainter", "--manifest", tmp_path / "masks.jsonl", "--out", tmp_path / "toy.ckpt")

    ckpt = dibrqa.Checkpoint(tmp_path / "toy.ckpt")
    assert ckpt.epoch == 2 and len(ckpt.history) == 2
    img, seg = dibrqa.synthetic_scene(32, 32, 99)
    mask = dibrqa.synthetic_hole_mask(seg, 0.1, 1)
    filled = ckpt.inpaint(img, mask)
    assert np.array_equal(filled[mask == 0], img[mask == 0])

    records = []
    for i in range(12):
        img, seg = dibrqa.synthetic_scene(32, 32, 200 + i)
        mask = dibrqa.synthetic_hole_mask(seg, 0.015 * i, i)
        dibrqa.save_image(dibrqa.punch_holes(img, mask), tmp_path / f"t{i}.png")
        records.append({"image_path": f"t{i}.png", "content_id": f"c{i}", "viewpoint_id": "0",
                        "algorithm_id": "A", "dmos": 1 + 30 * float(mask.mean())})
    (tmp_path / "dmos.jsonl").write_text("".join(json.dumps(r) + "\n" for r in records))
    run("build-metric", "--checkpoint", tmp_path / "toy.ckpt", "--manifest", tmp_path / "dmos.jsonl",
        "--whole-manifest", "--k", "4", "--out", tmp_path / "m.bundle")

    metric = dibrqa.Metric(tmp_path / "m.bundle")
    assert metric.k == 4
    img = dibrqa.load_image(tmp_path / "t3.png")
    score = metric.score(img)
    assert math.isfinite(score) and metric.score(img) == score
    out = run("score", "--bundle", tmp_path / "m.bundle", "--image", tmp_path / "t3.png").stdout.split()
    assert float(out[-1]) == pytest.approx(score, abs=1e-9)
    assert len(metric.histogram(img)) == 4
    assert len(dibrqa.read_manifest(tmp_path / "dmos.jsonl")) == 12
    folds = dibrqa.make_folds(tmp_path / "dmos.jsonl", 5, 1)
    assert len(folds) == 5 and all(not set(tr) & set(te) for tr, te in folds)
