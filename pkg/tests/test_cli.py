import json

import numpy as np
import pytest
from PIL import Image

from depthgaze.cli import main
from depthgaze.workflow import colormap, overlay_frame, write_overlays

TINY_CONFIG = {"cnn_epochs": 2, "cnn_lr": 0.05, "cnn_features": [2, 2, 2], "cnn_downsample": 4,
               "cnn_latent": 8, "svm_epochs": 20}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps({"preset": "single-focus", "seed": 1, "n_train": 2, "n_test": 1,
                                "num_frames": 21}))
    assert main(["synth", "--spec", str(spec), "--out", str(root / "data")]) == 0
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    return root


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_ingest(dataset, capsys):
    code, out, _ = run(capsys, "ingest", "--root", dataset / "data")
    assert code == 0
    assert out.splitlines()[0] == "video,frames,split"
    assert len(out.splitlines()) == 4


def test_quality(dataset, capsys):
    code, out, _ = run(capsys, "quality", "--root", dataset / "data", "--splits", 10, "--seed", 42)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "video,quality,frames_scored,frames_skipped"
    for line in lines[1:]:
        _, q, scored, skipped = line.split(",")
        assert 0 < float(q) <= 1 and int(scored) == 21 and int(skipped) == 0


def test_unknown_flag(capsys):
    code, _, err = run(capsys, "quality", "--bogus")
    assert code == 1
    assert "usage" in err


def test_missing_subcommand(capsys):
    assert run(capsys)[0] == 1


def test_evaluate_missing_predictions(dataset, capsys, tmp_path):
    code, _, err = run(capsys, "evaluate", "--root", dataset / "data", "--pred", tmp_path / "nope",
                       "--out", tmp_path / "r.csv")
    assert code == 2
    assert "MissingPredictions" in err


def test_missing_root(capsys, tmp_path):
    assert run(capsys, "ingest", "--root", tmp_path / "absent")[0] == 2


def test_bad_config(dataset, capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no_such_key": 1}))
    code, _, err = run(capsys, "train-cnn", "--root", dataset / "data", "--config", bad,
                       "--out", tmp_path / "w.dgnn")
    assert code == 2 and "ConfigError" in err


def test_non_finite_loss(dataset, capsys, tmp_path):
    cfg = tmp_path / "explode.json"
    cfg.write_text(json.dumps({**TINY_CONFIG, "cnn_lr": 1e30, "cnn_epochs": 3}))
    code, _, err = run(capsys, "train-cnn", "--root", dataset / "data", "--config", cfg,
                       "--out", tmp_path / "w.dgnn")
    assert code == 3 and "NonFiniteLoss" in err


def test_cnn_pipeline(dataset, capsys, tmp_path):
    data, cfg = dataset / "data", dataset / "config.json"
    weights = tmp_path / "cnn.dgnn"
    assert run(capsys, "train-cnn", "--root", data, "--config", cfg, "--out", weights)[0] == 0
    log = (tmp_path / "cnn.dgnn.log.csv").read_text().splitlines()
    assert log[0] == "epoch,lr,loss" and len(log) == 3
    assert run(capsys, "predict", "--weights", weights, "--root", data, "--out", tmp_path / "cnn",
               "--config", cfg)[0] == 0
    test_id = "one001_02"
    pngs = sorted((tmp_path / "cnn" / test_id).glob("*.png"))
    assert len(pngs) == 21
    assert np.asarray(Image.open(pngs[-1])).max() == 255
    code, out, _ = run(capsys, "evaluate", "--root", data, "--pred", tmp_path / "cnn", "--seed", 0,
                       "--out", tmp_path / "report.csv", "--gt-bound")
    assert code == 0
    text = (tmp_path / "report.csv").read_text()
    assert text.startswith("method,video,frame,metric,value\n")
    assert "\nmethod,metric,mean,std\n" in text
    assert "ground_truth_bound" in text and "cnn\tauc" in out
    code, _, _ = run(capsys, "overlay", "--root", data, "--video", test_id, "--pred", tmp_path / "cnn",
                     "--out", tmp_path / "ov")
    assert code == 0 and len(list((tmp_path / "ov").glob("*.png"))) == 21


def test_baseline_pipeline(dataset, capsys, tmp_path):
    data, cfg = dataset / "data", dataset / "config.json"
    model = tmp_path / "svm.dgsv"
    assert run(capsys, "train-baseline", "--root", data, "--config", cfg, "--out", model)[0] == 0
    assert model.read_bytes()[:4] == b"DGSV"
    code, _, _ = run(capsys, "predict", "--weights", model, "--model", "baseline", "--root", data,
                     "--video", "one001_02", "--out", tmp_path / "base", "--config", cfg)
    assert code == 0
    assert len(list((tmp_path / "base" / "one001_02").glob("*.png"))) == 21


def test_config_listing(capsys):
    code, out, _ = run(capsys, "config")
    assert code == 0 and "cnn_epochs = 400" in out


class TestOverlay:
    def test_zero_map_is_identity(self, rng):
        rgb = rng.random((12, 16, 3))
        np.testing.assert_allclose(overlay_frame(rgb, np.zeros((12, 16))), rgb, atol=1 / 255)

    def test_single_saturated_pixel(self, rng):
        rgb = rng.random((12, 16, 3))
        s = np.zeros((12, 16))
        s[5, 7] = 1.0
        changed = np.any(np.abs(overlay_frame(rgb, s) - rgb) > 1e-12, axis=2)
        assert changed.sum() == 1 and changed[5, 7]
        np.testing.assert_allclose(overlay_frame(rgb, s)[5, 7], 0.5 * rgb[5, 7] + 0.5 * colormap(1.0))

    def test_count_mismatch(self, tmp_path):
        from depthgaze.errors import MissingPredictions

        from conftest import make_video

        video = make_video([np.zeros((12, 16, 3))] * 3, [np.zeros((12, 16))] * 3)
        with pytest.raises(MissingPredictions):
            write_overlays(video, [np.zeros((12, 16))] * 2, tmp_path)
