import json
import math

import numpy as np
import pytest
import torch

from scribbleseg import trainer
from scribbleseg.config import TrainConfig, config_from_dict
from scribbleseg.gridtransform import TransformSpec, apply_spatial
from scribbleseg.losses import FULL, WARMUP, entropy_full
from scribbleseg.segnet import SegNet, load_checkpoint, save_checkpoint
from scribbleseg.trainer import (augment_batch, confusion_matrix, entropy_map, evaluate, evaluate_model,
                                 load_split, relative_variation, report_from_confusion, stage_of, train,
                                 variation_report, warmup_epochs)


def small_cfg(corpus, **kw):
    data = {"corpus": str(corpus), "epochs": 2, "batch_size": 8}
    data.update(kw)
    return config_from_dict(data)


def strip_time(logs):
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in logs]


class TestSchedule:
    def test_switch(self):
        cfg = TrainConfig(epochs=5)
        assert warmup_epochs(cfg) == 3
        assert [stage_of(cfg, e) for e in range(5)] == [WARMUP] * 3 + [FULL] * 2


class TestAugment:
    def test_disabled_is_identity(self, rng):
        cfg = config_from_dict({"augment": {"enabled": False}})
        imgs = torch.rand(2, 3, 64, 64)
        scr = torch.from_numpy(rng.integers(0, 4, size=(2, 64, 64)))
        bnd = torch.from_numpy(rng.random((2, 64, 64)) < 0.3)
        x, s, b = augment_batch(imgs, scr, bnd, cfg, rng)
        assert torch.allclose(x, imgs, atol=1e-6)
        assert torch.equal(s, scr) and torch.equal(b, bnd)

    def test_outside_pixels(self, rng):
        cfg = config_from_dict({"augment": {"scale": [0.5, 0.5], "rotation": 0, "blur_prob": 0, "flip": False}})
        scr = torch.zeros(1, 64, 64, dtype=torch.long)
        x, s, b = augment_batch(torch.rand(1, 3, 64, 64), scr, torch.zeros(1, 64, 64, dtype=torch.bool), cfg, rng)
        outside = s == 255
        assert outside.any() and torch.equal(outside, b)
        assert (x[0, :, outside[0]] == 0).all()


class TestMetrics:
    def test_perfect(self):
        gt = np.array([[0, 1], [2, 1]])
        rep = report_from_confusion(confusion_matrix(gt, gt, 3), 1)
        assert rep.miou == 1.0

    def test_half_and_half(self):
        gt = np.zeros((4, 4), int)
        gt[:, 2:] = 1
        rep = report_from_confusion(confusion_matrix(np.zeros_like(gt), gt, 2), 1)
        assert rep.per_class_iou == [0.5, 0.0]
        assert rep.miou == 0.25

    def test_all_ignore(self):
        gt = np.full((3, 3), 255)
        rep = report_from_confusion(confusion_matrix(np.zeros_like(gt), gt, 2), 1)
        assert rep.n_images == 1 and math.isnan(rep.miou) and rep.present == [False, False]
        assert rep.to_dict()["miou"] is None

    def test_csv(self):
        gt = np.array([[0, 1]])
        text = report_from_confusion(confusion_matrix(gt, gt, 3), 1).to_csv()
        assert text.splitlines() == ["class,iou,present", "0,1.000000,1", "1,1.000000,1", "2,,0",
                                     "mean,1.000000,"]


class TestAnalysis:
    def test_entropy_map_mean(self, tiny_corpus):
        model = SegNet(4)
        img = load_split(tiny_corpus, "val").images[0]
        raw, png = entropy_map(model, img)
        pred = model.predict(torch.from_numpy(img.transpose(2, 0, 1).copy())[None])[0]
        assert raw.mean() == pytest.approx(entropy_full(pred.double()).item(), rel=1e-6)
        assert png.dtype == np.uint8 and raw.shape == png.shape == (64, 64)

    def test_entropy_map_extremes(self, tiny_corpus):
        model = SegNet(4)
        img = load_split(tiny_corpus, "val").images[0]
        with torch.no_grad():
            model.classifier.weight.zero_()
            model.classifier.bias.zero_()
        raw, png = entropy_map(model, img)
        assert np.allclose(raw, math.log(4), atol=1e-6) and not png.any()
        with torch.no_grad():
            model.classifier.bias.copy_(torch.tensor([100.0, 0, 0, 0]))
        raw, _ = entropy_map(model, img)
        assert np.abs(raw).max() < 1e-9

    def test_relative_variation(self):
        q = torch.rand(4, 4)
        assert relative_variation(q, q) == 0.0
        assert relative_variation(2 * q, q) == pytest.approx(1.0)

    def test_variation_report(self, tiny_corpus):
        torch.manual_seed(0)
        model = SegNet(4)
        data = load_split(tiny_corpus, "val")
        rep = variation_report(model, data, TransformSpec.flip())
        assert set(rep) == {"f_pre", "f_post", "p"} and all(v >= 0 for v in rep.values())
        # alpha = 0 makes f_post equal to f_pre
        assert rep["f_pre"] == pytest.approx(rep["f_post"])

    def test_variation_of_equivariant_features(self, tiny_corpus):
        # a 1x1-conv encoder with stride-8 pooling commutes with flips exactly
        enc = torch.nn.Sequential(torch.nn.Conv2d(3, 64, 1), torch.nn.AvgPool2d(8))
        model = SegNet(4, encoder=enc)
        rep = variation_report(model, load_split(tiny_corpus, "val"), TransformSpec.flip())
        assert max(rep.values()) < 1e-4


class TestEvaluate:
    def test_pure_and_ranged(self, tiny_corpus, tmp_path):
        model, _ = train(small_cfg(tiny_corpus, epochs=1), tmp_path)
        a = evaluate(tmp_path / "checkpoint.pt", tiny_corpus)
        b = evaluate(tmp_path / "checkpoint.pt", tiny_corpus)
        assert a.to_dict() == b.to_dict()
        assert 0.0 <= a.miou <= 1.0

    def test_class_mismatch(self, tiny_corpus, tmp_path):
        save_checkpoint(tmp_path / "ck.pt", SegNet(3))
        with pytest.raises(ValueError, match="classes"):
            evaluate(tmp_path / "ck.pt", tiny_corpus)


class TestTrain:
    def test_zero_epochs(self, tiny_corpus, tmp_path):
        cfg = small_cfg(tiny_corpus, epochs=0, seed=4)
        model, logs = train(cfg, tmp_path)
        assert logs == []
        fresh = trainer.build_model(cfg, 4)
        loaded, _ = load_checkpoint(tmp_path / "checkpoint.pt")
        for k, v in fresh.state_dict().items():
            assert torch.equal(v, loaded.state_dict()[k])

    def test_outputs_and_stages(self, tiny_corpus, tmp_path):
        _, logs = train(small_cfg(tiny_corpus, epochs=4), tmp_path)
        assert (tmp_path / "checkpoint.pt").exists() and (tmp_path / "config.json").exists()
        lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
        assert [json.loads(x) for x in lines] == logs
        assert [r["stage"] for r in logs] == [WARMUP, WARMUP, FULL, FULL]
        for r in logs:
            assert ("self_supervision" in r) == (r["stage"] == FULL)
            assert {"epoch", "alpha", "loss", "partial_ce", "soft_entropy", "val_miou", "wall_time"} <= set(r)

    def test_omega2_zero_has_no_ss(self, tiny_corpus, tmp_path):
        _, logs = train(small_cfg(tiny_corpus, epochs=2, weights={"omega2": 0.0}), tmp_path)
        assert all("self_supervision" not in r for r in logs)

    def test_deterministic(self, tiny_corpus, tmp_path):
        cfg = small_cfg(tiny_corpus, epochs=2, seed=3)
        _, a = train(cfg, tmp_path / "a")
        _, b = train(cfg, tmp_path / "b")
        assert strip_time(a) == strip_time(b)

    def test_resume_matches_uninterrupted(self, tiny_corpus, tmp_path):
        cfg = small_cfg(tiny_corpus, epochs=3, seed=5)
        full_model, full_logs = train(cfg, tmp_path / "full")
        train(cfg, tmp_path / "cut", stop_after=2)
        resumed, logs = train(cfg, tmp_path / "cut", resume=True)
        assert strip_time(logs) == strip_time(full_logs)
        for k, v in full_model.state_dict().items():
            assert torch.equal(v, resumed.state_dict()[k])

    def test_divergence_aborts(self, tiny_corpus, tmp_path, monkeypatch):
        monkeypatch.setattr(trainer, "partial_cross_entropy", lambda p, s: torch.tensor(float("nan")))
        with pytest.raises(trainer.TrainingDiverged):
            train(small_cfg(tiny_corpus, epochs=1), tmp_path)
        snap = json.loads((tmp_path / "diverged.json").read_text())
        assert snap["epoch"] == 0 and "inputs_hash" in snap

    @pytest.mark.parametrize("loc", ["f_pre", "f_post"])
    def test_feature_ss_locations(self, tiny_corpus, tmp_path, loc):
        _, logs = train(small_cfg(tiny_corpus, epochs=2, ss_location=loc, transform_mode="translation"), tmp_path)
        assert "self_supervision" in logs[-1] and math.isfinite(logs[-1]["self_supervision"])
