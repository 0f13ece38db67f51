import numpy as np
import pytest
import torch
import torch.nn as nn

from scribbleseg.gridtransform import TransformSpec, build_computing_matrices
from scribbleseg.losses import soft_eigenspace_ss
from scribbleseg.segnet import BackboneSpec, SegNet, config_hash, load_checkpoint, save_checkpoint, tiny_cnn
from scribbleseg.transition import compute_transition, random_walk_embedded


@pytest.fixture
def model():
    torch.manual_seed(0)
    return SegNet(4)


@pytest.fixture
def images():
    return torch.rand(2, 3, 64, 64, generator=torch.Generator().manual_seed(0))


class TestBackbone:
    def test_widths(self):
        convs = [m for m in tiny_cnn(BackboneSpec()) if isinstance(m, nn.Conv2d)]
        assert [c.out_channels for c in convs] == [16, 32, 64]
        assert all(c.stride == (2, 2) and c.kernel_size == (3, 3) for c in convs)

    def test_depth_stride_mismatch(self):
        with pytest.raises(ValueError):
            BackboneSpec(stride=4, depth=3)

    def test_external_needs_encoder(self):
        with pytest.raises(ValueError):
            SegNet(3, BackboneSpec(kind="external"))


class TestForward:
    def test_shapes(self, model, images):
        tr = model(images)
        assert tr.f_pre.shape == (2, 8, 8, 64)
        assert tr.p.shape == (2, 64, 64)
        assert tr.pred.shape == (2, 64, 64, 4)

    def test_single_image(self, model, images):
        assert model(images[0]).pred.shape == (1, 64, 64, 4)

    def test_zero_alpha_identity(self, model, images):
        tr = model(images)
        assert model.alpha.item() == 0.0
        assert torch.equal(tr.f_post, tr.f_pre)

    def test_prediction_is_distribution(self, model, images):
        pred = model(images).pred
        assert (pred >= 0).all()
        assert (pred.sum(-1) - 1).abs().max() < 1e-6

    def test_trace_relations(self, model, images):
        with torch.no_grad():
            model.alpha.fill_(0.3)
        tr = model(images)
        assert torch.allclose(tr.p, compute_transition(tr.f_pre.double()))
        assert torch.allclose(tr.f_post, random_walk_embedded(tr.f_pre, tr.p.float(), model.alpha), atol=1e-6)

    def test_indivisible_input(self, model):
        with pytest.raises(ValueError):
            model(torch.rand(1, 3, 60, 64))

    def test_without_random_walk(self, images):
        torch.manual_seed(0)
        m = SegNet(4, random_walk=False)
        with torch.no_grad():
            m.alpha.fill_(1.0)
        tr = m(images)
        assert torch.equal(tr.f_post, tr.f_pre)

    def test_predict_keeps_mode(self, model, images):
        model.train()
        model.predict(images)
        assert model.training

    def test_batch_independent(self, model, images):
        both = model.predict(images)
        assert torch.allclose(both[1:], model.predict(images[1:]), atol=1e-6)


class TestForwardPair:
    def test_identity_pair(self, model, images):
        model.eval()
        with torch.no_grad():
            a, b = model.forward_pair(images, TransformSpec.translation(0, 0))
        for name in ("f_pre", "p", "f_post", "pred"):
            assert torch.equal(getattr(a, name), getattr(b, name))

    def test_shapes_match(self, model, images):
        a, b = model.forward_pair(images, TransformSpec.translation(16, -8))
        assert a.p.shape == b.p.shape and a.pred.shape == b.pred.shape

    def test_unaligned_translation(self, model, images):
        with pytest.raises(ValueError):
            model.forward_pair(images, TransformSpec.translation(3, 0))

    def test_constant_encoder_is_flip_consistent(self, images):
        m = SegNet(4)
        with torch.no_grad():
            for layer in m.encoder:
                if isinstance(layer, nn.Conv2d):
                    layer.weight.zero_()
                    layer.bias.fill_(0.5)
        a, b = m.forward_pair(images, TransformSpec.flip())
        uniform = torch.full_like(a.p, 1 / 64)
        assert torch.allclose(a.p, uniform) and torch.allclose(b.p, uniform)
        cm = build_computing_matrices(TransformSpec.flip(), 8, 8)
        assert soft_eigenspace_ss(a.p, b.p, cm, 1.0).item() == pytest.approx(0.0, abs=1e-12)


class TestCheckpoint:
    def test_roundtrip(self, model, images, tmp_path):
        with torch.no_grad():
            model.alpha.fill_(0.25)
        save_checkpoint(tmp_path / "ck.pt", model, {"seed": 1})
        loaded, payload = load_checkpoint(tmp_path / "ck.pt")
        assert payload["alpha"] == 0.25
        assert payload["config_hash"] == config_hash({"seed": 1})
        assert torch.equal(loaded.predict(images), model.predict(images))

    def test_bad_format(self, model, tmp_path):
        torch.save({"format": 99}, tmp_path / "bad.pt")
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "bad.pt")
