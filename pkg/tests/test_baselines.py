import dataclasses

import pytest
import torch

from seatrans import SeATransConfig, backbone_preset
from seatrans.baselines import (
    CatBaseline,
    MultiTaskBaseline,
    RoiBaseline,
    base_cat_forward,
    base_roi_crop,
    build_model,
    model_kind_config,
    roi_box,
)
from seatrans.config import MODEL_KINDS
from seatrans.errors import ShapeMismatchError
from seatrans.training import bce_loss


def mini_cfg(**kw):
    return SeATransConfig(backbone=backbone_preset("miniature"), **kw)


class TestCat:
    def test_stem_takes_image_plus_masks(self):
        model = CatBaseline(mini_cfg())
        assert model.diagnosis.stem[0].in_channels == 5

    def test_zero_mask_matches_zeroed_mask_weights(self):
        torch.manual_seed(0)
        a = CatBaseline(mini_cfg(), seed=0).eval()
        b = CatBaseline(mini_cfg(), seed=0).eval()
        with torch.no_grad():
            b.diagnosis.stem[0].weight[:, 3:].zero_()
        image = torch.randn(2, 3, 32, 32)
        with torch.no_grad():
            zero_mask = base_cat_forward(a, image, torch.zeros(2, 2, 32, 32))
            a.diagnosis.stem[0].weight[:, 3:].zero_()
            random_mask = base_cat_forward(b, image, torch.rand(2, 2, 32, 32))
        torch.testing.assert_close(zero_mask, random_mask, rtol=0, atol=1e-6)

    def test_mask_resolution_mismatch(self):
        model = CatBaseline(mini_cfg())
        with pytest.raises(ShapeMismatchError):
            base_cat_forward(model, torch.randn(1, 3, 32, 32), torch.zeros(1, 2, 16, 16))


class TestMultiTask:
    def test_diagnosis_loss_skips_decoder(self):
        model = MultiTaskBaseline(mini_cfg())
        out = model(torch.randn(2, 3, 32, 32))
        bce_loss(out.prob, torch.tensor([0.0, 1.0])).backward()
        assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in model.encoder.parameters())
        assert all(p.grad is None for p in model.decoder.parameters())

    def test_mask_output(self):
        out = MultiTaskBaseline(mini_cfg())(torch.randn(1, 3, 32, 32))
        assert out.mask_logits.shape == (1, 2, 32, 32)
        assert out.mask_logits.requires_grad


class TestRoi:
    def test_full_mask_full_box(self):
        assert roi_box(torch.ones(256, 256, dtype=torch.bool), 0.2) == (0, 0, 256, 256)

    def test_single_pixel(self):
        mask = torch.zeros(256, 256, dtype=torch.bool)
        mask[10, 20] = True
        assert roi_box(mask, 0.0) == (10, 20, 11, 21)

    def test_margin_clamped(self):
        mask = torch.zeros(20, 20, dtype=torch.bool)
        mask[0:10, 5:15] = True
        assert roi_box(mask, 0.2) == (0, 3, 12, 17)

    def test_empty_mask(self):
        assert roi_box(torch.zeros(8, 8, dtype=torch.bool)) is None
        image = torch.randn(1, 3, 16, 16)
        assert torch.equal(base_roi_crop(image, torch.zeros(1, 2, 16, 16)), image)

    def test_full_mask_crop_is_identity(self):
        image = torch.randn(2, 3, 16, 16)
        assert torch.equal(base_roi_crop(image, torch.ones(2, 2, 16, 16)), image)

    def test_crop_resized(self):
        image = torch.arange(16.0).reshape(1, 1, 4, 4).expand(1, 3, 4, 4)
        probs = torch.zeros(1, 2, 4, 4)
        probs[0, 1, 1:3, 1:3] = 0.9
        crop = base_roi_crop(image, probs, margin=0.0, out_size=(2, 2))
        assert torch.equal(crop[0, 0], torch.tensor([[5.0, 6.0], [9.0, 10.0]]))

    def test_model_forward(self):
        out = RoiBaseline(mini_cfg()).eval()(torch.randn(2, 3, 32, 32))
        assert out.logit.shape == (2,)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_one_step_smoke_training_reduces_loss(kind):
    torch.manual_seed(0)
    model = build_model(model_kind_config(mini_cfg(), kind), seed=0)
    model.train()
    images = torch.randn(8, 3, 32, 32)
    labels = torch.tensor([0.0, 1.0] * 4)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=1e-3)

    def loss():
        return bce_loss(model(images).prob, labels)

    before = loss()
    opt.zero_grad()
    before.backward()
    opt.step()
    assert loss().item() < before.item()


def test_unknown_kind():
    cfg = dataclasses.replace(mini_cfg(), kind="vanilla")
    object.__setattr__(cfg, "kind", "mystery")
    with pytest.raises(ValueError):
        build_model(cfg)
