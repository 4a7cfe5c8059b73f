import math

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from assign_hoi.losses import (LossConfig, anticipation_loss, labeling_loss, segmentation_loss,
                               total_loss)

from oracles import ln


def _uniform(N, T, n):
    return torch.full((N, T, n), -math.log(n), dtype=torch.float64)


def _one_hot_logp(labels, n, floor=1e-12):
    p = torch.nn.functional.one_hot(torch.as_tensor(labels), n).double()
    return torch.log(p.clamp_min(floor))


class TestSegmentationLoss:
    def test_half_everywhere(self):
        u = torch.full((3, 7), 0.5, dtype=torch.float64)
        assert segmentation_loss(u, u).item() == pytest.approx(math.log(2), abs=1e-6)

    def test_perfect_binary_prediction(self):
        t = torch.tensor([[0.0, 1.0, 0.0, 1.0]], dtype=torch.float64)
        assert segmentation_loss(t, t).item() <= 1e-6

    def test_hand_computed(self):
        loss = segmentation_loss(torch.tensor([[0.8, 0.3]], dtype=torch.float64),
                                 torch.tensor([[1.0, 0.0]], dtype=torch.float64))
        assert loss.item() == pytest.approx(-(ln(0.8) + ln(0.7)) / 2)
        assert round(loss.item(), 4) == 0.2899

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            segmentation_loss(torch.zeros(2, 3), torch.zeros(2, 4))

    def test_saturated_inputs_stay_finite(self):
        loss = segmentation_loss(torch.tensor([[0.0, 1.0]]), torch.tensor([[1.0, 0.0]]))
        assert torch.isfinite(loss)

    def test_mask_excludes_padding(self):
        u = torch.tensor([[[0.8, 0.3, 0.01]]], dtype=torch.float64)
        t = torch.tensor([[[1.0, 0.0, 1.0]]], dtype=torch.float64)
        m = torch.tensor([[[1.0, 1.0, 0.0]]], dtype=torch.float64)
        assert segmentation_loss(u, t, m).item() == pytest.approx(-(ln(0.8) + ln(0.7)) / 2)

    def test_mean_over_entities_and_frames(self):
        u = torch.tensor([[0.8, 0.8], [0.3, 0.3]], dtype=torch.float64)
        t = torch.tensor([[1.0, 1.0], [0.0, 0.0]], dtype=torch.float64)
        assert segmentation_loss(u, t).item() == pytest.approx(-(ln(0.8) + ln(0.7)) / 2)


class TestLabelingLoss:
    def test_one_hot_correct(self):
        labels = torch.tensor([[0, 0, 2, 1]])
        assert labeling_loss(_one_hot_logp(labels, 3), labels).item() <= 1e-5

    def test_uniform_ten_labels(self):
        labels = torch.randint(0, 10, (2, 6))
        assert labeling_loss(_uniform(2, 6, 10), labels).item() == pytest.approx(math.log(10), abs=1e-6)

    def test_length_weighting(self):
        probs = torch.full((1, 10, 2), 0.0, dtype=torch.float64)
        probs[0, :8] = torch.tensor([0.9, 0.1], dtype=torch.float64)
        probs[0, 8:] = torch.tensor([0.5, 0.5], dtype=torch.float64)
        labels = torch.zeros(1, 10, dtype=torch.long)
        loss = labeling_loss(probs.log(), labels).item()
        assert loss == pytest.approx((8 * -ln(0.9) + 2 * -ln(0.5)) / 10)
        assert round(loss, 4) == 0.2229

    def test_counted_frame_without_label(self):
        labels = torch.tensor([[0, -1]])
        with pytest.raises(AssertionError):
            labeling_loss(_uniform(1, 2, 3), labels, mask=torch.ones(1, 2))

    def test_per_class_heads(self):
        logp = {"human": _uniform(2, 4, 10), "object": _uniform(2, 4, 5)}
        labels = torch.zeros(2, 4, dtype=torch.long)
        loss = labeling_loss(logp, labels, cls=torch.tensor([0, 1]))
        assert loss.item() == pytest.approx((math.log(10) + math.log(5)) / 2)

    def test_batched_per_video_average(self):
        logp = _uniform(2, 3, 4).unsqueeze(0).repeat(2, 1, 1, 1)
        labels = torch.zeros(2, 2, 3, dtype=torch.long)
        mask = torch.ones(2, 2, 3)
        mask[1, :, 1:] = 0
        out = labeling_loss(logp, labels, mask)
        torch.testing.assert_close(out, torch.full((2,), math.log(4), dtype=torch.float64))


class TestAnticipationLoss:
    def test_single_segment_contributes_zero(self):
        next_labels = torch.full((1, 5), -1)
        assert anticipation_loss(_uniform(1, 5, 10), next_labels).item() == 0.0

    def test_perfect_next_label(self):
        next_labels = torch.tensor([[2, 2, 2, -1]])
        assert anticipation_loss(_one_hot_logp(next_labels.clamp_min(0), 3), next_labels).item() <= 1e-5

    def test_uniform_over_counted_frames(self):
        next_labels = torch.tensor([[4] * 8 + [-1] * 2])
        loss = anticipation_loss(_uniform(1, 10, 10), next_labels)
        assert loss.item() == pytest.approx(8 * math.log(10) / 8)


class TestTotalLoss:
    parts = {"label": torch.tensor(1.0), "seg": torch.tensor(2.0), "anticipation": torch.tensor(1.0)}

    def test_only_label(self):
        cfg = LossConfig(lambda_seg=0.0, enable_anticipation=False)
        assert total_loss(self.parts, cfg).item() == 1.0

    def test_weighted_seg(self):
        cfg = LossConfig(lambda_seg=0.5, enable_anticipation=False)
        assert total_loss(self.parts, cfg).item() == 2.0

    def test_all_ones_default(self):
        parts = {k: torch.tensor(1.0) for k in self.parts}
        assert total_loss(parts, LossConfig()).item() == 3.0

    def test_seg_switch(self):
        cfg = LossConfig(enable_seg_loss=False, enable_anticipation=False)
        assert total_loss(self.parts, cfg).item() == 1.0

    @given(st.floats(0, 10), st.floats(0, 10), st.floats(-5, 5), st.floats(-5, 5))
    def test_affine_in_seg_with_slope_lambda(self, lam, seg, label, delta):
        cfg = LossConfig(lambda_seg=lam, enable_anticipation=False)
        a = total_loss({"label": torch.tensor(label, dtype=torch.float64),
                        "seg": torch.tensor(seg, dtype=torch.float64)}, cfg)
        b = total_loss({"label": torch.tensor(label, dtype=torch.float64),
                        "seg": torch.tensor(seg + delta, dtype=torch.float64)}, cfg)
        assert (b - a).item() == pytest.approx(lam * delta, abs=1e-9)


class TestConfig:
    def test_round_trip(self):
        cfg = LossConfig(lambda_seg=0.3, gaussian_sigma=2.0, enable_anticipation=False)
        assert LossConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("field, value", [("lambda_seg", -1.0), ("anticipation_weight", -0.1),
                                              ("gaussian_sigma", 0.0)])
    def test_rejects_invalid(self, field, value):
        with pytest.raises(ValueError):
            LossConfig(**{field: value})


def test_ground_truth_outputs_give_tiny_losses(small_dataset):
    from assign_hoi.data import make_boundary_target
    video = small_dataset[0]
    for ent in video.entities:
        seg = video.ground_truth[ent.id]
        labels = torch.as_tensor(seg.frame_labels()).long()[None]
        assert labeling_loss(_one_hot_logp(labels, seg_max(seg)), labels).item() <= 1e-5
        pulse = make_boundary_target(seg, video.num_frames, 4.0).pulse
        p = torch.as_tensor(pulse, dtype=torch.float64)[None]
        assert segmentation_loss(p, p).item() <= 1e-3


def seg_max(seg):
    return max(l for _, _, l in seg) + 1
