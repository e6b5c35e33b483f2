import numpy as np
import pytest

from her2score.errors import InvalidArgumentError
from her2score.models import (
    BROWNNESS_THRESHOLDS,
    LabelMap,
    ModelBinding,
    ModelGateway,
    ModelRole,
    StainLabel,
    TumorLabel,
    dominant_label,
    mean_saturation,
    one_hot_probabilities,
    resize_labels,
    rule_label_map,
    rule_stain_prediction,
    rule_tumor_prediction,
)
from her2score.tiling import Modality

from conftest import FAINT_BROWN, PURPLE, STRONG_BROWN, WHITE, make_patch, solid


def brownness(color) -> float:
    r, g, b = color
    return (r - b) / 255.0


class TestTumorRule:
    def test_all_white_is_normal(self):
        pred = rule_tumor_prediction(solid(WHITE))
        assert pred.label is TumorLabel.NORMAL

    def test_saturated_purple_is_tumor(self):
        # saturation (200-60)/200 = 0.7, well above the 0.25 threshold
        assert mean_saturation(solid(PURPLE)) == pytest.approx(0.7)
        pred = rule_tumor_prediction(solid(PURPLE))
        assert pred.label is TumorLabel.TUMOR

    def test_probabilities_sum_to_one(self, rng):
        for _ in range(20):
            pixels = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
            pred = rule_tumor_prediction(pixels)
            assert sum(pred.probabilities.values()) == pytest.approx(1.0, abs=1e-12)
            assert pred.probabilities[pred.label] == max(pred.probabilities.values())

    def test_white_pixels_excluded_from_mean(self):
        # half white, half purple: the white half must not dilute saturation
        pixels = solid(WHITE)
        pixels[:16] = PURPLE
        assert mean_saturation(pixels) == pytest.approx(0.7)


class TestStainRule:
    def test_all_white_segments_to_zero(self):
        labels = rule_label_map(solid(WHITE))
        assert (labels == 0).all()

    def test_all_white_classifies_no_stain(self):
        pred = rule_stain_prediction(solid(WHITE))
        assert pred.label is StainLabel.NO_STAIN

    def test_brownness_thresholds(self):
        # one representative color per band of the documented rule
        cases = [
            ((180, 150, 172), 0),  # not R>G>B
            ((240, 236, 232), 0),  # near-white
            ((100, 95, 90), 1),    # b ~= 0.039 < 0.05
            (FAINT_BROWN, 2),      # b ~= 0.196
            ((170, 120, 50), 3),   # b ~= 0.47
            (STRONG_BROWN, 4),     # b ~= 0.745
        ]
        for color, expected in cases:
            labels = rule_label_map(solid(color, size=4))
            assert (labels == expected).all(), (color, expected, labels[0, 0])

    def test_threshold_edges_exact(self):
        t1, t2, t3 = BROWNNESS_THRESHOLDS
        # b is quantized to k/255; check the first color at or above each cut
        for threshold, expected in ((t1, 2), (t2, 3), (t3, 4)):
            delta = int(np.ceil(threshold * 255))
            color = (10 + delta, 11, 10)  # R>G>B with R-B = delta
            labels = rule_label_map(solid(color, size=2))
            assert (labels == expected).all(), (color, expected)

    def test_uniform_brown_patch_classifies_by_band(self):
        assert rule_stain_prediction(solid(STRONG_BROWN)).label is StainLabel.STRONG
        assert rule_stain_prediction(solid(FAINT_BROWN)).label is StainLabel.FAINT

    def test_dark_brown_is_faint_under_documented_rule(self):
        # (101, 67, 33): b = 68/255 ~= 0.267, which falls in the faint band
        assert brownness((101, 67, 33)) == pytest.approx(0.267, abs=1e-3)
        assert rule_stain_prediction(solid((101, 67, 33))).label is StainLabel.FAINT

    def test_dominant_label_ties_break_high(self):
        assert dominant_label((5, 0, 0, 5)) == 4
        assert dominant_label((0, 3, 3, 0)) == 3
        assert dominant_label((0, 0, 0, 0)) == 0


class TestOneHotProbabilities:
    def test_four_way(self):
        probs = one_hot_probabilities(tuple(StainLabel), StainLabel.WEAK)
        assert probs[StainLabel.WEAK] == pytest.approx(0.97)
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-12)

    def test_binary(self):
        probs = one_hot_probabilities((TumorLabel.TUMOR, TumorLabel.NORMAL), TumorLabel.TUMOR)
        assert probs[TumorLabel.TUMOR] == pytest.approx(0.99)


class TestGateway:
    def test_classify_tumor_requires_he(self):
        gw = ModelGateway()
        with pytest.raises(InvalidArgumentError):
            gw.classify_tumor(make_patch(WHITE, modality=Modality.IHC))

    def test_classify_stain_requires_ihc(self):
        gw = ModelGateway()
        with pytest.raises(InvalidArgumentError):
            gw.classify_stain(make_patch(WHITE, modality=Modality.HE))

    def test_segment_returns_patch_dimensions(self):
        gw = ModelGateway()
        patch = make_patch(STRONG_BROWN, size=48)
        label_map = gw.segment_stain(patch)
        assert (label_map.width_px, label_map.height_px) == (48, 48)
        assert (label_map.labels == 4).all()

    def test_segment_zeroes_padded_regions(self):
        gw = ModelGateway()
        patch = make_patch(STRONG_BROWN, size=48, pad_right_px=8, pad_bottom_px=4)
        labels = gw.segment_stain(patch).labels
        assert (labels[:, 40:] == 0).all()
        assert (labels[44:, :] == 0).all()
        assert (labels[:44, :40] == 4).all()

    def test_resize_on_dispatch_is_deterministic(self):
        binding = ModelBinding(ModelRole.TUMOR, input_size_px=31)
        gw = ModelGateway({ModelRole.TUMOR: binding})
        patch = make_patch(PURPLE, size=48, modality=Modality.HE)
        first = gw.classify_tumor(patch)
        second = gw.classify_tumor(patch)
        assert first == second
        assert first.label is TumorLabel.TUMOR

    def test_synthetic_rectangle_segments_strong(self):
        pixels = solid(WHITE, size=64)
        pixels[10:30, 20:50] = STRONG_BROWN
        patch = make_patch(WHITE, size=64)
        patch.pixels = pixels
        labels = ModelGateway().segment_stain(patch).labels
        assert (labels[10:30, 20:50] == 4).all()
        outside = labels.copy()
        outside[10:30, 20:50] = 0
        assert (outside == 0).all()

    def test_label_resize_round_trip_preserves_domain(self, rng):
        labels = rng.integers(0, 5, size=(37, 53), dtype=np.uint8)
        up = resize_labels(labels, 512, 512)
        down = resize_labels(up, 53, 37)
        assert set(np.unique(up)) <= {0, 1, 2, 3, 4}
        assert set(np.unique(down)) <= {0, 1, 2, 3, 4}

    def test_label_map_rejects_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            LabelMap(width_px=2, height_px=2, labels=np.full((2, 2), 9, dtype=np.uint8))
