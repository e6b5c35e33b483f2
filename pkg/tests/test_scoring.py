from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from her2score.errors import IncompleteGridError, InvalidArgumentError
from her2score.models import (
    LabelMap,
    StainLabel,
    StainPrediction,
    TumorLabel,
    TumorPrediction,
    one_hot_probabilities,
)
from her2score.scoring import (
    BinaryStatus,
    ConfidenceFlag,
    Her2Score,
    PatchScoreRecord,
    PixelHistogram,
    annotation_code,
    binary_histogram,
    binary_status_of,
    patch_percentage,
    pixel_histogram,
    score_patch,
    score_slide,
)
from her2score.tiling import GridSpec, PatchCoord

STAIN_LABELS = tuple(StainLabel)


def histogram(c1=0, c2=0, c3=0, c4=0, c0=None, total=None):
    stained = c1 + c2 + c3 + c4
    if total is None:
        total = max(stained, 1) if c0 is None else stained + c0
    background = total - stained
    return PixelHistogram(counts={0: background, 1: c1, 2: c2, 3: c3, 4: c4}, total_px=total)


def tumor(label=TumorLabel.TUMOR):
    return TumorPrediction(label, one_hot_probabilities((TumorLabel.TUMOR, TumorLabel.NORMAL), label))


def stain(label=StainLabel.NO_STAIN):
    return StainPrediction(label, one_hot_probabilities(STAIN_LABELS, label))


class TestPixelHistogram:
    def test_all_zero_map(self):
        lm = LabelMap(512, 512, np.zeros((512, 512), dtype=np.uint8))
        h = pixel_histogram(lm)
        assert h.counts[0] == 262144
        assert sum(h.counts[k] for k in (1, 2, 3, 4)) == 0

    def test_all_label_four(self):
        lm = LabelMap(512, 512, np.full((512, 512), 4, dtype=np.uint8))
        assert pixel_histogram(lm).counts[4] == 262144

    def test_matches_independent_tally(self, rng):
        # oracle: byte-level Counter, no numpy involved
        for _ in range(25):
            labels = rng.integers(0, 5, size=(64, 48), dtype=np.uint8)
            h = pixel_histogram(LabelMap(48, 64, labels))
            oracle = Counter(labels.tobytes())
            assert h.counts == {k: oracle.get(k, 0) for k in range(5)}
            assert sum(h.counts.values()) == 64 * 48

    def test_invariant_enforced(self):
        with pytest.raises(InvalidArgumentError):
            PixelHistogram(counts={0: 1, 1: 1, 2: 0, 3: 0, 4: 0}, total_px=5)


class TestBinaryHistogram:
    def test_drops_middle_labels(self):
        h = binary_histogram(histogram(c1=10, c2=5, c3=5, c4=10))
        assert h.counts[1] == 10 and h.counts[4] == 10
        assert h.counts[2] == 0 and h.counts[3] == 0

    def test_total_unchanged(self):
        src = histogram(c1=10, c2=5, c3=5, c4=10, c0=70)
        assert binary_histogram(src).total_px == src.total_px == 100

    def test_all_zero_stays_zero(self):
        h = binary_histogram(histogram(total=64))
        assert all(h.counts[k] == 0 for k in (1, 2, 3, 4))

    def test_labels_1_and_4_preserved_exactly(self, rng):
        for _ in range(50):
            c = rng.integers(0, 1000, size=4)
            src = histogram(*c)
            out = binary_histogram(src)
            assert out.counts[1] == src.counts[1]
            assert out.counts[4] == src.counts[4]


class TestPatchPercentage:
    def test_full_coverage(self):
        h = histogram(c4=262144)
        assert patch_percentage(h, {4}) == 100.0

    def test_half_coverage(self):
        h = histogram(c3=131072, total=262144)
        assert patch_percentage(h, {3}) == 50.0

    def test_matches_brute_force_ratio(self, rng):
        for _ in range(50):
            c = rng.integers(0, 500, size=4)
            c0 = int(rng.integers(0, 500))
            h = histogram(*c, c0=c0)
            labels = {1, 3}
            expected = (c[0] + c[2]) * 100.0 / h.total_px
            assert patch_percentage(h, labels) == pytest.approx(expected, abs=1e-12)

    def test_rejects_background_label(self):
        with pytest.raises(InvalidArgumentError):
            patch_percentage(histogram(c1=1), {0, 1})


class TestScorePatch:
    def test_normal_tumor_gates_to_zero(self):
        score, _ = score_patch(histogram(c4=100), tumor(TumorLabel.NORMAL), stain(StainLabel.STRONG))
        assert score is Her2Score.S0

    def test_empty_histogram_scores_zero(self):
        score, _ = score_patch(histogram(total=10), tumor(), stain())
        assert score is Her2Score.S0

    def test_argmax_picks_category(self):
        score, _ = score_patch(histogram(c2=9000, c3=100), tumor(), stain(StainLabel.FAINT))
        assert score is Her2Score.S1P

    def test_tie_breaks_toward_higher(self):
        score, _ = score_patch(histogram(c3=500, c4=500), tumor(), stain(StainLabel.STRONG))
        assert score is Her2Score.S3P

    def test_disagreement_flag(self):
        _, flag = score_patch(histogram(c4=10), tumor(), stain(StainLabel.FAINT))
        assert flag is ConfidenceFlag.MODEL_DISAGREEMENT
        _, flag = score_patch(histogram(c4=10), tumor(), stain(StainLabel.STRONG))
        assert flag is ConfidenceFlag.CONSISTENT

    def test_flag_on_empty_histogram_compares_no_stain(self):
        _, flag = score_patch(histogram(total=10), tumor(), stain(StainLabel.NO_STAIN))
        assert flag is ConfidenceFlag.CONSISTENT

    @given(
        counts=st.tuples(*[st.integers(min_value=0, max_value=10**6)] * 4),
        factor=st.integers(min_value=1, max_value=1000),
    )
    def test_argmax_scale_invariance(self, counts, factor):
        a, _ = score_patch(histogram(*counts), tumor(), stain())
        scaled = tuple(c * factor for c in counts)
        b, _ = score_patch(histogram(*scaled), tumor(), stain())
        assert a == b

    @given(
        counts=st.tuples(*[st.integers(min_value=0, max_value=10**6)] * 4),
        bump=st.integers(min_value=1, max_value=10**6),
    )
    def test_label4_monotonicity(self, counts, bump):
        base, _ = score_patch(histogram(*counts), tumor(), stain())
        c1, c2, c3, c4 = counts
        bumped, _ = score_patch(histogram(c1, c2, c3, c4 + bump), tumor(), stain())
        assert bumped >= base

    @given(counts=st.tuples(*[st.integers(min_value=0, max_value=10**6)] * 4))
    def test_tumor_gate_always_wins(self, counts):
        score, _ = score_patch(histogram(*counts), tumor(TumorLabel.NORMAL), stain())
        assert score is Her2Score.S0


class TestAnnotationCode:
    def test_figure_labels(self):
        assert annotation_code(histogram(c1=10, c2=5), Her2Score.S1P) == "NF/1+"
        assert annotation_code(histogram(c1=1, c2=1, c3=1), Her2Score.S1P) == "NFW/1+"

    def test_empty_renders_bare_zero(self):
        assert annotation_code(histogram(total=4), Her2Score.S0) == "0"

    def test_all_letters(self):
        assert annotation_code(histogram(1, 1, 1, 1), Her2Score.S3P) == "NFWS/3+"

    @given(counts=st.tuples(*[st.integers(min_value=0, max_value=100)] * 4))
    def test_grammar(self, counts):
        h = histogram(*counts)
        score, _ = score_patch(h, tumor(), stain())
        code = annotation_code(h, score)
        if all(c == 0 for c in counts):
            assert code == "0"
        else:
            letters, _, score_text = code.partition("/")
            assert score_text in {"0", "1+", "2+", "3+"}
            expected = "".join(l for l, c in zip("NFWS", counts) if c > 0)
            assert letters == expected


def record(coord, score, c4=0):
    counts = {0: 100 - c4, 1: 0, 2: 0, 3: 0, 4: c4}
    h = PixelHistogram(counts=counts, total_px=100)
    return PatchScoreRecord(
        coord=PatchCoord(*coord),
        histogram=h,
        tumor=tumor(),
        stain=stain(),
        score=score,
        annotation=annotation_code(h, score),
        confidence_flag=ConfidenceFlag.CONSISTENT,
    )


class TestScoreSlide:
    def test_max_of_positive_and_coverage(self):
        spec = GridSpec(512, cols=2, rows=2)
        records = [
            record((0, 0), Her2Score.S0),
            record((0, 1), Her2Score.S1P),
            record((1, 0), Her2Score.S3P, c4=50),
            record((1, 1), Her2Score.S0),
        ]
        result = score_slide(records, spec)
        assert result.wsi_score is Her2Score.S3P
        assert result.coverage_pct == 25.0
        assert result.binary_status is BinaryStatus.POSITIVE

    def test_all_zero_slide(self):
        spec = GridSpec(512, cols=3, rows=2)
        records = [record(c, Her2Score.S0) for c in spec.coords()]
        result = score_slide(records, spec)
        assert result.wsi_score is Her2Score.S0
        assert result.coverage_pct == 0.0
        assert result.binary_status is BinaryStatus.NEGATIVE

    def test_fallback_when_no_positive_patch(self):
        spec = GridSpec(512, cols=2, rows=1)
        records = [record((0, 0), Her2Score.S0), record((0, 1), Her2Score.S1P)]
        result = score_slide(records, spec)
        assert result.wsi_score is Her2Score.S1P
        assert result.binary_status is BinaryStatus.NEGATIVE

    def test_equivocal_status(self):
        spec = GridSpec(512, cols=2, rows=1)
        records = [record((0, 0), Her2Score.S2P), record((0, 1), Her2Score.S0)]
        assert score_slide(records, spec).binary_status is BinaryStatus.EQUIVOCAL

    def test_coverage_with_12_patches(self, rng):
        spec = GridSpec(512, cols=4, rows=3)
        coords = list(spec.coords())
        scores = [Her2Score.S2P, Her2Score.S3P, Her2Score.S2P] + [Her2Score.S0] * 9
        records = [record(c, s) for c, s in zip(coords, scores)]
        result = score_slide(records, spec)
        # brute-force recount
        assert result.coverage_pct == 100.0 * 3 / 12 == 25.0
        for _ in range(5):
            shuffled = list(records)
            rng.shuffle(shuffled)
            again = score_slide(shuffled, spec)
            assert again.wsi_score == result.wsi_score
            assert again.coverage_pct == result.coverage_pct
            assert [r.coord for r in again.patch_records] == [
                r.coord for r in result.patch_records
            ]

    def test_incomplete_grid_rejected(self):
        spec = GridSpec(512, cols=2, rows=2)
        records = [record((0, 0), Her2Score.S0)]
        with pytest.raises(IncompleteGridError):
            score_slide(records, spec)

    def test_duplicate_coord_rejected(self):
        spec = GridSpec(512, cols=2, rows=1)
        records = [record((0, 0), Her2Score.S0), record((0, 0), Her2Score.S0)]
        with pytest.raises(IncompleteGridError):
            score_slide(records, spec)

    def test_coverage_zero_iff_no_positive(self, rng):
        spec = GridSpec(512, cols=3, rows=3)
        for _ in range(20):
            scores = [Her2Score(int(s)) for s in rng.integers(0, 4, size=9)]
            records = [record(c, s) for c, s in zip(spec.coords(), scores)]
            result = score_slide(records, spec)
            has_positive = any(s >= Her2Score.S2P for s in scores)
            assert (result.coverage_pct == 0.0) == (not has_positive)
            assert 0.0 <= result.coverage_pct <= 100.0


class TestBinaryStatusGrouping:
    @pytest.mark.parametrize(
        "score,status",
        [
            (Her2Score.S0, BinaryStatus.NEGATIVE),
            (Her2Score.S1P, BinaryStatus.NEGATIVE),
            (Her2Score.S2P, BinaryStatus.EQUIVOCAL),
            (Her2Score.S3P, BinaryStatus.POSITIVE),
        ],
    )
    def test_grouping(self, score, status):
        assert binary_status_of(score) is status
