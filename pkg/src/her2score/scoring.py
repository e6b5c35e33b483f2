"""Patch and slide HER2 scoring.

Per patch, the segmenter's label map is histogrammed and fused with the two
classifiers: a Normal tumor verdict gates the patch to score 0; otherwise
the histogram argmax over labels {1..4} picks the HER2 category (ties break
toward the higher category, escalating borderline patches to review rather
than dismissing them), and the stain classifier cross-checks the histogram
verdict, raising a disagreement flag instead of overriding it.

Per slide, the score is the maximum over patches that reached 2+/3+, falling
back to the maximum over all patches when none did, and coverage is the
percentage of grid patches scoring 2+ or better. The binary grouping is
0/1+ negative, 2+ equivocal, 3+ positive.
"""

from __future__ import annotations

import json
import multiprocessing
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from io import StringIO
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import (
    BackendUnavailableError,
    IncompleteGridError,
    InvalidArgumentError,
    NotInvertibleError,
)
from .mapping import ModalityMapping, map_coord, verify_bijection
from .models import (
    LabelMap,
    ModelBinding,
    ModelGateway,
    ModelRole,
    StainPrediction,
    TumorLabel,
    TumorPrediction,
    dominant_label,
    dominant_stain_label,
)
from .tiling import GridSpec, PatchCoord, PatchGrid, SlideImage, extract_patches

ALL_LABELS = (0, 1, 2, 3, 4)
STAIN_PIXEL_LABELS = (1, 2, 3, 4)
BINARY_PIXEL_LABELS = (1, 4)

ANNOTATION_LETTERS = {1: "N", 2: "F", 3: "W", 4: "S"}


class Her2Score(IntEnum):
    S0 = 0
    S1P = 1
    S2P = 2
    S3P = 3

    @property
    def text(self) -> str:
        return ("0", "1+", "2+", "3+")[self]


class BinaryStatus(str, Enum):
    NEGATIVE = "negative"
    EQUIVOCAL = "equivocal"
    POSITIVE = "positive"


class ConfidenceFlag(str, Enum):
    CONSISTENT = "consistent"
    MODEL_DISAGREEMENT = "model_disagreement"


class ScoringMode(str, Enum):
    FOURWAY = "fourway"
    BINARY = "binary"


@dataclass
class PixelHistogram:
    counts: Dict[int, int]
    total_px: int

    def __post_init__(self):
        self.counts = {k: int(self.counts.get(k, 0)) for k in ALL_LABELS}
        if any(v < 0 for v in self.counts.values()):
            raise InvalidArgumentError("histogram counts must be nonnegative")
        if sum(self.counts.values()) != self.total_px:
            raise InvalidArgumentError("histogram counts must sum to total_px")

    def stain_counts(self) -> tuple:
        return tuple(self.counts[k] for k in STAIN_PIXEL_LABELS)


def pixel_histogram(label_map: LabelMap) -> PixelHistogram:
    """Exact per-label pixel counts of a label map."""
    counts = np.bincount(label_map.labels.ravel(), minlength=5)
    return PixelHistogram(
        counts={k: int(counts[k]) for k in ALL_LABELS},
        total_px=label_map.width_px * label_map.height_px,
    )


def binary_histogram(histogram: PixelHistogram) -> PixelHistogram:
    """Constrain to the binary-scoring labels {1, 4}.

    Counts for labels 2 and 3 are folded into label 0 so conservation holds
    while only the negative/positive extremes remain scoreable.
    """
    counts = dict(histogram.counts)
    dropped = counts[2] + counts[3]
    counts[2] = counts[3] = 0
    counts[0] += dropped
    return PixelHistogram(counts=counts, total_px=histogram.total_px)


def patch_percentage(histogram: PixelHistogram, label_set) -> float:
    """Percent of patch pixels carrying any label in label_set."""
    bad = set(label_set) - set(STAIN_PIXEL_LABELS)
    if bad:
        raise InvalidArgumentError(f"label_set must be within {{1..4}}, got {sorted(bad)}")
    hit = sum(histogram.counts[k] for k in label_set)
    return hit * 100.0 / histogram.total_px


def score_patch(
    histogram: PixelHistogram,
    tumor: TumorPrediction,
    stain: StainPrediction,
) -> tuple:
    """Fuse histogram argmax, tumor gate and stain cross-check.

    Returns (Her2Score, ConfidenceFlag).
    """
    flag = (
        ConfidenceFlag.CONSISTENT
        if stain.label is dominant_stain_label(histogram.stain_counts())
        else ConfidenceFlag.MODEL_DISAGREEMENT
    )
    if tumor.label is TumorLabel.NORMAL:
        return Her2Score.S0, flag
    label = dominant_label(histogram.stain_counts())
    if label == 0:
        return Her2Score.S0, flag
    return Her2Score(label - 1), flag


def annotation_code(histogram: PixelHistogram, score: Her2Score) -> str:
    """Letter code of the stain labels present, slash, the score text.

    Labels {1..4} map to letters N, F, W, S in that order; a patch with no
    stained pixels at all renders as the bare "0".
    """
    letters = "".join(
        ANNOTATION_LETTERS[k] for k in STAIN_PIXEL_LABELS if histogram.counts[k] > 0
    )
    if not letters:
        return "0"
    return f"{letters}/{score.text}"


@dataclass
class PatchScoreRecord:
    coord: PatchCoord
    histogram: PixelHistogram
    tumor: TumorPrediction
    stain: StainPrediction
    score: Her2Score
    annotation: str
    confidence_flag: ConfidenceFlag


@dataclass
class SlideScore:
    wsi_score: Her2Score
    coverage_pct: float
    binary_status: BinaryStatus
    patch_records: List[PatchScoreRecord]


def binary_status_of(score: Her2Score) -> BinaryStatus:
    if score is Her2Score.S2P:
        return BinaryStatus.EQUIVOCAL
    if score is Her2Score.S3P:
        return BinaryStatus.POSITIVE
    return BinaryStatus.NEGATIVE


def score_slide(records: Sequence[PatchScoreRecord], spec: GridSpec) -> SlideScore:
    """Aggregate patch records into the slide-level verdict.

    Order-free: any permutation of records yields the same result.
    """
    total = spec.rows * spec.cols
    if len(records) != total:
        raise IncompleteGridError(
            None, f"got {len(records)} records for a {spec.rows}x{spec.cols} grid"
        )
    seen = {PatchCoord(*r.coord) for r in records}
    for coord in spec.coords():
        if coord not in seen:
            raise IncompleteGridError(coord)
    positive = [r for r in records if r.score >= Her2Score.S2P]
    if positive:
        wsi_score = max(r.score for r in positive)
    else:
        wsi_score = max(r.score for r in records)
    coverage = len(positive) * 100.0 / total
    return SlideScore(
        wsi_score=wsi_score,
        coverage_pct=coverage,
        binary_status=binary_status_of(wsi_score),
        patch_records=sorted(records, key=lambda r: (r.coord.row, r.coord.col)),
    )


# ---------------------------------------------------------------------------
# End-to-end pipeline
# ---------------------------------------------------------------------------

@dataclass
class CaseReport:
    case_id: str
    slide: SlideScore
    mode: ScoringMode = ScoringMode.FOURWAY
    artifacts: Dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        records = []
        for r in self.slide.patch_records:
            records.append(
                {
                    "coord": {"row": r.coord.row, "col": r.coord.col},
                    "score": r.score.text,
                    "annotation": r.annotation,
                    "confidence_flag": r.confidence_flag.value,
                    "tumor": {
                        "label": r.tumor.label.value,
                        "probabilities": {k.value: v for k, v in r.tumor.probabilities.items()},
                    },
                    "stain": {
                        "label": r.stain.label.value,
                        "probabilities": {k.value: v for k, v in r.stain.probabilities.items()},
                    },
                    "pixel_counts": {str(k): r.histogram.counts[k] for k in ALL_LABELS},
                    "stain_pct": patch_percentage(r.histogram, STAIN_PIXEL_LABELS),
                }
            )
        payload = {
            "case_id": self.case_id,
            "wsi_score": self.slide.wsi_score.text,
            "coverage_pct": self.slide.coverage_pct,
            "binary_status": self.slide.binary_status.value,
            "scoring_mode": self.mode.value,
            "records": records,
            "artifacts": dict(sorted(self.artifacts.items())),
        }
        return json.dumps(payload, indent=2) + "\n"

    def to_csv(self) -> str:
        out = StringIO()
        out.write(
            "row,col,score,annotation,confidence_flag,tumor_label,tumor_prob,"
            "stain_label,stain_prob,px_background,px_no_stain,px_faint,px_weak,"
            "px_strong,stain_pct\n"
        )
        for r in self.slide.patch_records:
            c = r.histogram.counts
            out.write(
                f"{r.coord.row},{r.coord.col},{r.score.text},{r.annotation},"
                f"{r.confidence_flag.value},{r.tumor.label.value},"
                f"{r.tumor.probabilities[r.tumor.label]!r},{r.stain.label.value},"
                f"{r.stain.probabilities[r.stain.label]!r},{c[0]},{c[1]},{c[2]},"
                f"{c[3]},{c[4]},{patch_percentage(r.histogram, STAIN_PIXEL_LABELS)!r}\n"
            )
        return out.getvalue()


@dataclass
class _PipelineContext:
    he_grid: PatchGrid
    ihc_grid: PatchGrid
    mapping: ModalityMapping
    gateway: ModelGateway
    mode: ScoringMode
    patch_sink: Optional[Callable] = None


# Shared with forked/threaded workers; one pipeline at a time per process.
_PIPELINE: Optional[_PipelineContext] = None


def _score_coord(he_coord: PatchCoord) -> PatchScoreRecord:
    ctx = _PIPELINE
    he_patch = ctx.he_grid.patch(he_coord)
    ihc_coord = map_coord(he_coord, ctx.mapping)
    ihc_patch = ctx.ihc_grid.patch(ihc_coord)
    try:
        label_map = ctx.gateway.segment_stain(ihc_patch)
        stain = ctx.gateway.classify_stain(ihc_patch)
        tumor = ctx.gateway.classify_tumor(he_patch)
    except BackendUnavailableError as exc:
        raise BackendUnavailableError(
            f"backend failed at IHC patch {tuple(ihc_coord)}: {exc}"
        ) from exc
    histogram = pixel_histogram(label_map)
    if ctx.mode is ScoringMode.BINARY:
        histogram = binary_histogram(histogram)
    score, flag = score_patch(histogram, tumor, stain)
    record = PatchScoreRecord(
        coord=ihc_coord,
        histogram=histogram,
        tumor=tumor,
        stain=stain,
        score=score,
        annotation=annotation_code(histogram, score),
        confidence_flag=flag,
    )
    if ctx.patch_sink is not None:
        ctx.patch_sink(he_patch, ihc_patch, label_map, record)
    return record


def _map_coords(coords, workers: int, allow_fork: bool) -> list:
    if workers <= 1:
        return [_score_coord(c) for c in coords]
    if allow_fork and "fork" in multiprocessing.get_all_start_methods():
        ctx = multiprocessing.get_context("fork")
        chunk = max(1, len(coords) // (workers * 4))
        with ctx.Pool(processes=workers) as pool:
            return pool.map(_score_coord, coords, chunksize=chunk)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_score_coord, coords))


def run_pipeline(
    he_slide: SlideImage,
    ihc_slide: SlideImage,
    mapping: ModalityMapping,
    bindings: Optional[Dict[ModelRole, ModelBinding]] = None,
    *,
    gateway: Optional[ModelGateway] = None,
    workers: int = 1,
    mode: ScoringMode = ScoringMode.FOURWAY,
    patch_sink: Optional[Callable] = None,
) -> CaseReport:
    """Score a paired H&E/IHC case end to end.

    For every H&E coordinate the mapped IHC patch is segmented and
    stain-classified, the H&E patch is tumor-classified, and the results are
    fused per patch and aggregated per slide. ``patch_sink(he_patch,
    ihc_patch, label_map, record)``, when given, runs inside the workers
    (e.g. to write per-patch artifacts). Output is identical for any worker
    count; fork-based workers are used when available and no sidecar handle
    would have to cross a process boundary.
    """
    global _PIPELINE
    report = verify_bijection(mapping)
    if not report.bijective:
        raise NotInvertibleError(
            f"mapping failed bijection verification "
            f"(collisions={len(report.collisions)}, unreached={len(report.unreached)}, "
            f"out_of_range={len(report.out_of_range)})"
        )
    owns_gateway = gateway is None
    if gateway is None:
        gateway = ModelGateway(bindings)
    he_grid = extract_patches(he_slide, mapping.he_spec)
    ihc_grid = extract_patches(ihc_slide, mapping.ihc_spec)
    coords = sorted(he_grid.spec.coords())
    _PIPELINE = _PipelineContext(he_grid, ihc_grid, mapping, gateway, ScoringMode(mode), patch_sink)
    try:
        records = _map_coords(coords, workers, allow_fork=not gateway.uses_sidecar())
    finally:
        _PIPELINE = None
        if owns_gateway:
            gateway.close()
    slide_score = score_slide(records, ihc_grid.spec)
    return CaseReport(case_id=ihc_slide.case_id, slide=slide_score, mode=ScoringMode(mode))
