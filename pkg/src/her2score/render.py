"""Visual artifacts and tabular reports.

Overlays composite a label map onto its source patch; heatmaps tint a patch
by the winning prediction; mosaics reassemble per-patch images into a
slide-sized sheet with optional grid lines; tally reports compare
ground-truth and predicted patch labels per region of interest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from .errors import IncompleteGridError, InvalidArgumentError
from .models import (
    LabelMap,
    StainLabel,
    StainPrediction,
    TumorLabel,
    TumorPrediction,
)
from .scoring import Her2Score, PatchScoreRecord
from .tiling import GridSpec, PatchCoord, PatchGrid

RGBA = Tuple[int, int, int, int]

DEFAULT_COLORS: Dict[int, RGBA] = {
    0: (0, 0, 0, 0),          # background stays transparent
    1: (40, 90, 255, 255),    # no-stain: blue
    2: (255, 220, 0, 255),    # faint: yellow
    3: (255, 140, 0, 255),    # weak: orange
    4: (230, 30, 30, 255),    # strong: red
}

HEAT_COLORS = {
    TumorLabel.TUMOR: (230, 30, 30),
    TumorLabel.NORMAL: None,
    StainLabel.NO_STAIN: None,
    StainLabel.FAINT: (255, 220, 0),
    StainLabel.WEAK: (255, 140, 0),
    StainLabel.STRONG: (230, 30, 30),
}

SCORE_COLORS = {
    Her2Score.S0: (225, 225, 225),
    Her2Score.S1P: (255, 220, 0),
    Her2Score.S2P: (255, 140, 0),
    Her2Score.S3P: (230, 30, 30),
}


@dataclass
class Palette:
    colors: Dict[int, RGBA] = field(default_factory=lambda: dict(DEFAULT_COLORS))
    overlay_alpha: float = 0.5

    def __post_init__(self):
        if set(self.colors) != {0, 1, 2, 3, 4}:
            raise InvalidArgumentError("palette needs exactly the labels {0..4}")
        if not 0.0 <= self.overlay_alpha <= 1.0:
            raise InvalidArgumentError("overlay_alpha must be in [0, 1]")


def overlay(pixels: np.ndarray, label_map, palette: Optional[Palette] = None) -> np.ndarray:
    """Alpha-composite label colors onto the source pixels.

    Per pixel: out = round((1 - a) * src + a * color) with
    a = overlay_alpha * color_alpha / 255, so transparent labels leave the
    source untouched.
    """
    palette = palette or Palette()
    labels = np.asarray(getattr(label_map, "labels", label_map))
    if labels.shape != pixels.shape[:2]:
        raise InvalidArgumentError(
            f"label map {labels.shape} does not match patch {pixels.shape[:2]}"
        )
    color_lut = np.zeros((5, 3), dtype=np.float64)
    alpha_lut = np.zeros(5, dtype=np.float64)
    for k, (r, g, b, a) in palette.colors.items():
        color_lut[k] = (r, g, b)
        alpha_lut[k] = palette.overlay_alpha * (a / 255.0)
    a = alpha_lut[labels][..., None]
    out = (1.0 - a) * pixels.astype(np.float64) + a * color_lut[labels]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def heatmap(
    pixels: np.ndarray,
    prediction,
    *,
    tint_alpha: float = 0.5,
    caption: bool = True,
) -> np.ndarray:
    """Tint a patch by the winning label's color, scaled by its probability.

    out = round((1 - a) * src + a * color) with a = tint_alpha * p(winner).
    Labels without a heat color (normal, no-stain) leave the patch untinted.
    The winning label text is drawn in the top-left corner.
    """
    if not isinstance(prediction, (TumorPrediction, StainPrediction)):
        raise InvalidArgumentError("prediction must be a tumor or stain prediction")
    color = HEAT_COLORS[prediction.label]
    out = pixels
    if color is not None:
        a = tint_alpha * prediction.probabilities[prediction.label]
        out = (1.0 - a) * pixels.astype(np.float64) + a * np.asarray(color, dtype=np.float64)
        out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    img = Image.fromarray(np.ascontiguousarray(out))
    if caption:
        draw = ImageDraw.Draw(img)
        text = prediction.label.value.replace("_", "-")
        w = draw.textlength(text)
        draw.rectangle([2, 2, 6 + w, 16], fill=(255, 255, 255))
        draw.text((4, 4), text, fill=(0, 0, 0))
    return np.asarray(img)


def mosaic(
    images: Mapping[PatchCoord, np.ndarray],
    spec: GridSpec,
    *,
    width_px: Optional[int] = None,
    height_px: Optional[int] = None,
    grid_lines: bool = False,
    line_color: Tuple[int, int, int] = (0, 0, 0),
) -> np.ndarray:
    """Lay per-patch images back out as one sheet, implosion-style.

    Without grid lines and with the source dimensions given, the result is
    byte-identical to imploding the same patches. With grid lines, one-pixel
    separators are inserted between adjacent tiles (interior boundaries
    only), growing the sheet by cols-1 and rows-1 pixels.
    """
    f = spec.tile_size_px
    width_px = width_px if width_px is not None else spec.cols * f
    height_px = height_px if height_px is not None else spec.rows * f
    canvas = np.empty((spec.rows * f, spec.cols * f, 3), dtype=np.uint8)
    for coord in spec.coords():
        tile = images.get(PatchCoord(*coord))
        if tile is None:
            raise IncompleteGridError(coord)
        if tile.shape != (f, f, 3):
            raise InvalidArgumentError(
                f"tile at {coord} has shape {tile.shape}, expected {(f, f, 3)}"
            )
        canvas[coord.row * f : (coord.row + 1) * f, coord.col * f : (coord.col + 1) * f] = tile
    canvas = canvas[:height_px, :width_px]
    if grid_lines:
        row_cuts = [r * f for r in range(1, spec.rows) if r * f < height_px]
        col_cuts = [c * f for c in range(1, spec.cols) if c * f < width_px]
        canvas = np.insert(canvas, row_cuts, np.asarray(line_color, np.uint8), axis=0)
        canvas = np.insert(canvas, col_cuts, np.asarray(line_color, np.uint8), axis=1)
    return canvas


def grid_mosaic(grid: PatchGrid, **kwargs) -> np.ndarray:
    images = {coord: patch.pixels for coord, patch in grid.patches.items()}
    return mosaic(images, grid.spec, width_px=grid.width_px, height_px=grid.height_px, **kwargs)


# ---------------------------------------------------------------------------
# ROI tally report (ground truth vs predictions)
# ---------------------------------------------------------------------------

@dataclass
class PatchLabels:
    """Pathologist or pipeline verdicts for one patch.

    stain may be None for patches without a stain annotation; those are
    skipped in the stain tallies (tumor tallies always cover every patch).
    """

    tumor: TumorLabel
    stain: Optional[StainLabel] = None


@dataclass
class RoiTally:
    roi_id: str
    r_tumor: int = 0
    p_tumor: int = 0
    r_normal: int = 0
    p_normal: int = 0
    r_stain: Dict[StainLabel, int] = field(default_factory=dict)
    p_stain: Dict[StainLabel, int] = field(default_factory=dict)

    def __post_init__(self):
        for counts in (self.r_stain, self.p_stain):
            for label in StainLabel:
                counts.setdefault(label, 0)

    @property
    def patch_count(self) -> int:
        return self.r_tumor + self.r_normal


def tally_report(
    ground_truth: Mapping[PatchCoord, PatchLabels],
    predictions: Mapping[PatchCoord, PatchLabels],
    roi_partition: Mapping[PatchCoord, str],
) -> List[RoiTally]:
    """Count real vs predicted tumor/stain labels per ROI.

    Every patch in either label set must be assigned to exactly one ROI.
    """
    tallies: Dict[str, RoiTally] = {}
    for coord in sorted(set(ground_truth) | set(predictions)):
        roi_id = roi_partition.get(PatchCoord(*coord))
        if roi_id is None:
            raise InvalidArgumentError(f"patch {coord} has no ROI assignment")
        gt = ground_truth.get(coord)
        pred = predictions.get(coord)
        if gt is None or pred is None:
            raise InvalidArgumentError(f"patch {coord} missing from one label set")
        tally = tallies.setdefault(roi_id, RoiTally(roi_id))
        if gt.tumor is TumorLabel.TUMOR:
            tally.r_tumor += 1
        else:
            tally.r_normal += 1
        if pred.tumor is TumorLabel.TUMOR:
            tally.p_tumor += 1
        else:
            tally.p_normal += 1
        if gt.stain is not None:
            tally.r_stain[gt.stain] += 1
        if pred.stain is not None:
            tally.p_stain[pred.stain] += 1
    result = [tallies[roi_id] for roi_id in sorted(tallies)]
    for tally in result:
        if tally.r_tumor + tally.r_normal != tally.p_tumor + tally.p_normal:
            raise InvalidArgumentError(
                f"ROI {tally.roi_id}: real and predicted tumor tallies disagree on patch count"
            )
    return result


_TALLY_ROWS = [
    ("R-tumor", lambda t: t.r_tumor),
    ("P-tumor", lambda t: t.p_tumor),
    ("R-normal", lambda t: t.r_normal),
    ("P-normal", lambda t: t.p_normal),
    ("R-No-stain", lambda t: t.r_stain[StainLabel.NO_STAIN]),
    ("R-Faint-stain", lambda t: t.r_stain[StainLabel.FAINT]),
    ("R-weak-stain", lambda t: t.r_stain[StainLabel.WEAK]),
    ("R-strong-stain", lambda t: t.r_stain[StainLabel.STRONG]),
    ("P-No-stain", lambda t: t.p_stain[StainLabel.NO_STAIN]),
    ("P-Faint-stain", lambda t: t.p_stain[StainLabel.FAINT]),
    ("P-weak-stain", lambda t: t.p_stain[StainLabel.WEAK]),
    ("P-strong-stain", lambda t: t.p_stain[StainLabel.STRONG]),
]


def tally_csv(tallies: List[RoiTally]) -> str:
    """One column per ROI, one row per real/predicted status count."""
    out = StringIO()
    out.write("status," + ",".join(t.roi_id for t in tallies) + "\n")
    for name, getter in _TALLY_ROWS:
        out.write(name + "," + ",".join(str(getter(t)) for t in tallies) + "\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# Per-patch artifact writing (usable as a run_pipeline patch sink)
# ---------------------------------------------------------------------------

@dataclass
class ArtifactWriter:
    """Writes per-patch overlay and heatmap PNGs under an output directory.

    Layout: `<out>/<case_id>/{overlays,heatmaps}/r<row>_c<col>.png`. Each
    call writes independent files, so it is safe from concurrent workers.
    """

    out_dir: Path
    case_id: str
    palette: Palette = field(default_factory=Palette)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        for sub in ("overlays", "heatmaps"):
            (self.case_dir / sub).mkdir(parents=True, exist_ok=True)

    @property
    def case_dir(self) -> Path:
        return self.out_dir / self.case_id

    def __call__(self, he_patch, ihc_patch, label_map: LabelMap, record: PatchScoreRecord):
        name = f"r{record.coord.row}_c{record.coord.col}.png"
        blended = overlay(ihc_patch.pixels, label_map, self.palette)
        Image.fromarray(blended).save(self.case_dir / "overlays" / name, format="PNG")
        heat = heatmap(he_patch.pixels, record.tumor)
        Image.fromarray(heat).save(self.case_dir / "heatmaps" / name, format="PNG")
