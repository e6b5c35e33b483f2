"""Slide tiling and reassembly.

A slide is a flat RGB8 raster. Tiling cuts it into a ceiling-division grid of
fixed-size square patches; edge patches are padded with opaque white so every
patch has the model input shape, and the pad extents are recorded so that
implosion (reassembly) is byte-exact. Tiling is purely pixel-based:
``microns_per_px`` is carried as metadata and never enters the math.

Patch grids can be spilled to a directory of PNG files plus a JSON manifest
(`<case_id>/<modality>/r<row>_c<col>.png` + ``manifest.json``), which makes
runs resumable and lets external tools consume individual tiles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, NamedTuple, Optional

import numpy as np
from PIL import Image

from .errors import IncompleteGridError, InvalidArgumentError

PAD_VALUE = 255  # opaque white


class Modality(str, Enum):
    HE = "he"
    IHC = "ihc"


class PatchCoord(NamedTuple):
    row: int
    col: int


@dataclass
class SlideImage:
    """A single-modality slide raster with case identity and physical scale."""

    case_id: str
    modality: Modality
    pixels: np.ndarray  # (height, width, 3) uint8, row-major
    region_id: Optional[str] = None
    microns_per_px: Optional[float] = None

    def __post_init__(self):
        self.modality = Modality(self.modality)
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            raise InvalidArgumentError(f"slide pixels must be uint8, got {px.dtype}")
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidArgumentError(f"slide pixels must be (H, W, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidArgumentError("slide must be at least 1x1")
        if self.microns_per_px is not None and self.microns_per_px <= 0:
            raise InvalidArgumentError("microns_per_px must be positive")
        self.pixels = px

    @property
    def width_px(self) -> int:
        return self.pixels.shape[1]

    @property
    def height_px(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class GridSpec:
    tile_size_px: int
    cols: int
    rows: int

    def __post_init__(self):
        if self.tile_size_px < 1 or self.cols < 1 or self.rows < 1:
            raise InvalidArgumentError("GridSpec fields must be positive")

    def contains(self, coord: PatchCoord) -> bool:
        return 0 <= coord.row < self.rows and 0 <= coord.col < self.cols

    def coords(self):
        for row in range(self.rows):
            for col in range(self.cols):
                yield PatchCoord(row, col)


@dataclass
class Patch:
    coord: PatchCoord
    modality: Modality
    pixels: np.ndarray  # (tile, tile, 3) uint8
    pad_right_px: int = 0
    pad_bottom_px: int = 0


@dataclass
class PatchGrid:
    """Complete tiling of one slide: exactly one patch per grid coordinate."""

    spec: GridSpec
    case_id: str
    modality: Modality
    width_px: int
    height_px: int
    patches: Dict[PatchCoord, Patch] = field(default_factory=dict)
    region_id: Optional[str] = None

    def patch(self, coord: PatchCoord) -> Patch:
        try:
            return self.patches[PatchCoord(*coord)]
        except KeyError:
            raise IncompleteGridError(coord) from None


def compute_grid_spec(width_px: int, height_px: int, tile_size_px: int) -> GridSpec:
    """Ceiling-division grid for a slide; independent of pixel content."""
    if width_px < 1 or height_px < 1 or tile_size_px < 1:
        raise InvalidArgumentError(
            f"dimensions must be >= 1, got {width_px}x{height_px}, tile {tile_size_px}"
        )
    return GridSpec(
        tile_size_px=tile_size_px,
        cols=-(-width_px // tile_size_px),
        rows=-(-height_px // tile_size_px),
    )


def extract_patches(slide: SlideImage, spec: GridSpec) -> PatchGrid:
    """Tile a slide into spec.rows x spec.cols padded patches.

    Every slide pixel lands in exactly one patch at its grid position; edge
    patches are padded to the full tile size with white and the pad extents
    recorded. Interior patches are views into the slide raster, so the grid
    must be treated as immutable.
    """
    expected = compute_grid_spec(slide.width_px, slide.height_px, spec.tile_size_px)
    if expected != spec:
        raise InvalidArgumentError(
            f"grid spec {spec} does not match slide dimensions "
            f"{slide.width_px}x{slide.height_px} (expected {expected})"
        )
    f = spec.tile_size_px
    width, height = slide.width_px, slide.height_px
    patches: Dict[PatchCoord, Patch] = {}
    for coord in spec.coords():
        y0, x0 = coord.row * f, coord.col * f
        y1, x1 = min(y0 + f, height), min(x0 + f, width)
        block = slide.pixels[y0:y1, x0:x1]
        pad_bottom = f - (y1 - y0)
        pad_right = f - (x1 - x0)
        if pad_bottom or pad_right:
            tile = np.full((f, f, 3), PAD_VALUE, dtype=np.uint8)
            tile[: y1 - y0, : x1 - x0] = block
        else:
            tile = block
        patches[coord] = Patch(coord, slide.modality, tile, pad_right, pad_bottom)
    return PatchGrid(
        spec=spec,
        case_id=slide.case_id,
        modality=slide.modality,
        width_px=width,
        height_px=height,
        patches=patches,
        region_id=slide.region_id,
    )


def implode(grid: PatchGrid) -> SlideImage:
    """Reassemble a complete patch grid into the original slide raster.

    Padding is cropped, so implode(extract_patches(s)) == s byte-exactly.
    """
    f = grid.spec.tile_size_px
    canvas = np.empty((grid.height_px, grid.width_px, 3), dtype=np.uint8)
    for coord in grid.spec.coords():
        patch = grid.patch(coord)
        y0, x0 = coord.row * f, coord.col * f
        h = f - patch.pad_bottom_px
        w = f - patch.pad_right_px
        canvas[y0 : y0 + h, x0 : x0 + w] = patch.pixels[:h, :w]
    return SlideImage(
        case_id=grid.case_id,
        modality=grid.modality,
        pixels=canvas,
        region_id=grid.region_id,
    )


# ---------------------------------------------------------------------------
# Spill to / load from a patch directory with manifest
# ---------------------------------------------------------------------------

def patch_filename(coord: PatchCoord) -> str:
    return f"r{coord.row}_c{coord.col}.png"


def save_patch_grid(grid: PatchGrid, out_dir: Path | str) -> Path:
    """Write `<out>/<case_id>/<modality>/r<row>_c<col>.png` plus manifest.json.

    Returns the manifest path. Output is deterministic: re-running over the
    same grid produces identical bytes.
    """
    base = Path(out_dir) / grid.case_id / grid.modality.value
    base.mkdir(parents=True, exist_ok=True)
    entries = []
    for coord in sorted(grid.patches):
        patch = grid.patch(coord)
        name = patch_filename(coord)
        Image.fromarray(patch.pixels).save(base / name, format="PNG")
        entries.append(
            {
                "coord": [coord.row, coord.col],
                "file": name,
                "pad_right_px": patch.pad_right_px,
                "pad_bottom_px": patch.pad_bottom_px,
            }
        )
    manifest = {
        "case_id": grid.case_id,
        "modality": grid.modality.value,
        "width_px": grid.width_px,
        "height_px": grid.height_px,
        "tile_size_px": grid.spec.tile_size_px,
        "rows": grid.spec.rows,
        "cols": grid.spec.cols,
        "patches": entries,
    }
    manifest_path = base / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def load_patch_grid(manifest_path: Path | str) -> PatchGrid:
    manifest_path = Path(manifest_path)
    data = json.loads(manifest_path.read_text())
    spec = GridSpec(data["tile_size_px"], data["cols"], data["rows"])
    modality = Modality(data["modality"])
    patches: Dict[PatchCoord, Patch] = {}
    for entry in data["patches"]:
        coord = PatchCoord(*entry["coord"])
        pixels = np.asarray(Image.open(manifest_path.parent / entry["file"]).convert("RGB"))
        patches[coord] = Patch(
            coord, modality, pixels, entry["pad_right_px"], entry["pad_bottom_px"]
        )
    return PatchGrid(
        spec=spec,
        case_id=data["case_id"],
        modality=modality,
        width_px=data["width_px"],
        height_px=data["height_px"],
        patches=patches,
    )


def read_slide(path: Path | str, case_id: str, modality: Modality | str,
               microns_per_px: Optional[float] = None) -> SlideImage:
    """Load a flat PNG/TIFF raster as a slide. Pyramidal formats are out of scope."""
    path = Path(path)
    if not path.exists():
        raise InvalidArgumentError(f"slide file not found: {path}")
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"))
    return SlideImage(case_id=case_id, modality=Modality(modality), pixels=pixels,
                      microns_per_px=microns_per_px)
