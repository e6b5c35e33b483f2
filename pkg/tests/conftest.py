import numpy as np
import pytest

from her2score.tiling import Modality, Patch, PatchCoord, SlideImage

# Colors chosen so the builtin rules give known verdicts:
# PURPLE saturation = (200-60)/200 = 0.7 >= 0.25           -> tumor
# STRONG_BROWN brownness = (200-10)/255 ~= 0.745 >= 0.65   -> label 4
# FAINT_BROWN brownness = (140-90)/255 ~= 0.196 in [.05,.35) -> label 2
WHITE = (255, 255, 255)
PURPLE = (180, 60, 200)
STRONG_BROWN = (200, 80, 10)
FAINT_BROWN = (140, 110, 90)


def solid(color, size=32) -> np.ndarray:
    return np.full((size, size, 3), color, dtype=np.uint8)


def make_slide(pixels, case_id="case", modality=Modality.HE, **kwargs) -> SlideImage:
    return SlideImage(case_id=case_id, modality=modality, pixels=pixels, **kwargs)


def make_patch(color, size=32, modality=Modality.IHC, coord=(0, 0), **kwargs) -> Patch:
    return Patch(
        coord=PatchCoord(*coord),
        modality=Modality(modality),
        pixels=solid(color, size),
        **kwargs,
    )


def planted_case(rows=4, cols=4, tile=64, painted=((0, 0), (1, 2), (2, 1), (3, 3)),
                 case_id="planted"):
    """Paired slides where `painted` patches are purple on H&E and strong
    brown on IHC; everything else is white. With the builtin rules the
    painted patches are forced to tumor + label-4, so the slide scores 3+
    with coverage len(painted)/(rows*cols)."""
    he = np.full((rows * tile, cols * tile, 3), 255, dtype=np.uint8)
    ihc = np.full((rows * tile, cols * tile, 3), 255, dtype=np.uint8)
    for r, c in painted:
        he[r * tile : (r + 1) * tile, c * tile : (c + 1) * tile] = PURPLE
        ihc[r * tile : (r + 1) * tile, c * tile : (c + 1) * tile] = STRONG_BROWN
    return (
        make_slide(he, case_id=case_id, modality=Modality.HE),
        make_slide(ihc, case_id=case_id, modality=Modality.IHC),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
