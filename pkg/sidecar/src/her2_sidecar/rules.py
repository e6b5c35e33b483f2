"""Deterministic rule model for the reference sidecar.

Independent implementation of the published rule fixtures, kept in exact
agreement with the scoring engine's builtin rules (covered by a golden
cross-implementation test):

* Stain label per pixel: 0 for near-white (min channel > 230) or non-brown
  (hue ordering R > G > B required); otherwise brownness b = (R - B) / 255
  picks the band b < 0.05 -> 1, b < 0.35 -> 2, b < 0.65 -> 3, else 4.
* Stain class per patch: argmax of the {1..4} label histogram, ties toward
  the stronger class, all-zero -> no_stain.
* Tumor per patch: mean HSV saturation over non-white pixels >= 0.25.
* Probabilities are one-hot with epsilon 0.01 (winner 1 - 0.01 * (k - 1)).
"""

from __future__ import annotations

import numpy as np

NEAR_WHITE_MIN = 230
SATURATION_CUT = 0.25
BANDS = (0.05, 0.35, 0.65)
EPSILON = 0.01

STAIN_CLASSES = ("no_stain", "faint", "weak", "strong")
TUMOR_CLASSES = ("tumor", "normal")


def stain_labels(pixels: np.ndarray) -> np.ndarray:
    """Per-pixel labels {0..4} for an (H, W, 3) uint8 raster."""
    r = pixels[:, :, 0]
    g = pixels[:, :, 1]
    b = pixels[:, :, 2]
    brownness = (r.astype(np.float64) - b.astype(np.float64)) / 255.0
    band = np.ones(brownness.shape, dtype=np.uint8)
    for cut in BANDS:
        band = band + (brownness >= cut).astype(np.uint8)
    is_brown = (r > g) & (g > b) & (pixels.min(axis=2) <= NEAR_WHITE_MIN)
    return np.where(is_brown, band, np.uint8(0)).astype(np.uint8)


def one_hot(classes, winner: str) -> dict:
    eps = EPSILON
    top = 1.0 - eps * (len(classes) - 1)
    return {name: (top if name == winner else eps) for name in classes}


def classify_stain(pixels: np.ndarray) -> dict:
    counts = np.bincount(stain_labels(pixels).ravel(), minlength=5)
    winner = "no_stain"
    best = 0
    for index, name in enumerate(STAIN_CLASSES, start=1):
        if counts[index] > 0 and counts[index] >= best:
            winner, best = name, counts[index]
    return one_hot(STAIN_CLASSES, winner)


def classify_tumor(pixels: np.ndarray) -> dict:
    high = pixels.max(axis=2)
    low = pixels.min(axis=2)
    saturation = np.where(
        high == 0,
        0.0,
        (high.astype(np.float64) - low) / np.maximum(high, 1).astype(np.float64),
    )
    mask = low <= NEAR_WHITE_MIN
    n = int(np.count_nonzero(mask))
    mean = float(saturation[mask].sum() / n) if n else 0.0
    winner = "tumor" if mean >= SATURATION_CUT else "normal"
    return one_hot(TUMOR_CLASSES, winner)
