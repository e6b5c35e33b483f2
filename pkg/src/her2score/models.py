"""Model gateway: tumor classifier, stain-intensity classifier, pixel segmenter.

Each role sits behind one uniform interface with two backends:

* ``builtin`` - deterministic rule-based stand-ins (the real models are
  trained weights and live out of band). The rules are fixtures: documented,
  fixed, and used for tests and demos. They exercise every downstream path.
* ``sidecar`` - an external inference process speaking the her2-sidecar
  newline-delimited JSON protocol (see sidecar module).

Rule definitions
----------------
Tumor (H&E): mean HSV saturation over non-white pixels (min channel <= 230);
Tumor when the mean is >= 0.25, Normal otherwise. An all-white patch has no
non-white pixels and counts as saturation 0.

Stain labels (IHC), per pixel: near-white pixels (min channel > 230) and
pixels without a brown hue ordering (R > G > B) get label 0 (background).
Brown pixels get a brownness score b = (R - B) / 255 and thresholds

    b < 0.05 -> 1 (no-stain)   b < 0.35 -> 2 (faint)
    b < 0.65 -> 3 (weak)       else     -> 4 (strong)

The patch-level stain class is the argmax of the label histogram over
{1..4}, ties broken toward the stronger class; all-zero histograms classify
as no-stain. Classifier probabilities are one-hot with epsilon: the winner
gets 1 - eps*(k-1) over k classes, the rest eps each, so downstream
threshold sweeps (ROC, DCA) always see nonzero probabilities.

Patches are resized to the binding's input size (bilinear) before dispatch;
segmenter label maps come back nearest-neighbor resized to the patch size,
which preserves the {0..4} value domain. Padded patch regions are always
forced to label 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional

import numpy as np
from PIL import Image

from .errors import InvalidArgumentError, ProtocolViolationError
from .tiling import Modality, Patch

WHITE_MIN_CHANNEL = 230
TUMOR_SATURATION_THRESHOLD = 0.25
BROWNNESS_THRESHOLDS = (0.05, 0.35, 0.65)  # no-stain / faint / weak upper bounds
ONE_HOT_EPSILON = 0.01


class ModelRole(str, Enum):
    TUMOR = "tumor"      # classifier C on H&E patches
    STAIN = "stain"      # classifier M on IHC patches
    SEGMENT = "segment"  # pixel segmenter L on IHC patches


class Backend(str, Enum):
    BUILTIN = "builtin"
    SIDECAR = "sidecar"


class TumorLabel(str, Enum):
    TUMOR = "tumor"
    NORMAL = "normal"


class StainLabel(str, Enum):
    NO_STAIN = "no_stain"
    FAINT = "faint"
    WEAK = "weak"
    STRONG = "strong"


# pixel label -> stain class; label 0 is background and has no class
STAIN_BY_LABEL = {
    1: StainLabel.NO_STAIN,
    2: StainLabel.FAINT,
    3: StainLabel.WEAK,
    4: StainLabel.STRONG,
}

TUMOR_LABELS = (TumorLabel.TUMOR, TumorLabel.NORMAL)
STAIN_LABELS = (StainLabel.NO_STAIN, StainLabel.FAINT, StainLabel.WEAK, StainLabel.STRONG)

_PROB_TOL = 1e-9


@dataclass
class TumorPrediction:
    label: TumorLabel
    probabilities: Dict[TumorLabel, float]

    def __post_init__(self):
        _check_probabilities(self.probabilities, TUMOR_LABELS, self.label)


@dataclass
class StainPrediction:
    label: StainLabel
    probabilities: Dict[StainLabel, float]

    def __post_init__(self):
        _check_probabilities(self.probabilities, STAIN_LABELS, self.label)


def _check_probabilities(probs, labels, winner):
    if set(probs) != set(labels):
        raise InvalidArgumentError(f"probabilities must cover {[l.value for l in labels]}")
    if any(p < 0.0 or p > 1.0 for p in probs.values()):
        raise InvalidArgumentError("probabilities must lie in [0, 1]")
    total = sum(probs.values())
    if abs(total - 1.0) > _PROB_TOL:
        raise InvalidArgumentError(f"probabilities sum to {total!r}, not 1")
    if probs[winner] < max(probs.values()):
        raise InvalidArgumentError("label must be the argmax of probabilities")


@dataclass
class LabelMap:
    """Per-pixel stain-category raster, values in {0..4}."""

    width_px: int
    height_px: int
    labels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.uint8)
        if arr.shape != (self.height_px, self.width_px):
            raise InvalidArgumentError(
                f"label raster shape {arr.shape} != {(self.height_px, self.width_px)}"
            )
        if arr.size and arr.max() > 4:
            raise InvalidArgumentError("label values must be in {0..4}")
        self.labels = arr


@dataclass
class ModelBinding:
    role: ModelRole
    backend: Backend = Backend.BUILTIN
    input_size_px: int = 512
    sidecar_command: Optional[str] = None

    def __post_init__(self):
        self.role = ModelRole(self.role)
        self.backend = Backend(self.backend)
        if self.input_size_px <= 0:
            raise InvalidArgumentError("input_size_px must be positive")
        if self.backend is Backend.SIDECAR and not self.sidecar_command:
            raise InvalidArgumentError("sidecar backend requires sidecar_command")


def default_bindings() -> Dict[ModelRole, ModelBinding]:
    """Builtin rules at the published model input sizes (tumor 244, others 512)."""
    return {
        ModelRole.TUMOR: ModelBinding(ModelRole.TUMOR, input_size_px=244),
        ModelRole.STAIN: ModelBinding(ModelRole.STAIN, input_size_px=512),
        ModelRole.SEGMENT: ModelBinding(ModelRole.SEGMENT, input_size_px=512),
    }


# ---------------------------------------------------------------------------
# Rule implementations
# ---------------------------------------------------------------------------

# The brownness bands b = (R - B)/255 vs (0.05, 0.35, 0.65) reduce to exact
# integer cutoffs on the channel difference R - B (both in 0..255):
_BROWN_CUTS = tuple(int(np.ceil(t * 255)) for t in BROWNNESS_THRESHOLDS)  # 13, 90, 166


def rule_label_map(pixels: np.ndarray) -> np.ndarray:
    """Per-pixel stain labels under the documented brownness rule."""
    r, g, b = pixels[..., 0], pixels[..., 1], pixels[..., 2]
    brown = (r > g) & (g > b) & (pixels.min(axis=-1) <= WHITE_MIN_CHANNEL)
    diff = np.subtract(r, b, dtype=np.int16)
    c1, c2, c3 = _BROWN_CUTS
    labels = np.ones(pixels.shape[:2], dtype=np.uint8)
    labels += diff >= c1
    labels += diff >= c2
    labels += diff >= c3
    labels *= brown
    return labels


def mean_saturation(pixels: np.ndarray) -> float:
    """Mean HSV saturation over non-white pixels; 0 when none exist."""
    mx = pixels.max(axis=-1)
    mn = pixels.min(axis=-1)
    non_white = mn <= WHITE_MIN_CHANNEL
    count = int(np.count_nonzero(non_white))
    if count == 0:
        return 0.0
    mx = mx[non_white].astype(np.float64)
    mn = mn[non_white].astype(np.float64)
    sat = np.divide(mx - mn, mx, out=np.zeros_like(mx), where=mx > 0)
    return float(sat.sum() / count)


def one_hot_probabilities(labels, winner, eps: float = ONE_HOT_EPSILON) -> dict:
    return {l: (1.0 - eps * (len(labels) - 1)) if l is winner else eps for l in labels}


def rule_tumor_prediction(pixels: np.ndarray) -> TumorPrediction:
    winner = (
        TumorLabel.TUMOR
        if mean_saturation(pixels) >= TUMOR_SATURATION_THRESHOLD
        else TumorLabel.NORMAL
    )
    return TumorPrediction(winner, one_hot_probabilities(TUMOR_LABELS, winner))


def dominant_label(counts_1_to_4) -> int:
    """Argmax pixel label of a {1..4} histogram, ties broken toward the
    higher label; 0 when all four counts are zero."""
    best_label, best_count = 0, 0
    for label, count in zip((1, 2, 3, 4), counts_1_to_4):
        if count > 0 and count >= best_count:
            best_label, best_count = label, count
    return best_label


def dominant_stain_label(counts_1_to_4) -> StainLabel:
    """Stain class of the dominant label; all-zero histograms are no-stain."""
    return STAIN_BY_LABEL.get(dominant_label(counts_1_to_4), StainLabel.NO_STAIN)


def rule_stain_prediction(pixels: np.ndarray) -> StainPrediction:
    labels = rule_label_map(pixels)
    counts = np.bincount(labels.ravel(), minlength=5)
    winner = dominant_stain_label(counts[1:5])
    return StainPrediction(winner, one_hot_probabilities(STAIN_LABELS, winner))


# ---------------------------------------------------------------------------
# Resizing on dispatch
# ---------------------------------------------------------------------------

def resize_rgb(pixels: np.ndarray, size_px: int) -> np.ndarray:
    if pixels.shape[0] == size_px and pixels.shape[1] == size_px:
        return pixels
    img = Image.fromarray(pixels).resize((size_px, size_px), Image.BILINEAR)
    return np.asarray(img)


def resize_labels(labels: np.ndarray, width_px: int, height_px: int) -> np.ndarray:
    if labels.shape == (height_px, width_px):
        return labels
    img = Image.fromarray(labels, mode="L").resize((width_px, height_px), Image.NEAREST)
    return np.asarray(img)


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------

class ModelGateway:
    """Dispatches patches to the bound backend for each model role.

    Builtin backends are pure functions; sidecar handles serialize requests
    internally, so a single gateway may be shared across threads. Use as a
    context manager (or call close()) when sidecar backends are bound.
    """

    def __init__(self, bindings: Optional[Dict[ModelRole, ModelBinding]] = None):
        self.bindings = dict(default_bindings())
        if bindings:
            for role, binding in bindings.items():
                self.bindings[ModelRole(role)] = binding
        self._handles: dict = {}

    # -- lifecycle ----------------------------------------------------------

    def close(self):
        for handle in self._handles.values():
            handle.shutdown()
        self._handles.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def uses_sidecar(self) -> bool:
        return any(b.backend is Backend.SIDECAR for b in self.bindings.values())

    def _handle(self, binding: ModelBinding):
        from .sidecar import spawn_sidecar  # deferred: most runs never need it

        handle = self._handles.get(binding.role)
        if handle is None:
            handle = spawn_sidecar(binding)
            self._handles[binding.role] = handle
        return handle

    # -- dispatch -----------------------------------------------------------

    def classify_tumor(self, patch: Patch) -> TumorPrediction:
        self._require_modality(patch, Modality.HE)
        binding = self.bindings[ModelRole.TUMOR]
        pixels = resize_rgb(patch.pixels, binding.input_size_px)
        if binding.backend is Backend.BUILTIN:
            return rule_tumor_prediction(pixels)
        probs = self._handle(binding).classify(ModelRole.TUMOR, pixels)
        return _wire_prediction(TumorPrediction, probs, TUMOR_LABELS)

    def classify_stain(self, patch: Patch) -> StainPrediction:
        self._require_modality(patch, Modality.IHC)
        binding = self.bindings[ModelRole.STAIN]
        pixels = resize_rgb(patch.pixels, binding.input_size_px)
        if binding.backend is Backend.BUILTIN:
            return rule_stain_prediction(pixels)
        probs = self._handle(binding).classify(ModelRole.STAIN, pixels)
        return _wire_prediction(StainPrediction, probs, STAIN_LABELS)

    def segment_stain(self, patch: Patch) -> LabelMap:
        self._require_modality(patch, Modality.IHC)
        binding = self.bindings[ModelRole.SEGMENT]
        pixels = resize_rgb(patch.pixels, binding.input_size_px)
        if binding.backend is Backend.BUILTIN:
            labels = rule_label_map(pixels)
        else:
            labels = self._handle(binding).segment(ModelRole.SEGMENT, pixels)
        h, w = patch.pixels.shape[:2]
        labels = np.array(resize_labels(labels, w, h))
        if patch.pad_bottom_px:
            labels[h - patch.pad_bottom_px :, :] = 0
        if patch.pad_right_px:
            labels[:, w - patch.pad_right_px :] = 0
        return LabelMap(width_px=w, height_px=h, labels=labels)

    @staticmethod
    def _require_modality(patch: Patch, modality: Modality):
        if patch.modality is not modality:
            raise InvalidArgumentError(
                f"expected a {modality.value} patch, got {patch.modality.value}"
            )


def _wire_prediction(cls, probs: Dict[str, float], labels):
    """Build a prediction from sidecar probabilities, enforcing the contract.

    The winner is the argmax; ties break toward the later (stronger) label.
    """
    missing = [l.value for l in labels if l.value not in probs]
    if missing:
        raise ProtocolViolationError(f"probabilities missing labels {missing}")
    best = labels[0]
    for label in labels:
        if probs[label.value] >= probs[best.value]:
            best = label
    try:
        return cls(best, {l: float(probs[l.value]) for l in labels})
    except InvalidArgumentError as exc:
        raise ProtocolViolationError(f"sidecar probabilities invalid: {exc}") from exc
