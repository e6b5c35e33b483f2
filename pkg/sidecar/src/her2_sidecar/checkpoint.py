"""Thin adapter serving trained checkpoints behind the wire protocol.

Loads a TorchScript module per role from a checkpoint path. Inputs are fed
as float32 NCHW scaled to [0, 1]; classifier outputs go through softmax and
segmenter outputs through channel argmax. torch is imported lazily so the
rule model works without it installed.
"""

from __future__ import annotations

import numpy as np

TUMOR_CLASSES = ("tumor", "normal")
STAIN_CLASSES = ("no_stain", "faint", "weak", "strong")


class CheckpointModel:
    def __init__(self, path: str):
        try:
            import torch
        except ImportError as exc:
            raise RuntimeError(
                "checkpoint serving needs torch installed (pip install torch)"
            ) from exc
        self._torch = torch
        self._module = torch.jit.load(path, map_location="cpu")
        self._module.eval()

    def _forward(self, pixels: np.ndarray):
        torch = self._torch
        tensor = torch.from_numpy(np.ascontiguousarray(pixels)).permute(2, 0, 1)
        tensor = tensor.unsqueeze(0).float().div(255.0)
        with torch.no_grad():
            return self._module(tensor)

    def _probabilities(self, pixels: np.ndarray, classes) -> dict:
        torch = self._torch
        logits = self._forward(pixels).reshape(-1)
        if logits.numel() != len(classes):
            raise RuntimeError(
                f"checkpoint emits {logits.numel()} logits, expected {len(classes)}"
            )
        probs = torch.softmax(logits, dim=0).tolist()
        return dict(zip(classes, probs))

    def classify_tumor(self, pixels: np.ndarray) -> dict:
        return self._probabilities(pixels, TUMOR_CLASSES)

    def classify_stain(self, pixels: np.ndarray) -> dict:
        return self._probabilities(pixels, STAIN_CLASSES)

    def segment(self, pixels: np.ndarray) -> np.ndarray:
        out = self._forward(pixels)
        if out.dim() != 4 or out.shape[1] > 5:
            raise RuntimeError(
                f"segmenter checkpoint must emit (1, <=5, H, W), got {tuple(out.shape)}"
            )
        labels = out.argmax(dim=1).squeeze(0).to(self._torch.uint8)
        arr = labels.cpu().numpy()
        if arr.shape != pixels.shape[:2]:
            raise RuntimeError(
                f"segmenter output {arr.shape} does not match input {pixels.shape[:2]}"
            )
        return arr
