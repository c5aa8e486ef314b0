"""Whole-scene dense prediction: tiling, probability stitching, rendering.

A scene is covered by a grid of square tiles (stride = size * (1 - overlap),
floored, minimum 1; the last tile is pulled flush with the border so every
pixel is covered). Per-class softmax probabilities accumulate into a running
sum and are divided by the per-pixel coverage count, so overlapping tiles
average order-independently; the class map is the per-pixel argmax of the
averaged probabilities. Scenes smaller than the tile are reflection-padded
and the outputs cropped back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models
from .data import VOID_LABEL
from .errors import DataError

__all__ = [
    "PredictionResult",
    "predict_scene",
    "render_map",
    "decode_map",
    "palette_for",
    "PALETTE_COFFEE",
    "PALETTE_URBAN",
]

# Two-class crop maps: background black, target white.
PALETTE_COFFEE = ((0, 0, 0), (255, 255, 255))

# Six-class urban legend: impervious white, building blue, low vegetation
# cyan, tree green, car yellow, clutter red.
PALETTE_URBAN = (
    (255, 255, 255),
    (0, 0, 255),
    (0, 255, 255),
    (0, 255, 0),
    (255, 255, 0),
    (255, 0, 0),
)


@dataclass
class PredictionResult:
    classes: np.ndarray  # (H, W) int32
    confidence: np.ndarray  # (H, W) float32, mean probability of the winner
    probabilities: np.ndarray | None = None  # (C, H, W) float32 when requested


def _tile_starts(extent: int, size: int, stride: int) -> list[int]:
    starts = list(range(0, extent - size + 1, stride))
    if not starts or starts[-1] != extent - size:
        starts.append(extent - size)
    return starts


def predict_scene(
    spec,
    params,
    bands: np.ndarray,
    size: int,
    overlap: float = 0.0,
    keep_probabilities: bool = False,
) -> PredictionResult:
    """Dense class map for one (B, H, W) scene at the given patch size."""
    if size < 1:
        raise DataError(f"patch size must be >= 1, got {size}")
    if not 0.0 <= overlap <= 0.9:
        raise DataError(f"overlap must lie in [0, 0.9], got {overlap}")
    if bands.ndim != 3:
        raise DataError(f"bands must be (B, H, W), got shape {bands.shape}")
    h, w = bands.shape[1:]
    short = min(h, w)
    if short < 2 and size > short:
        raise DataError(f"scene of extents {h}x{w} cannot be padded to {size}")
    if size > 3 * short - 2:
        raise DataError(
            f"patch size {size} exceeds what reflection padding supports for "
            f"a {h}x{w} scene"
        )
    pad_h = max(0, size - h)
    pad_w = max(0, size - w)
    top, left = pad_h // 2, pad_w // 2
    padded = np.pad(
        bands, ((0, 0), (top, pad_h - top), (left, pad_w - left)), mode="reflect"
    )
    hp, wp = padded.shape[1:]

    stride = max(1, int(size * (1.0 - overlap)))
    prob_sum = np.zeros((spec.num_classes, hp, wp), dtype=np.float64)
    coverage = np.zeros((hp, wp), dtype=np.float64)
    for i in _tile_starts(hp, size, stride):
        for j in _tile_starts(wp, size, stride):
            tile = padded[None, :, i : i + size, j : j + size]
            logits = models.forward(spec, params, tile)[0]
            shifted = logits - logits.max(axis=0, keepdims=True)
            exp = np.exp(shifted)
            prob_sum[:, i : i + size, j : j + size] += exp / exp.sum(
                axis=0, keepdims=True
            )
            coverage[i : i + size, j : j + size] += 1.0

    averaged = prob_sum / coverage
    averaged = averaged[:, top : top + h, left : left + w]
    classes = averaged.argmax(axis=0).astype(np.int32)
    confidence = np.take_along_axis(averaged, classes[None], axis=0)[0].astype(
        np.float32
    )
    return PredictionResult(
        classes,
        confidence,
        averaged.astype(np.float32) if keep_probabilities else None,
    )


def palette_for(num_classes: int):
    """Deterministic class -> color table covering any class count."""
    if num_classes == 2:
        return PALETTE_COFFEE
    if num_classes <= len(PALETTE_URBAN):
        return PALETTE_URBAN[:num_classes]
    extra = []
    for c in range(num_classes - len(PALETTE_URBAN)):
        # Spread hues deterministically; avoids palette collisions up to 255.
        extra.append((37 * (c + 1) % 256, 83 * (c + 2) % 256, 173 * (c + 3) % 256))
    return PALETTE_URBAN + tuple(extra)


def render_map(classes: np.ndarray, palette, void_mask=None) -> np.ndarray:
    """Color rendering (H, W, 3) uint8; void pixels come out black."""
    classes = np.asarray(classes)
    table = np.array(palette, dtype=np.uint8)
    if classes.size and classes.max() >= len(table):
        raise ValueError(
            f"class map holds id {classes.max()} but the palette covers "
            f"{len(table)} classes"
        )
    image = table[classes]
    if void_mask is not None:
        image[np.asarray(void_mask, dtype=bool)] = 0
    return image


def decode_map(image: np.ndarray, palette):
    """Invert render_map; black pixels decode to void (label 255)."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    classes = np.full((h, w), VOID_LABEL, dtype=np.int32)
    matched = np.zeros((h, w), dtype=bool)
    for c, color in enumerate(palette):
        hit = np.all(image == np.array(color, dtype=np.uint8), axis=-1)
        classes[hit] = c
        matched |= hit
    black = np.all(image == 0, axis=-1)
    unknown = ~matched & ~black
    if unknown.any():
        ys, xs = np.nonzero(unknown)
        raise ValueError(
            f"pixel ({ys[0]}, {xs[0]}) has color {image[ys[0], xs[0]].tolist()} "
            "not present in the palette"
        )
    void_mask = classes == VOID_LABEL
    classes[void_mask] = 0
    return classes, void_mask
