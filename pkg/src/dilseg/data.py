"""Raster/label ingestion, normalization, and patch batch extraction.

File formats
------------
RSRF raster: magic ``RSRF``; u32-LE width, height, bands, dtype code
(0 = float32); then band-sequential row-major float32-LE values.

RSLB labels: magic ``RSLB``; u32-LE width, height; then row-major u8 class
indices with 255 marking void (unlabeled) pixels.

PNG: 8-bit grayscale/RGB/RGBA accepted for imagery (alpha dropped, values
scaled to [0, 1]); 8-bit grayscale for labels, again 255 = void.

Scenes smaller than the requested patch size are reflection-padded, one
mirror bounce at most, so a patch size is servable by a scene only while
it does not exceed 3 * extent - 2 on either axis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

__all__ = [
    "RasterScene",
    "PatchBatch",
    "Normalizer",
    "VOID_LABEL",
    "load_scene",
    "load_rsrf",
    "save_rsrf",
    "load_rslb",
    "save_rslb",
    "fit_normalizer",
    "apply_normalizer",
    "max_servable_size",
    "extract_batch",
]

VOID_LABEL = 255

_RSRF_MAGIC = b"RSRF"
_RSLB_MAGIC = b"RSLB"


@dataclass
class RasterScene:
    """One multi-band image with an optional dense label map.

    bands: (B, H, W) float32; labels: (H, W) int32 with 0 at void pixels;
    void_mask: (H, W) bool, true = unlabeled.
    """

    scene_id: str
    bands: np.ndarray
    labels: np.ndarray
    void_mask: np.ndarray

    def __post_init__(self):
        if self.bands.ndim != 3:
            raise DataError(
                f"scene {self.scene_id}: bands must be (B, H, W), got {self.bands.shape}"
            )
        h, w = self.bands.shape[1:]
        if self.labels.shape != (h, w) or self.void_mask.shape != (h, w):
            raise DataError(
                f"scene {self.scene_id}: label/void extents "
                f"{self.labels.shape}/{self.void_mask.shape} do not match bands "
                f"{(h, w)}"
            )

    @property
    def num_bands(self) -> int:
        return self.bands.shape[0]

    @property
    def extents(self) -> tuple[int, int]:
        return self.bands.shape[1], self.bands.shape[2]


@dataclass
class PatchBatch:
    """A batch of same-size square patches cut from training scenes."""

    inputs: np.ndarray  # (N, B, size, size) float32
    labels: np.ndarray  # (N, size, size) int32
    void_mask: np.ndarray  # (N, size, size) bool
    size: int


def save_rsrf(path, bands: np.ndarray) -> None:
    bands = np.asarray(bands, dtype=np.float32)
    if bands.ndim != 3:
        raise DataError(f"bands must be (B, H, W), got shape {bands.shape}")
    b, h, w = bands.shape
    with open(path, "wb") as f:
        f.write(_RSRF_MAGIC)
        f.write(struct.pack("<4I", w, h, b, 0))
        f.write(np.ascontiguousarray(bands, dtype="<f4").tobytes())


def load_rsrf(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _RSRF_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {_RSRF_MAGIC!r}")
    if len(blob) < 20:
        raise DataError(f"{path}: truncated header ({len(blob)} bytes)")
    w, h, b, dtype_code = struct.unpack_from("<4I", blob, 4)
    if dtype_code != 0:
        raise DataError(f"{path}: unsupported dtype code {dtype_code}")
    need = 20 + b * h * w * 4
    if len(blob) != need:
        raise DataError(
            f"{path}: expected {need} bytes for {b}x{h}x{w} float32, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=b * h * w, offset=20)
    return data.reshape(b, h, w).copy()


def save_rslb(path, labels: np.ndarray, void_mask=None) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DataError(f"labels must be (H, W), got shape {labels.shape}")
    raw = labels.astype(np.uint8)
    if void_mask is not None:
        raw = raw.copy()
        raw[np.asarray(void_mask, dtype=bool)] = VOID_LABEL
    h, w = raw.shape
    with open(path, "wb") as f:
        f.write(_RSLB_MAGIC)
        f.write(struct.pack("<2I", w, h))
        f.write(np.ascontiguousarray(raw).tobytes())


def load_rslb(path):
    """Returns (labels int32 with 0 at void, void_mask bool)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _RSLB_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {_RSLB_MAGIC!r}")
    if len(blob) < 12:
        raise DataError(f"{path}: truncated header ({len(blob)} bytes)")
    w, h = struct.unpack_from("<2I", blob, 4)
    need = 12 + h * w
    if len(blob) != need:
        raise DataError(f"{path}: expected {need} bytes for {h}x{w} u8, got {len(blob)}")
    raw = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=12).reshape(h, w)
    void = raw == VOID_LABEL
    labels = raw.astype(np.int32)
    labels[void] = 0
    return labels, void


def _load_png_bands(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise DataError(f"{path}: only 8-bit PNG imagery is supported, got {arr.dtype}")
    if arr.ndim == 2:
        arr = arr[None]
    elif arr.ndim == 3 and arr.shape[2] in (3, 4):
        arr = arr[:, :, :3].transpose(2, 0, 1)  # alpha dropped
    else:
        raise DataError(f"{path}: unsupported PNG layout with shape {arr.shape}")
    return arr.astype(np.float32) / 255.0


def _load_png_labels(path):
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise DataError(
            f"{path}: labels must be 8-bit grayscale PNG, got shape {arr.shape} "
            f"dtype {arr.dtype}"
        )
    void = arr == VOID_LABEL
    labels = arr.astype(np.int32)
    labels[void] = 0
    return labels, void


def load_scene(image_path, label_path=None) -> RasterScene:
    """Read one scene; a missing label file yields an all-void mask."""
    image_path = Path(image_path)
    if image_path.suffix.lower() == ".png":
        bands = _load_png_bands(image_path)
    else:
        bands = load_rsrf(image_path)
    h, w = bands.shape[1:]
    if label_path is None:
        labels = np.zeros((h, w), dtype=np.int32)
        void = np.ones((h, w), dtype=bool)
    else:
        label_path = Path(label_path)
        if label_path.suffix.lower() == ".png":
            labels, void = _load_png_labels(label_path)
        else:
            labels, void = load_rslb(label_path)
        if labels.shape != (h, w):
            raise DataError(
                f"{image_path} is {h}x{w} but {label_path} is "
                f"{labels.shape[0]}x{labels.shape[1]}"
            )
    return RasterScene(image_path.stem, bands, labels, void)


@dataclass
class Normalizer:
    """Per-band shift/scale fitted on training scenes (std floored at 1e-6)."""

    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(
            np.asarray(d["mean"], dtype=np.float64),
            np.asarray(d["std"], dtype=np.float64),
        )


def fit_normalizer(scenes) -> Normalizer:
    """Pooled per-band mean/std over the non-void pixels of all scenes."""
    if not scenes:
        raise DataError("cannot fit a normalizer on zero scenes")
    num_bands = scenes[0].num_bands
    count = 0
    total = np.zeros(num_bands, dtype=np.float64)
    total_sq = np.zeros(num_bands, dtype=np.float64)
    for scene in scenes:
        if scene.num_bands != num_bands:
            raise DataError(
                f"scene {scene.scene_id} has {scene.num_bands} bands, expected "
                f"{num_bands}"
            )
        valid = ~scene.void_mask
        n = int(valid.sum())
        if n == 0:
            continue
        pixels = scene.bands[:, valid].astype(np.float64)
        count += n
        total += pixels.sum(axis=1)
        total_sq += (pixels**2).sum(axis=1)
    if count == 0:
        raise DataError("all pixels are void; cannot fit a normalizer")
    mean = total / count
    var = np.maximum(total_sq / count - mean**2, 0.0)
    std = np.maximum(np.sqrt(var), 1e-6)
    return Normalizer(mean, std)


def apply_normalizer(scene: RasterScene, normalizer: Normalizer) -> RasterScene:
    """New scene whose bands are (x - mean) / std with the fitted statistics."""
    if len(normalizer.mean) != scene.num_bands:
        raise DataError(
            f"normalizer covers {len(normalizer.mean)} bands, scene "
            f"{scene.scene_id} has {scene.num_bands}"
        )
    bands = (
        (scene.bands - normalizer.mean[:, None, None]) / normalizer.std[:, None, None]
    ).astype(np.float32)
    return RasterScene(scene.scene_id, bands, scene.labels, scene.void_mask)


def max_servable_size(scene: RasterScene) -> int:
    """Largest patch size the scene supports after one reflection bounce."""
    h, w = scene.extents
    short = min(h, w)
    if short < 2:
        return short  # nothing to mirror from a single row/column
    return 3 * short - 2


def _padded_views(scene: RasterScene, size: int):
    h, w = scene.extents
    pad_h = max(0, size - h)
    pad_w = max(0, size - w)
    if pad_h == 0 and pad_w == 0:
        return scene.bands, scene.labels, scene.void_mask
    top, left = pad_h // 2, pad_w // 2
    widths = ((top, pad_h - top), (left, pad_w - left))
    bands = np.pad(scene.bands, ((0, 0),) + widths, mode="reflect")
    labels = np.pad(scene.labels, widths, mode="reflect")
    void = np.pad(scene.void_mask, widths, mode="reflect")
    return bands, labels, void


def extract_batch(
    scenes, size: int, batch_size: int, rng: np.random.Generator,
    class_balance: bool = False,
) -> PatchBatch:
    """Cut batch_size random size x size patches from the scenes.

    Each patch picks a scene uniformly (among scenes that can serve the
    size), then a top-left corner uniformly over all positions where the
    window fits; windows are copied verbatim, never resampled. With
    class_balance, a target class is drawn uniformly among the scene's
    present classes first and the corner is drawn among windows containing
    at least one pixel of it.
    """
    if size < 1:
        raise DataError(f"patch size must be >= 1, got {size}")
    if batch_size < 1:
        raise DataError(f"batch size must be >= 1, got {batch_size}")
    usable = [s for s in scenes if max_servable_size(s) >= size]
    if not usable:
        raise DataError(
            f"no scene can serve patch size {size} even after reflection padding"
        )
    num_bands = usable[0].num_bands
    inputs = np.empty((batch_size, num_bands, size, size), dtype=np.float32)
    labels = np.empty((batch_size, size, size), dtype=np.int32)
    void = np.empty((batch_size, size, size), dtype=bool)
    padded = {}
    for k in range(batch_size):
        pick = int(rng.integers(len(usable)))
        scene = usable[pick]
        if pick not in padded:
            padded[pick] = _padded_views(scene, size)
        bands_p, labels_p, void_p = padded[pick]
        h, w = labels_p.shape
        if class_balance:
            i, j = _balanced_corner(labels_p, void_p, size, rng)
        else:
            i = int(rng.integers(h - size + 1))
            j = int(rng.integers(w - size + 1))
        inputs[k] = bands_p[:, i : i + size, j : j + size]
        labels[k] = labels_p[i : i + size, j : j + size]
        void[k] = void_p[i : i + size, j : j + size]
    return PatchBatch(inputs, labels, void, size)


def _balanced_corner(labels_p, void_p, size, rng):
    # Pick a class uniformly among those present, then anchor the window on
    # one of its pixels: corner uniform over positions covering that pixel.
    h, w = labels_p.shape
    valid = ~void_p
    present = np.unique(labels_p[valid]) if valid.any() else np.array([], dtype=int)
    if present.size == 0:
        return (
            int(rng.integers(h - size + 1)),
            int(rng.integers(w - size + 1)),
        )
    target = int(present[int(rng.integers(present.size))])
    ys, xs = np.nonzero((labels_p == target) & valid)
    pick = int(rng.integers(ys.size))
    py, px = int(ys[pick]), int(xs[pick])
    i_lo, i_hi = max(0, py - size + 1), min(py, h - size)
    j_lo, j_hi = max(0, px - size + 1), min(px, w - size)
    return (
        int(rng.integers(i_lo, i_hi + 1)),
        int(rng.integers(j_lo, j_hi + 1)),
    )
