"""Synthetic two-texture scenes with a tunable separability scale.

Each scene is a checkerboard of cells; cells alternate between two stripe
textures that are exact 90-degree rotations of each other (class 0 stripes
run vertically, class 1 horizontally), drawn with a random phase per cell
and buried in per-pixel Gaussian noise. Away from a stripe edge both
textures look identical (a flat noisy region), so a window only resolves
the class once it spans a stripe boundary: stripes are period // 2 pixels
wide, which makes period // 2 the smallest patch size at which every
interior pixel can see an edge. That knob is what lets desk-scale runs
reproduce the small-patch-insufficient regime.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import RasterScene, save_rslb, save_rsrf

__all__ = ["SynthConfig", "generate_scene", "write_dataset", "min_separable_patch"]


@dataclass(frozen=True)
class SynthConfig:
    num_scenes: int = 8
    size: int = 192
    cell: int = 64
    period: int = 36
    noise: float = 0.25
    bands: int = 3
    void_frac: float = 0.0

    def __post_init__(self):
        if self.num_scenes < 1:
            raise ValueError(f"need at least one scene, got {self.num_scenes}")
        if self.size < self.cell or self.cell < 2:
            raise ValueError(
                f"scene size {self.size} must be >= cell {self.cell} >= 2"
            )
        if self.period < 4 or self.period % 2:
            raise ValueError(f"stripe period must be an even integer >= 4, got {self.period}")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        if self.bands < 1:
            raise ValueError(f"need at least one band, got {self.bands}")
        if not 0.0 <= self.void_frac < 1.0:
            raise ValueError(f"void fraction must lie in [0, 1), got {self.void_frac}")


def min_separable_patch(config: SynthConfig) -> int:
    """Smallest window at which every interior pixel can see a stripe edge."""
    return config.period // 2


def generate_scene(config: SynthConfig, rng: np.random.Generator, scene_id: str) -> RasterScene:
    size, cell, period = config.size, config.cell, config.period
    half = period // 2
    pattern = np.zeros((size, size), dtype=np.float32)
    labels = np.zeros((size, size), dtype=np.int32)
    rows = np.arange(size)
    cols = np.arange(size)
    for cy in range(0, size, cell):
        for cx in range(0, size, cell):
            ys = slice(cy, min(cy + cell, size))
            xs = slice(cx, min(cx + cell, size))
            cls = ((cy // cell) + (cx // cell)) % 2
            phase = int(rng.integers(period))
            if cls == 0:  # vertical stripes: intensity varies along columns
                wave = ((cols[xs] + phase) // half) % 2
                block = np.broadcast_to(wave[None, :], (ys.stop - ys.start, xs.stop - xs.start))
            else:  # horizontal stripes: intensity varies along rows
                wave = ((rows[ys] + phase) // half) % 2
                block = np.broadcast_to(wave[:, None], (ys.stop - ys.start, xs.stop - xs.start))
            pattern[ys, xs] = 0.25 + 0.5 * block
            labels[ys, xs] = cls
    bands = np.empty((config.bands, size, size), dtype=np.float32)
    for b in range(config.bands):
        noisy = pattern + rng.normal(0.0, config.noise, size=(size, size))
        bands[b] = np.clip(noisy, 0.0, 1.0)
    if config.void_frac > 0:
        void = rng.random((size, size)) < config.void_frac
    else:
        void = np.zeros((size, size), dtype=bool)
    labels = labels.copy()
    labels[void] = 0
    return RasterScene(scene_id, bands, labels, void)


def write_dataset(out_dir, config: SynthConfig, seed: int) -> dict:
    """Generate the scenes, write RSRF/RSLB pairs, and return the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for k in range(config.num_scenes):
        scene = generate_scene(config, rng, f"scene{k:03d}")
        image = f"{scene.scene_id}.rsrf"
        labels = f"{scene.scene_id}.rslb"
        save_rsrf(out_dir / image, scene.bands)
        save_rslb(out_dir / labels, scene.labels, scene.void_mask)
        entries.append({"id": scene.scene_id, "image": image, "labels": labels})
    manifest = {
        "seed": seed,
        "config": asdict(config),
        "classes": 2,
        "min_separable_patch": min_separable_patch(config),
        "separability": (
            "stripe textures differ only in orientation; a window resolves the "
            f"class once it spans a stripe edge, i.e. at patch sizes >= "
            f"{min_separable_patch(config)} (period // 2)"
        ),
        "scenes": entries,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
