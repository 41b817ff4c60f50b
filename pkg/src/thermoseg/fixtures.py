"""Synthetic end-to-end fixture with known geometry and temperatures.

Layout (5 records):

* ``rgb_0001``   - RGB frame at 2x scene resolution, with a predicted mask.
* ``gen_0001``   - its thermal-style translation (same timestamp).
* ``thermal_a``  - 2x nearest upsample of a scene crop, 0.4 s later.
* ``thermal_b``  - another crop, 1.5 s later.
* ``thermal_c``  - 30 s later, so it has no candidate within the window.

Temperatures are ``20 + 0.04 * v`` for scene intensity ``v`` (0..255), stored
as counts ``29315 + 4 * v`` with scale 0.01 and offset -273.15.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .dataset import write_thermal_counts

SCENE_W, SCENE_H = 96, 80
RGB_FACTOR = 2
THERMAL_UPSAMPLE = 2
CROP_W, CROP_H = 32, 24
THERMAL_SCALE = 0.01
THERMAL_OFFSET = -273.15

# (id, top-left x, y in scene pixels, seconds after the RGB frame)
THERMAL_CROPS = (("thermal_a", 10, 12, 0.4), ("thermal_b", 50, 40, 1.5))
BASE_TIME = "2024-07-01T10:00:{:06.3f}Z"


@dataclass
class DemoTruth:
    scene: np.ndarray  # uint8 (H, W) intensity of the translated scene
    scene_mask: np.ndarray  # class ids at scene resolution
    crops: dict  # thermal id -> (x, y) of its footprint in scene pixels

    def temperature(self) -> np.ndarray:
        return 20.0 + 0.04 * self.scene.astype(np.float64)


def counts_from_intensity(v: np.ndarray) -> np.ndarray:
    return (29315 + 4 * v.astype(np.int64)).astype(np.uint16)


def _scene(seed: int):
    rng = np.random.default_rng(seed)
    field = gaussian_filter(rng.normal(size=(SCENE_H, SCENE_W)), 2.0)
    field = (field - field.min()) / (field.max() - field.min())
    v = 40 + np.floor(field * 80)
    mask = np.zeros((SCENE_H, SCENE_W), dtype=np.uint8)
    yy, xx = np.mgrid[0:SCENE_H, 0:SCENE_W]
    # (cx, cy, radius, class, base intensity)
    blobs = [
        (20, 20, 6, 2, 200), (30, 28, 4, 1, 160), (62, 50, 7, 2, 210),
        (74, 56, 3, 1, 165), (14, 30, 3, 2, 205), (80, 20, 5, 2, 215),
        (45, 65, 4, 1, 170),
    ]
    for cx, cy, r, cls, base in blobs:
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        inside = d2 <= r * r
        mask[inside] = cls
        # gentle radial gradient so the plant temperature is not constant
        v[inside] = base + np.floor(10 * (1 - np.sqrt(d2[inside]) / r))
    return v.astype(np.uint8), mask


def build_demo(out_dir: str | Path, seed: int = 7) -> DemoTruth:
    """Write the demo manifest and images into ``out_dir``; return ground truth."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    v, mask = _scene(seed)

    up = np.ones((RGB_FACTOR, RGB_FACTOR), dtype=np.uint8)
    rgb_mask = np.kron(mask, up)
    rgb_v = np.kron(v, up)
    rgb = np.stack([rgb_v // 2, rgb_v, (rgb_v // 3)], axis=-1).astype(np.uint8)
    Image.fromarray(rgb).save(out / "images" / "rgb_0001.png")
    Image.fromarray(rgb_mask, mode="L").save(out / "masks" / "rgb_0001.png")
    Image.fromarray(v, mode="L").save(out / "images" / "gen_0001.png")

    records = [
        {"id": "rgb_0001", "domain": "real", "modality": "rgb",
         "image_path": "images/rgb_0001.png", "timestamp": BASE_TIME.format(0.0),
         "stage": "vegetative", "mask_path": "masks/rgb_0001.png"},
        {"id": "gen_0001", "domain": "real", "modality": "gen_thermal",
         "image_path": "images/gen_0001.png", "timestamp": BASE_TIME.format(0.0),
         "stage": "vegetative"},
    ]
    crops = {}
    tup = np.ones((THERMAL_UPSAMPLE, THERMAL_UPSAMPLE), dtype=np.uint8)
    for tid, x, y, dt in THERMAL_CROPS:
        patch = np.kron(v[y : y + CROP_H, x : x + CROP_W], tup)
        write_thermal_counts(out / "images" / f"{tid}.png", counts_from_intensity(patch))
        crops[tid] = (x, y)
        records.append(
            {"id": tid, "domain": "real", "modality": "thermal",
             "image_path": f"images/{tid}.png", "timestamp": BASE_TIME.format(dt),
             "stage": "vegetative", "thermal_scale": THERMAL_SCALE,
             "thermal_offset": THERMAL_OFFSET}
        )
    # far outside the time window of every candidate
    lonely = np.kron(v[30 : 30 + CROP_H, 30 : 30 + CROP_W], tup)
    write_thermal_counts(out / "images" / "thermal_c.png", counts_from_intensity(lonely))
    records.append(
        {"id": "thermal_c", "domain": "real", "modality": "thermal",
         "image_path": "images/thermal_c.png", "timestamp": "2024-07-01T10:00:30.000Z",
         "stage": "vegetative", "thermal_scale": THERMAL_SCALE,
         "thermal_offset": THERMAL_OFFSET}
    )
    with (out / "manifest.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return DemoTruth(v, mask, crops)
