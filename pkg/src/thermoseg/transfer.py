"""Project RGB-space masks into thermal frames and summarise per-class temperatures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import LabelMask
from .matching import Box
from .resample import resize_nearest


def transfer_mask(rgb_mask: LabelMask, box: Box, thermal_dims: tuple[int, int]) -> LabelMask:
    """Crop ``rgb_mask`` to ``box`` and nearest-resample it to ``thermal_dims`` (width, height)."""
    tw, th = thermal_dims
    if tw < 1 or th < 1:
        raise ValueError(f"thermal dims must be positive, got {thermal_dims}")
    if box.w < 1 or box.h < 1:
        raise ValueError(f"empty box {box}")
    if box.x < 0 or box.y < 0 or box.x + box.w > rgb_mask.width or box.y + box.h > rgb_mask.height:
        raise ValueError(f"box {box} outside mask of size {rgb_mask.width}x{rgb_mask.height}")
    crop = rgb_mask.labels[box.y : box.y + box.h, box.x : box.x + box.w]
    return LabelMask(resize_nearest(crop, th, tw), rgb_mask.num_classes)


@dataclass(frozen=True)
class ClassStats:
    class_id: int
    pixel_count: int
    mean: float | None = None
    median: float | None = None
    std: float | None = None
    min: float | None = None
    max: float | None = None

    @property
    def absent(self) -> bool:
        return self.pixel_count == 0


def extract_class_stats(temps: np.ndarray, mask: LabelMask | np.ndarray, c: int) -> ClassStats:
    """Temperature statistics over the pixels labelled ``c`` (population std)."""
    temps = np.asarray(temps, dtype=np.float64)
    labels = mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)
    if temps.shape != labels.shape:
        raise ValueError(f"shape mismatch: temps {temps.shape} vs mask {labels.shape}")
    vals = temps[labels == c]
    if vals.size == 0:
        return ClassStats(c, 0)
    return ClassStats(
        c,
        int(vals.size),
        float(vals.mean()),
        float(np.median(vals)),
        float(vals.std()),
        float(vals.min()),
        float(vals.max()),
    )
