"""Raster and manifest data model.

Images are held as numpy arrays (row-major, ``(H, W)`` or ``(H, W, C)``)
wrapped in small frozen dataclasses that validate on construction and
mark their arrays read-only.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

DEFAULT_CLASS_NAMES = ("other", "weed", "plant")

# Annotation colours: plant blue, weed red, everything else black.
DEFAULT_PALETTE: dict[tuple[int, int, int], int] = {
    (0, 0, 0): 0,
    (255, 0, 0): 1,
    (0, 0, 255): 2,
}

DOMAINS = ("real", "synthetic")
MODALITIES = ("rgb", "thermal", "gen_thermal")
STAGES = ("emergence", "vegetative", "flowering", "unknown")

# Camera geometry of the field rig (width, height in pixels).
RGB_CAMERA_RESOLUTION = (2592, 2048)
THERMAL_CAMERA_RESOLUTION = (640, 512)


class ManifestError(ValueError):
    """Raised for unreadable or invalid manifests."""


class MaskDecodeError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    if a.flags.writeable:
        a = a.copy()
        a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RasterImage:
    """Float image with values in [0, 1]; ``data`` is (H, W) or (H, W, 3)."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim not in (2, 3) or (a.ndim == 3 and a.shape[2] not in (1, 3)):
            raise ValueError(f"raster must be (H, W) or (H, W, 1|3), got {a.shape}")
        if a.ndim == 3 and a.shape[2] == 1:
            a = a[:, :, 0]
        if not np.all(np.isfinite(a)):
            raise ValueError("raster contains non-finite values")
        if a.size and (a.min() < 0.0 or a.max() > 1.0):
            raise ValueError("raster values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    @classmethod
    def from_uint8(cls, a: np.ndarray) -> "RasterImage":
        return cls(np.asarray(a, dtype=np.float64) / 255.0)

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.floor(self.data * 255.0 + 0.5), 0, 255).astype(np.uint8)

    def intensity(self) -> np.ndarray:
        """Single-channel view; colour is reduced with BT.601 luma weights."""
        if self.channels == 1:
            return self.data
        return self.data @ np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class LabelMask:
    labels: np.ndarray
    num_classes: int = len(DEFAULT_CLASS_NAMES)

    def __post_init__(self):
        a = np.asarray(self.labels)
        if a.ndim != 2:
            raise ValueError(f"label mask must be 2-D, got shape {a.shape}")
        if a.size and (a.min() < 0 or a.max() >= self.num_classes):
            raise ValueError(
                f"labels must be in [0, {self.num_classes}), found range "
                f"[{a.min()}, {a.max()}]"
            )
        object.__setattr__(self, "labels", _frozen(a.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class ThermalFrame:
    counts: np.ndarray
    scale: float
    offset: float

    def __post_init__(self):
        a = np.asarray(self.counts)
        if a.ndim != 2:
            raise ValueError(f"thermal counts must be 2-D, got shape {a.shape}")
        if a.size and (a.min() < 0 or a.max() > 65535):
            raise ValueError("thermal counts must fit in uint16")
        if not self.scale > 0:
            raise ValueError(f"thermal scale must be > 0, got {self.scale}")
        object.__setattr__(self, "counts", _frozen(a.astype(np.uint16)))

    @property
    def height(self) -> int:
        return self.counts.shape[0]

    @property
    def width(self) -> int:
        return self.counts.shape[1]


def thermal_to_celsius(frame: ThermalFrame) -> np.ndarray:
    return frame.counts.astype(np.float64) * frame.scale + frame.offset


def decode_mask(
    raster: np.ndarray | RasterImage,
    palette: Mapping[tuple[int, int, int], int] = DEFAULT_PALETTE,
    num_classes: int = len(DEFAULT_CLASS_NAMES),
) -> LabelMask:
    """Map a colour-annotated RGB raster to class ids.

    ``raster`` is either a uint8 ``(H, W, 3)`` array or a RasterImage (scaled
    back to 8-bit). Every colour must appear in ``palette``.
    """
    if isinstance(raster, RasterImage):
        rgb = raster.to_uint8()
    else:
        rgb = np.asarray(raster)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise MaskDecodeError(f"expected an (H, W, 3) raster, got {rgb.shape}")
    rgb = rgb.astype(np.uint32)
    packed = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    out = np.zeros(packed.shape, dtype=np.uint8)
    matched = np.zeros(packed.shape, dtype=bool)
    for (r, g, b), cls in palette.items():
        hit = packed == ((r << 16) | (g << 8) | b)
        out[hit] = cls
        matched |= hit
    if not matched.all():
        y, x = (int(v[0]) for v in np.nonzero(~matched))
        colour = tuple(int(v) for v in rgb[y, x])
        raise MaskDecodeError(f"unmapped colour {colour} at (x={x}, y={y})")
    return LabelMask(out, num_classes)


def encode_mask(
    mask: LabelMask, palette: Mapping[tuple[int, int, int], int] = DEFAULT_PALETTE
) -> np.ndarray:
    """Inverse of :func:`decode_mask`: class ids back to an RGB uint8 raster."""
    inverse = {cls: colour for colour, cls in palette.items()}
    if len(inverse) != len(palette):
        raise ValueError("palette is not invertible (two colours share a class)")
    lut = np.zeros((mask.num_classes, 3), dtype=np.uint8)
    for cls in range(mask.num_classes):
        if cls not in inverse:
            raise ValueError(f"class {cls} has no palette colour")
        lut[cls] = inverse[cls]
    return lut[mask.labels]


# ---------------------------------------------------------------------------
# File I/O


def read_image(path: str | Path) -> RasterImage:
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            raise ValueError(f"{path}: 16-bit image is not an 8-bit raster")
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return RasterImage.from_uint8(np.asarray(im))


def write_image(path: str | Path, image: RasterImage) -> None:
    Image.fromarray(image.to_uint8()).save(path)


def read_mask(
    path: str | Path,
    palette: Mapping[tuple[int, int, int], int] | None = None,
    num_classes: int = len(DEFAULT_CLASS_NAMES),
) -> LabelMask:
    """Read a class-id mask (8-bit single channel) or a palette-coloured RGB mask."""
    with Image.open(path) as im:
        if im.mode in ("L", "P"):
            return LabelMask(np.asarray(im), num_classes)
        rgb = np.asarray(im.convert("RGB"))
    return decode_mask(rgb, palette or DEFAULT_PALETTE, num_classes)


def write_mask(path: str | Path, mask: LabelMask) -> None:
    Image.fromarray(np.asarray(mask.labels, dtype=np.uint8), mode="L").save(path)


def read_thermal_counts(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        a = np.asarray(im)
    if a.ndim != 2:
        raise ValueError(f"{path}: thermal frame must be single-channel")
    return a.astype(np.uint16)


def write_thermal_counts(path: str | Path, counts: np.ndarray) -> None:
    a = np.asarray(counts, dtype=np.uint16)
    Image.fromarray(a.astype("<u2")).save(path)


# ---------------------------------------------------------------------------
# Manifest


_FRACTION = re.compile(r"(T\d{2}:\d{2}:\d{2})\.(\d+)")


def parse_timestamp(value: str) -> datetime:
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    # fromisoformat before 3.11 only takes 3 or 6 fractional digits
    text = _FRACTION.sub(lambda m: f"{m.group(1)}.{m.group(2)[:6].ljust(6, '0')}", text)
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


@dataclass(frozen=True)
class SampleRecord:
    id: str
    domain: str
    modality: str
    image_path: str
    timestamp: str
    stage: str = "unknown"
    mask_path: str | None = None
    thermal_scale: float | None = None
    thermal_offset: float | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ManifestError("record id must be a non-empty string")
        for name, allowed in (
            ("domain", DOMAINS),
            ("modality", MODALITIES),
            ("stage", STAGES),
        ):
            value = getattr(self, name)
            if value not in allowed:
                raise ManifestError(
                    f"record {self.id!r}: invalid {name} {value!r}, expected one of {allowed}"
                )
        try:
            parse_timestamp(self.timestamp)
        except (TypeError, ValueError) as exc:
            raise ManifestError(
                f"record {self.id!r}: bad timestamp {self.timestamp!r}"
            ) from exc
        has_cal = self.thermal_scale is not None or self.thermal_offset is not None
        if has_cal and self.modality != "thermal":
            raise ManifestError(
                f"record {self.id!r}: thermal calibration given for {self.modality} record"
            )
        if self.thermal_scale is not None and not self.thermal_scale > 0:
            raise ManifestError(f"record {self.id!r}: thermal_scale must be > 0")

    @property
    def time(self) -> datetime:
        return parse_timestamp(self.timestamp)

    def calibration(self) -> tuple[float, float]:
        """(scale, offset) for thermal records; missing calibration is an error."""
        if self.thermal_scale is None or self.thermal_offset is None:
            raise ManifestError(f"record {self.id!r}: no thermal calibration")
        return float(self.thermal_scale), float(self.thermal_offset)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ManifestError(f"unknown fields {sorted(unknown)}")
        missing = {"id", "domain", "modality", "image_path", "timestamp"} - set(d)
        if missing:
            raise ManifestError(f"missing fields {sorted(missing)}")
        return cls(**d)


@dataclass(frozen=True)
class Manifest:
    records: tuple[SampleRecord, ...] = ()
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if not self.class_names or self.class_names[0] != "other":
            raise ManifestError("class index 0 must be the background class 'other'")
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise ManifestError(f"duplicate id {rec.id!r}")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def get(self, record_id: str) -> SampleRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)

    def by_modality(self, modality: str) -> list[SampleRecord]:
        return [r for r in self.records if r.modality == modality]

    def resolve(self, path: str | None) -> Path | None:
        """Paths in a manifest are relative to the manifest's directory."""
        if path is None:
            return None
        p = Path(path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p


def load_manifest(
    path: str | Path, class_names: Sequence[str] = DEFAULT_CLASS_NAMES
) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ManifestError("line is not a JSON object")
                rec = SampleRecord.from_dict(obj)
            except (json.JSONDecodeError, ManifestError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            if rec.id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return Manifest(tuple(records), tuple(class_names), root=path.parent)


def dump_manifest(manifest: Manifest, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in manifest.records:
            fh.write(json.dumps(rec.to_dict()) + "\n")
