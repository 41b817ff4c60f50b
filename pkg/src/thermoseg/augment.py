"""Paired image/mask augmentation.

Geometric transforms move image and mask together (bilinear for the image,
nearest for the mask); photometric transforms touch only the image. Each
call returns a parameter trace from which the mask geometry can be replayed
exactly with :func:`replay_mask`.

Geometric ops are expressed as inverse maps from output pixel ``(x, y)`` to
source coordinates; the affine and projective ops store their inverse
coefficients in the trace so a replay evaluates the very same floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import cv2
import numpy as np

from .dataset import LabelMask, RasterImage
from .resample import sample_bilinear, sample_nearest
from .rng import make_rng

GEOMETRIC = {"horizontal_flip", "shift_scale_rotate", "pad_if_needed", "random_crop", "perspective"}


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class Transform:
    name: str
    p: float = 1.0
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OneOf:
    members: tuple[Transform, ...]
    p: float = 1.0
    name: str = "one_of"


@dataclass(frozen=True)
class AugmentationSpec:
    transforms: tuple[Transform | OneOf, ...]
    target_size: tuple[int, int]  # (height, width)

    def __post_init__(self):
        for t in self.transforms:
            if not 0.0 <= t.p <= 1.0:
                raise ValueError(f"{t.name}: probability {t.p} outside [0, 1]")
            if isinstance(t, OneOf) and not t.members:
                raise ValueError("one_of group needs at least one member")

    def with_probabilities(self, p: float) -> "AugmentationSpec":
        """Copy with every top-level probability set to ``p`` (crop/pad unaffected)."""
        ts = tuple(
            t if t.name in ("pad_if_needed", "random_crop") else replace(t, p=p)
            for t in self.transforms
        )
        return replace(self, transforms=ts)


def training_spec(target_size: tuple[int, int] = (512, 512)) -> AugmentationSpec:
    """The training-time augmentation list (albumentations-equivalent parameters)."""
    h, w = target_size
    brightness_contrast = Transform(
        "brightness_contrast", 1.0, {"brightness_limit": 0.2, "contrast_limit": 0.2}
    )
    return AugmentationSpec(
        (
            Transform("horizontal_flip", 0.5),
            Transform(
                "shift_scale_rotate",
                1.0,
                {"scale_limit": 0.5, "shift_limit": 0.1, "rotate_limit": 0.0},
            ),
            Transform("pad_if_needed", 1.0, {"min_height": h, "min_width": w}),
            Transform("random_crop", 1.0, {"height": h, "width": w}),
            Transform("gauss_noise", 0.2, {"var_limit": (10.0, 50.0)}),
            Transform("perspective", 0.5, {"scale": (0.05, 0.1)}),
            OneOf(
                (
                    Transform("clahe", 1.0, {"clip_limit": 4.0, "tile_grid_size": 8}),
                    brightness_contrast,
                    Transform("gamma", 1.0, {"gamma_limit": (80.0, 120.0)}),
                ),
                0.9,
            ),
            OneOf(
                (
                    Transform("sharpen", 1.0, {"alpha": (0.2, 0.5), "lightness": (0.5, 1.0)}),
                    Transform("blur", 1.0, {"blur_limit": 3}),
                    Transform("motion_blur", 1.0, {"blur_limit": 3}),
                ),
                0.9,
            ),
            OneOf(
                (
                    brightness_contrast,
                    Transform(
                        "hue_saturation",
                        1.0,
                        {"hue_shift_limit": 20.0, "sat_shift_limit": 30.0, "val_shift_limit": 20.0},
                    ),
                ),
                0.9,
            ),
        ),
        (h, w),
    )


# ---------------------------------------------------------------------------
# parameter sampling


def _sample(rng: np.random.Generator, t: Transform, shape: tuple[int, int]) -> dict:
    h, w = shape
    q = t.params
    name = t.name
    if name == "horizontal_flip":
        return {}
    if name == "shift_scale_rotate":
        scale = 1.0 + rng.uniform(-q["scale_limit"], q["scale_limit"])
        angle = rng.uniform(-q["rotate_limit"], q["rotate_limit"])
        dx = rng.uniform(-q["shift_limit"], q["shift_limit"])
        dy = rng.uniform(-q["shift_limit"], q["shift_limit"])
        return {"scale": scale, "angle": angle, "dx": dx, "dy": dy,
                "inverse": _ssr_inverse(scale, angle, dx * w, dy * h, w, h)}
    if name == "pad_if_needed":
        ph = max(0, q["min_height"] - h)
        pw = max(0, q["min_width"] - w)
        return {"top": ph // 2, "bottom": ph - ph // 2, "left": pw // 2, "right": pw - pw // 2}
    if name == "random_crop":
        ch, cw = q["height"], q["width"]
        if ch > h or cw > w:
            raise AugmentError(f"crop {cw}x{ch} larger than input {w}x{h}")
        return {"y0": int(rng.integers(0, h - ch + 1)), "x0": int(rng.integers(0, w - cw + 1)),
                "height": ch, "width": cw}
    if name == "perspective":
        sigma = rng.uniform(*q["scale"])
        jitter = np.abs(rng.normal(0.0, sigma, size=(4, 2)))
        return {"sigma": sigma, "inverse": _perspective_inverse(jitter, w, h)}
    if name == "gauss_noise":
        var = rng.uniform(*q["var_limit"])
        return {"std": math.sqrt(var) / 255.0, "noise_seed": int(rng.integers(0, 2**63))}
    if name == "clahe":
        return {"clip_limit": q["clip_limit"], "tile_grid_size": q["tile_grid_size"]}
    if name == "brightness_contrast":
        return {"alpha": 1.0 + rng.uniform(-q["contrast_limit"], q["contrast_limit"]),
                "beta": rng.uniform(-q["brightness_limit"], q["brightness_limit"])}
    if name == "gamma":
        lo, hi = q["gamma_limit"]
        return {"gamma": rng.uniform(lo, hi) / 100.0}
    if name == "sharpen":
        return {"alpha": rng.uniform(*q["alpha"]), "lightness": rng.uniform(*q["lightness"])}
    if name == "blur":
        return {"ksize": q["blur_limit"]}
    if name == "motion_blur":
        return {"ksize": q["blur_limit"], "direction": int(rng.integers(0, 4))}
    if name == "hue_saturation":
        return {"hue": rng.uniform(-q["hue_shift_limit"], q["hue_shift_limit"]),
                "sat": rng.uniform(-q["sat_shift_limit"], q["sat_shift_limit"]),
                "val": rng.uniform(-q["val_shift_limit"], q["val_shift_limit"])}
    raise AugmentError(f"unknown transform {name!r}")


def _ssr_inverse(scale, angle_deg, tx, ty, w, h) -> list[float]:
    """Inverse of a scale/rotate about the image centre followed by a shift."""
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    a = math.radians(angle_deg)
    c, s = math.cos(a) / scale, math.sin(a) / scale
    # u = c*(x - cx - tx) + s*(y - cy - ty) + cx ; v = -s*(x - cx - tx) + c*(y - cy - ty) + cy
    ox, oy = cx + tx, cy + ty
    return [c, s, cx - c * ox - s * oy, -s, c, cy + s * ox - c * oy]


def _perspective_inverse(jitter: np.ndarray, w: int, h: int) -> list[float]:
    """Homography taking output corners to inward-jittered source corners."""
    W, H = w - 1, h - 1
    dst = [(0, 0), (W, 0), (W, H), (0, H)]
    jx, jy = jitter[:, 0] * W, jitter[:, 1] * H
    src = [(jx[0], jy[0]), (W - jx[1], jy[1]), (W - jx[2], H - jy[2]), (jx[3], H - jy[3])]
    A, b = [], []
    for (x, y), (u, v) in zip(dst, src):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b += [u, v]
    coef = np.linalg.solve(np.array(A, dtype=np.float64), np.array(b, dtype=np.float64))
    return [float(c) for c in coef] + [1.0]


# ---------------------------------------------------------------------------
# geometric application


def _grid(h, w):
    y, x = np.mgrid[0:h, 0:w]
    return x.astype(np.float64), y.astype(np.float64)


def _reflect101(i: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.mod(i, period)
    return np.where(i >= n, period - i, i)


def _geometric(img: np.ndarray, labels: np.ndarray, name: str, prm: dict):
    h, w = labels.shape
    if name == "horizontal_flip":
        return img[:, ::-1], labels[:, ::-1]
    if name == "pad_if_needed":
        t, b, l, r = prm["top"], prm["bottom"], prm["left"], prm["right"]
        rows = _reflect101(np.arange(-t, h + b), h)
        cols = _reflect101(np.arange(-l, w + r), w)
        return img[rows[:, None], cols[None, :]], labels[rows[:, None], cols[None, :]]
    if name == "random_crop":
        y0, x0, ch, cw = prm["y0"], prm["x0"], prm["height"], prm["width"]
        return img[y0 : y0 + ch, x0 : x0 + cw], labels[y0 : y0 + ch, x0 : x0 + cw]
    x, y = _grid(h, w)
    if name == "shift_scale_rotate":
        a, b, c, d, e, f = prm["inverse"]
        u = a * x + b * y + c
        v = d * x + e * y + f
    elif name == "perspective":
        h00, h01, h02, h10, h11, h12, h20, h21, h22 = prm["inverse"]
        den = h20 * x + h21 * y + h22
        u = (h00 * x + h01 * y + h02) / den
        v = (h10 * x + h11 * y + h12) / den
    else:
        raise AugmentError(f"{name!r} is not geometric")
    return sample_bilinear(img, u, v, 0.0), sample_nearest(labels, u, v, 0)


# ---------------------------------------------------------------------------
# photometric application (image only, float in [0, 1])


def _per_channel(img, fn):
    if img.ndim == 2:
        return fn(img)
    return np.stack([fn(img[..., k]) for k in range(img.shape[2])], axis=-1)


def _photometric(img: np.ndarray, name: str, prm: dict) -> np.ndarray:
    if name == "gauss_noise":
        noise = np.random.default_rng(prm["noise_seed"]).normal(0.0, prm["std"], img.shape)
        out = img + noise
    elif name == "clahe":
        clahe = cv2.createCLAHE(
            clipLimit=prm["clip_limit"], tileGridSize=(prm["tile_grid_size"],) * 2
        )
        u8 = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
        if img.ndim == 2:
            out = clahe.apply(u8) / 255.0
        else:
            lab = cv2.cvtColor(u8, cv2.COLOR_RGB2LAB)
            lab[..., 0] = clahe.apply(lab[..., 0])
            out = cv2.cvtColor(lab, cv2.COLOR_LAB2RGB) / 255.0
    elif name == "brightness_contrast":
        out = img * prm["alpha"] + prm["beta"]
    elif name == "gamma":
        out = np.power(img, prm["gamma"])
    elif name == "sharpen":
        a, lt = prm["alpha"], prm["lightness"]
        ident = np.zeros((3, 3))
        ident[1, 1] = 1.0
        edge = -np.ones((3, 3))
        edge[1, 1] = 8.0 + lt
        k = (1.0 - a) * ident + a * edge
        out = _per_channel(img, lambda c: cv2.filter2D(c, cv2.CV_64F, k))
    elif name == "blur":
        ks = prm["ksize"]
        out = _per_channel(img, lambda c: cv2.blur(c, (ks, ks)))
    elif name == "motion_blur":
        ks = prm["ksize"]
        k = np.zeros((ks, ks))
        mid = ks // 2
        d = prm["direction"]
        if d == 0:
            k[mid, :] = 1.0
        elif d == 1:
            k[:, mid] = 1.0
        elif d == 2:
            np.fill_diagonal(k, 1.0)
        else:
            np.fill_diagonal(np.fliplr(k), 1.0)
        k /= k.sum()
        out = _per_channel(img, lambda c: cv2.filter2D(c, cv2.CV_64F, k))
    elif name == "hue_saturation":
        if img.ndim == 2:
            out = img + prm["val"] / 255.0
        else:
            hsv = cv2.cvtColor(img.astype(np.float32), cv2.COLOR_RGB2HSV).astype(np.float64)
            hsv[..., 0] = np.mod(hsv[..., 0] + 2.0 * prm["hue"], 360.0)
            hsv[..., 1] = np.clip(hsv[..., 1] + prm["sat"] / 255.0, 0.0, 1.0)
            hsv[..., 2] = np.clip(hsv[..., 2] + prm["val"] / 255.0, 0.0, 1.0)
            out = cv2.cvtColor(hsv.astype(np.float32), cv2.COLOR_HSV2RGB).astype(np.float64)
    else:
        raise AugmentError(f"unknown transform {name!r}")
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------


def augment_with_trace(
    image: RasterImage,
    mask: LabelMask,
    spec: AugmentationSpec,
    seed: int,
    key: str | None = None,
) -> tuple[RasterImage, LabelMask, list[dict]]:
    """Run ``spec`` once; ``key`` (e.g. a sample id) selects an independent stream."""
    if (image.height, image.width) != mask.shape:
        raise AugmentError(
            f"image {image.width}x{image.height} and mask {mask.width}x{mask.height} differ"
        )
    rng = make_rng(seed, key)
    img = np.array(image.data, dtype=np.float64)
    labels = np.array(mask.labels)
    trace = []
    for t in spec.transforms:
        fire = rng.random() < t.p
        entry = {"op": t.name, "applied": bool(fire)}
        if fire and isinstance(t, OneOf):
            member = t.members[int(rng.integers(0, len(t.members)))]
            entry["choice"] = member.name
            t = member
        if fire:
            prm = _sample(rng, t, labels.shape)
            entry["params"] = prm
            if t.name in GEOMETRIC:
                img, labels = _geometric(img, labels, t.name, prm)
            else:
                img = _photometric(img, t.name, prm)
        trace.append(entry)
    if labels.shape != tuple(spec.target_size):
        raise AugmentError(
            f"output size {labels.shape} differs from target {tuple(spec.target_size)}"
        )
    return RasterImage(np.clip(img, 0.0, 1.0)), LabelMask(labels, mask.num_classes), trace


def augment(image: RasterImage, mask: LabelMask, spec: AugmentationSpec, seed: int,
            key: str | None = None) -> tuple[RasterImage, LabelMask]:
    out_img, out_mask, _ = augment_with_trace(image, mask, spec, seed, key)
    return out_img, out_mask


def replay_mask(mask: LabelMask, trace: list[dict]) -> LabelMask:
    """Re-apply the geometric steps recorded in ``trace`` to a mask."""
    labels = np.array(mask.labels)
    for entry in trace:
        name = entry.get("choice", entry["op"])
        if entry["applied"] and name in GEOMETRIC:
            _, labels = _geometric(np.zeros(labels.shape), labels, name, entry["params"])
    return LabelMask(labels, mask.num_classes)
