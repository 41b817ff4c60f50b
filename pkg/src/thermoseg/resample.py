"""Pixel-centre resampling primitives.

Coordinates follow the pixel-centre convention: pixel ``i`` covers
``[i - 0.5, i + 0.5)`` so integer coordinates hit pixel centres. Nearest
lookup rounds half up (``floor(u + 0.5)``) in every code path so that label
resampling is reproducible from recorded parameters.
"""

from __future__ import annotations

import numpy as np


def center_coords(n_out: int, n_in: int, scale: float | None = None) -> np.ndarray:
    """Source coordinate of each destination pixel for a 1-D resize."""
    if scale is None:
        scale = n_in / n_out
    return (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5


def resize_bilinear(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize with edge replication (no antialiasing)."""
    a = np.asarray(a, dtype=np.float64)
    in_h, in_w = a.shape[:2]
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")

    def axis_weights(n_out, n_in):
        u = np.clip(center_coords(n_out, n_in), 0.0, n_in - 1)
        i0 = np.floor(u).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, u - i0

    y0, y1, fy = axis_weights(out_h, in_h)
    x0, x1, fx = axis_weights(out_w, in_w)
    extra = (None,) * (a.ndim - 2)
    fy = fy[(slice(None), None) + extra]
    fx = fx[(slice(None),) + extra]
    rows = a[y0] * (1.0 - fy) + a[y1] * fy
    return rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx


def resize_nearest(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize for label grids; never mixes labels."""
    a = np.asarray(a)
    in_h, in_w = a.shape[:2]
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    yi = np.clip(np.floor(center_coords(out_h, in_h) + 0.5), 0, in_h - 1).astype(np.intp)
    xi = np.clip(np.floor(center_coords(out_w, in_w) + 0.5), 0, in_w - 1).astype(np.intp)
    return a[yi[:, None], xi[None, :]]


def sample_bilinear(a: np.ndarray, u: np.ndarray, v: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Bilinear lookup of ``a`` at source coords (u=x, v=y); outside reads ``fill``."""
    a = np.asarray(a, dtype=np.float64)
    h, w = a.shape[:2]
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    fx = u - x0
    fy = v - y0
    if a.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    out = 0.0
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xs = x0 + dx
            ys = y0 + dy
            ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            vals = a[np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1)]
            if a.ndim == 3:
                ok = ok[..., None]
            out = out + wy * wx * np.where(ok, vals, fill)
    return out


def sample_nearest(a: np.ndarray, u: np.ndarray, v: np.ndarray, fill=0) -> np.ndarray:
    a = np.asarray(a)
    h, w = a.shape[:2]
    xi = np.floor(u + 0.5).astype(np.intp)
    yi = np.floor(v + 0.5).astype(np.intp)
    ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    vals = a[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
    if a.ndim == 3:
        ok = ok[..., None]
    return np.where(ok, vals, np.asarray(fill, dtype=a.dtype))
