"""Multi-scale normalized cross-correlation between thermal frames and
RGB-translated thermal scenes.

The real thermal frame is the template; it is shrunk over a grid of scales
and slid over the (never resampled) translated scene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .dataset import Manifest, RasterImage, SampleRecord
from .resample import resize_bilinear

# Windows whose per-pixel variance falls below this are treated as flat.
FLAT_VARIANCE = 1e-12
SCORE_DECIMALS = 12


class MatchError(ValueError):
    pass


@dataclass(frozen=True)
class MatchConfig:
    scale_min: float = 0.1
    scale_max: float = 1.0
    scale_step: float = 0.05
    accept_threshold: float = 0.5
    time_window: float = 2.0

    def __post_init__(self):
        if not (0 < self.scale_min <= self.scale_max <= 1):
            raise ValueError(
                f"need 0 < scale_min <= scale_max <= 1, got {self.scale_min}, {self.scale_max}"
            )
        if not self.scale_step > 0:
            raise ValueError("scale_step must be > 0")
        if not -1 <= self.accept_threshold <= 1:
            raise ValueError("accept_threshold must lie in [-1, 1]")
        if self.time_window < 0:
            raise ValueError("time_window must be >= 0")

    def scales(self) -> list[float]:
        n = int(math.floor((self.scale_max - self.scale_min) / self.scale_step + 1e-9)) + 1
        return [round(self.scale_min + k * self.scale_step, 10) for k in range(n)]


@dataclass(frozen=True)
class MatchResult:
    scale: float
    x: int
    y: int
    score: float
    template_w: int
    template_h: int


@dataclass(frozen=True)
class MatchOutcome:
    """Best match found; ``matched`` is False when the best score is below threshold.

    ``best`` is None only when no placement could be scored at all.
    """

    matched: bool
    best: MatchResult | None
    best_score: float
    candidate_id: str | None = None
    candidate_scores: tuple[tuple[str, float], ...] = field(default=())


def _gray(img) -> np.ndarray:
    if isinstance(img, RasterImage):
        return img.intensity()
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        a = a @ np.array([0.299, 0.587, 0.114])
    if a.ndim != 2:
        raise MatchError(f"expected a single-channel image, got shape {a.shape}")
    return a


def _window_sums(a: np.ndarray, h: int, w: int) -> np.ndarray:
    ii = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    ii[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    return ii[h:, w:] - ii[:-h, w:] - ii[h:, :-w] + ii[:-h, :-w]


def ncc_map(scene, template) -> np.ndarray:
    """Zero-mean normalized cross-correlation over every valid placement.

    Returns an array of shape ``(H - h + 1, W - w + 1)``; entry ``[y, x]``
    scores the template with its top-left corner at ``(x, y)``. Flat scene
    windows score 0.
    """
    s = _gray(scene)
    t = _gray(template)
    h, w = t.shape
    H, W = s.shape
    if h > H or w > W:
        raise MatchError(f"template {w}x{h} larger than scene {W}x{H}")
    n = h * w
    t0 = t - t.mean()
    t_ss = float((t0 * t0).sum())
    if t_ss <= FLAT_VARIANCE * n:
        raise MatchError("template has zero intensity variance")

    # sum(t0) == 0, so any scene offset drops out of the numerator; centring
    # the scene anyway limits cancellation in the window variance
    s_c = s - s.mean()
    num = fftconvolve(s_c, t0[::-1, ::-1], mode="valid")
    win = _window_sums(s_c, h, w)
    win_sq = _window_sums(s_c * s_c, h, w)
    s_var = win_sq - win * win / n
    flat = s_var <= FLAT_VARIANCE * n
    out = np.zeros_like(num)
    ok = ~flat
    out[ok] = num[ok] / np.sqrt(s_var[ok] * t_ss)
    # quantise so FFT round-off cannot break exact ties between placements
    return np.clip(np.round(out, SCORE_DECIMALS), -1.0, 1.0)


def _best_at_scale(scene: np.ndarray, template: np.ndarray, scale: float):
    h, w = template.shape
    th = max(1, int(math.floor(h * scale + 0.5)))
    tw = max(1, int(math.floor(w * scale + 0.5)))
    if th > scene.shape[0] or tw > scene.shape[1]:
        return None
    scaled = template if (th, tw) == (h, w) else resize_bilinear(template, th, tw)
    t0 = scaled - scaled.mean()
    if float((t0 * t0).sum()) <= FLAT_VARIANCE * th * tw:
        return None
    surface = ncc_map(scene, scaled)
    # argmax returns the first maximum in row-major order: smallest y, then x
    idx = int(np.argmax(surface))
    y, x = divmod(idx, surface.shape[1])
    return MatchResult(scale, x, y, float(surface[y, x]), tw, th)


def _check_template(template) -> np.ndarray:
    t = _gray(template)
    t0 = t - t.mean()
    if float((t0 * t0).sum()) <= FLAT_VARIANCE * t.size:
        raise MatchError("template has zero intensity variance")
    return t


def multi_scale_match(scene, template, config: MatchConfig = MatchConfig()) -> MatchOutcome:
    s = _gray(scene)
    t = _check_template(template)
    per_scale = [_best_at_scale(s, t, sc) for sc in config.scales()]
    if all(r is None for r in per_scale):
        raise MatchError("no scale in the grid fits the template inside the scene")
    best = None
    # largest scale first so that ties keep the larger scale
    for r in reversed(per_scale):
        if r is not None and (best is None or r.score > best.score):
            best = r
    return MatchOutcome(best.score >= config.accept_threshold, best, best.score)


def match_candidates(
    template,
    candidates: Sequence[tuple[str, object]],
    config: MatchConfig = MatchConfig(),
) -> MatchOutcome:
    """Global best over several candidate scenes.

    ``candidates`` is an ordered sequence of ``(id, scene)``; on equal scores
    the earlier candidate wins. Candidates where matching is impossible
    (template larger than scene at every scale) are scored as -inf.
    """
    if not candidates:
        return MatchOutcome(False, None, float("-inf"))
    template = _check_template(template)
    best: MatchOutcome | None = None
    best_id = None
    scores = []
    for cid, scene in candidates:
        try:
            out = multi_scale_match(scene, template, config)
        except MatchError:
            scores.append((cid, float("-inf")))
            continue
        scores.append((cid, out.best_score))
        if best is None or out.best_score > best.best_score:
            best, best_id = out, cid
    if best is None:
        return MatchOutcome(False, None, float("-inf"), None, tuple(scores))
    return MatchOutcome(best.matched, best.best, best.best_score, best_id, tuple(scores))


def select_candidates(
    manifest: Manifest, thermal: SampleRecord, config: MatchConfig = MatchConfig()
) -> list[SampleRecord]:
    if thermal.modality != "thermal":
        raise ValueError(f"record {thermal.id!r} is not a thermal record")
    t0 = thermal.time
    found = []
    for rec in manifest.records:
        if rec.modality != "gen_thermal":
            continue
        dt = abs((rec.time - t0).total_seconds())
        if dt <= config.time_window:
            found.append((dt, rec.id, rec))
    found.sort(key=lambda item: (item[0], item[1]))
    return [rec for _, _, rec in found]


@dataclass(frozen=True)
class Box:
    x: int
    y: int
    w: int
    h: int
    clamped: bool = False


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def bbox_in_rgb(
    result: MatchResult, scene_dims: tuple[int, int], rgb_dims: tuple[int, int]
) -> Box:
    """Map a match in scene space to the original RGB frame.

    ``scene_dims`` and ``rgb_dims`` are ``(width, height)``. The scene must be
    a uniform rescale of the RGB frame (aspect ratios within 1%).
    """
    sw, sh = scene_dims
    rw, rh = rgb_dims
    r = rw / sw
    r_h = rh / sh
    if abs(r - r_h) > 0.01 * r:
        raise MatchError(
            f"scene {sw}x{sh} is not a uniform rescale of RGB {rw}x{rh}"
        )
    x = _round_half_up(result.x * r)
    y = _round_half_up(result.y * r)
    w = _round_half_up(result.template_w * r)
    h = _round_half_up(result.template_h * r)
    x0, y0 = min(max(x, 0), rw - 1), min(max(y, 0), rh - 1)
    x1, y1 = min(x + w, rw), min(y + h, rh)
    box = Box(x0, y0, x1 - x0, y1 - y0)
    clamped = (box.x, box.y, box.w, box.h) != (x, y, w, h)
    return Box(box.x, box.y, box.w, box.h, clamped)
