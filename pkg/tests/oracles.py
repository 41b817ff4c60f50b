"""Slow, obviously-correct reference implementations used by the tests.

Nothing here imports the code paths it checks.
"""

import math

import numpy as np


def naive_confusion(pred, gt, num_classes):
    tp = [0] * num_classes
    fp = [0] * num_classes
    fn = [0] * num_classes
    tn = [0] * num_classes
    rows, cols = len(gt), len(gt[0])
    for y in range(rows):
        for x in range(cols):
            p, g = int(pred[y][x]), int(gt[y][x])
            for c in range(num_classes):
                if p == c and g == c:
                    tp[c] += 1
                elif p == c:
                    fp[c] += 1
                elif g == c:
                    fn[c] += 1
                else:
                    tn[c] += 1
    return tp, fp, fn, tn


def naive_ncc(scene, template):
    scene = np.asarray(scene, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    h, w = template.shape
    H, W = scene.shape
    t = template - template.mean()
    t_norm = math.sqrt(float((t * t).sum()))
    out = np.zeros((H - h + 1, W - w + 1))
    for y in range(H - h + 1):
        for x in range(W - w + 1):
            win = scene[y : y + h, x : x + w]
            s = win - win.mean()
            s_norm = math.sqrt(float((s * s).sum()))
            if s_norm < 1e-9:
                out[y, x] = 0.0
            else:
                out[y, x] = float((s * t).sum()) / (s_norm * t_norm)
    return out


def central_difference(f, x, h=1e-4):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def _nearest(labels, u, v, fill=0):
    h, w = len(labels), len(labels[0])
    xi = math.floor(u + 0.5)
    yi = math.floor(v + 0.5)
    if 0 <= xi < w and 0 <= yi < h:
        return labels[yi][xi]
    return fill


def _reflect101(i, n):
    if n == 1:
        return 0
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i


def replay_geometry(labels, trace, fill=0):
    """Per-pixel nearest-neighbour replay of the geometric steps in a trace.

    ``fill`` is the value for pixels mapped from outside the source frame.
    """
    cur = [list(map(int, row)) for row in np.asarray(labels)]
    for entry in trace:
        if not entry["applied"]:
            continue
        name = entry.get("choice", entry["op"])
        prm = entry.get("params", {})
        h, w = len(cur), len(cur[0])
        if name == "horizontal_flip":
            cur = [[cur[y][w - 1 - x] for x in range(w)] for y in range(h)]
        elif name == "pad_if_needed":
            t, b, l, r = prm["top"], prm["bottom"], prm["left"], prm["right"]
            cur = [
                [cur[_reflect101(y, h)][_reflect101(x, w)] for x in range(-l, w + r)]
                for y in range(-t, h + b)
            ]
        elif name == "random_crop":
            y0, x0 = prm["y0"], prm["x0"]
            cur = [row[x0 : x0 + prm["width"]] for row in cur[y0 : y0 + prm["height"]]]
        elif name == "shift_scale_rotate":
            a, b_, c, d, e, f = prm["inverse"]
            cur = [
                [_nearest(cur, a * x + b_ * y + c, d * x + e * y + f, fill) for x in range(w)]
                for y in range(h)
            ]
        elif name == "perspective":
            h00, h01, h02, h10, h11, h12, h20, h21, h22 = prm["inverse"]
            new = []
            for y in range(h):
                row = []
                for x in range(w):
                    den = h20 * x + h21 * y + h22
                    row.append(_nearest(cur, (h00 * x + h01 * y + h02) / den, (h10 * x + h11 * y + h12) / den, fill))
                new.append(row)
            cur = new
    return np.array(cur, dtype=np.uint8)
