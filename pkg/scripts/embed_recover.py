"""Embed a smoothed template into a noise scene at a random grid scale and
try to recover it with multi-scale NCC. Prints the recovery rate."""

import argparse
import time

import numpy as np
from scipy.ndimage import gaussian_filter

from thermoseg.matching import MatchConfig, multi_scale_match
from thermoseg.resample import resize_bilinear


def trial(seed, cfg, size=64, scene_side=96, noise=0.05):
    r = np.random.default_rng(seed)
    tpl = gaussian_filter(r.random((size, size)), 1.0)
    tpl = (tpl - tpl.min()) / (tpl.max() - tpl.min())
    grid = cfg.scales()
    s = grid[r.integers(0, len(grid))]
    side = int(np.floor(size * s + 0.5))
    scene = r.random((scene_side, scene_side))
    x, y = (int(v) for v in r.integers(0, scene_side - side + 1, 2))
    scene[y : y + side, x : x + side] = resize_bilinear(tpl, side, side)
    scene += r.normal(0.0, noise, scene.shape)
    best = multi_scale_match(scene, tpl, cfg).best
    hit = best is not None and abs(best.x - x) <= 2 and abs(best.y - y) <= 2 and abs(best.scale - s) <= 0.05 + 1e-9
    return hit, (s, x, y), best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=1000)
    args = ap.parse_args()
    cfg = MatchConfig()
    t0 = time.perf_counter()
    hits = 0
    for k in range(args.trials):
        hit, truth, best = trial(args.seed + k, cfg, noise=args.noise)
        hits += hit
        if not hit:
            print(f"miss seed={args.seed + k} truth(scale,x,y)={truth} got={best}")
    print(f"{hits}/{args.trials} recovered in {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
