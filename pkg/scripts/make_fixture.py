"""Regenerate the bundled demo fixture (manifest + images) under fixtures/demo."""

import argparse
from pathlib import Path

from thermoseg.fixtures import build_demo

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=ROOT / "fixtures" / "demo")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    truth = build_demo(args.out, seed=args.seed)
    print(f"wrote {args.out} (scene {truth.scene.shape[1]}x{truth.scene.shape[0]}, "
          f"crops {truth.crops})")


if __name__ == "__main__":
    main()
