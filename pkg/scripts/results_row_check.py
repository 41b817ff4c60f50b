"""Recompute the mean columns of one results-table row from its per-class values."""

from thermoseg.metrics import aggregate

# FPN / EfficientNet-b5, synthetic-only training; printed means .565 / .645 / .958
ROW = {
    "iou": (0.969, 0.176, 0.550),
    "dice": (0.984, 0.278, 0.673),
    "pixel_accuracy": (0.973, 0.950, 0.952),
}
PRINTED = {"iou": 0.565, "dice": 0.645, "pixel_accuracy": 0.958}

if __name__ == "__main__":
    r = aggregate(ROW["iou"], ROW["dice"], ROW["pixel_accuracy"])
    got = {"iou": r.mean_iou, "dice": r.mean_dice, "pixel_accuracy": r.mean_pixel_accuracy}
    for k, v in got.items():
        print(f"{k:15s} mean={v:.4f} printed={PRINTED[k]:.3f} diff={abs(v - PRINTED[k]):.1e}")
    print(r.to_csv(), end="")
