"""Pipeline stages behind the command line: match, transfer, extract, eval,
schedule, augment and the end-to-end run.

Per-record work runs on a bounded thread pool; results are always written
in record-id order so outputs do not depend on ``jobs``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import metrics
from .augment import augment_with_trace, training_spec
from .dataset import (
    DEFAULT_CLASS_NAMES,
    LabelMask,
    Manifest,
    ManifestError,
    SampleRecord,
    ThermalFrame,
    load_manifest,
    read_image,
    read_mask,
    read_thermal_counts,
    thermal_to_celsius,
    write_image,
    write_mask,
)
from .matching import Box, MatchConfig, MatchError, MatchResult, bbox_in_rgb, match_candidates, select_candidates
from .schedule import schedule_balanced, schedule_direct, schedule_finetune
from .transfer import extract_class_stats, transfer_mask

log = logging.getLogger("thermoseg")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

TEMPERATURE_COLUMNS = (
    "thermal_id", "class", "pixel_count", "mean_c", "median_c", "std_c",
    "min_c", "max_c", "clamped", "reason",
)


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    manifest: Path | None = None
    out_dir: Path = Path("out")
    match: MatchConfig = field(default_factory=MatchConfig)
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES
    metric_eps: float = metrics.EPS
    seed: int = 0
    jobs: int = 1
    mask_dir: Path | None = None
    # schedule
    strategy: str = "balanced"
    batch_size: int = 8
    epochs: int = 1
    pretrain_epochs: int = 1
    finetune_epochs: int = 1
    k: int | None = None
    # augmentation
    target_size: tuple[int, int] = (512, 512)

    def check(self, need_manifest: bool = True) -> None:
        if need_manifest:
            if self.manifest is None:
                raise ConfigError("no manifest given")
            if not Path(self.manifest).is_file():
                raise ConfigError(f"manifest not found: {self.manifest}")
        if self.mask_dir is not None and not Path(self.mask_dir).is_dir():
            raise ConfigError(f"mask directory not found: {self.mask_dir}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not self.class_names or self.class_names[0] != "other":
            raise ConfigError("class 0 must be 'other'")


class RecordFailure(Exception):
    """A per-record problem: logged, reported, and skipped."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def exit_code(n_ok: int, n_failed: int) -> int:
    return EXIT_OK if n_failed == 0 else EXIT_PARTIAL


def _json_float(v: float | None):
    if v is None or not math.isfinite(v):
        return None
    return v


# ---------------------------------------------------------------------------
# match


def thermal_frame(manifest: Manifest, rec: SampleRecord) -> ThermalFrame:
    try:
        scale, offset = rec.calibration()
    except ManifestError as exc:
        raise RecordFailure("no_calibration", str(exc)) from exc
    return ThermalFrame(read_thermal_counts(manifest.resolve(rec.image_path)), scale, offset)


def thermal_intensity(counts: np.ndarray) -> np.ndarray:
    c = counts.astype(np.float64)
    lo, hi = c.min(), c.max()
    if hi <= lo:
        raise RecordFailure("flat_thermal", "thermal frame has no contrast")
    return (c - lo) / (hi - lo)


def match_record(manifest: Manifest, rec: SampleRecord, cfg: MatchConfig) -> dict:
    line = {"thermal_id": rec.id, "status": "failed", "reason": None, "candidate_id": None}
    try:
        cands = select_candidates(manifest, rec, cfg)
        if not cands:
            raise RecordFailure("no_candidates")
        counts = read_thermal_counts(manifest.resolve(rec.image_path))
        template = thermal_intensity(counts)
        scenes = [(c.id, read_image(manifest.resolve(c.image_path))) for c in cands]
        outcome = match_candidates(template, scenes, cfg)
    except RecordFailure as exc:
        line["reason"] = exc.reason
        log.warning("match failed", extra={"record": rec.id, "reason": exc.reason})
        return line
    except (OSError, MatchError) as exc:
        line["reason"] = "match_error"
        line["detail"] = str(exc)
        log.warning("match failed", extra={"record": rec.id, "reason": "match_error", "detail": str(exc)})
        return line
    line["candidates"] = [[cid, _json_float(s)] for cid, s in outcome.candidate_scores]
    line["best_score"] = _json_float(outcome.best_score)
    if outcome.best is None:
        line["reason"] = "no_valid_scale"
        return line
    scene = dict(scenes)[outcome.candidate_id]
    b = outcome.best
    line.update(
        candidate_id=outcome.candidate_id,
        scale=b.scale, x=b.x, y=b.y, score=b.score,
        template_w=b.template_w, template_h=b.template_h,
        scene_w=scene.width, scene_h=scene.height,
        thermal_w=int(counts.shape[1]), thermal_h=int(counts.shape[0]),
    )
    if outcome.matched:
        line["status"] = "matched"
        log.info("matched", extra={"record": rec.id, "candidate": outcome.candidate_id, "score": b.score})
    else:
        line["reason"] = "below_threshold"
        log.warning("match failed", extra={"record": rec.id, "reason": "below_threshold", "score": b.score})
    return line


def run_match(cfg: PipelineConfig, manifest: Manifest, record_ids: Iterable[str] | None = None) -> list[dict]:
    thermals = sorted(manifest.by_modality("thermal"), key=lambda r: r.id)
    if record_ids is not None:
        wanted = set(record_ids)
        missing = wanted - {r.id for r in thermals}
        if missing:
            raise ConfigError(f"unknown thermal record ids: {sorted(missing)}")
        thermals = [r for r in thermals if r.id in wanted]
    return _pmap(lambda r: match_record(manifest, r, cfg.match), thermals, cfg.jobs)


def match_summary(lines: Sequence[dict]) -> dict:
    ok = sum(1 for ln in lines if ln["status"] == "matched")
    return {"summary": {"matched": ok, "failed": len(lines) - ok}}


def write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def read_match_lines(path: Path) -> list[dict]:
    lines = []
    with Path(path).open(encoding="utf-8") as fh:
        for n, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            obj = json.loads(text)
            if "summary" in obj:
                continue
            if "thermal_id" not in obj:
                raise ConfigError(f"{path}:{n}: not a match line")
            lines.append(obj)
    return lines


# ---------------------------------------------------------------------------
# transfer / extract


def rgb_source(manifest: Manifest, gen: SampleRecord) -> SampleRecord:
    """The RGB frame a translated image came from: the RGB record sharing its timestamp."""
    hits = [r for r in manifest.by_modality("rgb") if r.time == gen.time]
    if len(hits) != 1:
        raise RecordFailure(
            "no_rgb_source", f"{len(hits)} rgb records share the timestamp of {gen.id}"
        )
    return hits[0]


def rgb_mask_for(manifest: Manifest, rgb: SampleRecord, mask_dir: Path | None, n_classes: int) -> LabelMask:
    path = Path(mask_dir) / f"{rgb.id}.png" if mask_dir is not None else manifest.resolve(rgb.mask_path)
    if path is None or not path.is_file():
        raise RecordFailure("no_mask", f"no predicted mask for {rgb.id}")
    return read_mask(path, num_classes=n_classes)


def transfer_record(manifest: Manifest, line: dict, cfg: PipelineConfig) -> tuple[LabelMask, Box]:
    if line["status"] != "matched":
        raise RecordFailure(line.get("reason") or "unmatched")
    gen = manifest.get(line["candidate_id"])
    rgb = rgb_source(manifest, gen)
    mask = rgb_mask_for(manifest, rgb, cfg.mask_dir, len(cfg.class_names))
    result = MatchResult(line["scale"], line["x"], line["y"], line["score"],
                         line["template_w"], line["template_h"])
    try:
        box = bbox_in_rgb(result, (line["scene_w"], line["scene_h"]), (mask.width, mask.height))
    except MatchError as exc:
        raise RecordFailure("bad_geometry", str(exc)) from exc
    return transfer_mask(mask, box, (line["thermal_w"], line["thermal_h"])), box


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def extract_rows(manifest: Manifest, line: dict, cfg: PipelineConfig, mask_out: Path | None = None) -> list[list]:
    tid = line["thermal_id"]
    try:
        tmask, box = transfer_record(manifest, line, cfg)
        frame = thermal_frame(manifest, manifest.get(tid))
        temps = thermal_to_celsius(frame)
        if temps.shape != tmask.shape:
            raise RecordFailure("bad_geometry", "thermal frame size differs from the match record")
    except (RecordFailure, ManifestError, OSError, KeyError) as exc:
        reason = exc.reason if isinstance(exc, RecordFailure) else type(exc).__name__
        log.warning("extract failed", extra={"record": tid, "reason": reason})
        return [[tid, "", "", "", "", "", "", "", "", reason]]
    if mask_out is not None:
        write_mask(mask_out / f"{tid}.png", tmask)
    rows = []
    for c, name in enumerate(cfg.class_names):
        st = extract_class_stats(temps, tmask, c)
        rows.append([tid, name, st.pixel_count, _fmt(st.mean), _fmt(st.median),
                     _fmt(st.std), _fmt(st.min), _fmt(st.max), int(box.clamped), ""])
    return rows


def temperature_csv(rows: Iterable[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TEMPERATURE_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()


def run_transfer(cfg: PipelineConfig, manifest: Manifest, lines: Sequence[dict]) -> tuple[int, int]:
    out = Path(cfg.out_dir) / "masks"
    out.mkdir(parents=True, exist_ok=True)

    def one(line):
        try:
            tmask, box = transfer_record(manifest, line, cfg)
        except (RecordFailure, KeyError) as exc:
            reason = getattr(exc, "reason", type(exc).__name__)
            return {"thermal_id": line["thermal_id"], "status": "failed", "reason": reason}
        write_mask(out / f"{line['thermal_id']}.png", tmask)
        return {"thermal_id": line["thermal_id"], "status": "ok", "box": [box.x, box.y, box.w, box.h],
                "clamped": box.clamped, "mask": f"masks/{line['thermal_id']}.png"}

    results = _pmap(one, sorted(lines, key=lambda ln: ln["thermal_id"]), cfg.jobs)
    write_jsonl(Path(cfg.out_dir) / "transfers.jsonl", results)
    ok = sum(r["status"] == "ok" for r in results)
    return ok, len(results) - ok


def run_extract(cfg: PipelineConfig, manifest: Manifest, lines: Sequence[dict], mask_out: Path | None = None) -> tuple[int, int]:
    ordered = sorted(lines, key=lambda ln: ln["thermal_id"])
    if mask_out is not None:
        mask_out.mkdir(parents=True, exist_ok=True)
    per_record = _pmap(lambda ln: extract_rows(manifest, ln, cfg, mask_out), ordered, cfg.jobs)
    rows = [row for rec_rows in per_record for row in rec_rows]
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "temperatures.csv").write_text(temperature_csv(rows), encoding="utf-8")
    failed = sum(1 for rr in per_record if rr[0][-1])
    return len(per_record) - failed, failed


def run_pipeline(cfg: PipelineConfig) -> int:
    manifest = load_manifest(cfg.manifest, cfg.class_names)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = run_match(cfg, manifest)
    write_jsonl(out / "matches.jsonl", [*lines, match_summary(lines)])
    ok, failed = run_extract(cfg, manifest, lines, mask_out=out / "masks")
    log.info("pipeline done", extra={"ok": ok, "failed": failed})
    if ok == 0 and failed > 0:
        log.error("every record failed")
    return exit_code(ok, failed)


# ---------------------------------------------------------------------------
# eval


def run_eval(pred_dir: Path, gt_dir: Path, cfg: PipelineConfig) -> metrics.MetricsReport:
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise ConfigError(f"not a directory: {d}")
    preds = {p.name for p in pred_dir.glob("*.png")}
    gts = {p.name for p in gt_dir.glob("*.png")}
    if preds != gts:
        odd = sorted(preds ^ gts)
        raise ConfigError(f"unmatched mask filenames: {odd[:10]}")
    if not gts:
        raise ConfigError(f"no masks in {gt_dir}")
    n = len(cfg.class_names)
    names = sorted(gts)

    def one(name):
        p = read_mask(pred_dir / name, num_classes=n)
        g = read_mask(gt_dir / name, num_classes=n)
        if p.shape != g.shape:
            raise ConfigError(f"{name}: prediction {p.shape} vs ground truth {g.shape}")
        return metrics.confusion(p, g, n)

    per_image = _pmap(one, names, cfg.jobs)
    total = metrics.ConfusionStats.zeros(n)
    for st in per_image:
        total = total + st
    dataset = metrics.report(total, cfg.class_names, cfg.metric_eps)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics_dataset.json").write_text(dataset.to_json(), encoding="utf-8")
    (out / "metrics_dataset.csv").write_text(dataset.to_csv(), encoding="utf-8")
    reports = {name: metrics.report(st, cfg.class_names, cfg.metric_eps) for name, st in zip(names, per_image)}
    (out / "metrics_per_image.json").write_text(
        json.dumps({k: r.to_dict() for k, r in reports.items()}, indent=2) + "\n", encoding="utf-8"
    )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image", "class", "iou", "dice", "pixel_accuracy", "absent"])
    for name, r in reports.items():
        for i, cls in enumerate(r.class_names):
            w.writerow([name, cls, f"{r.iou[i]:.3f}", f"{r.dice[i]:.3f}", f"{r.pixel_accuracy[i]:.3f}", int(r.absent[i])])
        w.writerow([name, "mean", f"{r.mean_iou:.3f}", f"{r.mean_dice:.3f}", f"{r.mean_pixel_accuracy:.3f}", ""])
    (out / "metrics_per_image.csv").write_text(buf.getvalue(), encoding="utf-8")
    return dataset


# ---------------------------------------------------------------------------
# schedule / augment


def training_ids(manifest: Manifest, k: int | None = None) -> tuple[list[str], list[str]]:
    """Synthetic and real ids of annotated RGB records; ``k`` keeps the first k reals."""
    train = [r for r in manifest.records if r.modality == "rgb" and r.mask_path is not None]
    syn = [r.id for r in train if r.domain == "synthetic"]
    real = [r.id for r in train if r.domain == "real"]
    if k is not None:
        if k < 0 or k > len(real):
            raise ConfigError(f"k={k} but the manifest has {len(real)} annotated real images")
        real = real[:k]
    return syn, real


def run_schedule(cfg: PipelineConfig, manifest: Manifest):
    syn, real = training_ids(manifest, cfg.k)
    if cfg.strategy == "direct":
        sched = schedule_direct(syn, real, cfg.batch_size, cfg.epochs, cfg.seed)
    elif cfg.strategy == "balanced":
        sched = schedule_balanced(syn, real, cfg.batch_size, cfg.epochs, cfg.seed)
    elif cfg.strategy == "finetune":
        sched = schedule_finetune(syn, real, cfg.batch_size, cfg.pretrain_epochs, cfg.finetune_epochs, cfg.seed)
    else:
        raise ConfigError(f"unknown strategy {cfg.strategy!r}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "schedule.json").write_text(sched.to_json(), encoding="utf-8")
    return sched


def run_augment(cfg: PipelineConfig, manifest: Manifest) -> tuple[int, int]:
    spec = training_spec(cfg.target_size)
    out = Path(cfg.out_dir) / "augmented"
    out.mkdir(parents=True, exist_ok=True)
    recs = sorted(
        (r for r in manifest.records if r.modality == "rgb" and r.mask_path is not None),
        key=lambda r: r.id,
    )

    def one(rec):
        try:
            img = read_image(manifest.resolve(rec.image_path))
            mask = read_mask(manifest.resolve(rec.mask_path), num_classes=len(cfg.class_names))
            a_img, a_mask, trace = augment_with_trace(img, mask, spec, cfg.seed, key=rec.id)
        except (OSError, ValueError) as exc:
            log.warning("augment failed", extra={"record": rec.id, "detail": str(exc)})
            return rec.id, None
        write_image(out / f"{rec.id}.png", a_img)
        write_mask(out / f"{rec.id}_mask.png", a_mask)
        return rec.id, trace

    results = _pmap(one, recs, cfg.jobs)
    traces = {rid: tr for rid, tr in results if tr is not None}
    (Path(cfg.out_dir) / "augment_trace.json").write_text(
        json.dumps({"seed": cfg.seed, "target_size": list(cfg.target_size), "samples": traces}, indent=1) + "\n",
        encoding="utf-8",
    )
    ok = len(traces)
    return ok, len(results) - ok
