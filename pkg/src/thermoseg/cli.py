"""Command-line entry point.

    thermoseg [global flags] <subcommand> [flags]

Subcommands: match, transfer, extract, eval, schedule, augment, pipeline.
Settings come from an optional TOML file (``--config``); command-line flags
override it. Exit codes: 0 success, 1 per-record failures, 2 bad
configuration or input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .dataset import ManifestError, load_manifest
from .matching import MatchConfig
from .pipeline import (
    EXIT_CONFIG,
    ConfigError,
    PipelineConfig,
    exit_code,
    match_summary,
    read_match_lines,
    run_augment,
    run_eval,
    run_extract,
    run_match,
    run_pipeline,
    run_schedule,
    run_transfer,
    write_jsonl,
)
from .schedule import ScheduleError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("thermoseg")

_RESERVED = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message", "asctime"}


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        out = {"level": record.levelname.lower(), "msg": record.getMessage()}
        for k, v in vars(record).items():
            if k not in _RESERVED:
                out[k] = v
        return json.dumps(out, default=str)


def setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    log.handlers[:] = [handler]
    log.setLevel(level.upper())
    log.propagate = False


# ---------------------------------------------------------------------------
# configuration


def load_config(path: Path | None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent

    def p(v):
        return None if v is None else (base / v if not Path(v).is_absolute() else Path(v))

    m = raw.pop("match", {})
    sch = raw.pop("schedule", {})
    aug = raw.pop("augment", {})
    met = raw.pop("metrics", {})
    try:
        match = MatchConfig(
            scale_min=m.get("scale_min", 0.1),
            scale_max=m.get("scale_max", 1.0),
            scale_step=m.get("scale_step", 0.05),
            accept_threshold=m.get("threshold", 0.5),
            time_window=m.get("window_sec", 2.0),
        )
    except ValueError as exc:
        raise ConfigError(f"[match]: {exc}") from exc
    ts = aug.get("target_size", 512)
    cfg = PipelineConfig(
        manifest=p(raw.pop("manifest", None)),
        out_dir=p(raw.pop("out_dir", "out")),
        match=match,
        class_names=tuple(raw.pop("class_names", cfg.class_names)),
        metric_eps=float(met.get("eps", cfg.metric_eps)),
        seed=int(raw.pop("seed", 0)),
        jobs=int(raw.pop("jobs", 1)),
        mask_dir=p(raw.pop("mask_dir", None)),
        strategy=sch.get("strategy", cfg.strategy),
        batch_size=int(sch.get("batch_size", cfg.batch_size)),
        epochs=int(sch.get("epochs", cfg.epochs)),
        pretrain_epochs=int(sch.get("pretrain_epochs", cfg.pretrain_epochs)),
        finetune_epochs=int(sch.get("finetune_epochs", cfg.finetune_epochs)),
        k=sch.get("k"),
        target_size=(ts, ts) if isinstance(ts, int) else tuple(ts),
    )
    raw.pop("log_level", None)
    if raw:
        raise ConfigError(f"{path}: unknown settings {sorted(raw)}")
    return cfg


def _override(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    def given(name):
        return getattr(args, name, None)

    updates = {}
    for name in ("manifest", "out_dir", "mask_dir"):
        if given(name) is not None:
            updates[name] = Path(given(name))
    for name in ("seed", "jobs", "strategy", "batch_size", "epochs", "pretrain_epochs",
                 "finetune_epochs", "k"):
        if given(name) is not None:
            updates[name] = given(name)
    if given("classes") is not None:
        updates["class_names"] = tuple(given("classes").split(","))
    if given("target_size") is not None:
        updates["target_size"] = (given("target_size"),) * 2
    m = {}
    for flag, fld in (("scale_min", "scale_min"), ("scale_max", "scale_max"),
                      ("scale_step", "scale_step"), ("threshold", "accept_threshold"),
                      ("window_sec", "time_window")):
        if given(flag) is not None:
            m[fld] = given(flag)
    if m:
        try:
            updates["match"] = replace(cfg.match, **m)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return replace(cfg, **updates)


# ---------------------------------------------------------------------------
# argument parsing


def _globals(parser: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    g = parser.add_argument_group("global options")
    g.add_argument("--config", type=Path, default=S, help="TOML configuration file")
    g.add_argument("--manifest", default=S, help="JSON-lines manifest")
    g.add_argument("--out-dir", dest="out_dir", default=S)
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--jobs", type=int, default=S, help="worker threads for per-record work")
    g.add_argument("--log-level", dest="log_level", default=S,
                   choices=["debug", "info", "warning", "error"])


def _match_flags(parser):
    parser.add_argument("--scale-min", dest="scale_min", type=float)
    parser.add_argument("--scale-max", dest="scale_max", type=float)
    parser.add_argument("--scale-step", dest="scale_step", type=float)
    parser.add_argument("--threshold", type=float, help="minimum NCC score to accept")
    parser.add_argument("--window-sec", dest="window_sec", type=float,
                        help="candidate time window in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermoseg", description=__doc__.split("\n")[0])
    _globals(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="template-match thermal frames against translated scenes")
    _globals(p)
    _match_flags(p)
    sel = p.add_mutually_exclusive_group()
    sel.add_argument("--id", action="append", dest="ids", help="thermal record id (repeatable)")
    sel.add_argument("--all", action="store_true", help="match every thermal record (default)")

    p = sub.add_parser("transfer", help="project RGB masks into matched thermal frames")
    _globals(p)
    p.add_argument("--matches", type=Path, help="match JSON-lines (default: OUT/matches.jsonl)")
    p.add_argument("--mask-dir", dest="mask_dir", help="predicted RGB masks named <rgb id>.png")
    p.add_argument("--classes")

    p = sub.add_parser("extract", help="per-class temperature statistics")
    _globals(p)
    p.add_argument("--matches", type=Path)
    p.add_argument("--mask-dir", dest="mask_dir")
    p.add_argument("--classes")

    p = sub.add_parser("eval", help="segmentation metrics for a prediction directory")
    _globals(p)
    p.add_argument("--pred-dir", dest="pred_dir", type=Path, required=True)
    p.add_argument("--gt-dir", dest="gt_dir", type=Path, required=True)
    p.add_argument("--classes", help="comma-separated class names, class 0 first")

    p = sub.add_parser("schedule", help="batch schedule for real-image injection")
    _globals(p)
    p.add_argument("--strategy", choices=["direct", "balanced", "finetune"])
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--finetune-epochs", dest="finetune_epochs", type=int)
    p.add_argument("--k", type=int, help="number of real images to include")

    p = sub.add_parser("augment", help="augment annotated RGB records")
    _globals(p)
    p.add_argument("--target-size", dest="target_size", type=int)

    p = sub.add_parser("pipeline", help="match, transfer and extract in one run")
    _globals(p)
    _match_flags(p)
    p.add_argument("--mask-dir", dest="mask_dir")
    p.add_argument("--classes")
    return parser


def _run(args: argparse.Namespace) -> int:
    cfg = _override(load_config(getattr(args, "config", None)), args)
    cmd = args.command
    cfg.check(need_manifest=cmd != "eval")
    out = Path(cfg.out_dir)
    if cmd == "eval":
        run_eval(args.pred_dir, args.gt_dir, cfg)
        return 0
    if cmd == "pipeline":
        return run_pipeline(cfg)
    manifest = load_manifest(cfg.manifest, cfg.class_names)
    if cmd == "match":
        lines = run_match(cfg, manifest, args.ids)
        write_jsonl(out / "matches.jsonl", [*lines, match_summary(lines)])
        s = match_summary(lines)["summary"]
        return exit_code(s["matched"], s["failed"])
    if cmd in ("transfer", "extract"):
        mpath = args.matches or out / "matches.jsonl"
        if not Path(mpath).is_file():
            raise ConfigError(f"match file not found: {mpath}")
        lines = read_match_lines(mpath)
        ok, failed = (run_transfer if cmd == "transfer" else run_extract)(cfg, manifest, lines)
        return exit_code(ok, failed)
    if cmd == "schedule":
        run_schedule(cfg, manifest)
        return 0
    if cmd == "augment":
        ok, failed = run_augment(cfg, manifest)
        return exit_code(ok, failed)
    raise ConfigError(f"unknown command {cmd}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(getattr(args, "log_level", "info"))
    try:
        return _run(args)
    except (ConfigError, ManifestError, ScheduleError) as exc:
        log.error("configuration or input error", extra={"detail": str(exc)})
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
