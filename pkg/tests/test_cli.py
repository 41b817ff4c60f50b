import csv
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from thermoseg import metrics as M
from thermoseg.cli import load_config, main
from thermoseg.dataset import read_mask, write_mask, write_thermal_counts, LabelMask
from thermoseg.fixtures import THERMAL_OFFSET, THERMAL_SCALE, build_demo, counts_from_intensity

ROOT = Path(__file__).resolve().parents[1]


def read_jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines()]


def tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def write_manifest(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def thermal_record(tid, ts):
    return {"id": tid, "domain": "real", "modality": "thermal", "image_path": f"{tid}.png",
            "timestamp": ts, "thermal_scale": THERMAL_SCALE, "thermal_offset": THERMAL_OFFSET}


def gen_record(gid, ts):
    return {"id": gid, "domain": "real", "modality": "gen_thermal", "image_path": f"{gid}.png", "timestamp": ts}


@pytest.fixture
def demo(tmp_path):
    truth = build_demo(tmp_path / "demo")
    return tmp_path / "demo", truth


# --- match


def test_self_match(tmp_path, demo):
    _, truth = demo
    v = truth.scene[10:50, 20:70]
    Image.fromarray(v, mode="L").save(tmp_path / "g.png")
    write_thermal_counts(tmp_path / "t.png", counts_from_intensity(v))
    write_manifest(tmp_path / "m.jsonl", [thermal_record("t", "2024-01-01T00:00:00Z"),
                                          gen_record("g", "2024-01-01T00:00:00Z")])
    code = main(["match", "--manifest", str(tmp_path / "m.jsonl"), "--out-dir", str(tmp_path / "out")])
    assert code == 0
    line, summary = read_jsonl(tmp_path / "out" / "matches.jsonl")
    assert line["status"] == "matched" and line["scale"] == 1.0 and (line["x"], line["y"]) == (0, 0)
    assert summary == {"summary": {"matched": 1, "failed": 0}}


def test_no_candidates(tmp_path, demo):
    _, truth = demo
    write_thermal_counts(tmp_path / "t.png", counts_from_intensity(truth.scene[:20, :20]))
    write_manifest(tmp_path / "m.jsonl", [thermal_record("t", "2024-01-01T00:00:00Z")])
    code = main(["match", "--manifest", str(tmp_path / "m.jsonl"), "--out-dir", str(tmp_path / "out")])
    assert code == 1
    line, summary = read_jsonl(tmp_path / "out" / "matches.jsonl")
    assert line["status"] == "failed" and line["reason"] == "no_candidates"
    assert summary["summary"] == {"matched": 0, "failed": 1}


def test_three_known_placements(tmp_path, demo):
    _, truth = demo
    Image.fromarray(truth.scene, mode="L").save(tmp_path / "g.png")
    recs = [gen_record("g", "2024-01-01T00:00:00Z")]
    placements = {"t1": (4, 6), "t2": (40, 30), "t3": (60, 50)}
    for tid, (x, y) in placements.items():
        patch = np.kron(truth.scene[y : y + 24, x : x + 32], np.ones((2, 2), dtype=np.uint8))
        write_thermal_counts(tmp_path / f"{tid}.png", counts_from_intensity(patch))
        recs.append(thermal_record(tid, "2024-01-01T00:00:01Z"))
    write_manifest(tmp_path / "m.jsonl", recs)
    assert main(["match", "--manifest", str(tmp_path / "m.jsonl"), "--out-dir", str(tmp_path / "out"), "--jobs", "3"]) == 0
    lines = read_jsonl(tmp_path / "out" / "matches.jsonl")[:-1]
    assert [ln["thermal_id"] for ln in lines] == ["t1", "t2", "t3"]
    for ln in lines:
        assert ln["status"] == "matched" and ln["scale"] == 0.5
        assert (ln["x"], ln["y"]) == placements[ln["thermal_id"]]
        assert (ln["template_w"], ln["template_h"]) == (32, 24)


def test_match_selected_ids(demo):
    root, _ = demo
    assert main(["match", "--manifest", str(root / "manifest.jsonl"), "--out-dir", str(root / "o"), "--id", "thermal_b"]) == 0
    lines = read_jsonl(root / "o" / "matches.jsonl")
    assert [ln.get("thermal_id") for ln in lines[:-1]] == ["thermal_b"]


# --- eval


def eval_dirs(tmp_path, pairs):
    pd, gd = tmp_path / "pred", tmp_path / "gt"
    pd.mkdir(exist_ok=True)
    gd.mkdir(exist_ok=True)
    for name, (p, g) in pairs.items():
        write_mask(pd / name, LabelMask(np.asarray(p)))
        write_mask(gd / name, LabelMask(np.asarray(g)))
    return pd, gd


def run_eval_cli(tmp_path, pd, gd):
    code = main(["eval", "--pred-dir", str(pd), "--gt-dir", str(gd), "--out-dir", str(tmp_path / "ev")])
    return code, json.loads((tmp_path / "ev" / "metrics_dataset.json").read_text()) if code == 0 else None


def test_eval_identity(tmp_path):
    r = np.random.default_rng(0)
    pairs = {f"{i}.png": (m, m) for i, m in enumerate(r.integers(0, 3, (3, 8, 8)))}
    code, d = run_eval_cli(tmp_path, *eval_dirs(tmp_path, pairs))
    assert code == 0
    for c in d["classes"]:
        assert c["iou"] == pytest.approx(1.0, abs=1e-6) and c["dice"] == pytest.approx(1.0, abs=1e-6)
        assert c["pixel_accuracy"] == pytest.approx(1.0, abs=1e-6)


def test_eval_two_images_hand_counted(tmp_path):
    pairs = {
        "a.png": ([[0, 1], [2, 2]], [[0, 1], [1, 2]]),
        "b.png": ([[1, 1], [0, 0]], [[1, 0], [0, 0]]),
    }
    code, d = run_eval_cli(tmp_path, *eval_dirs(tmp_path, pairs))
    assert code == 0
    e = M.EPS
    # summed counts per class (tp, fp, fn, tn): (3,0,1,4) (2,1,1,4) (1,1,0,6)
    want_iou = [3 / (4 + e), 2 / (4 + e), 1 / (2 + e)]
    want_dice = [6 / (7 + e), 4 / (6 + e), 2 / (3 + e)]
    want_pa = [7 / (8 + e), 6 / (8 + e), 7 / (8 + e)]
    for c, row in enumerate(d["classes"]):
        assert row["iou"] == pytest.approx(want_iou[c], abs=1e-12)
        assert row["dice"] == pytest.approx(want_dice[c], abs=1e-12)
        assert row["pixel_accuracy"] == pytest.approx(want_pa[c], abs=1e-12)
    per_image = json.loads((tmp_path / "ev" / "metrics_per_image.json").read_text())
    assert sorted(per_image) == ["a.png", "b.png"]


def test_eval_table_row_ratios(tmp_path):
    # (gt, pred) run lengths chosen so IoU per class is 0.969 / 0.176 / 0.550
    runs = [((0, 0), 9690), ((0, 2), 310), ((1, 1), 176), ((1, 2), 824), ((2, 2), 1386)]
    gt = np.concatenate([np.full(n, g) for (g, _), n in runs]).reshape(2, -1)
    pred = np.concatenate([np.full(n, p) for (_, p), n in runs]).reshape(2, -1)
    code, d = run_eval_cli(tmp_path, *eval_dirs(tmp_path, {"x.png": (pred, gt)}))
    assert code == 0
    ious = [c["iou"] for c in d["classes"]]
    assert ious == pytest.approx([0.969, 0.176, 0.550], abs=1e-6)
    assert d["mean_iou"] == pytest.approx(0.565, abs=5e-4)
    assert d["mean_dice"] == pytest.approx(np.mean([c["dice"] for c in d["classes"]]), abs=1e-12)
    rows = list(csv.reader((tmp_path / "ev" / "metrics_dataset.csv").read_text().splitlines()))
    assert rows[-1][:2] == ["mean", "0.565"]


def test_eval_errors(tmp_path):
    pd, gd = eval_dirs(tmp_path, {"a.png": (np.zeros((2, 2)), np.zeros((2, 2)))})
    write_mask(pd / "extra.png", LabelMask(np.zeros((2, 2))))
    assert main(["eval", "--pred-dir", str(pd), "--gt-dir", str(gd), "--out-dir", str(tmp_path / "e")]) == 2
    (pd / "extra.png").unlink()
    write_mask(pd / "a.png", LabelMask(np.zeros((3, 2))))
    assert main(["eval", "--pred-dir", str(pd), "--gt-dir", str(gd), "--out-dir", str(tmp_path / "e")]) == 2


# --- pipeline


def test_pipeline_plant_temperature(demo):
    root, truth = demo
    out = root / "run"
    code = main(["pipeline", "--manifest", str(root / "manifest.jsonl"), "--out-dir", str(out)])
    assert code == 1  # thermal_c has no candidate in its time window
    rows = list(csv.DictReader((out / "temperatures.csv").open()))
    by = {(r["thermal_id"], r["class"]): r for r in rows}
    temps = truth.temperature()
    for tid, (x, y) in truth.crops.items():
        region = (slice(y, y + 24), slice(x, x + 32))
        plant = temps[region][truth.scene_mask[region] == 2]
        row = by[(tid, "plant")]
        assert int(row["pixel_count"]) == 4 * plant.size
        assert float(row["mean_c"]) == pytest.approx(plant.mean(), abs=1e-6)
        assert float(row["max_c"]) == pytest.approx(plant.max(), abs=1e-6)
        assert np.array_equal(read_mask(out / "masks" / f"{tid}.png").labels,
                              np.kron(truth.scene_mask[region], np.ones((2, 2), dtype=np.uint8)))
    failed = [r for r in rows if r["thermal_id"] == "thermal_c"]
    assert len(failed) == 1 and failed[0]["reason"] == "no_candidates"


def test_pipeline_uniform_scene(tmp_path, demo):
    _, truth = demo
    Image.fromarray(np.full((80, 96), 90, np.uint8), mode="L").save(tmp_path / "g.png")
    write_thermal_counts(tmp_path / "t.png", counts_from_intensity(truth.scene[:24, :32]))
    write_manifest(tmp_path / "m.jsonl", [thermal_record("t", "2024-01-01T00:00:00Z"),
                                          gen_record("g", "2024-01-01T00:00:00Z")])
    assert main(["pipeline", "--manifest", str(tmp_path / "m.jsonl"), "--out-dir", str(tmp_path / "o")]) == 1
    rows = list(csv.DictReader((tmp_path / "o" / "temperatures.csv").open()))
    assert [(r["thermal_id"], r["reason"]) for r in rows] == [("t", "below_threshold")]


def test_pipeline_rerun_and_jobs_identical(demo):
    root, _ = demo
    m = str(root / "manifest.jsonl")
    main(["pipeline", "--manifest", m, "--out-dir", str(root / "r1"), "--jobs", "1"])
    main(["pipeline", "--manifest", m, "--out-dir", str(root / "r2"), "--jobs", "1"])
    main(["pipeline", "--manifest", m, "--out-dir", str(root / "r3"), "--jobs", "4"])
    a = tree_bytes(root / "r1")
    assert a == tree_bytes(root / "r2") == tree_bytes(root / "r3")
    assert set(a) == {"matches.jsonl", "temperatures.csv", "masks/thermal_a.png", "masks/thermal_b.png"}


def test_transfer_and_extract_subcommands(demo):
    root, _ = demo
    args = ["--manifest", str(root / "manifest.jsonl"), "--out-dir", str(root / "o")]
    assert main(["match", *args]) == 1
    assert main(["transfer", *args]) == 1
    tr = read_jsonl(root / "o" / "transfers.jsonl")
    ok = {t["thermal_id"]: t for t in tr if t["status"] == "ok"}
    assert ok["thermal_a"]["box"] == [20, 24, 64, 48]
    assert ok["thermal_b"]["box"] == [100, 80, 64, 48]
    assert main(["extract", *args]) == 1
    assert (root / "o" / "temperatures.csv").is_file()


# --- exit codes and config


def test_exit_codes(tmp_path, demo):
    root, _ = demo
    out = str(tmp_path / "o")
    assert main(["match", "--manifest", str(root / "manifest.jsonl"), "--out-dir", out, "--id", "thermal_a"]) == 0
    assert main(["match", "--manifest", str(root / "manifest.jsonl"), "--out-dir", out]) == 1
    assert main(["match", "--manifest", str(tmp_path / "missing.jsonl"), "--out-dir", out]) == 2
    (tmp_path / "bad.jsonl").write_text("{not json\n")
    assert main(["match", "--manifest", str(tmp_path / "bad.jsonl"), "--out-dir", out]) == 2
    assert main(["transfer", "--manifest", str(root / "manifest.jsonl"), "--out-dir", str(tmp_path / "none")]) == 2
    assert main(["match", "--manifest", str(root / "manifest.jsonl"), "--scale-min", "0"]) == 2


def test_config_file_and_overrides(tmp_path, demo):
    root, _ = demo
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        f'manifest = "{root / "manifest.jsonl"}"\nout_dir = "out"\nseed = 3\n'
        "[match]\nthreshold = 0.99\nwindow_sec = 60.0\n"
        "[schedule]\nstrategy = \"balanced\"\nbatch_size = 2\n"
        "[augment]\ntarget_size = [32, 48]\n"
    )
    c = load_config(cfg)
    assert c.out_dir == tmp_path / "out" and c.seed == 3 and c.target_size == (32, 48)
    assert c.match.accept_threshold == 0.99 and c.match.time_window == 60.0
    # with the wide window thermal_c finds the scene too
    assert main(["--config", str(cfg), "match"]) == 0
    assert main(["--config", str(cfg), "match", "--window-sec", "2"]) == 1
    bad = tmp_path / "bad.toml"
    bad.write_text("colour = 1\n")
    assert main(["--config", str(bad), "match"]) == 2
    assert main(["--config", str(tmp_path / "nope.toml"), "match"]) == 2


def test_schedule_subcommand(tmp_path):
    recs = [{"id": f"s{i}", "domain": "synthetic", "modality": "rgb", "image_path": "x.png",
             "timestamp": "2024-01-01T00:00:00Z", "mask_path": "x_mask.png"} for i in range(10)]
    recs += [{"id": f"r{i}", "domain": "real", "modality": "rgb", "image_path": "x.png",
              "timestamp": "2024-01-01T00:00:00Z", "mask_path": "x_mask.png"} for i in range(4)]
    write_manifest(tmp_path / "m.jsonl", recs)
    base = ["schedule", "--manifest", str(tmp_path / "m.jsonl"), "--seed", "5"]
    assert main([*base, "--out-dir", str(tmp_path / "a"), "--strategy", "balanced", "--batch-size", "3", "--k", "2"]) == 0
    d = json.loads((tmp_path / "a" / "schedule.json").read_text())
    assert d["strategy"] == "balanced" and len(d["epochs"][0]["batches"]) == 5
    reals = {sid for b in d["epochs"][0]["batches"] for sid, dom in b if dom == "real"}
    assert reals == {"r0", "r1"}
    assert main([*base, "--out-dir", str(tmp_path / "b"), "--strategy", "balanced", "--batch-size", "3", "--k", "2"]) == 0
    assert (tmp_path / "a" / "schedule.json").read_bytes() == (tmp_path / "b" / "schedule.json").read_bytes()
    assert main([*base, "--out-dir", str(tmp_path / "c"), "--strategy", "balanced", "--k", "9"]) == 2
    assert main([*base, "--out-dir", str(tmp_path / "c"), "--strategy", "finetune", "--k", "0"]) == 2


def test_augment_subcommand(demo):
    root, _ = demo
    args = ["augment", "--manifest", str(root / "manifest.jsonl"), "--target-size", "64", "--seed", "4"]
    assert main([*args, "--out-dir", str(root / "a1")]) == 0
    assert main([*args, "--out-dir", str(root / "a2"), "--jobs", "2"]) == 0
    assert tree_bytes(root / "a1") == tree_bytes(root / "a2")
    trace = json.loads((root / "a1" / "augment_trace.json").read_text())
    assert list(trace["samples"]) == ["rgb_0001"]
    assert read_mask(root / "a1" / "augmented" / "rgb_0001_mask.png").shape == (64, 64)


def test_json_logs(demo, capsys):
    root, _ = demo
    main(["match", "--manifest", str(root / "manifest.jsonl"), "--out-dir", str(root / "o"), "--jobs", "4"])
    err = [ln for ln in capsys.readouterr().err.splitlines() if ln.strip()]
    assert err and all(isinstance(json.loads(ln), dict) for ln in err)
    assert any(json.loads(ln).get("reason") == "no_candidates" for ln in err)


def test_bundled_fixture_is_current(tmp_path):
    bundled = ROOT / "fixtures" / "demo"
    build_demo(tmp_path / "fresh")
    assert (bundled / "manifest.jsonl").read_text() == (tmp_path / "fresh" / "manifest.jsonl").read_text()
    for p in sorted((bundled).rglob("*.png")):
        a = np.asarray(Image.open(p))
        b = np.asarray(Image.open(tmp_path / "fresh" / p.relative_to(bundled)))
        assert a.dtype == b.dtype and np.array_equal(a, b), p.name
