import json
import struct

import numpy as np
import pytest

from crosswatch.cli import main
from crosswatch.model import CHECKPOINT_MAGIC

TRAIN_CONFIG = {
    "t_window": 10, "horizon": 2, "learning_rate": 1e-3, "batch_size": 8,
    "epochs": 2, "seed": 0, "ablation": "full", "stride": 10,
    "hidden": 8, "visual_embed": 8, "box_embed": 4, "relation_embed": 4,
    "attention_hidden": 4, "action_embed": 4,
}

GEN_CONFIG = {"tracks_train": 6, "tracks_val": 2, "tracks_test": 4,
              "frames_per_track": 60, "feature_dim": 8}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One generated dataset and one trained checkpoint shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    (root / "gen.json").write_text(json.dumps(GEN_CONFIG))
    (root / "train.json").write_text(json.dumps(TRAIN_CONFIG))
    assert main(["generate", "--config", str(root / "gen.json"), "--seed", "3",
                 "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(root / "train.json"),
                 "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root


def test_generate_is_deterministic_and_guarded(tmp_path, workdir, capsys):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps(GEN_CONFIG))
    assert main(["generate", "--config", str(cfg), "--seed", "3",
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["generate", "--config", str(cfg), "--seed", "3",
                 "--out", str(tmp_path / "b")]) == 0
    for name in ("annotations.jsonl", "features.bin", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # refuses to clobber without --force
    assert main(["generate", "--config", str(cfg), "--seed", "3",
                 "--out", str(tmp_path / "a")]) == 2
    assert main(["generate", "--config", str(cfg), "--seed", "4",
                 "--out", str(tmp_path / "a"), "--force"]) == 0


def test_generate_rejects_invalid_config(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({**GEN_CONFIG, "noise_sigma": -1.0}))
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2
    assert "noise_sigma" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()  # no partial artifacts


def test_train_intent_only_checkpoint_has_no_action_heads(workdir, tmp_path):
    out = tmp_path / "run_i"
    assert main(["train", "--config", str(workdir / "train.json"),
                 "--data", str(workdir / "data"), "--out", str(out),
                 "--ablation", "i"]) == 0
    blob = (out / "checkpoint.bin").read_bytes()
    assert blob[:8] == CHECKPOINT_MAGIC
    (mlen,) = struct.unpack("<I", blob[8:12])
    manifest = json.loads(blob[12:12 + mlen])
    names = {p["name"] for p in manifest["params"]}
    assert not any(n.startswith("head.action") or n.startswith("dec.") for n in names)
    assert any(n.startswith("head.intent") for n in names)


def test_train_same_seed_reproduces_log(workdir, tmp_path):
    out2 = tmp_path / "run2"
    assert main(["train", "--config", str(workdir / "train.json"),
                 "--data", str(workdir / "data"), "--out", str(out2)]) == 0
    assert (out2 / "train_log.jsonl").read_bytes() == (workdir / "run/train_log.jsonl").read_bytes()
    assert (out2 / "checkpoint.bin").read_bytes() == (workdir / "run/checkpoint.bin").read_bytes()


def test_eval_both_settings_emit_reports(workdir, tmp_path, capsys):
    for setting in ("original", "event"):
        out = tmp_path / f"report_{setting}.json"
        assert main(["eval", "--checkpoint", str(workdir / "run/checkpoint.bin"),
                     "--data", str(workdir / "data"), "--setting", setting,
                     "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        report = json.loads(out.read_text())
        assert json.loads(printed) == report
        assert report["setting"] == setting
        assert report["frames"] > 0
        for key in ("accuracy", "f1", "precision", "auc", "delta_s", "action_map"):
            assert report[key] is not None


def test_eval_csv_row(workdir, capsys):
    assert main(["eval", "--checkpoint", str(workdir / "run/checkpoint.bin"),
                 "--data", str(workdir / "data"), "--csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("setting,frames,pos,neg,")
    assert lines[1].startswith("original,")


def test_train_fails_fast_on_single_intent_dataset(tmp_path):
    # balanced sampling needs both intent classes in the training split
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({**GEN_CONFIG, "crosser_fraction": 0.0}))
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "nc")]) == 0
    cfgt = tmp_path / "train.json"
    cfgt.write_text(json.dumps(TRAIN_CONFIG))
    assert main(["train", "--config", str(cfgt), "--data", str(tmp_path / "nc"),
                 "--out", str(tmp_path / "ncrun")]) == 2


def test_eval_event_rejected_on_crossing_free_split(workdir, tmp_path, capsys):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({**GEN_CONFIG, "crosser_fraction": 0.0}))
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "nc")]) == 0
    code = main(["eval", "--checkpoint", str(workdir / "run/checkpoint.bin"),
                 "--data", str(tmp_path / "nc"), "--setting", "event"])
    assert code == 2
    assert "crossing event" in capsys.readouterr().err


def test_predict_dump_contract(workdir, tmp_path, capsys):
    ann = json.loads((workdir / "data/annotations.jsonl").read_text().splitlines()[0])
    track_id = ann["splits"]["test"][0]
    out = tmp_path / "dump.jsonl"
    assert main(["predict", "--checkpoint", str(workdir / "run/checkpoint.bin"),
                 "--data", str(workdir / "data"), "--track", track_id,
                 "--out", str(out)]) == 0
    err = capsys.readouterr().err
    assert "per-frame inference:" in err and "ms +/-" in err
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == GEN_CONFIG["frames_per_track"]
    for row in rows:
        assert 0.0 <= row["intent"] <= 1.0
        assert len(row["actions"]) == 7
        assert len(row["future"]) == TRAIN_CONFIG["horizon"]
        for pairs in row["attention"].values():
            total = sum(w for _, w in pairs)
            assert total == pytest.approx(1.0, abs=1e-9)


def test_predict_unknown_track(workdir, capsys):
    assert main(["predict", "--checkpoint", str(workdir / "run/checkpoint.bin"),
                 "--data", str(workdir / "data"), "--track", "nope"]) == 2


def test_eval_auc_matches_prediction_dump_recomputation(workdir, tmp_path):
    # cross-check oracle: pool the per-frame dumps of every test track and
    # recompute AUC by brute force; must equal the report's AUC
    header = json.loads((workdir / "data/annotations.jsonl").read_text().splitlines()[0])
    report_path = tmp_path / "r.json"
    assert main(["eval", "--checkpoint", str(workdir / "run/checkpoint.bin"),
                 "--data", str(workdir / "data"), "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text())

    frames_by_track = {}
    for line in (workdir / "data/annotations.jsonl").read_text().splitlines()[1:]:
        rec = json.loads(line)
        frames_by_track.setdefault(rec["track_id"], []).append(rec)

    scores, labels = [], []
    for track_id in header["splits"]["test"]:
        dump = tmp_path / f"{track_id}.jsonl"
        assert main(["predict", "--checkpoint", str(workdir / "run/checkpoint.bin"),
                     "--data", str(workdir / "data"), "--track", track_id,
                     "--out", str(dump)]) == 0
        for row, rec in zip((json.loads(l) for l in dump.read_text().splitlines()),
                            frames_by_track[track_id]):
            assert row["t"] == rec["frame_index"]
            scores.append(row["intent"])
            labels.append(rec["intent"])

    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    brute = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg) / (len(pos) * len(neg))
    assert report["auc"] == pytest.approx(brute, abs=1e-12)


def test_gradcheck_passes_and_detects_corruption(capsys):
    assert main(["gradcheck", "--size", "toy"]) == 0
    out1 = capsys.readouterr().out
    assert "enc.gru" in out1 and "ok" in out1
    assert main(["gradcheck", "--size", "toy"]) == 0
    out2 = capsys.readouterr().out
    assert out1 == out2  # stable across runs at fixed seed
    assert main(["gradcheck", "--corrupt", "head.intent"]) == 3
    out3 = capsys.readouterr()
    assert "FAIL" in out3.out and "head.intent" in out3.err


def test_unknown_train_config_key_rejected(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TRAIN_CONFIG, "momentum": 0.9}))
    assert main(["train", "--config", str(bad), "--data", str(workdir / "data"),
                 "--out", str(tmp_path / "x")]) == 2
    assert "momentum" in capsys.readouterr().err
