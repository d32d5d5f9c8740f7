import json

import numpy as np
import pytest
import yaml

from skelflow.cli import main, read_score_table, write_score_table
from skelflow.imageio import read_pnm

TINY = {
    "data": {"benchmark": {"samples_per_class": 4, "frames": 30, "height": 16, "width": 16}},
    "skeleton": {"model": {"frames": 30}, "train": {"epochs": 2, "batch_size": 4}},
    "flow": {
        "model": {"clip_len": 4, "height": 16, "width": 16},
        "prep": {"downsample": 3, "clip_len": 4, "overlap": 2, "crop": 16},
        "train": {"epochs": 2, "batch_size": 4},
    },
    "fusion": {"train": {"epochs": 1, "batch_size": 4}},
    "run": {"record_wall_time": False},
}


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Config file, generated data and a trained skeleton shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "gen"), "--seed", "7"]) == 0
    manifest = root / "gen" / "data" / "manifest.txt"
    data = ["--config", str(cfg), "--set", f"data.manifest={manifest}"]
    assert main(["train-skeleton", *data, "--out", str(root / "skel")]) == 0
    skel = ["--set", f"skeleton.checkpoint={root / 'skel' / 'checkpoints' / 'skeleton'}"]
    assert main(["extract-scores", *data, *skel, "--out", str(root / "scores")]) == 0
    return {"root": root, "cfg": cfg, "manifest": manifest, "data": data, "skel": skel}


def test_gen_data_outputs(workspace):
    gen = workspace["root"] / "gen"
    assert (gen / "config.resolved").exists()
    lines = workspace["manifest"].read_text().splitlines()
    assert len(lines) == 16 and len(lines[0].split()) == 6
    resolved = yaml.safe_load((gen / "config.resolved").read_text())
    assert resolved["seed"] == 7 and resolved["data"]["benchmark"]["samples_per_class"] == 4


def test_gen_data_is_deterministic(workspace, tmp_path, capsys):
    code, _, _ = run_cli(capsys, "gen-data", "--config", workspace["cfg"], "--out", tmp_path, "--seed", 7)
    assert code == 0
    a = workspace["root"] / "gen" / "data"
    for rel in ("manifest.txt", "flow/s00000.flw", "skeleton/s00003.skel"):
        assert (a / rel).read_bytes() == (tmp_path / "data" / rel).read_bytes()


def test_missing_key_names_the_key(workspace, tmp_path, capsys):
    code, _, err = run_cli(capsys, "train-skeleton", "--config", workspace["cfg"], "--out", tmp_path)
    assert code == 2 and "data.manifest" in err
    assert (tmp_path / "config.resolved").exists()


def test_unknown_key_is_rejected(tmp_path, capsys):
    code, _, err = run_cli(capsys, "gen-data", "--set", "data.bogus=1", "--out", tmp_path)
    assert code == 1 and "unknown config key data.bogus" in err


def test_bad_seed(tmp_path, capsys):
    code, _, err = run_cli(capsys, "gen-data", "--seed", "-3", "--out", tmp_path)
    assert code == 1 and "seed" in err


def test_missing_file_is_reported(tmp_path, capsys):
    code, _, err = run_cli(capsys, "eval", "--set", f"data.manifest={tmp_path / 'none.txt'}", "--out", tmp_path)
    assert code == 1 and "does not exist" in err


def test_skeleton_report_and_checkpoint(workspace):
    out = workspace["root"] / "skel"
    records = [json.loads(line) for line in (out / "report.ndjson").read_text().splitlines()]
    assert list(records[0]) == ["epoch", "split", "loss", "accuracy", "lr", "wall_seconds"]
    assert [r["split"] for r in records] == ["train", "train", "test"]
    assert all(r["wall_seconds"] is None for r in records)
    assert (out / "checkpoints" / "skeleton.bin").exists() and (out / "checkpoints" / "skeleton.manifest").exists()


def test_extracted_scores_are_normalized(workspace):
    table = read_score_table(workspace["root"] / "scores" / "scores.txt")
    assert len(table) == 16
    for v in table.values():
        assert v.shape == (5,) and v.min() >= 0.0 and v.max() <= 1.0
        assert v.max() == 1.0 or not v.any()


def test_extract_scores_layer_out_of_range(workspace, tmp_path, capsys):
    code, _, err = run_cli(capsys, "extract-scores", *workspace["data"], *workspace["skel"], "--layers", "5",
                           "--out", tmp_path)
    assert code == 1 and "BJCN-4" in err


def test_eval_oracle_predictions(workspace, tmp_path, capsys):
    lines = [ln.split() for ln in workspace["manifest"].read_text().splitlines()]
    preds = tmp_path / "oracle.txt"
    preds.write_text("".join(f"{sid} {label}\n" for sid, label, *_ in lines))
    code, out, _ = run_cli(capsys, "eval", *workspace["data"], "--set", f"eval.predictions={preds}",
                           "--model", "predictions", "--out", tmp_path)
    assert code == 0 and "accuracy 1.0000" in out
    assert (tmp_path / "eval.txt").read_text().startswith("accuracy 1.000000\n")


def test_eval_skeleton(workspace, tmp_path, capsys):
    code, out, _ = run_cli(capsys, "eval", *workspace["data"], *workspace["skel"], "--model", "skeleton",
                           "--out", tmp_path)
    assert code == 0
    text = (tmp_path / "eval.txt").read_text().splitlines()
    assert text[0].startswith("accuracy ") and len(text) == 5


def zero_scores(workspace, path):
    lines = workspace["manifest"].read_text().splitlines()
    return write_score_table(path, [ln.split()[0] for ln in lines], np.zeros((len(lines), 5)))


def final_train_loss(out):
    records = [json.loads(line) for line in (out / "report.ndjson").read_text().splitlines()]
    return [r["loss"] for r in records if r["split"] == "train"][-1]


def test_zero_scores_level_two_trains_like_level_one(workspace, tmp_path, capsys):
    zeros = zero_scores(workspace, tmp_path / "zeros.txt")
    common = [*workspace["data"], "--set", f"flow.scores={zeros}"]
    assert run_cli(capsys, "train-flow", *common, "--attention", "at1", "--out", tmp_path / "a1")[0] == 0
    assert run_cli(capsys, "train-flow", *common, "--attention", "at2", "--out", tmp_path / "a2")[0] == 0
    assert final_train_loss(tmp_path / "a1") == final_train_loss(tmp_path / "a2")
    for name in ("report.ndjson", "checkpoints/flow.bin"):
        assert (tmp_path / "a1" / name).read_bytes() == (tmp_path / "a2" / name).read_bytes()


def test_zero_radius_level_two_trains_like_baseline(workspace, tmp_path, capsys):
    zeros = zero_scores(workspace, tmp_path / "zeros.txt")
    common = [*workspace["data"], "--set", f"flow.scores={zeros}"]
    assert run_cli(capsys, "train-flow", *common, "--attention", "none", "--out", tmp_path / "n")[0] == 0
    assert run_cli(capsys, "train-flow", *common, "--set", "flow.model.radius_override=0",
                   "--attention", "at2", "--out", tmp_path / "z")[0] == 0
    assert final_train_loss(tmp_path / "n") == final_train_loss(tmp_path / "z")


def test_level_two_needs_scores(workspace, tmp_path, capsys):
    code, _, err = run_cli(capsys, "train-flow", *workspace["data"], "--attention", "at2", "--out", tmp_path)
    assert code == 2 and "flow.scores" in err


def test_frozen_fusion_keeps_skeleton(workspace, tmp_path, capsys):
    scores = workspace["root"] / "scores" / "scores.txt"
    code, out, _ = run_cli(capsys, "train-fused", *workspace["data"], *workspace["skel"],
                           "--set", f"flow.scores={scores}", "--policy", "frozen", "--attention", "at2",
                           "--out", tmp_path)
    assert code == 0 and "skeleton parameters unchanged" in out
    code, out, _ = run_cli(capsys, "eval", *workspace["data"], *workspace["skel"], "--set", "flow.model.attention=at2",
                           "--set", f"fusion.checkpoint={tmp_path / 'checkpoints' / 'fused'}",
                           "--model", "fused", "--out", tmp_path / "ev")
    assert code == 0 and (tmp_path / "ev" / "eval.txt").exists()


def test_joint_fusion_refuses_untrained_skeleton(workspace, tmp_path, capsys):
    code, _, err = run_cli(capsys, "train-fused", *workspace["data"], "--policy", "joint", "--out", tmp_path)
    assert code == 1 and "pretrained" in err
    code, out, _ = run_cli(capsys, "train-fused", *workspace["data"], "--policy", "joint",
                           "--set", "fusion.allow_untrained_skeleton=true", "--out", tmp_path / "ok")
    assert code == 0 and "skeleton parameters updated" in out


def test_render_masks(workspace, tmp_path, capsys):
    scores = workspace["root"] / "scores" / "scores.txt"
    code, _, _ = run_cli(capsys, "render-masks", *workspace["data"], "--set", f"flow.scores={scores}",
                         "--level", "2", "--out", tmp_path)
    assert code == 0
    files = sorted((tmp_path / "masks").glob("*.pgm"))
    assert len(files) == 4 and files[0].name == "s00000_layer1_0000.pgm"
    img = read_pnm(files[0])
    assert img.shape == (16, 16)
    values = set(np.unique(img).tolist())
    assert 0 in values and values <= {0} | set(range(128, 256))


def test_render_masks_level_one_is_binary(workspace, tmp_path, capsys):
    code, _, _ = run_cli(capsys, "render-masks", *workspace["data"], "--set", "masks.layer=2", "--out", tmp_path)
    assert code == 0
    img = read_pnm(sorted((tmp_path / "masks").glob("*.pgm"))[0])
    assert img.shape == (8, 8) and set(np.unique(img).tolist()) <= {0, 128}


def test_identical_runs_are_bitwise_identical(workspace, tmp_path, capsys):
    for name in ("r1", "r2"):
        assert run_cli(capsys, "train-skeleton", *workspace["data"], "--seed", 3, "--out", tmp_path / name)[0] == 0
    for rel in ("report.ndjson", "checkpoints/skeleton.bin", "checkpoints/skeleton.manifest", "config.resolved"):
        assert (tmp_path / "r1" / rel).read_bytes() == (tmp_path / "r2" / rel).read_bytes()
