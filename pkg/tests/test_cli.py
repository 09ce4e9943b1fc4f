"""End-to-end command-line tests, run in-process through main(argv).

A tiny untrained checkpoint and a short synthetic sequence keep every
command fast; training quality is covered elsewhere.
"""

import subprocess
import sys

import numpy as np
import pytest
import torch

from kptrack.cli import main
from kptrack.data import SynthConfig, save_sequence, synth_sequence
from kptrack.evaluate import load_summary
from kptrack.model import (ModelConfig, build_model, manifest_path,
                           read_manifest, save_checkpoint)

TINY = ["--set", "model.feat_channels=8", "--set", "model.tiny_width=4"]
SMALL_DATA = ["--set", "data.n_sequences=2", "--set", "synth.n_frames=6"]


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    torch.manual_seed(0)
    cfg = ModelConfig(backbone="tiny", n_stages=2, feat_channels=8,
                      tiny_width=4)
    model = build_model(cfg)
    path = tmp_path_factory.mktemp("ckpt") / "model.pt"
    save_checkpoint(str(path), model)
    return str(path)


@pytest.fixture(scope="module")
def seq_dir(tmp_path_factory):
    seq = synth_sequence(SynthConfig(n_frames=6, seed=5))
    d = tmp_path_factory.mktemp("seqs") / seq.name
    save_sequence(d, seq)
    return str(d)


def test_no_command_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2


def test_console_script_installed():
    proc = subprocess.run([sys.executable, "-m", "kptrack.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "train" in proc.stdout and "sweep" in proc.stdout


def test_unknown_config_key_exits_2(tmp_path, capsys):
    rc = main(["synth", "--out", str(tmp_path), "--set", "nope.nope=1"])
    assert rc == 2
    assert "nope.nope" in capsys.readouterr().err


def test_synth_writes_sequences(tmp_path):
    out = tmp_path / "data"
    rc = main(["synth", "--out", str(out), "--set", "data.n_sequences=2",
               "--set", "synth.n_frames=5", "--set", "data.base_seed=11"])
    assert rc == 0
    dirs = sorted(p for p in out.iterdir() if p.is_dir())
    assert [d.name for d in dirs] == ["synth-11", "synth-12"]
    for d in dirs:
        assert len(list(d.glob("*.png"))) == 5
        assert (d / "groundtruth.txt").exists()
    assert (out / "config.txt").exists()


def test_synth_zero_sequences_exits_2(tmp_path, capsys):
    rc = main(["synth", "--out", str(tmp_path),
               "--set", "data.n_sequences=0"])
    assert rc == 2
    assert "n_sequences" in capsys.readouterr().err


def test_train_without_any_dataset_exits_2(tmp_path, capsys):
    rc = main(["train", "--out", str(tmp_path),
               "--set", "data.n_sequences=0"])
    assert rc == 2
    assert "dataset" in capsys.readouterr().err


def test_train_tiny_run_and_manifest(tmp_path):
    out = tmp_path / "run"
    rc = main(["train", "--out", str(out), "--quiet",
               "--set", "model.n_stages=1",
               "--set", "train.epochs=1", "--set", "train.batch_size=2",
               "--set", "train.pairs_per_epoch=2",
               "--set", "synth.n_frames=8", "--set", "data.n_sequences=2",
               *TINY])
    assert rc == 0
    ckpt = out / "checkpoint.pt"
    assert ckpt.exists()
    assert (out / "metrics.csv").exists()
    assert (out / "config.txt").exists()
    manifest = read_manifest(manifest_path(str(ckpt)))
    assert manifest["n_stages"] == 1


def test_track_writes_deterministic_trajectory(tmp_path, ckpt, seq_dir):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        rc = main(["track", "--checkpoint", ckpt, "--sequence", seq_dir,
                   "--out", str(out)])
        assert rc == 0
    t1 = (out1 / "trajectory.txt").read_bytes()
    t2 = (out2 / "trajectory.txt").read_bytes()
    assert t1 == t2
    lines = t1.decode().splitlines()
    assert len(lines) == 6
    gt_first = (tmp_path / "a").parent  # first ground-truth line must match
    first_gt = open(f"{seq_dir}/groundtruth.txt").readline().strip()
    assert lines[0] == first_gt


def test_track_viz_and_heatmaps(tmp_path, ckpt, seq_dir):
    out = tmp_path / "viz"
    rc = main(["track", "--checkpoint", ckpt, "--sequence", seq_dir,
               "--out", str(out), "--viz", "--heatmaps"])
    assert rc == 0
    frames = sorted((out / "frames").glob("frame_*.png"))
    stages = sorted((out / "frames").glob("stages_*.png"))
    assert len(frames) == 6
    assert len(stages) == 5          # one per tracked frame
    assert (out / "trajectory.txt").exists()


def test_track_manifest_mismatch_exits_1(tmp_path, ckpt, seq_dir, capsys):
    rc = main(["track", "--checkpoint", ckpt, "--sequence", seq_dir,
               "--out", str(tmp_path), "--set", "model.n_stages=5", *TINY])
    assert rc == 1
    assert "mismatch" in capsys.readouterr().err


def test_eval_ope_summary_and_plots(tmp_path, ckpt):
    out = tmp_path / "eval"
    rc = main(["eval", "--checkpoint", ckpt, "--out", str(out),
               "--protocol", "ope", *SMALL_DATA])
    assert rc == 0
    summary = load_summary(out / "summary.txt")
    assert "auc" in summary and "precision_at_20" in summary
    assert 0.0 <= summary["auc"] <= 1.0
    assert summary["n_sequences"] == 2
    assert (out / "precision.png").exists()
    assert (out / "success.png").exists()
    csvs = list(out.glob("*_frames.csv"))
    trajs = list(out.glob("*_trajectory.txt"))
    assert len(csvs) == 2 and len(trajs) == 2
    assert (out / "config.txt").exists()


def test_eval_restart_summary(tmp_path, ckpt):
    out = tmp_path / "eval"
    rc = main(["eval", "--checkpoint", ckpt, "--out", str(out),
               "--protocol", "restart", *SMALL_DATA])
    assert rc == 0
    summary = load_summary(out / "summary.txt")
    assert "failures_total" in summary
    assert "failures_per_sequence" in summary
    assert "accuracy" in summary


def test_eval_empty_dataset_exits_1(tmp_path, ckpt, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    rc = main(["eval", "--checkpoint", ckpt, "--out", str(tmp_path / "o"),
               "--set", f"data.root={empty}"])
    assert rc == 1
    assert "no sequence folders" in capsys.readouterr().err


def test_sweep_small_grid(tmp_path, ckpt):
    outs = []
    for name in ("s1", "s2"):
        out = tmp_path / name
        rc = main(["sweep", "--checkpoint", ckpt, "--out", str(out),
                   "--coarse-step", "0.9", "--refine-radius", "0.01",
                   "--refine-step", "0.01",
                   "--set", "data.n_sequences=1",
                   "--set", "synth.n_frames=5"])
        assert rc == 0
        outs.append(out)
    table = (outs[0] / "score_table.csv").read_text().splitlines()
    assert table[0] == "level,penalty_k,window_influence,size_lr,score"
    rows = [r.split(",") for r in table[1:]]
    level1 = [r for r in rows if r[0] == "1"]
    assert len(level1) == 8                     # {0, 0.9}^3 coarse grid
    best = load_summary(outs[0] / "best_hyper.txt")
    scores = [float(r[4]) for r in rows]
    assert best["score"] >= max(scores) - 1e-9
    assert {"track.penalty_k", "track.window_influence",
            "track.size_lr"} <= set(best)
    # rerun reproduces the same winner and table
    assert (outs[0] / "best_hyper.txt").read_bytes() == \
        (outs[1] / "best_hyper.txt").read_bytes()
    assert (outs[0] / "score_table.csv").read_bytes() == \
        (outs[1] / "score_table.csv").read_bytes()


def test_viz_command(tmp_path, ckpt, seq_dir):
    out = tmp_path / "viz"
    rc = main(["viz", "--checkpoint", ckpt, "--sequence", seq_dir,
               "--out", str(out)])
    assert rc == 0
    frames = list((out / "frames").glob("frame_*.png"))
    stages = list((out / "frames").glob("stages_*.png"))
    assert len(frames) == 6
    assert len(stages) == 5


def test_stage_probs_exposed_per_stage(ckpt, seq_dir):
    from kptrack.data import load_sequence
    from kptrack.model import load_checkpoint
    from kptrack.track import Tracker
    model, _ = load_checkpoint(ckpt)
    seq = load_sequence(seq_dir)
    tracker = Tracker(model)
    tracker.init(seq.frames[0], seq.boxes[0])
    tracker.update(seq.frames[1])
    assert len(tracker.last_stage_probs) == model.cfg.n_stages == 2
    for p in tracker.last_stage_probs:
        assert p.shape == (31, 31)
        assert np.all((p >= 0) & (p <= 1))
