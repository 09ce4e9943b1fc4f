"""Train a small tracker on synthetic sequences and watch it follow a
held-out target.

Takes about ten minutes on a single CPU core, less on a typical laptop.
Outputs land in runs/quickstart/: the checkpoint, the training log, a
trajectory file, and annotated frames with per-stage heatmap panels for
the first held-out sequence.
"""

from types import SimpleNamespace

import numpy as np
import torch

from kptrack.data import AugConfig, SynthConfig, make_synth_dataset
from kptrack.evaluate import ope_metrics, run_ope
from kptrack.geometry import iou
from kptrack.labels import LabelConfig
from kptrack.loss import LossConfig
from kptrack.model import ModelConfig
from kptrack.track import Tracker, save_trajectory
from kptrack.train import TrainConfig, run_training
from kptrack.viz import render_tracking

OUT = "runs/quickstart"

torch.set_num_threads(max(1, torch.get_num_threads()))

# A narrow model: same architecture as the full-width version, just small
# enough to train while you fetch coffee.
run = SimpleNamespace(
    model=ModelConfig(backbone="tiny", n_stages=3, feat_channels=16,
                      tiny_width=8),
    labels=LabelConfig(),
    loss=LossConfig(),
    aug=AugConfig(),
    train=TrainConfig(epochs=20, batch_size=8, pairs_per_epoch=1000, seed=0),
)

print("generating training sequences ...")
train_seqs = make_synth_dataset(SynthConfig(), 8, base_seed=0)

print("training ...")
result = run_training(run, sequences=train_seqs, out_dir=OUT, verbose=True)

# Held out: different seeds, longer sequences, one distractor.
test_seqs = make_synth_dataset(SynthConfig(n_frames=100, n_distractors=1),
                               3, base_seed=500)

print("\ntracking held-out sequences ...")
for seq in test_seqs:
    trajectory = run_ope(Tracker(result.model), seq)
    overlaps = [iou(p, g) for p, g in zip(trajectory, seq.boxes)]
    metrics = ope_metrics(trajectory, list(seq.boxes))
    print(f"  {seq.name}: mean IoU {np.mean(overlaps):.3f}, "
          f"auc {metrics.auc:.3f}, precision@20 {metrics.precision_at_20:.3f}")
    save_trajectory(f"{OUT}/{seq.name}_trajectory.txt", trajectory)

print("\nrendering the first sequence with stage heatmaps ...")
render_tracking(result.model, test_seqs[0], f"{OUT}/frames", heatmaps=True)
print(f"done; see {OUT}/frames/")
