"""Offline training: stage-aligned labels, two-phase learning-rate schedule,
Adam, per-step CSV logging, and per-epoch checkpoints."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import PairSampler
from .labels import build_labels, stack_labels
from .loss import total_loss
from .model import build_model, save_checkpoint


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    pairs_per_epoch: int = 2000
    head_lr_start: float = 0.005
    head_lr_mid: float = 0.002    # phase boundary, reached at epoch p1+1
    head_lr_end: float = 0.0005
    backbone_lr_ratio: float = 0.1
    seed: int = 0


def lr_schedule(epoch: int, cfg: TrainConfig) -> tuple[float, float]:
    """(head_lr, backbone_lr) for a 1-indexed epoch.

    Head: geometric decay start->mid across the first quarter of the run,
    then geometric decay mid->end across the rest. Backbone: frozen at 0 for
    the first half of the epochs, then a fixed fraction of the head rate.
    """
    if not 1 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [1, {cfg.epochs}]")
    p1 = max(1, round(cfg.epochs * 0.25))
    if epoch <= p1:
        head = cfg.head_lr_start * (cfg.head_lr_mid / cfg.head_lr_start) \
            ** ((epoch - 1) / p1)
    else:
        span = max(1, cfg.epochs - p1 - 1)
        head = cfg.head_lr_mid * (cfg.head_lr_end / cfg.head_lr_mid) \
            ** ((epoch - p1 - 1) / span)
    backbone = 0.0 if epoch <= cfg.epochs // 2 else cfg.backbone_lr_ratio * head
    return head, backbone


@dataclass
class TrainResult:
    checkpoint: str
    metrics_csv: str
    model: object
    losses: list = field(default_factory=list)   # per-step totals


def _label_tensors(pairs, label_cfg):
    """Per-stage batched torch label tensors for a list of TrainingPairs."""
    out = []
    for stage in range(1, label_cfg.n_stages + 1):
        batch = stack_labels([build_labels(p.box_in_search, stage, label_cfg)
                              for p in pairs])
        batch.heatmap = torch.from_numpy(batch.heatmap)
        batch.offsets = torch.from_numpy(batch.offsets)
        batch.offsets_mask = torch.from_numpy(batch.offsets_mask)
        batch.size = torch.from_numpy(batch.size)
        batch.size_mask = torch.from_numpy(batch.size_mask)
        out.append(batch)
    return out


def _batch_tensors(pairs):
    template = torch.from_numpy(np.stack([p.template for p in pairs]))
    search = torch.from_numpy(np.stack([p.search for p in pairs]))
    return template, search


def _split_params(model):
    backbone, head = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (backbone if name.startswith("backbone.") else head).append(p)
    return head, backbone


def run_training(run, sequences=None, sampler=None, out_dir="runs/train",
                 verbose=False) -> TrainResult:
    """Train a model described by `run` (an object with .model, .labels,
    .loss, .aug, and .train config sections).

    Data comes either from `sequences` (a PairSampler is built over them with
    run.aug) or from an explicit `sampler` with a sample_batch(n) method.
    Writes metrics.csv and per-epoch checkpoints under out_dir; returns the
    final checkpoint path, the log path, and the trained model.
    """
    tc = run.train
    if run.labels.n_stages != run.model.n_stages:
        raise ValueError(f"label stages {run.labels.n_stages} != "
                         f"model stages {run.model.n_stages}")
    os.makedirs(out_dir, exist_ok=True)
    torch.manual_seed(tc.seed)
    model = build_model(run.model)
    if run.model.backbone == "resnet50-modified":
        # only the last three stages of the trunk train
        for name, p in model.backbone.named_parameters():
            if not name.startswith(("layer2", "layer3", "layer4")):
                p.requires_grad_(False)
    model.train()

    if sampler is None:
        if not sequences:
            raise ValueError("need sequences or an explicit sampler")
        sampler = PairSampler(sequences, run.aug,
                              np.random.default_rng(tc.seed + 1))

    head_params, backbone_params = _split_params(model)
    opt = torch.optim.Adam([
        {"params": head_params, "lr": tc.head_lr_start},
        {"params": backbone_params, "lr": 0.0},
    ], betas=(0.9, 0.999), eps=1e-8)

    steps_per_epoch = max(1, tc.pairs_per_epoch // tc.batch_size)
    metrics_csv = os.path.join(out_dir, "metrics.csv")
    stages = range(1, run.model.n_stages + 1)
    columns = ["step", "epoch", "lr_head", "lr_backbone", "loss_total"]
    for s in stages:
        columns += [f"loss_kpt_s{s}", f"loss_offs_s{s}", f"loss_size_s{s}"]

    result = TrainResult(checkpoint="", metrics_csv=metrics_csv, model=model)
    manifest_extra = {"rho": run.labels.rho, "sigma": run.labels.sigma}
    gstep = 0
    with open(metrics_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for epoch in range(1, tc.epochs + 1):
            lr_head, lr_backbone = lr_schedule(epoch, tc)
            opt.param_groups[0]["lr"] = lr_head
            opt.param_groups[1]["lr"] = lr_backbone
            epoch_losses = []
            for _ in range(steps_per_epoch):
                gstep += 1
                pairs = sampler.sample_batch(tc.batch_size)
                template, search = _batch_tensors(pairs)
                labels = _label_tensors(pairs, run.labels)
                preds = model(template, search)
                loss, parts = total_loss([p.raw for p in preds], labels, run.loss)
                if not math.isfinite(parts["total"]):
                    bad = {k: v for k, v in parts.items() if not math.isfinite(v)}
                    raise RuntimeError(
                        f"non-finite loss at step {gstep}: {bad}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                row = [gstep, epoch, lr_head, lr_backbone, parts["total"]]
                for s in stages:
                    row += [parts[f"stage{s}/kpt"], parts[f"stage{s}/offsets"],
                            parts[f"stage{s}/size"]]
                writer.writerow(row)
                result.losses.append(parts["total"])
                epoch_losses.append(parts["total"])
            fh.flush()
            ckpt = os.path.join(out_dir, f"checkpoint_ep{epoch:02d}.pt")
            save_checkpoint(ckpt, model, extra={**manifest_extra, "epoch": epoch})
            result.checkpoint = ckpt
            if verbose:
                print(f"epoch {epoch:3d}  lr {lr_head:.5f}/{lr_backbone:.6f}  "
                      f"loss {np.mean(epoch_losses):.4f}")

    final = os.path.join(out_dir, "checkpoint.pt")
    save_checkpoint(final, model, extra={**manifest_extra, "epoch": tc.epochs})
    result.checkpoint = final
    model.eval()
    return result
