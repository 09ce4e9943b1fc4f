"""Multi-task loss over the cascade: focal keypoint term plus masked
smooth-l1 regression on offsets and sizes, summed across stages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

_EPS = 1e-6


@dataclass
class LossConfig:
    alpha: float = 2.0          # focusing power on the predicted probability
    beta: float = 4.0           # down-weighting power on soft negatives
    gamma: float = 0.05         # share of the loss given to negatives
    lambda_offsets: float = 1.0
    lambda_size: float = 0.05


def focal_keypoint_loss(prob: torch.Tensor, target: torch.Tensor,
                        cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Weight-balanced focal loss against a soft Gaussian target.

    Cells with target exactly 1 are positives; every other cell is a negative
    weighted down by (1 - target)**beta. The sum is normalized by the number
    of positives (at least 1, so all-negative batches stay finite).
    """
    p = prob.clamp(_EPS, 1.0 - _EPS)
    pos = target == 1.0
    pos_term = (1.0 - cfg.gamma) * (1.0 - p) ** cfg.alpha * torch.log(p)
    neg_term = cfg.gamma * (1.0 - target) ** cfg.beta * p ** cfg.alpha \
        * torch.log(1.0 - p)
    loss = -torch.where(pos, pos_term, neg_term).sum()
    n_pos = pos.sum().clamp(min=1)
    return loss / n_pos


def smooth_l1(x: torch.Tensor) -> torch.Tensor:
    """Elementwise huber-style penalty: 0.5 x^2 inside |x| < 1, |x| - 0.5 out."""
    ax = x.abs()
    return torch.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def masked_regression_loss(pred: torch.Tensor, target: torch.Tensor,
                           mask: torch.Tensor) -> torch.Tensor:
    """Mean smooth-l1 over the channels of masked cells; 0 if nothing is masked.

    pred and target are (B, C, H, W), mask is (B, H, W) bool.
    """
    n = mask.sum()
    if n == 0:
        return pred.sum() * 0.0
    diff = smooth_l1(pred - target) * mask.unsqueeze(1)
    return diff.sum() / (n * pred.shape[1])


def stage_loss(raw: torch.Tensor, labels, cfg: LossConfig) -> dict[str, torch.Tensor]:
    """Loss components for one stage.

    raw is the (B, 5, H, W) prediction (center logit, offsets, size); labels
    carries heatmap (B, H, W), offsets/size (B, 2, H, W) and their masks.
    """
    kpt = focal_keypoint_loss(torch.sigmoid(raw[:, 0]), labels.heatmap, cfg)
    offs = masked_regression_loss(raw[:, 1:3], labels.offsets, labels.offsets_mask)
    size = masked_regression_loss(raw[:, 3:5], labels.size, labels.size_mask)
    return {"kpt": kpt, "offsets": offs, "size": size}


def total_loss(stage_raws: Sequence[torch.Tensor], stage_labels: Sequence,
               cfg: LossConfig = LossConfig()):
    """Sum of per-stage losses; returns (scalar, components-by-name).

    The component dict holds detached floats keyed stage{s}/{term} plus the
    weighted total, meant for logging and diagnostics.
    """
    if len(stage_raws) != len(stage_labels):
        raise ValueError(
            f"{len(stage_raws)} prediction stages vs {len(stage_labels)} label stages")
    total = None
    parts: dict[str, float] = {}
    for s, (raw, lab) in enumerate(zip(stage_raws, stage_labels), start=1):
        comp = stage_loss(raw, lab, cfg)
        stage_total = comp["kpt"] + cfg.lambda_offsets * comp["offsets"] \
            + cfg.lambda_size * comp["size"]
        total = stage_total if total is None else total + stage_total
        for k, v in comp.items():
            parts[f"stage{s}/{k}"] = float(v.detach())
    parts["total"] = float(total.detach())
    return total, parts
