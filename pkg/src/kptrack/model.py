"""Siamese backbone, keypoint prediction head, stage cascade, and branch
aggregation. The template branch embeds a 127x127 crop into per-stage 5x5
correlation kernels; the search branch correlates a 255x255 crop against them
and predicts 5-channel maps (center logit, y/x offsets, h/w size) at each
cascade stage. Three backbone taps run parallel cascades whose predictions
are merged per stage with learnable non-negative weights.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, asdict, replace

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class ModelConfig:
    backbone: str = "tiny"         # "tiny" or "resnet50-modified"
    n_stages: int = 3
    feat_channels: int = 256
    tiny_width: int = 16           # stem width of the tiny backbone
    template_size: int = 127
    search_size: int = 255
    stride: int = 8

    @property
    def template_feat(self) -> int:
        return (self.template_size - 7) // self.stride       # 127 -> 15

    @property
    def search_feat(self) -> int:
        return (self.search_size - 7) // self.stride         # 255 -> 31


def conv_bn_relu(cin, cout, k, stride=1, padding=0):
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=padding, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


def center_crop(x: torch.Tensor, size: int) -> torch.Tensor:
    """Center size x size window of a (B, C, H, W) map."""
    h, w = x.shape[-2:]
    if h < size or w < size:
        raise ValueError(f"cannot crop {size} from {h}x{w}")
    i = (h - size) // 2
    j = (w - size) // 2
    return x[..., i:i + size, j:j + size]


def depthwise_xcorr(search: torch.Tensor, kernel: torch.Tensor,
                    padding: int = 0) -> torch.Tensor:
    """Per-channel cross-correlation of each batch item with its own kernel.

    search is (B, C, H, W), kernel (B, C, h, w); returns (B, C, H', W'). Uses
    a grouped convolution with B*C groups so every channel of every item is
    correlated independently.
    """
    if search.shape[:2] != kernel.shape[:2]:
        raise ValueError(
            f"search {tuple(search.shape)} and kernel {tuple(kernel.shape)} "
            "disagree on batch or channels")
    b, c, h, w = search.shape
    out = F.conv2d(search.reshape(1, b * c, h, w),
                   kernel.reshape(b * c, 1, *kernel.shape[-2:]),
                   groups=b * c, padding=padding)
    return out.view(b, c, out.shape[-2], out.shape[-1])


class TinyBackbone(nn.Module):
    """Three strided valid convolutions (total stride 8) then three refine
    blocks, tapped after each block. 127 -> 15 and 255 -> 31 exactly."""

    def __init__(self, width: int = 16):
        super().__init__()
        w = width
        self.stem = nn.Sequential(
            conv_bn_relu(3, w, 3, stride=2),
            conv_bn_relu(w, 2 * w, 3, stride=2),
            conv_bn_relu(2 * w, 4 * w, 3, stride=2),
        )
        self.blocks = nn.ModuleList([
            conv_bn_relu(4 * w, 4 * w, 3, padding=1) for _ in range(3)])
        self.tap_channels = (4 * w, 4 * w, 4 * w)

    def forward(self, x):
        x = self.stem(x)
        taps = []
        for block in self.blocks:
            x = block(x)
            taps.append(x)
        return taps


class ResNet50Backbone(nn.Module):
    """Stock ResNet-50 trunk with padding trimmed and late stages dilated so
    the effective stride stays 8 and 127/255 inputs land on 15/31 maps.
    Taps are the outputs of the third, fourth, and fifth stages."""

    def __init__(self):
        super().__init__()
        from torchvision.models import resnet50
        net = resnet50(weights=None, replace_stride_with_dilation=[False, True, True])
        net.conv1.padding = (0, 0)
        net.maxpool.padding = 0
        self.conv1, self.bn1, self.relu = net.conv1, net.bn1, net.relu
        self.maxpool = net.maxpool
        self.layer1, self.layer2 = net.layer1, net.layer2
        self.layer3, self.layer4 = net.layer3, net.layer4
        self.tap_channels = (512, 1024, 2048)

    def forward(self, x):
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        x = self.layer1(x)
        t1 = self.layer2(x)
        t2 = self.layer3(t1)
        t3 = self.layer4(t2)
        return [t1, t2, t3]


def make_backbone(cfg: ModelConfig) -> nn.Module:
    if cfg.backbone == "tiny":
        return TinyBackbone(cfg.tiny_width)
    if cfg.backbone == "resnet50-modified":
        return ResNet50Backbone()
    raise ValueError(f"unknown backbone kind {cfg.backbone!r}")


class ChannelAdjust(nn.Module):
    """1x1 convolutions bringing every tap to a common channel count."""

    def __init__(self, tap_channels, out_channels: int):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Sequential(nn.Conv2d(c, out_channels, 1, bias=False),
                          nn.BatchNorm2d(out_channels))
            for c in tap_channels])

    def forward(self, taps):
        return [conv(t) for conv, t in zip(self.convs, taps)]


@dataclass
class PredictionMaps:
    """One stage's aggregated output, raw (B, 5, H, W)."""

    raw: torch.Tensor

    @property
    def center_logits(self) -> torch.Tensor:
        return self.raw[:, 0:1]

    @property
    def offsets(self) -> torch.Tensor:
        return self.raw[:, 1:3]  # (y, x) in cells

    @property
    def size(self) -> torch.Tensor:
        return self.raw[:, 3:5]  # (h, w) in crop pixels


class KPNStage(nn.Module):
    """One cascade stage: refine both paths, extract a 5x5 kernel from the
    template path center, correlate, and predict the 5 output channels."""

    KERNEL = 5

    def __init__(self, channels: int):
        super().__init__()
        self.w_t = conv_bn_relu(channels, channels, 3, padding=1)
        self.w_s = conv_bn_relu(channels, channels, 3, padding=1)
        self.w_a = conv_bn_relu(channels, channels, 3)  # valid, on the 7x7 center
        self.head = nn.Sequential(
            conv_bn_relu(channels, channels, 3, padding=1),
            nn.Conv2d(channels, 5, 3, padding=1),
        )
        # start the center channel at the standard focal-loss prior of 0.01
        # so the initial map is background almost everywhere and the focal
        # term is not dominated by a sea of confident false positives
        with torch.no_grad():
            self.head[-1].bias[0] = math.log(0.01 / 0.99)

    def forward_template(self, x_prev):
        """Returns (x_next, kernel); everything the search path needs later."""
        psi_x = self.w_t(x_prev)
        kernel = self.w_a(center_crop(psi_x, self.KERNEL + 2))
        return psi_x, kernel

    def forward_search(self, y_prev, kernel):
        psi_y = self.w_s(y_prev)
        y_next = depthwise_xcorr(psi_y, kernel, padding=self.KERNEL // 2)
        return y_next, self.head(y_next)

    def forward(self, x_prev, y_prev):
        x_next, kernel = self.forward_template(x_prev)
        y_next, pred = self.forward_search(y_prev, kernel)
        return x_next, y_next, pred


def aggregate_branches(preds: list[torch.Tensor], weights: torch.Tensor) -> torch.Tensor:
    """Convex combination of per-branch predictions.

    Raw weights are clamped to be non-negative and normalized to sum 1 at use
    time, so the parameters themselves are unconstrained during optimization.
    """
    if len(preds) != weights.shape[0]:
        raise ValueError(f"{len(preds)} branches vs {weights.shape[0]} weights")
    w = weights.clamp(min=0.0)
    w = w / w.sum().clamp(min=1e-8)
    out = preds[0] * w[0]
    for p, wi in zip(preds[1:], w[1:]):
        out = out + p * wi
    return out


class SiamKPN(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.n_stages < 1:
            raise ValueError(f"n_stages must be >= 1, got {cfg.n_stages}")
        self.cfg = cfg
        self.backbone = make_backbone(cfg)
        self.adjust = ChannelAdjust(self.backbone.tap_channels, cfg.feat_channels)
        self.n_branches = len(self.backbone.tap_channels)
        self.branches = nn.ModuleList([
            nn.ModuleList([KPNStage(cfg.feat_channels) for _ in range(cfg.n_stages)])
            for _ in range(self.n_branches)])
        self.branch_weights = nn.Parameter(
            torch.ones(cfg.n_stages, self.n_branches))

    def embed(self, image: torch.Tensor, kind: str) -> list[torch.Tensor]:
        """Backbone plus channel adjustment; validates the input contract."""
        want = self.cfg.template_size if kind == "template" else self.cfg.search_size
        if image.ndim != 4 or image.shape[-2:] != (want, want):
            raise ValueError(
                f"{kind} input must be (B, 3, {want}, {want}), "
                f"got {tuple(image.shape)}")
        return self.adjust(self.backbone(image))

    def template_path(self, template: torch.Tensor) -> list[list[torch.Tensor]]:
        """Per-branch list of per-stage correlation kernels."""
        xs = self.embed(template, "template")
        kernels = []
        for b in range(self.n_branches):
            x, ks = xs[b], []
            for stage in self.branches[b]:
                x, k = stage.forward_template(x)
                ks.append(k)
            kernels.append(ks)
        return kernels

    def search_path(self, search: torch.Tensor,
                    kernels: list[list[torch.Tensor]]) -> list[PredictionMaps]:
        """Run the search cascade against cached kernels; aggregated maps per stage."""
        ys = self.embed(search, "search")
        out = []
        for s in range(self.cfg.n_stages):
            branch_preds = []
            for b in range(self.n_branches):
                ys[b], pred = self.branches[b][s].forward_search(ys[b], kernels[b][s])
                branch_preds.append(pred)
            out.append(PredictionMaps(
                aggregate_branches(branch_preds, self.branch_weights[s])))
        return out

    def forward(self, template: torch.Tensor,
                search: torch.Tensor) -> list[PredictionMaps]:
        return self.search_path(search, self.template_path(template))


def build_model(cfg: ModelConfig) -> SiamKPN:
    return SiamKPN(cfg)


# --- checkpoints -----------------------------------------------------------

_MODEL_KEYS = ("backbone", "n_stages", "feat_channels", "tiny_width",
               "template_size", "search_size", "stride")


def write_manifest(path: str, manifest: dict) -> None:
    with open(path, "w") as f:
        for k in sorted(manifest):
            f.write(f"{k} = {manifest[k]}\n")


def read_manifest(path: str) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            out[k.strip()] = _parse_scalar(v.strip())
    return out


def _parse_scalar(s: str):
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


def manifest_path(checkpoint_path: str) -> str:
    base, _ = os.path.splitext(checkpoint_path)
    return base + ".manifest.txt"


def save_checkpoint(path: str, model: SiamKPN, extra: dict | None = None) -> None:
    """Serialize parameters plus a manifest describing the architecture and
    the label geometry it was trained for. A flat-text copy of the manifest
    is written next to the checkpoint."""
    manifest = {k: getattr(model.cfg, k) for k in _MODEL_KEYS}
    if extra:
        manifest.update(extra)
    torch.save({"state_dict": model.state_dict(), "manifest": manifest}, path)
    write_manifest(manifest_path(path), manifest)


def load_checkpoint(path: str, expect: ModelConfig | None = None):
    """Rebuild the model a checkpoint was saved from; returns (model, manifest).

    If `expect` is given, every architecture field must match the manifest;
    a checkpoint saved from a different architecture is rejected.
    """
    blob = torch.load(path, map_location="cpu", weights_only=False)
    manifest = blob["manifest"]
    cfg = ModelConfig(**{k: manifest[k] for k in _MODEL_KEYS if k in manifest})
    if expect is not None:
        bad = {k: (getattr(expect, k), getattr(cfg, k)) for k in _MODEL_KEYS
               if getattr(expect, k) != getattr(cfg, k)}
        if bad:
            raise ValueError(f"checkpoint architecture mismatch: {bad}")
    model = build_model(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, manifest
