"""Online tracking: embed the first-frame target once, then per frame crop a
search region around the previous estimate, run the cascade against the
frozen template kernels, and turn the final-stage maps into a box via
candidate selection, scale/ratio penalty, motion-window blending, and
temporal size smoothing. No online learning anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .geometry import BoundingBox, CropWindow, crop_and_resize, search_window, template_window


@dataclass
class TrackHyper:
    score_threshold: float = 0.15
    k_min: int = 8
    k_max: int = 32
    penalty_k: float = 0.2        # scale/ratio change penalty strength
    window_influence: float = 0.45
    size_lr: float = 0.3
    window_sigma: float = 31.0 / 8.0   # in score-map cells
    window_mode: str = "additive"      # or "multiplicative"

    def __post_init__(self):
        if not 0.0 <= self.window_influence <= 1.0:
            raise ValueError("window_influence must be in [0, 1]")
        if not 0.0 <= self.size_lr <= 1.0:
            raise ValueError("size_lr must be in [0, 1]")
        if self.k_min > self.k_max:
            raise ValueError("k_min must be <= k_max")
        if self.window_mode not in ("additive", "multiplicative"):
            raise ValueError(f"unknown window_mode {self.window_mode!r}")


def select_candidates(center_probs: np.ndarray, hyper: TrackHyper) -> np.ndarray:
    """Candidate cells as an (K, 2) array of (row, col), best first.

    Cells scoring strictly above the threshold are taken, then the count is
    clamped to [k_min, k_max]: padded with the next-best sub-threshold cells
    or truncated to the top k_max. Ties break in row-major cell order.
    """
    flat = center_probs.ravel()
    order = np.argsort(-flat, kind="stable")
    above = int((flat > hyper.score_threshold).sum())
    k = min(max(above, hyper.k_min), hyper.k_max, flat.size)
    idx = order[:k]
    return np.stack(np.unravel_index(idx, center_probs.shape), axis=1)


def penalty(cand: BoundingBox, prev: BoundingBox, k: float) -> float:
    """Penalty in (0, 1] for scale and aspect-ratio change between boxes.

    With s = sqrt(w*h) and r = w/h, the factor is
    exp(-k * (max(s1/s2, s2/s1) * max(r1/r2, r2/r1) - 1)): exactly 1 when
    neither scale nor ratio moved, decaying as either drifts.
    """
    s1, s2 = math.sqrt(cand.w * cand.h), math.sqrt(prev.w * prev.h)
    r1, r2 = cand.w / cand.h, prev.w / prev.h
    change = max(s1 / s2, s2 / s1) * max(r1 / r2, r2 / r1)
    return math.exp(-k * (change - 1.0))


def window_blend(pen_scores: np.ndarray, window_values: np.ndarray,
                 influence: float, mode: str = "additive") -> np.ndarray:
    """Mix penalized scores with the motion prior."""
    if mode == "additive":
        return (1.0 - influence) * pen_scores + influence * window_values
    if mode == "multiplicative":
        return pen_scores * ((1.0 - influence) + influence * window_values)
    raise ValueError(f"unknown window_mode {mode!r}")


def gaussian_window(n: int, sigma: float, center: float) -> np.ndarray:
    """Gaussian over cell distance from `center` (in cell units), peak 1."""
    ii = np.arange(n, dtype=np.float64)
    d2 = (ii - center)[:, None] ** 2 + (ii - center)[None, :] ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def decode_box(point, offsets, sizes, window: CropWindow,
               stride: int) -> BoundingBox:
    """Box in image coordinates from one score-map cell.

    Crop-space center is (cell + offset) * stride per axis, inverting the
    label convention exactly; sizes are read in crop pixels and divided by
    the crop scale on the way back to the image.
    """
    i, j = int(point[0]), int(point[1])
    cy = (i + float(offsets[0])) * stride
    cx = (j + float(offsets[1])) * stride
    h = max(float(sizes[0]), 1.0)
    w = max(float(sizes[1]), 1.0)
    cx_img, cy_img = window.to_image(cx, cy)
    return BoundingBox.from_center(cx_img, cy_img, w / window.scale,
                                   h / window.scale)


def smooth_size(prev_wh, new_wh, size_lr: float):
    """Per-axis convex combination, size_lr on the new measurement."""
    return (size_lr * new_wh[0] + (1.0 - size_lr) * prev_wh[0],
            size_lr * new_wh[1] + (1.0 - size_lr) * prev_wh[1])


def save_trajectory(path, boxes: list[BoundingBox]) -> None:
    """One "x,y,w,h" line per frame; the first line is the init box."""
    lines = [f"{b.x:.4f},{b.y:.4f},{b.w:.4f},{b.h:.4f}" for b in boxes]
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path) -> list[BoundingBox]:
    boxes = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ValueError(f"{path}:{ln}: expected x,y,w,h, got {line!r}")
        try:
            x, y, w, h = (float(p) for p in parts)
        except ValueError:
            raise ValueError(f"{path}:{ln}: non-numeric field in {line!r}")
        boxes.append(BoundingBox(x, y, w, h))
    return boxes


def _to_tensor(crop: np.ndarray) -> torch.Tensor:
    chw = np.ascontiguousarray(crop.transpose(2, 0, 1), dtype=np.float32) / 255.0
    return torch.from_numpy(chw).unsqueeze(0)


class Tracker:
    """init(frame, box) then update(frame) -> (BoundingBox, score).

    Template kernels are computed once at init and never touched again; all
    per-frame state is the previous box estimate.
    """

    def __init__(self, model, hyper: TrackHyper | None = None):
        self.model = model
        self.model.eval()
        self.hyper = hyper or TrackHyper()
        self.kernels = None
        self.prev_box = None
        self.crop_scale = None
        self.last_stage_probs = None   # per-stage center maps, for inspection
        self.last_window = None
        cfg = model.cfg
        self.stride = cfg.stride
        self.map_size = cfg.search_feat
        # the crop center lands between cells: cell j spans crop pixels
        # [j*stride, (j+1)*stride)
        center = cfg.search_size / (2.0 * cfg.stride) - 0.5
        self.window = gaussian_window(self.map_size, self.hyper.window_sigma,
                                      center)

    def init(self, frame: np.ndarray, box: BoundingBox) -> None:
        if box.w <= 0 or box.h <= 0:
            raise ValueError(f"degenerate init box {box}")
        twin = template_window(box, self.model.cfg.template_size)
        crop = crop_and_resize(frame, twin)
        with torch.no_grad():
            kernels = self.model.template_path(_to_tensor(crop))
        self.kernels = [[k.detach() for k in branch] for branch in kernels]
        self.prev_box = box
        self.crop_scale = None

    def update(self, frame: np.ndarray) -> tuple[BoundingBox, float]:
        if self.kernels is None:
            raise RuntimeError("update before init")
        hyper = self.hyper
        swin = search_window(self.prev_box,
                             center=(self.prev_box.cx, self.prev_box.cy),
                             template_size=self.model.cfg.template_size,
                             out_size=self.model.cfg.search_size)
        self.crop_scale = swin.scale
        crop = crop_and_resize(frame, swin)
        with torch.no_grad():
            preds = self.model.search_path(_to_tensor(crop), self.kernels)
            final = preds[-1]
            probs = torch.sigmoid(final.center_logits)[0, 0].numpy()
            offsets = final.offsets[0].numpy()
            sizes = final.size[0].numpy()
            self.last_stage_probs = [
                torch.sigmoid(p.center_logits)[0, 0].numpy() for p in preds]
        self.last_window = swin

        points = select_candidates(probs, hyper)
        boxes = [decode_box(p, offsets[:, p[0], p[1]], sizes[:, p[0], p[1]],
                            swin, self.stride) for p in points]
        pen = np.array([penalty(b, self.prev_box, hyper.penalty_k)
                        for b in boxes])
        raw = probs[points[:, 0], points[:, 1]]
        winvals = self.window[points[:, 0], points[:, 1]]
        blended = window_blend(pen * raw, winvals, hyper.window_influence,
                               hyper.window_mode)
        best = int(np.argmax(blended))
        chosen = boxes[best]
        score = float(blended[best])

        h, w = frame.shape[:2]
        cx = float(np.clip(chosen.cx, 0.0, w))
        cy = float(np.clip(chosen.cy, 0.0, h))
        new_w, new_h = smooth_size((self.prev_box.w, self.prev_box.h),
                                   (chosen.w, chosen.h), hyper.size_lr)
        new_w = float(np.clip(new_w, 2.0, 1.5 * w))
        new_h = float(np.clip(new_h, 2.0, 1.5 * h))
        self.prev_box = BoundingBox.from_center(cx, cy, new_w, new_h)
        return self.prev_box, score
