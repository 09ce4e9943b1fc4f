"""Training targets for the cascade: per-stage heatmaps, offsets, and sizes.

Each stage s of the cascade is supervised with a Gaussian heatmap whose
standard deviation shrinks geometrically, sigma_s = rho**(s-1) * sigma, so
early stages see a loose target and later stages a strict one. Offsets store
the sub-cell remainder of the target center and sizes the box extent in crop
pixels, both at the center cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BoundingBox


@dataclass
class LabelConfig:
    map_size: int = 31
    stride: int = 8
    sigma: float = 31.0 / 16.0
    rho: float = 0.9
    n_stages: int = 3
    # cells within this Chebyshev radius of the center also get offset/size
    # supervision; 0 supervises the center cell only
    offset_radius: int = 0


@dataclass
class LabelSet:
    """Targets for one stage: heatmap (H, W), offsets/size (2, H, W) with
    offsets ordered (y, x) and size (h, w), plus their supervision masks."""

    heatmap: np.ndarray
    offsets: np.ndarray
    offsets_mask: np.ndarray
    size: np.ndarray
    size_mask: np.ndarray
    stage: int = 1
    is_negative: bool = False


def stage_sigma(stage: int, sigma: float, rho: float) -> float:
    """Heatmap standard deviation for 1-indexed cascade stage."""
    if stage < 1:
        raise ValueError(f"stage must be >= 1, got {stage}")
    return (rho ** (stage - 1)) * sigma


def gaussian_heatmap(center: tuple[int, int], size: int, sigma: float) -> np.ndarray:
    """Unnormalized Gaussian bump on a size x size grid, peak exactly 1.

    `center` is an integer (row, col) cell index and must lie on the grid.
    Values are exp(-d^2 / (2 sigma^2)) with d the Euclidean cell distance.
    """
    ic, jc = center
    if not (0 <= ic < size and 0 <= jc < size):
        raise ValueError(f"center {center} outside {size}x{size} grid")
    ii = np.arange(size, dtype=np.float64)
    d2 = (ii - ic)[:, None] ** 2 + (ii - jc)[None, :] ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma)).astype(np.float32)


def build_labels(box: BoundingBox | None, stage: int, cfg: LabelConfig) -> LabelSet:
    """Targets for one training pair at one cascade stage.

    `box` is the target in search-crop coordinates, or None for a negative
    pair (all-zero heatmap, nothing supervised on the regression channels).
    The center cell is floor(c / stride) per axis; the offset stored there is
    the fractional remainder c/stride - floor(c/stride), so
    (cell + offset) * stride recovers the center exactly.
    """
    n = cfg.map_size
    heat = np.zeros((n, n), dtype=np.float32)
    offs = np.zeros((2, n, n), dtype=np.float32)
    offs_mask = np.zeros((n, n), dtype=bool)
    size = np.zeros((2, n, n), dtype=np.float32)
    size_mask = np.zeros((n, n), dtype=bool)

    if box is None:
        return LabelSet(heat, offs, offs_mask, size, size_mask, stage, True)

    gy = box.cy / cfg.stride
    gx = box.cx / cfg.stride
    ic, jc = int(np.floor(gy)), int(np.floor(gx))
    if not (0 <= ic < n and 0 <= jc < n):
        raise ValueError(
            f"box center ({box.cx:.1f}, {box.cy:.1f}) falls outside the "
            f"{n}x{n} score map (cell {ic}, {jc})")

    heat = gaussian_heatmap((ic, jc), n, stage_sigma(stage, cfg.sigma, cfg.rho))

    r = cfg.offset_radius
    i0, i1 = max(0, ic - r), min(n, ic + r + 1)
    j0, j1 = max(0, jc - r), min(n, jc + r + 1)
    for i in range(i0, i1):
        for j in range(j0, j1):
            offs[0, i, j] = gy - i
            offs[1, i, j] = gx - j
            size[0, i, j] = box.h
            size[1, i, j] = box.w
            offs_mask[i, j] = True
            size_mask[i, j] = True

    return LabelSet(heat, offs, offs_mask, size, size_mask, stage, False)


def build_label_stack(box: BoundingBox | None, cfg: LabelConfig) -> list[LabelSet]:
    """Targets for every cascade stage, loosest first."""
    return [build_labels(box, s, cfg) for s in range(1, cfg.n_stages + 1)]


@dataclass
class LabelBatch:
    """Stage targets for a whole batch, stacked along a leading axis."""

    heatmap: np.ndarray       # (B, H, W)
    offsets: np.ndarray       # (B, 2, H, W)
    offsets_mask: np.ndarray  # (B, H, W) bool
    size: np.ndarray          # (B, 2, H, W)
    size_mask: np.ndarray     # (B, H, W) bool
    stage: int = 1


def stack_labels(labs: list[LabelSet]) -> LabelBatch:
    """Collate per-sample LabelSets of one stage into batch arrays."""
    stages = {l.stage for l in labs}
    if len(stages) != 1:
        raise ValueError(f"mixed stages in one batch: {sorted(stages)}")
    return LabelBatch(
        heatmap=np.stack([l.heatmap for l in labs]),
        offsets=np.stack([l.offsets for l in labs]),
        offsets_mask=np.stack([l.offsets_mask for l in labs]),
        size=np.stack([l.size for l in labs]),
        size_mask=np.stack([l.size_mask for l in labs]),
        stage=stages.pop(),
    )
