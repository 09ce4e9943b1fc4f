"""Boxes, crop windows, and the coordinate conventions everything else relies on.

Coordinates are corner-continuous: pixel k covers [k, k+1) along each axis, so
its center sits at k + 0.5 and a box with x2 == x1 + w is exact. All functions
take and return float coordinates in this convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, top-left corner plus size, in continuous pixels."""

    x: float
    y: float
    w: float
    h: float

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_xywh(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when either is degenerate."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    # rounding in x2 = x + w can push inter a hair past union for
    # identical boxes; the true value never exceeds 1
    return min(1.0, inter / union)


def center_distance(a: BoundingBox, b: BoundingBox) -> float:
    """Euclidean distance between box centers, in pixels."""
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


@dataclass(frozen=True)
class CropWindow:
    """Square region of a source image resampled to out_size x out_size."""

    cx: float
    cy: float
    side: float
    out_size: int

    @property
    def scale(self) -> float:
        """Crop pixels per image pixel."""
        return self.out_size / self.side

    @property
    def x0(self) -> float:
        return self.cx - self.side / 2.0

    @property
    def y0(self) -> float:
        return self.cy - self.side / 2.0

    def to_crop(self, x: float, y: float) -> tuple[float, float]:
        """Map an image coordinate into crop coordinates."""
        s = self.scale
        return ((x - self.x0) * s, (y - self.y0) * s)

    def to_image(self, x: float, y: float) -> tuple[float, float]:
        """Map a crop coordinate back into image coordinates."""
        s = self.scale
        return (x / s + self.x0, y / s + self.y0)

    def box_to_crop(self, box: BoundingBox) -> BoundingBox:
        s = self.scale
        x, y = self.to_crop(box.x, box.y)
        return BoundingBox(x, y, box.w * s, box.h * s)

    def box_to_image(self, box: BoundingBox) -> BoundingBox:
        s = self.scale
        x, y = self.to_image(box.x, box.y)
        return BoundingBox(x, y, box.w / s, box.h / s)


def context_side(box: BoundingBox, context: float = 0.5) -> float:
    """Curated square side around a target: pad each dim by context*(w+h),
    then take the geometric mean. A square box of side d gives exactly 2d."""
    p = context * (box.w + box.h)
    return math.sqrt((box.w + p) * (box.h + p))


def template_window(box: BoundingBox, out_size: int = 127,
                    context: float = 0.5) -> CropWindow:
    """Crop window for the template branch, centered on the target."""
    return CropWindow(box.cx, box.cy, context_side(box, context), out_size)


def search_window(box: BoundingBox, center: tuple[float, float] | None = None,
                  template_size: int = 127, out_size: int = 255,
                  context: float = 0.5) -> CropWindow:
    """Crop window for the search branch.

    The side scales the curated template side by out_size/template_size so the
    target appears at the same resolution in both crops. `center` defaults to
    the box center; the tracker passes the previous frame's estimate.
    """
    side = context_side(box, context) * (out_size / template_size)
    cx, cy = (box.cx, box.cy) if center is None else center
    return CropWindow(cx, cy, side, out_size)


def crop_and_resize(image: np.ndarray, window: CropWindow) -> np.ndarray:
    """Bilinear resample of a square window to (out, out), channels preserved.

    Samples outside the image interpolate against the per-channel mean of the
    frame, as if the image were embedded in an infinite mean-colored plane.
    Accepts (H, W) or (H, W, C); returns float32 with the same channel layout.
    """
    gray = image.ndim == 2
    img = image[:, :, None] if gray else image
    img = np.asarray(img, dtype=np.float32)
    h, w, c = img.shape
    mean = img.reshape(-1, c).mean(axis=0)

    out = window.out_size
    step = window.side / out
    # centers of the output pixels, in source coordinates
    xs = window.x0 + (np.arange(out, dtype=np.float64) + 0.5) * step
    ys = window.y0 + (np.arange(out, dtype=np.float64) + 0.5) * step

    def axis_samples(coords: np.ndarray, size: int):
        u = coords - 0.5  # index space: pixel k center at k
        i0 = np.floor(u).astype(np.int64)
        frac = (u - i0).astype(np.float32)
        i1 = i0 + 1
        valid0 = (i0 >= 0) & (i0 < size)
        valid1 = (i1 >= 0) & (i1 < size)
        return np.clip(i0, 0, size - 1), np.clip(i1, 0, size - 1), frac, valid0, valid1

    x0, x1, fx, vx0, vx1 = axis_samples(xs, w)
    y0, y1, fy, vy0, vy1 = axis_samples(ys, h)

    def gather(yi, xi, vy, vx):
        vals = img[yi[:, None], xi[None, :], :]
        ok = (vy[:, None] & vx[None, :])[:, :, None]
        return np.where(ok, vals, mean[None, None, :])

    top = gather(y0, x0, vy0, vx0) * (1 - fx)[None, :, None] \
        + gather(y0, x1, vy0, vx1) * fx[None, :, None]
    bot = gather(y1, x0, vy1, vx0) * (1 - fx)[None, :, None] \
        + gather(y1, x1, vy1, vx1) * fx[None, :, None]
    result = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return result[:, :, 0] if gray else result


def grid_centers(n: int, stride: int, img_size: int) -> np.ndarray:
    """Positions of the n score-map cells in crop pixels.

    The map is centered in the crop: cell i sits at i*stride + margin where
    margin = (img_size - stride*(n-1)) / 2. For n=31, stride=8, img 255 that
    is 7.5, 15.5, ..., 247.5 with cell 15 at the crop center 127.5.
    """
    margin = (img_size - stride * (n - 1)) / 2.0
    return np.arange(n, dtype=np.float64) * stride + margin
