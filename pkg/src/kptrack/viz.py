"""Static visualizations: frames annotated with boxes, and per-stage
center-probability panels next to the search crop they were computed on.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .geometry import BoundingBox, crop_and_resize
from .track import Tracker


def draw_boxes(frame: np.ndarray,
               boxes: list[tuple[BoundingBox, tuple[int, int, int]]],
               width: int = 2) -> np.ndarray:
    """Copy of the frame with (box, rgb color) rectangles drawn on it."""
    img = Image.fromarray(np.ascontiguousarray(frame))
    draw = ImageDraw.Draw(img)
    for box, color in boxes:
        draw.rectangle((box.x, box.y, box.x2, box.y2), outline=color,
                       width=width)
    return np.asarray(img)


def save_annotated_frame(path, frame: np.ndarray, pred: BoundingBox,
                         gt: BoundingBox | None = None) -> None:
    """Prediction in red, ground truth (when given) in green."""
    boxes = [(pred, (230, 40, 40))]
    if gt is not None:
        boxes.append((gt, (40, 200, 70)))
    Image.fromarray(draw_boxes(frame, boxes)).save(path)


def save_stage_panels(path, crop: np.ndarray,
                      stage_probs: list[np.ndarray]) -> None:
    """Search crop followed by one panel per cascade stage, left to right.

    All stage panels share one color scale so the sharpening across stages
    is visible rather than normalized away.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = 1 + len(stage_probs)
    fig, axes = plt.subplots(1, n, figsize=(3 * n, 3.2))
    axes = np.atleast_1d(axes)
    axes[0].imshow(np.clip(crop, 0, 255).astype(np.uint8))
    axes[0].set_title("search crop")
    vmax = max(float(p.max()) for p in stage_probs) or 1.0
    for s, (ax, probs) in enumerate(zip(axes[1:], stage_probs), start=1):
        im = ax.imshow(probs, vmin=0.0, vmax=vmax, cmap="magma")
        ax.set_title(f"stage {s}")
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=axes[-1], fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_tracking(model, sequence, out_dir, hyper=None,
                    heatmaps: bool = False) -> list[BoundingBox]:
    """Track a sequence writing an annotated PNG per frame (and, with
    heatmaps on, a per-stage panel image per tracked frame); returns the
    trajectory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tracker = Tracker(model, hyper) if hyper is not None else Tracker(model)
    first = sequence.boxes[0]
    if first is None:
        raise ValueError(f"sequence {sequence.name!r} has no ground truth "
                         "on its first frame")
    tracker.init(sequence.frames[0], first)
    trajectory = [first]
    save_annotated_frame(out / "frame_0000.png", sequence.frames[0], first,
                         sequence.boxes[0])
    for i in range(1, len(sequence.frames)):
        frame = sequence.frames[i]
        box, _ = tracker.update(frame)
        trajectory.append(box)
        save_annotated_frame(out / f"frame_{i:04d}.png", frame, box,
                             sequence.boxes[i])
        if heatmaps:
            crop = crop_and_resize(frame, tracker.last_window)
            save_stage_panels(out / f"stages_{i:04d}.png", crop,
                              tracker.last_stage_probs)
    return trajectory
