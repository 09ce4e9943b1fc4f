"""Evaluation harness: one-pass precision/success metrics, a restart
protocol that reinitializes after total tracking failures, and the
two-level coarse-to-fine hyperparameter grid search.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import BoundingBox, center_distance, iou
from .track import TrackHyper, Tracker

PRECISION_THRESHOLDS = np.linspace(0.0, 50.0, 51)   # center error, pixels
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)      # overlap


@dataclass
class OPEResult:
    """One-pass evaluation curves and their scalar summaries.

    precision_curve[t] is the fraction of frames whose center error is at
    most t pixels (51 thresholds, 0..50). success_curve[u] is the fraction
    whose overlap is strictly greater than u (21 thresholds, 0..1 step
    0.05); auc is the mean of that curve.
    """

    precision_curve: np.ndarray
    success_curve: np.ndarray
    precision_at_20: float
    auc: float
    n_frames: int


@dataclass
class RestartResult:
    """Robustness/accuracy pair from the restart protocol, plus the frame
    bookkeeping buckets (which must partition the sequence)."""

    failures: int
    accuracy: float
    reinit_delay: int
    burn_in: int
    n_evaluable: int
    n_burn_in: int
    n_skipped: int


def ope_metrics(trajectory: list[BoundingBox],
                ground_truth: list[BoundingBox | None]) -> OPEResult:
    """Precision and success curves over frames with ground truth.

    Frames whose ground truth is missing (occlusion or absence) are
    excluded. Precision uses center error <= threshold; success uses
    overlap strictly > threshold, so an exact overlap of u does not pass
    the u bin.
    """
    if len(trajectory) != len(ground_truth):
        raise ValueError(f"trajectory has {len(trajectory)} frames but "
                         f"ground truth has {len(ground_truth)}")
    pairs = [(p, g) for p, g in zip(trajectory, ground_truth)
             if g is not None]
    if not pairs:
        raise ValueError("no frames with ground truth to evaluate")
    errors = np.array([center_distance(p, g) for p, g in pairs])
    overlaps = np.array([iou(p, g) for p, g in pairs])
    precision = np.array([(errors <= t).mean() for t in PRECISION_THRESHOLDS])
    success = np.array([(overlaps > u).mean() for u in SUCCESS_THRESHOLDS])
    return OPEResult(precision_curve=precision, success_curve=success,
                     precision_at_20=float(precision[20]),
                     auc=float(success.mean()), n_frames=len(pairs))


def run_ope(tracker, sequence) -> list[BoundingBox]:
    """Init on the first frame, update on every later frame, no restarts.

    Returns one box per frame; the first entry echoes the init box.
    """
    first = sequence.boxes[0]
    if first is None:
        raise ValueError(f"sequence {sequence.name!r} has no ground truth "
                         "on its first frame")
    tracker.init(sequence.frames[0], first)
    trajectory = [first]
    for i in range(1, len(sequence.frames)):
        box, _ = tracker.update(sequence.frames[i])
        trajectory.append(box)
    return trajectory


def run_restart(tracker, sequence, fail_iou: float = 0.0,
                reinit_delay: int = 5, burn_in: int = 10) -> RestartResult:
    """Track with reinitialization after total failures.

    A failure is a frame whose overlap with ground truth drops to fail_iou
    (zero overlap by default). After a failure the next `reinit_delay`
    frames are skipped, the tracker is reinitialized from ground truth on
    the frame after that, and the `burn_in` frames from each (re)init
    onward are excluded from both accuracy and failure detection. The
    failure frame itself stays in the accuracy average. Every frame lands
    in exactly one bucket: burn-in, evaluable, or skipped.
    """
    frames, boxes = sequence.frames, sequence.boxes
    n = len(frames)
    if any(b is None for b in boxes):
        raise ValueError("restart protocol needs ground truth on every frame")
    failures = 0
    overlaps: list[float] = []
    n_burn = n_skip = 0
    i = 0
    while i < n:
        tracker.init(frames[i], boxes[i])
        n_burn += 1                       # the (re)init frame itself
        burn_left = burn_in - 1
        t = i + 1
        reinit_at = None
        while t < n:
            box, _ = tracker.update(frames[t])
            if burn_left > 0:
                burn_left -= 1
                n_burn += 1
                t += 1
                continue
            ov = iou(box, boxes[t])
            overlaps.append(ov)
            if ov <= fail_iou:
                failures += 1
                skip_end = min(t + 1 + reinit_delay, n)
                n_skip += skip_end - (t + 1)
                reinit_at = skip_end
                break
            t += 1
        if reinit_at is None:
            break
        i = reinit_at
    n_eval = len(overlaps)
    if n_eval + n_burn + n_skip != n:
        raise RuntimeError(f"frame accounting broken: {n_eval} evaluable + "
                           f"{n_burn} burn-in + {n_skip} skipped != {n}")
    accuracy = float(np.mean(overlaps)) if overlaps else float("nan")
    return RestartResult(failures=failures, accuracy=accuracy,
                         reinit_delay=reinit_delay, burn_in=burn_in,
                         n_evaluable=n_eval, n_burn_in=n_burn,
                         n_skipped=n_skip)


# ------------------------------------------------------------- grid search

def _rounded(value: float) -> float:
    return float(np.clip(round(value, 10), 0.0, 1.0))


def level1_grid(step: float = 0.1) -> list[tuple[float, float, float]]:
    """Coarse full grid over (penalty_k, window_influence, size_lr)."""
    axis = [_rounded(k * step) for k in range(int(round(0.9 / step)) + 1)]
    return list(itertools.product(axis, axis, axis))


def level2_grid(center: tuple[float, float, float], radius: float = 0.05,
                step: float = 0.01) -> list[tuple[float, float, float]]:
    """Fine grid in a cube around the coarse winner, clipped to [0, 1]."""
    half = int(round(radius / step))
    axes = []
    for c in center:
        vals = [_rounded(c + k * step) for k in range(-half, half + 1)]
        axes.append(sorted(set(vals)))
    return list(itertools.product(*axes))


@dataclass
class GridResult:
    best: TrackHyper
    best_score: float
    table: list[tuple[int, float, float, float, float]]  # level, k, wi, lr, score


def grid_search(model, sequences, base: TrackHyper | None = None,
                score_fn=None, coarse_step: float = 0.1,
                refine_radius: float = 0.05, refine_step: float = 0.01,
                progress=None) -> GridResult:
    """Two-level search over (penalty_k, window_influence, size_lr).

    Level 1 scans the full coarse grid; level 2 rescans a +/-refine_radius
    cube at refine_step around the level-1 winner. The objective is mean
    one-pass AUC over the sequences (or a caller-supplied score_fn(hyper)).
    Ties keep the earliest point in grid order, so results are
    deterministic.
    """
    if score_fn is None and not sequences:
        raise ValueError("grid search needs at least one sequence")
    base = base or TrackHyper()
    if score_fn is None:
        def score_fn(hyper):
            aucs = []
            for seq in sequences:
                trajectory = run_ope(Tracker(model, hyper), seq)
                aucs.append(ope_metrics(trajectory, list(seq.boxes)).auc)
            return float(np.mean(aucs))

    table: list[tuple[int, float, float, float, float]] = []

    def sweep(points, level):
        best_score, best_point = -math.inf, None
        for point in points:
            hyper = dataclasses.replace(base, penalty_k=point[0],
                                        window_influence=point[1],
                                        size_lr=point[2])
            score = float(score_fn(hyper))
            table.append((level, *point, score))
            if score > best_score:
                best_score, best_point = score, point
            if progress is not None:
                progress(level, point, score)
        return best_score, best_point

    _, coarse = sweep(level1_grid(coarse_step), 1)
    fine_score, fine = sweep(
        level2_grid(coarse, refine_radius, refine_step), 2)
    best = dataclasses.replace(base, penalty_k=fine[0],
                               window_influence=fine[1], size_lr=fine[2])
    return GridResult(best=best, best_score=fine_score, table=table)


# ---------------------------------------------------------------- analysis

def heatmap_entropy(heatmap: np.ndarray) -> float:
    """Shannon entropy (nats) of the map normalized to a distribution.

    Low entropy means the mass is concentrated in few cells; an all-zero
    map is defined to have zero entropy.
    """
    p = np.asarray(heatmap, dtype=np.float64).ravel()
    if (p < 0).any():
        raise ValueError("heatmap values must be non-negative")
    total = p.sum()
    if total <= 0:
        return 0.0
    q = p[p > 0] / total
    return float(-(q * np.log(q)).sum())


# ------------------------------------------------------------------ reports

def save_frame_csv(path, trajectory: list[BoundingBox],
                   ground_truth: list[BoundingBox | None]) -> None:
    """Per-frame IoU and center error, 1-based frame numbers; frames
    without ground truth get nan in both columns."""
    if len(trajectory) != len(ground_truth):
        raise ValueError(f"trajectory has {len(trajectory)} frames but "
                         f"ground truth has {len(ground_truth)}")
    lines = ["frame,iou,center_error"]
    for k, (p, g) in enumerate(zip(trajectory, ground_truth), start=1):
        if g is None:
            lines.append(f"{k},nan,nan")
        else:
            lines.append(f"{k},{iou(p, g):.6f},{center_distance(p, g):.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_summary(path, metrics: dict) -> None:
    """Flat "key = value" summary file."""
    lines = []
    for key, value in metrics.items():
        if isinstance(value, float):
            lines.append(f"{key} = {value:.6f}")
        else:
            lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_summary(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        try:
            out[key] = int(value)
        except ValueError:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
    return out


def plot_curves(ope: OPEResult, precision_path, success_path) -> None:
    """Precision and success curves as two image files."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for xs, ys, xlabel, ylabel, title, path in (
            (PRECISION_THRESHOLDS, ope.precision_curve,
             "center error threshold (px)", "precision",
             f"precision (P@20 = {ope.precision_at_20:.3f})", precision_path),
            (SUCCESS_THRESHOLDS, ope.success_curve,
             "overlap threshold", "success rate",
             f"success (AUC = {ope.auc:.3f})", success_path)):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.plot(xs, ys)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.set_ylim(-0.02, 1.02)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, dpi=110)
        plt.close(fig)
