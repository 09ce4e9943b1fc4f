"""Synthetic tracking sequences, folder-format datasets, and training-pair
sampling with augmentation.

A synthetic sequence is a static background with a moving two-tone target,
optional look-alike distractors, and optional occluder events during which
the ground-truth box is flagged absent. Rendering is lazy: trajectories are
precomputed at construction and frames are rasterized on access, so long
datasets do not sit in memory.

Background colors are drawn dark (channels <= 80) and sprite fills bright
(channels >= 120); tests rely on that separation to locate the target in
crop pixels independently of the box bookkeeping.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .geometry import BoundingBox, CropWindow, crop_and_resize, search_window, template_window


@dataclass
class SynthConfig:
    canvas: int = 224
    n_frames: int = 60
    n_distractors: int = 2
    occluder_prob: float = 0.0   # per-frame chance to start an occlusion
    size_min: float = 24.0
    size_max: float = 56.0
    speed: float = 2.5           # velocity random-walk step, px/frame
    speed_max: float = 6.0
    scale_drift: float = 0.015   # log-size random-walk step
    seed: int = 0


@dataclass
class Sequence:
    frames: object               # sequence of (H, W, 3) uint8 frames
    boxes: list                  # BoundingBox or None per frame
    name: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) != len(self.boxes):
            raise ValueError(
                f"{self.name}: {len(self.frames)} frames vs {len(self.boxes)} boxes")

    def __len__(self):
        return len(self.frames)

    def valid_frames(self) -> list[int]:
        return [i for i, b in enumerate(self.boxes) if b is not None]


@dataclass
class TrainingPair:
    template: np.ndarray         # (3, 127, 127) float32 in [0, 1]
    search: np.ndarray           # (3, 255, 255) float32 in [0, 1]
    box_in_search: BoundingBox | None
    is_negative: bool


@dataclass
class AugConfig:
    max_shift: float = 32.0      # search-crop px
    max_scale: float = 0.25      # log units on the search-crop side
    blur_prob: float = 0.1
    blur_sigma_max: float = 1.5
    color_gain: float = 0.15
    color_offset: float = 0.05
    neg_prob: float = 0.2
    max_frame_gap: int = 100
    template_shift: float = 4.0  # template-crop px
    template_scale: float = 0.05


# --- synthetic sequences ----------------------------------------------------

def _soft_ellipse(alpha, xs, ys, cx, cy, a, b):
    d = np.sqrt(((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2)
    np.maximum(alpha, np.clip((1.0 - d) * min(a, b), 0.0, 1.0), out=alpha)


def _soft_rect(alpha, xs, ys, cx, cy, a, b):
    ax = np.clip(np.minimum(xs - (cx - a), (cx + a) - xs), 0.0, 1.0)
    ay = np.clip(np.minimum(ys - (cy - b), (cy + b) - ys), 0.0, 1.0)
    np.maximum(alpha, ax * ay, out=alpha)


def _draw_sprite(img, shape, cx, cy, a, b, fill, accent):
    """Two-tone sprite fully contained in [cx-a, cx+a] x [cy-b, cy+b]."""
    h, w, _ = img.shape
    x0, x1 = max(0, int(cx - a - 2)), min(w, int(cx + a + 3))
    y0, y1 = max(0, int(cy - b - 2)), min(h, int(cy + b + 3))
    if x0 >= x1 or y0 >= y1:
        return
    xs = np.arange(x0, x1, dtype=np.float64)[None, :] + 0.5
    ys = np.arange(y0, y1, dtype=np.float64)[:, None] + 0.5
    alpha = np.zeros((y1 - y0, x1 - x0))
    draw = _soft_ellipse if shape == "ellipse" else _soft_rect
    draw(alpha, xs, ys, cx, cy, a, b)
    # off-center accent blob, clipped to the body so the box stays exact
    acc = np.zeros_like(alpha)
    _soft_ellipse(acc, xs, ys, cx + 0.35 * a, cy - 0.25 * b, 0.35 * a, 0.35 * b)
    np.minimum(acc, alpha, out=acc)
    patch = img[y0:y1, x0:x1]
    patch += alpha[:, :, None] * (np.asarray(fill, dtype=np.float64) - patch)
    patch += acc[:, :, None] * (np.asarray(accent, dtype=np.float64) - patch)


def _random_walk(rng, n, start, lo, hi, step, vmax):
    """Reflected random-walk positions with velocity clamping."""
    pos = np.empty(n)
    x, v = start, 0.0
    for i in range(n):
        v = float(np.clip(v + rng.normal(0.0, step), -vmax, vmax))
        x += v
        if x < lo:
            x, v = lo + (lo - x), abs(v)
        if x > hi:
            x, v = hi - (x - hi), -abs(v)
        pos[i] = float(np.clip(x, lo, hi))
    return pos


class _SynthFrames:
    """Lazy rasterizer over precomputed sprite trajectories."""

    def __init__(self, cfg, background, sprites, occluders):
        self.cfg = cfg
        self.background = background      # (H, W, 3) float64
        self.sprites = sprites            # list of dicts, target last
        self.occluders = occluders        # per-frame None or (cx, cy, a, b, color)

    def __len__(self):
        return self.cfg.n_frames

    def __getitem__(self, t):
        if not (0 <= t < len(self)):
            raise IndexError(t)
        img = self.background.copy()
        for sp in self.sprites:
            _draw_sprite(img, sp["shape"], sp["cx"][t], sp["cy"][t],
                         sp["a"][t], sp["b"][t], sp["fill"], sp["accent"])
        occ = self.occluders[t]
        if occ is not None:
            cx, cy, a, b, color = occ
            _draw_sprite(img, "rect", cx, cy, a, b, color, color)
        return np.clip(np.round(img), 0, 255).astype(np.uint8)


def synth_sequence(cfg: SynthConfig) -> Sequence:
    """Deterministic synthetic sequence for a fixed config (seed included)."""
    rng = np.random.default_rng(cfg.seed)
    n, canvas = cfg.n_frames, cfg.canvas

    # dark smooth background: two corners interpolated across a random direction
    c0, c1 = rng.uniform(20, 80, 3), rng.uniform(20, 80, 3)
    ang = rng.uniform(0, 2 * math.pi)
    yy, xx = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
    ramp = (xx * math.cos(ang) + yy * math.sin(ang))
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    background = c0 + ramp[:, :, None] * (c1 - c0)

    shape = str(rng.choice(["ellipse", "rect"]))
    fill = rng.uniform(120, 245, 3)
    accent = rng.uniform(120, 245, 3)

    def make_sprite(base_size, color, acc_color):
        aspect = rng.uniform(0.6, 1.7)
        half_w = base_size * math.sqrt(aspect) / 2.0
        half_h = base_size / math.sqrt(aspect) / 2.0
        logs = np.clip(np.cumsum(rng.normal(0, cfg.scale_drift, n)),
                       math.log(0.75), math.log(1.3))
        scale = np.exp(logs)
        a, b = half_w * scale, half_h * scale
        mx, my = float(a.max()) + 1.0, float(b.max()) + 1.0
        cx = _random_walk(rng, n, rng.uniform(mx, canvas - mx), mx, canvas - mx,
                          cfg.speed, cfg.speed_max)
        cy = _random_walk(rng, n, rng.uniform(my, canvas - my), my, canvas - my,
                          cfg.speed, cfg.speed_max)
        return {"shape": shape, "cx": cx, "cy": cy, "a": a, "b": b,
                "fill": color, "accent": acc_color}

    sprites = []
    for _ in range(cfg.n_distractors):
        col = np.clip(fill + rng.normal(0, 18, 3), 120, 245)
        acc = np.clip(accent + rng.normal(0, 18, 3), 120, 245)
        size = rng.uniform(cfg.size_min, cfg.size_max) * rng.uniform(0.8, 1.25)
        sprites.append(make_sprite(size, col, acc))
    target = make_sprite(rng.uniform(cfg.size_min, cfg.size_max), fill, accent)
    sprites.append(target)  # target drawn last, always on top

    occluders = [None] * n
    boxes: list[BoundingBox | None] = [None] * n
    occ_left = 0
    occ_color = None
    for t in range(n):
        if occ_left == 0 and rng.random() < cfg.occluder_prob:
            occ_left = int(rng.integers(2, 6))
            occ_color = rng.uniform(85, 115, 3)
        a, b = target["a"][t], target["b"][t]
        if occ_left > 0:
            occluders[t] = (target["cx"][t], target["cy"][t],
                            1.4 * a + 2, 1.4 * b + 2, occ_color)
            occ_left -= 1
        else:
            boxes[t] = BoundingBox(target["cx"][t] - a, target["cy"][t] - b,
                                   2 * a, 2 * b)

    frames = _SynthFrames(cfg, background, sprites, occluders)
    meta = {"target_fill": tuple(fill), "target_shape": shape}
    return Sequence(frames, boxes, name=f"synth-{cfg.seed}", meta=meta)


def make_synth_dataset(cfg: SynthConfig, n_sequences: int,
                       base_seed: int | None = None) -> list[Sequence]:
    """n_sequences independent sequences seeded base_seed, base_seed+1, ..."""
    start = cfg.seed if base_seed is None else base_seed
    return [synth_sequence(replace(cfg, seed=start + i)) for i in range(n_sequences)]


# --- folder format ----------------------------------------------------------

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class _FolderFrames:
    def __init__(self, paths):
        self.paths = paths

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, i):
        return np.asarray(Image.open(self.paths[i]).convert("RGB"), dtype=np.uint8)


def save_sequence(path: str | Path, seq: Sequence) -> None:
    """Write a sequence in the folder format load_folder_dataset reads:
    zero-padded PNG frames plus a groundtruth.txt of x,y,w,h lines,
    nan,nan,nan,nan where the box is absent."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(len(seq)):
        Image.fromarray(seq.frames[i]).save(d / f"{i:06d}.png")
        b = seq.boxes[i]
        if b is None:
            lines.append("nan,nan,nan,nan\n")
        else:
            lines.append(f"{b.x:.4f},{b.y:.4f},{b.w:.4f},{b.h:.4f}\n")
    with open(d / "groundtruth.txt", "w") as f:
        f.writelines(lines)


def _parse_groundtruth(path: Path) -> list[BoundingBox | None]:
    boxes = []
    with open(path) as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}:{ln}: expected 4 comma-separated "
                                 f"values, got {line!r}")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"{path}:{ln}: non-numeric field in {line!r}") from None
            nans = [math.isnan(v) for v in vals]
            if all(nans):
                boxes.append(None)
            elif any(nans):
                raise ValueError(f"{path}:{ln}: mixed nan and numbers in {line!r}")
            else:
                boxes.append(BoundingBox(*vals))
    return boxes


def load_sequence(path: str | Path) -> Sequence:
    """Load one folder of numbered images plus groundtruth.txt."""
    d = Path(path)
    paths = sorted(p for p in d.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    gt = d / "groundtruth.txt"
    if not gt.exists():
        raise ValueError(f"{d}: missing groundtruth.txt")
    boxes = _parse_groundtruth(gt)
    if len(boxes) != len(paths):
        raise ValueError(f"{d}: {len(paths)} images but {len(boxes)} "
                         "groundtruth lines")
    return Sequence(_FolderFrames(paths), boxes, name=d.name)


def load_folder_dataset(path: str | Path) -> list[Sequence]:
    """Load per-sequence subfolders of numbered images plus groundtruth.txt."""
    root = Path(path)
    seq_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not seq_dirs:
        raise ValueError(f"no sequence folders under {root}")
    return [load_sequence(d) for d in seq_dirs]


# --- pair sampling ----------------------------------------------------------

@dataclass
class PairPlan:
    """Every random draw behind one training pair; materialization is pure."""

    is_negative: bool
    seq_t: int
    frame_t: int
    seq_s: int
    frame_s: int
    dx: float                    # search-window center shift, crop px
    dy: float
    dscale: float                # log factor on the search-window side
    blur_sigma: float            # 0 disables
    t_dx: float = 0.0            # template jitter, crop px / log
    t_dy: float = 0.0
    t_dscale: float = 0.0
    gain_t: tuple = (1.0, 1.0, 1.0)
    off_t: tuple = (0.0, 0.0, 0.0)
    gain_s: tuple = (1.0, 1.0, 1.0)
    off_s: tuple = (0.0, 0.0, 0.0)


def plan_pair(valid: list[list[int]], aug: AugConfig, rng,
              weights=None) -> PairPlan:
    """Draw the sampling plan. `valid` lists usable frame indices per sequence."""
    usable = [i for i, v in enumerate(valid) if v]
    if not usable:
        raise ValueError("no sequence has a frame with a visible target")
    if weights is None:
        w = np.ones(len(usable))
    else:
        w = np.asarray([weights[i] for i in usable], dtype=np.float64)
    w = w / w.sum()

    negative = bool(rng.random() < aug.neg_prob) and len(usable) >= 2
    seq_t = int(rng.choice(usable, p=w))
    frame_t = int(rng.choice(valid[seq_t]))
    if negative:
        others = [i for i in usable if i != seq_t]
        seq_s = int(rng.choice(others))
        frame_s = int(rng.choice(valid[seq_s]))
    else:
        seq_s = seq_t
        near = [i for i in valid[seq_t] if abs(i - frame_t) <= aug.max_frame_gap]
        frame_s = int(rng.choice(near))

    def jitter3(mag_gain, mag_off):
        gain = tuple(1.0 + rng.uniform(-mag_gain, mag_gain, 3))
        off = tuple(rng.uniform(-mag_off, mag_off, 3))
        return gain, off

    gain_t, off_t = jitter3(aug.color_gain, aug.color_offset)
    gain_s, off_s = jitter3(aug.color_gain, aug.color_offset)
    blur = float(rng.uniform(0.3, aug.blur_sigma_max)) \
        if rng.random() < aug.blur_prob else 0.0
    return PairPlan(
        is_negative=negative, seq_t=seq_t, frame_t=frame_t,
        seq_s=seq_s, frame_s=frame_s,
        dx=float(rng.uniform(-aug.max_shift, aug.max_shift)),
        dy=float(rng.uniform(-aug.max_shift, aug.max_shift)),
        dscale=float(rng.uniform(-aug.max_scale, aug.max_scale)),
        blur_sigma=blur,
        t_dx=float(rng.uniform(-aug.template_shift, aug.template_shift)),
        t_dy=float(rng.uniform(-aug.template_shift, aug.template_shift)),
        t_dscale=float(rng.uniform(-aug.template_scale, aug.template_scale)),
        gain_t=gain_t, off_t=off_t, gain_s=gain_s, off_s=off_s,
    )


def _to_chw(img: np.ndarray, gain, off) -> np.ndarray:
    img = img / 255.0
    img = np.clip(img * np.asarray(gain, dtype=np.float32)
                  + np.asarray(off, dtype=np.float32), 0.0, 1.0)
    return np.ascontiguousarray(img.transpose(2, 0, 1).astype(np.float32))


def materialize_pair(sequences: list[Sequence], plan: PairPlan,
                     return_details: bool = False):
    """Render a TrainingPair from its plan.

    Shifting the search window center by +d crop pixels moves the target box
    by -d in crop coordinates; scale augmentation multiplies the window side,
    leaving the box center at the (possibly shifted) window center.
    """
    tseq = sequences[plan.seq_t]
    box_t = tseq.boxes[plan.frame_t]
    twin = template_window(box_t)
    t_side = twin.side * math.exp(plan.t_dscale)
    t_scale = twin.out_size / t_side
    twin = CropWindow(twin.cx + plan.t_dx / t_scale, twin.cy + plan.t_dy / t_scale,
                      t_side, twin.out_size)
    template = crop_and_resize(tseq.frames[plan.frame_t], twin)

    sseq = sequences[plan.seq_s]
    box_s = sseq.boxes[plan.frame_s]
    base = search_window(box_s)
    side = base.side * math.exp(plan.dscale)
    scale = base.out_size / side
    swin = CropWindow(box_s.cx + plan.dx / scale, box_s.cy + plan.dy / scale,
                      side, base.out_size)
    search = crop_and_resize(sseq.frames[plan.frame_s], swin)
    if plan.blur_sigma > 0:
        search = gaussian_filter(search, sigma=(plan.blur_sigma, plan.blur_sigma, 0))

    pair = TrainingPair(
        template=_to_chw(template, plan.gain_t, plan.off_t),
        search=_to_chw(search, plan.gain_s, plan.off_s),
        box_in_search=None if plan.is_negative else swin.box_to_crop(box_s),
        is_negative=plan.is_negative,
    )
    if return_details:
        return pair, {"template_window": twin, "search_window": swin}
    return pair


def sample_pair(sequences: list[Sequence], aug: AugConfig, rng, weights=None):
    valid = [s.valid_frames() for s in sequences]
    return materialize_pair(sequences, plan_pair(valid, aug, rng, weights))


class PairSampler:
    """Reusable sampler with cached frame validity; one rng, one aug policy."""

    def __init__(self, sequences: list[Sequence], aug: AugConfig, rng,
                 weights=None):
        if not sequences:
            raise ValueError("empty dataset")
        self.sequences = sequences
        self.aug = aug
        self.rng = rng
        self.weights = weights
        self.valid = [s.valid_frames() for s in sequences]

    def plan(self) -> PairPlan:
        return plan_pair(self.valid, self.aug, self.rng, self.weights)

    def sample(self) -> TrainingPair:
        return materialize_pair(self.sequences, self.plan())

    def sample_batch(self, n: int) -> list[TrainingPair]:
        return [self.sample() for _ in range(n)]


class FixedPairSampler:
    """Uniform draws from a frozen list of pairs (overfit experiments)."""

    def __init__(self, pairs: list[TrainingPair], rng):
        if not pairs:
            raise ValueError("empty pair list")
        self.pairs = pairs
        self.rng = rng

    def sample_batch(self, n: int) -> list[TrainingPair]:
        idx = self.rng.integers(0, len(self.pairs), size=n)
        return [self.pairs[i] for i in idx]
