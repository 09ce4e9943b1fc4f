"""Command-line entry points: train, track, eval, sweep, synth, viz.

Every command resolves one RunConfig (defaults, then --config, then each
--set key=value in order), persists it beside its outputs, and never
mutates its inputs. Exit codes: 0 success, 2 usage error, 1 runtime
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_overrides, load_config, save_config
from .data import load_folder_dataset, load_sequence, make_synth_dataset, \
    save_sequence
from .evaluate import (OPEResult, grid_search, ope_metrics, plot_curves,
                       run_ope, run_restart, save_frame_csv, save_summary)
from .model import load_checkpoint
from .track import Tracker, save_trajectory
from .train import run_training
from .viz import render_tracking


class UsageError(Exception):
    """A mistake in how the command was invoked, not in the run itself."""


def _out_dir(args, default: str) -> Path:
    out = Path(args.out if args.out else default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_dataset(cfg: RunConfig):
    if cfg.data.root:
        return load_folder_dataset(cfg.data.root)
    if cfg.data.n_sequences > 0:
        return make_synth_dataset(cfg.synth, cfg.data.n_sequences,
                                  base_seed=cfg.data.base_seed)
    raise UsageError("no dataset: set data.root to a sequence folder or "
                     "data.n_sequences > 0 for synthetic data")


def _load_model(args, cfg: RunConfig):
    """Checkpoint model; explicit model.* overrides must match its manifest."""
    expect = cfg.model if any(s.startswith("model.")
                              for s in (args.set or ())) else None
    model, _ = load_checkpoint(args.checkpoint, expect=expect)
    return model


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out_dir(args, "runs/train")
    save_config(out / "config.txt", cfg)
    sequences = _resolve_dataset(cfg)
    result = run_training(cfg, sequences=sequences, out_dir=str(out),
                          verbose=not args.quiet)
    print(f"checkpoint: {result.checkpoint}")
    print(f"metrics: {result.metrics_csv}")
    return 0


def cmd_track(args, cfg: RunConfig) -> int:
    out = _out_dir(args, "runs/track")
    save_config(out / "config.txt", cfg)
    model = _load_model(args, cfg)
    seq = load_sequence(args.sequence)
    if args.viz or args.heatmaps:
        trajectory = render_tracking(model, seq, out / "frames",
                                     hyper=cfg.track,
                                     heatmaps=args.heatmaps)
    else:
        trajectory = run_ope(Tracker(model, cfg.track), seq)
    save_trajectory(out / "trajectory.txt", trajectory)
    print(f"trajectory: {out / 'trajectory.txt'} ({len(trajectory)} frames)")
    return 0


def _mean_curves(results: list[OPEResult]) -> OPEResult:
    precision = np.mean([r.precision_curve for r in results], axis=0)
    success = np.mean([r.success_curve for r in results], axis=0)
    return OPEResult(precision_curve=precision, success_curve=success,
                     precision_at_20=float(precision[20]),
                     auc=float(success.mean()),
                     n_frames=sum(r.n_frames for r in results))


def cmd_eval(args, cfg: RunConfig) -> int:
    out = _out_dir(args, "runs/eval")
    save_config(out / "config.txt", cfg)
    model = _load_model(args, cfg)
    sequences = _resolve_dataset(cfg)
    summary: dict = {"protocol": args.protocol,
                     "n_sequences": len(sequences)}
    if args.protocol == "ope":
        results = []
        for seq in sequences:
            trajectory = run_ope(Tracker(model, cfg.track), seq)
            save_trajectory(out / f"{seq.name}_trajectory.txt", trajectory)
            save_frame_csv(out / f"{seq.name}_frames.csv", trajectory,
                           list(seq.boxes))
            res = ope_metrics(trajectory, list(seq.boxes))
            results.append(res)
            summary[f"auc/{seq.name}"] = res.auc
            summary[f"precision_at_20/{seq.name}"] = res.precision_at_20
        mean = _mean_curves(results)
        summary["auc"] = mean.auc
        summary["precision_at_20"] = mean.precision_at_20
        plot_curves(mean, out / "precision.png", out / "success.png")
        print(f"ope over {len(sequences)} sequences: "
              f"auc {mean.auc:.4f}, precision@20 {mean.precision_at_20:.4f}")
    else:
        failures, accuracies = [], []
        for seq in sequences:
            res = run_restart(Tracker(model, cfg.track), seq)
            failures.append(res.failures)
            accuracies.append(res.accuracy)
            summary[f"failures/{seq.name}"] = res.failures
            summary[f"accuracy/{seq.name}"] = res.accuracy
        summary["failures_total"] = int(np.sum(failures))
        summary["failures_per_sequence"] = float(np.mean(failures))
        summary["accuracy"] = float(np.mean(accuracies))
        print(f"restart over {len(sequences)} sequences: "
              f"{summary['failures_total']} failures, "
              f"accuracy {summary['accuracy']:.4f}")
    save_summary(out / "summary.txt", summary)
    print(f"summary: {out / 'summary.txt'}")
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    out = _out_dir(args, "runs/sweep")
    save_config(out / "config.txt", cfg)
    model = _load_model(args, cfg)
    sequences = _resolve_dataset(cfg)
    result = grid_search(model, sequences, base=cfg.track,
                         coarse_step=args.coarse_step,
                         refine_radius=args.refine_radius,
                         refine_step=args.refine_step)
    best = result.best
    lines = ["level,penalty_k,window_influence,size_lr,score"]
    lines += [f"{lvl},{k:.2f},{wi:.2f},{lr:.2f},{score:.6f}"
              for lvl, k, wi, lr, score in result.table]
    (out / "score_table.csv").write_text("\n".join(lines) + "\n")
    save_summary(out / "best_hyper.txt", {
        "track.penalty_k": best.penalty_k,
        "track.window_influence": best.window_influence,
        "track.size_lr": best.size_lr,
        "score": result.best_score,
    })
    print(f"best: penalty_k {best.penalty_k:.2f}, window_influence "
          f"{best.window_influence:.2f}, size_lr {best.size_lr:.2f} "
          f"(score {result.best_score:.4f})")
    print(f"table: {out / 'score_table.csv'} ({len(result.table)} rows)")
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    out = _out_dir(args, "runs/synth")
    save_config(out / "config.txt", cfg)
    if cfg.data.n_sequences < 1:
        raise UsageError("data.n_sequences must be >= 1 to generate data")
    sequences = make_synth_dataset(cfg.synth, cfg.data.n_sequences,
                                   base_seed=cfg.data.base_seed)
    for seq in sequences:
        save_sequence(out / seq.name, seq)
        print(f"wrote {out / seq.name} ({len(seq.boxes)} frames)")
    return 0


def cmd_viz(args, cfg: RunConfig) -> int:
    out = _out_dir(args, "runs/viz")
    save_config(out / "config.txt", cfg)
    model = _load_model(args, cfg)
    seq = load_sequence(args.sequence)
    render_tracking(model, seq, out / "frames", hyper=cfg.track,
                    heatmaps=not args.no_heatmaps)
    print(f"frames: {out / 'frames'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kptrack",
        description="Siamese keypoint tracking: train, track, and evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None,
                       help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="sets train.seed and data.base_seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override, repeatable")

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="track one sequence with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequence", required=True,
                   help="folder of frames + groundtruth.txt")
    p.add_argument("--viz", action="store_true",
                   help="write per-frame annotated images")
    p.add_argument("--heatmaps", action="store_true",
                   help="also write per-stage center-probability panels")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", choices=("ope", "restart"), default="ope")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="two-level tracking hyperparameter search")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--coarse-step", type=float, default=0.1)
    p.add_argument("--refine-radius", type=float, default=0.05)
    p.add_argument("--refine-step", type=float, default=0.01)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic sequence folder")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("viz", help="render tracking frames and stage heatmaps")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequence", required=True)
    p.add_argument("--no-heatmaps", action="store_true")
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        if args.seed is not None:
            cfg = apply_overrides(cfg, [f"train.seed={args.seed}",
                                        f"data.base_seed={args.seed}"])
    except (ValueError, OSError) as e:
        print(f"kptrack: {e}", file=sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except UsageError as e:
        print(f"kptrack: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"kptrack: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
