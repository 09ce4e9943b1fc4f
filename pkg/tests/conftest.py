"""Shared fixtures: synthetic datasets, cached trained models, and the
acceptance report hook.

Training fixtures are expensive (minutes each), so their checkpoints are
cached under tests/.cache keyed by the full training recipe; delete that
directory to force cold retraining. The acceptance tests register one
PASS/FAIL line each, printed in the terminal summary.
"""

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import torch

from kptrack.config import default_config
from kptrack.data import SynthConfig, make_synth_dataset
from kptrack.model import load_checkpoint, save_checkpoint
from kptrack.train import run_training

torch.set_num_threads(1)

CACHE_DIR = Path(__file__).parent / ".cache"
# Bump when a code change (not captured by the config dicts) alters what
# training produces, e.g. initialization conventions.
CACHE_VERSION = 2

# The trained-model preset used by the end-to-end acceptance test: default
# training schedule (2000 pairs/epoch x 20 epochs, batch 8) on a slimmed
# backbone that keeps single-core training in the tens of minutes.
DESK_FEAT_CHANNELS = 16
DESK_TINY_WIDTH = 8

# Ablation twins reuse the schedule shape with fewer pairs per epoch.
# 1000 pairs/epoch (2500 steps) is the least budget at which the cascade's
# final stage is trained well enough for stable cross-model comparisons.
TOY_PAIRS_PER_EPOCH = 1000

TRAIN_SEED = 100      # synthetic training curriculum
HELDOUT_SEED = 500    # evaluation sequences, disjoint from training
ABLATION_SEED = 700   # distractor-free eval set for paired ablation scoring


def _desk_run(**model_overrides):
    run = default_config()
    model = dataclasses.replace(run.model, feat_channels=DESK_FEAT_CHANNELS,
                                tiny_width=DESK_TINY_WIDTH, **model_overrides)
    return dataclasses.replace(run, model=model).resolved()


def _toy_run(rho=0.9, n_stages=3):
    run = _desk_run(n_stages=n_stages)
    labels = dataclasses.replace(run.labels, rho=rho)
    train = dataclasses.replace(run.train,
                                pairs_per_epoch=TOY_PAIRS_PER_EPOCH)
    return dataclasses.replace(run, labels=labels, train=train).resolved()


def _recipe_key(run) -> str:
    recipe = {"version": CACHE_VERSION, "train_seed": TRAIN_SEED,
              **{s: dataclasses.asdict(getattr(run, s))
                 for s in ("model", "labels", "loss", "synth", "aug", "train")}}
    return hashlib.sha1(
        json.dumps(recipe, sort_keys=True).encode()).hexdigest()[:10]


def _train_cached(tag: str, run, sequences):
    """Train once per recipe; later sessions load the cached checkpoint."""
    path = CACHE_DIR / f"{tag}-{_recipe_key(run)}.pt"
    if path.exists():
        model, _ = load_checkpoint(str(path))
        model.eval()
        return model
    result = run_training(run, sequences=sequences,
                          out_dir=str(CACHE_DIR / "runs" / path.stem))
    CACHE_DIR.mkdir(exist_ok=True)
    save_checkpoint(str(path), result.model)
    result.model.eval()
    return result.model


@pytest.fixture(scope="session")
def train_sequences():
    return make_synth_dataset(SynthConfig(), 8, base_seed=TRAIN_SEED)


@pytest.fixture(scope="session")
def heldout_sequences():
    return make_synth_dataset(SynthConfig(n_frames=100, n_distractors=1),
                              10, base_seed=HELDOUT_SEED)


@pytest.fixture(scope="session")
def ablation_sequences():
    # Distractor-free: per-sequence scores vary smoothly with model quality
    # here, whereas distractor captures are all-or-nothing, which would
    # drown a 0.01 paired-auc tolerance in noise.
    return make_synth_dataset(SynthConfig(n_frames=100, n_distractors=0),
                              10, base_seed=ABLATION_SEED)


@pytest.fixture(scope="session")
def desk_model(train_sequences):
    return _train_cached("desk", _desk_run(), train_sequences)


@pytest.fixture(scope="session")
def toy_rho09(train_sequences):
    return _train_cached("toy-rho09", _toy_run(rho=0.9), train_sequences)


@pytest.fixture(scope="session")
def toy_rho10(train_sequences):
    return _train_cached("toy-rho10", _toy_run(rho=1.0), train_sequences)


@pytest.fixture(scope="session")
def toy_stage1(train_sequences):
    return _train_cached("toy-stage1", _toy_run(n_stages=1), train_sequences)


@pytest.fixture(scope="session")
def toy_stage2(train_sequences):
    return _train_cached("toy-stage2", _toy_run(n_stages=2), train_sequences)


_criterion_lines: list[tuple[bool, str]] = []


def record_criterion(ok: bool, name: str, detail: str) -> None:
    _criterion_lines.append((ok, f"{name}: {detail}"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for ok, line in _criterion_lines:
        terminalreporter.write_line(("PASS  " if ok else "FAIL  ") + line)
