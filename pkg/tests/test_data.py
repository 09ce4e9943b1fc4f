import math
from dataclasses import replace

import numpy as np
import pytest

from kptrack.data import (
    AugConfig,
    FixedPairSampler,
    PairPlan,
    PairSampler,
    Sequence,
    SynthConfig,
    load_folder_dataset,
    make_synth_dataset,
    materialize_pair,
    plan_pair,
    sample_pair,
    save_sequence,
    synth_sequence,
)
from kptrack.geometry import BoundingBox, search_window

NO_AUG = AugConfig(max_shift=0.0, max_scale=0.0, blur_prob=0.0,
                   blur_sigma_max=0.3, color_gain=0.0, color_offset=0.0,
                   neg_prob=0.0, max_frame_gap=0, template_shift=0.0,
                   template_scale=0.0)


class TestSynthSequence:
    def test_deterministic(self):
        cfg = SynthConfig(seed=4, n_frames=12, occluder_prob=0.1)
        a, b = synth_sequence(cfg), synth_sequence(cfg)
        assert len(a) == len(b) == 12
        for t in (0, 6, 11):
            assert np.array_equal(a.frames[t], b.frames[t])
        for ba, bb in zip(a.boxes, b.boxes):
            assert (ba is None) == (bb is None)
            if ba is not None:
                assert ba.as_xywh() == bb.as_xywh()

    def test_seeds_differ(self):
        a = synth_sequence(SynthConfig(seed=0, n_frames=3))
        b = synth_sequence(SynthConfig(seed=1, n_frames=3))
        assert not np.array_equal(a.frames[0], b.frames[0])

    def test_target_confined_to_box(self):
        # no distractors, no occluders: only the target moves, so any pixel
        # that changes between frames lies in one of the two target boxes
        seq = synth_sequence(SynthConfig(seed=2, n_frames=10, n_distractors=0))
        f0, b0 = seq.frames[0], seq.boxes[0]
        for t in (3, 7, 9):
            ft, bt = seq.frames[t], seq.boxes[t]
            diff = np.argwhere((ft.astype(int) != f0.astype(int)).any(axis=2))
            for y, x in diff:
                inside0 = (b0.x - 1 <= x + 0.5 <= b0.x2 + 1
                           and b0.y - 1 <= y + 0.5 <= b0.y2 + 1)
                insidet = (bt.x - 1 <= x + 0.5 <= bt.x2 + 1
                           and bt.y - 1 <= y + 0.5 <= bt.y2 + 1)
                assert inside0 or insidet

    def test_boxes_inside_canvas(self):
        for seed in range(4):
            seq = synth_sequence(SynthConfig(seed=seed, n_frames=40))
            for b in seq.boxes:
                if b is None:
                    continue
                assert b.x >= 0 and b.y >= 0
                assert b.x2 <= seq.frames[0].shape[1]
                assert b.y2 <= seq.frames[0].shape[0]

    def test_occluder_events(self):
        seq = synth_sequence(SynthConfig(seed=3, n_frames=30, occluder_prob=0.3))
        absent = [b is None for b in seq.boxes]
        assert any(absent) and not all(absent)
        t = absent.index(True)
        frame = seq.frames[t]
        assert frame.shape == (224, 224, 3) and frame.dtype == np.uint8

    def test_no_occluders_by_default(self):
        seq = synth_sequence(SynthConfig(seed=5, n_frames=20))
        assert all(b is not None for b in seq.boxes)

    def test_dataset_seeds(self):
        seqs = make_synth_dataset(SynthConfig(n_frames=3), 3, base_seed=100)
        assert [s.name for s in seqs] == ["synth-100", "synth-101", "synth-102"]

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Sequence(frames=[np.zeros((4, 4, 3), np.uint8)], boxes=[None, None],
                     name="bad")


class TestFolderFormat:
    def test_round_trip(self, tmp_path):
        seq = synth_sequence(SynthConfig(seed=7, n_frames=6, occluder_prob=0.4))
        save_sequence(tmp_path / "seq00", seq)
        loaded = load_folder_dataset(tmp_path)
        assert len(loaded) == 1
        got = loaded[0]
        assert got.name == "seq00"
        assert len(got) == 6
        for t in range(6):
            assert np.array_equal(got.frames[t], seq.frames[t])
            a, b = got.boxes[t], seq.boxes[t]
            assert (a is None) == (b is None)
            if a is not None:
                for u, v in zip(a.as_xywh(), b.as_xywh()):
                    assert abs(u - v) < 1e-3

    def test_corner_form(self, tmp_path):
        d = tmp_path / "s"
        d.mkdir()
        from PIL import Image
        Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(d / "000000.png")
        (d / "groundtruth.txt").write_text("10,20,30,40\n")
        seq = load_folder_dataset(tmp_path)[0]
        b = seq.boxes[0]
        assert (b.x, b.y, b.x2, b.y2) == (10.0, 20.0, 40.0, 60.0)

    def test_nan_line_is_absent_box(self, tmp_path):
        d = tmp_path / "s"
        d.mkdir()
        from PIL import Image
        for i in range(2):
            Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(d / f"{i:06d}.png")
        (d / "groundtruth.txt").write_text("1,2,3,4\nnan,nan,nan,nan\n")
        seq = load_folder_dataset(tmp_path)[0]
        assert seq.boxes[0] is not None and seq.boxes[1] is None

    def _folder(self, tmp_path, gt_text, n_imgs=1):
        d = tmp_path / "s"
        d.mkdir()
        from PIL import Image
        for i in range(n_imgs):
            Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(d / f"{i:06d}.png")
        (d / "groundtruth.txt").write_text(gt_text)
        return d

    def test_malformed_line_names_file_and_lineno(self, tmp_path):
        d = self._folder(tmp_path, "1,2,3,4\n5,6,7\n", n_imgs=2)
        with pytest.raises(ValueError) as e:
            load_folder_dataset(tmp_path)
        assert "groundtruth.txt:2" in str(e.value)

    def test_non_numeric_field(self, tmp_path):
        self._folder(tmp_path, "1,2,x,4\n")
        with pytest.raises(ValueError, match="non-numeric"):
            load_folder_dataset(tmp_path)

    def test_mixed_nan_rejected(self, tmp_path):
        self._folder(tmp_path, "nan,2,3,4\n")
        with pytest.raises(ValueError, match="mixed nan"):
            load_folder_dataset(tmp_path)

    def test_count_mismatch(self, tmp_path):
        self._folder(tmp_path, "1,2,3,4\n1,2,3,4\n", n_imgs=1)
        with pytest.raises(ValueError, match="1 images but 2"):
            load_folder_dataset(tmp_path)

    def test_missing_groundtruth(self, tmp_path):
        d = tmp_path / "s"
        d.mkdir()
        from PIL import Image
        Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(d / "000000.png")
        with pytest.raises(ValueError, match="missing groundtruth"):
            load_folder_dataset(tmp_path)

    def test_empty_root(self, tmp_path):
        with pytest.raises(ValueError, match="no sequence folders"):
            load_folder_dataset(tmp_path)


class TestPairSampling:
    def test_identity_sampling(self):
        seq = synth_sequence(SynthConfig(seed=9, n_frames=5, n_distractors=0))
        rng = np.random.default_rng(0)
        pair = sample_pair([seq], NO_AUG, rng)
        assert not pair.is_negative
        assert pair.template.shape == (3, 127, 127)
        assert pair.search.shape == (3, 255, 255)
        b = pair.box_in_search
        assert abs(b.cx - 127.5) < 1e-9
        assert abs(b.cy - 127.5) < 1e-9

    def test_identity_size_is_crop_scaled(self):
        seq = synth_sequence(SynthConfig(seed=10, n_frames=4, n_distractors=0))
        rng = np.random.default_rng(1)
        plan = plan_pair([seq.valid_frames()], NO_AUG, rng)
        pair = materialize_pair([seq], plan)
        gt = seq.boxes[plan.frame_s]
        scale = 255.0 / search_window(gt).side
        assert abs(pair.box_in_search.w - gt.w * scale) < 1e-9
        assert abs(pair.box_in_search.h - gt.h * scale) < 1e-9

    def test_shift_moves_box_opposite(self):
        seq = synth_sequence(SynthConfig(seed=11, n_frames=4, n_distractors=0))
        plan = PairPlan(is_negative=False, seq_t=0, frame_t=0, seq_s=0,
                        frame_s=0, dx=10.0, dy=-6.0, dscale=0.0, blur_sigma=0.0)
        pair = materialize_pair([seq], plan)
        assert abs(pair.box_in_search.cx - (127.5 - 10.0)) < 1e-9
        assert abs(pair.box_in_search.cy - (127.5 + 6.0)) < 1e-9

    def test_scale_keeps_center(self):
        seq = synth_sequence(SynthConfig(seed=12, n_frames=4, n_distractors=0))
        plan = PairPlan(is_negative=False, seq_t=0, frame_t=0, seq_s=0,
                        frame_s=0, dx=0.0, dy=0.0, dscale=0.2, blur_sigma=0.0)
        pair = materialize_pair([seq], plan)
        gt = seq.boxes[0]
        base = search_window(gt)
        assert abs(pair.box_in_search.cx - 127.5) < 1e-9
        want_w = gt.w * 255.0 / (base.side * math.exp(0.2))
        assert abs(pair.box_in_search.w - want_w) < 1e-9

    def test_box_matches_pixels(self):
        # locate the bright target in the crop and compare with the box
        found = 0
        for seed in range(6):
            seq = synth_sequence(SynthConfig(seed=seed, n_frames=8,
                                             n_distractors=0))
            aug = replace(NO_AUG, max_shift=20.0, max_scale=0.15)
            rng = np.random.default_rng(seed + 50)
            plan = plan_pair([seq.valid_frames()], aug, rng)
            pair = materialize_pair([seq], plan)
            img = pair.search.transpose(1, 2, 0) * 255.0
            fill = np.asarray(seq.meta["target_fill"])
            dist = np.abs(img - fill).max(axis=2)
            mask = dist < 35.0
            if not mask.any():
                continue
            ys, xs = np.nonzero(mask)
            b = pair.box_in_search
            # nothing target-colored outside the box...
            assert xs.min() >= b.x - 3 and xs.max() <= b.x2 + 3
            assert ys.min() >= b.y - 3 and ys.max() <= b.y2 + 3
            # ...and the fill actually occupies it (accent may cover a side,
            # curved shapes feather inward)
            assert xs.max() - xs.min() > 0.4 * b.w
            assert ys.max() - ys.min() > 0.4 * b.h
            found += 1
        assert found >= 4

    def test_negative_pairs(self):
        seqs = make_synth_dataset(SynthConfig(n_frames=4), 2, base_seed=20)
        aug = replace(NO_AUG, neg_prob=1.0)
        rng = np.random.default_rng(2)
        valid = [s.valid_frames() for s in seqs]
        for _ in range(10):
            plan = plan_pair(valid, aug, rng)
            assert plan.is_negative
            assert plan.seq_s != plan.seq_t
        pair = materialize_pair(seqs, plan)
        assert pair.is_negative and pair.box_in_search is None

    def test_single_sequence_cannot_go_negative(self):
        seq = synth_sequence(SynthConfig(seed=21, n_frames=4))
        aug = replace(NO_AUG, neg_prob=1.0)
        rng = np.random.default_rng(3)
        plan = plan_pair([seq.valid_frames()], aug, rng)
        assert not plan.is_negative

    def test_ratio_converges(self):
        valid = [list(range(30)) for _ in range(3)]
        aug = replace(NO_AUG, neg_prob=0.2, max_frame_gap=100)
        rng = np.random.default_rng(4)
        neg = sum(plan_pair(valid, aug, rng).is_negative for _ in range(10000))
        assert abs(neg / 10000 - 0.2) <= 0.02

    def test_frame_gap_honored(self):
        valid = [list(range(500))]
        aug = replace(NO_AUG, max_frame_gap=10)
        rng = np.random.default_rng(5)
        for _ in range(200):
            plan = plan_pair(valid, aug, rng)
            assert abs(plan.frame_s - plan.frame_t) <= 10

    def test_source_weights(self):
        valid = [list(range(5)), list(range(5))]
        rng = np.random.default_rng(6)
        for _ in range(50):
            plan = plan_pair(valid, NO_AUG, rng, weights=[1.0, 0.0])
            assert plan.seq_t == 0

    def test_occluded_frames_never_sampled(self):
        seq = synth_sequence(SynthConfig(seed=22, n_frames=30, occluder_prob=0.4))
        sampler = PairSampler([seq], AugConfig(neg_prob=0.0),
                              np.random.default_rng(7))
        for _ in range(50):
            plan = sampler.plan()
            assert seq.boxes[plan.frame_t] is not None
            assert seq.boxes[plan.frame_s] is not None

    def test_augmented_dims_and_range(self):
        seqs = make_synth_dataset(SynthConfig(n_frames=6), 2, base_seed=30)
        aug = AugConfig(blur_prob=1.0)  # force blur on top of full jitter
        sampler = PairSampler(seqs, aug, np.random.default_rng(8))
        for pair in sampler.sample_batch(6):
            assert pair.template.shape == (3, 127, 127)
            assert pair.search.shape == (3, 255, 255)
            assert pair.template.dtype == np.float32
            assert 0.0 <= pair.template.min() and pair.template.max() <= 1.0
            assert 0.0 <= pair.search.min() and pair.search.max() <= 1.0

    def test_positive_box_inside_crop(self):
        seqs = make_synth_dataset(SynthConfig(n_frames=6), 2, base_seed=40)
        sampler = PairSampler(seqs, AugConfig(neg_prob=0.0),
                              np.random.default_rng(9))
        for pair in sampler.sample_batch(40):
            b = pair.box_in_search
            assert b.x >= 0 and b.y >= 0 and b.x2 <= 255 and b.y2 <= 255

    def test_fixed_pair_sampler(self):
        seq = synth_sequence(SynthConfig(seed=23, n_frames=4))
        rng = np.random.default_rng(10)
        pairs = [sample_pair([seq], NO_AUG, rng) for _ in range(3)]
        fixed = FixedPairSampler(pairs, np.random.default_rng(11))
        batch = fixed.sample_batch(8)
        assert len(batch) == 8
        assert all(any(b is p for p in pairs) for b in batch)
