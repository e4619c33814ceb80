import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roadgen.camgeom import Intrinsics, make_rig
from roadgen.composite import (
    BackgroundFrame,
    CompositeError,
    MaskedSource,
    RigMismatch,
    TooFewFrames,
    compose,
    extract_background,
    plan_batches,
)
from roadgen.labels3d import Box3D, LabelSet, Provenance, bev_iou
from roadgen.rectify import RectifiedFrame
from roadgen.segmask import InstanceMask

from oracles import median_sort_oracle, painter_oracle
from scenes import random_plan


class TestExtractBackground:
    def test_identical_frames(self, rng):
        f = rng.integers(0, 256, size=(8, 9, 3), dtype=np.uint8)
        assert np.array_equal(extract_background([f, f.copy(), f.copy()]), f)

    def test_too_few(self, rng):
        f = np.zeros((2, 2), np.uint8)
        with pytest.raises(TooFewFrames):
            extract_background([f, f])

    def test_shape_mismatch(self):
        with pytest.raises(CompositeError):
            extract_background([np.zeros((2, 2))] * 2 + [np.zeros((3, 2))])

    @pytest.mark.parametrize("n", [3, 4, 7, 30])
    def test_matches_sort_oracle(self, rng, n):
        stack = rng.integers(0, 256, size=(n, 6, 7, 3), dtype=np.uint8)
        assert np.array_equal(extract_background(list(stack)), median_sort_oracle(stack))

    def test_float_stack(self, rng):
        stack = rng.normal(size=(5, 4, 4))
        assert np.array_equal(extract_background(list(stack)), median_sort_oracle(stack))

    def test_removes_minority_transients(self, rng):
        bg = rng.integers(0, 256, size=(20, 20, 3), dtype=np.uint8)
        frames = []
        for k in range(30):
            f = bg.copy()
            band = k % 4  # every pixel is covered in at most 8 of 30 frames
            f[band * 5 : band * 5 + 5, int(rng.integers(0, 15)) :] = rng.integers(0, 256, size=3)
            frames.append(f)
        assert np.array_equal(extract_background(frames), bg)


SMALL_RIG = make_rig(Intrinsics(240.0, 240.0, 160.0, 90.0), 6.0, 0.2, image_size=(320, 180))


@pytest.fixture
def small_rig():
    return SMALL_RIG


def single_source(rig, box, bits, image, fid="s"):
    labels = LabelSet(fid, (box,))
    frame = RectifiedFrame(image, np.ones(bits.shape, bool), rig, labels, fid)
    return MaskedSource(frame, (InstanceMask(bits, 0, box.category),))


class TestCompose:
    def test_zero_sources(self, small_rig, rng):
        bg = BackgroundFrame(rng.integers(0, 256, (180, 320, 3), dtype=np.uint8), small_rig)
        out = compose(bg, [])
        assert np.array_equal(out.image, bg.image) and len(out.labels) == 0 and not out.combined_mask.any()
        again = compose(bg, [])
        assert np.array_equal(again.image, out.image) and again.labels == out.labels

    def test_one_instance(self, small_rig, rng):
        bg = BackgroundFrame(np.zeros((180, 320, 3), np.uint8), small_rig)
        bits = np.zeros((180, 320), bool)
        bits[60:90, 100:150] = True
        img = np.full((180, 320, 3), 200, np.uint8)
        out = compose(bg, [single_source(small_rig, Box3D(0, 20, 0.75, 1.5, 1.8, 4.5), bits, img)])
        assert np.all(out.image[bits] == 200) and np.all(out.image[~bits] == 0)
        assert len(out.labels) == 1 and out.labels.provenance is Provenance.SYNTHETIC
        assert out.rig is small_rig

    def test_nearer_wins_overlap(self, small_rig):
        bg = BackgroundFrame(np.zeros((180, 320, 3), np.uint8), small_rig)
        near, far = Box3D(0, 15, 0.75, 1.5, 1.8, 4.5), Box3D(3, 30, 0.75, 1.5, 1.8, 4.5)
        assert bev_iou(near, far) < 0.25
        bits_a = np.zeros((180, 320), bool)
        bits_a[50:100, 100:200] = True
        bits_b = np.zeros((180, 320), bool)
        bits_b[70:120, 150:250] = True
        a = single_source(small_rig, near, bits_a, np.full((180, 320, 3), 10, np.uint8), "a")
        b = single_source(small_rig, far, bits_b, np.full((180, 320, 3), 20, np.uint8), "b")
        for order in ([a, b], [b, a]):
            out = compose(bg, order)
            assert np.all(out.image[bits_a] == 10)
            assert np.all(out.image[bits_b & ~bits_a] == 20)
            assert len(out.labels) == 2

    def test_colliding_instances_keep_far_one(self, small_rig):
        bg = BackgroundFrame(np.zeros((180, 320, 3), np.uint8), small_rig)
        far, near = Box3D(0, 20.5, 0.75, 1.5, 1.8, 4.5), Box3D(0, 20, 0.75, 1.5, 1.8, 4.5)
        assert bev_iou(near, far) >= 0.25
        bits = np.zeros((180, 320), bool)
        bits[60:90, 100:150] = True
        srcs = [
            single_source(small_rig, near, bits, np.full((180, 320, 3), 1, np.uint8), "a"),
            single_source(small_rig, far, bits, np.full((180, 320, 3), 2, np.uint8), "b"),
        ]
        out = compose(bg, srcs)
        assert out.labels.boxes == (far,) and out.rejected_iou == 1
        assert out.source_frame_ids == ("b",)

    def test_invalid_pixels_rejected(self, small_rig):
        bg = BackgroundFrame(np.zeros((180, 320, 3), np.uint8), small_rig)
        bits = np.zeros((180, 320), bool)
        bits[60:90, 100:150] = True
        labels = LabelSet("s", (Box3D(0, 20, 0.75, 1.5, 1.8, 4.5),))
        valid = np.ones((180, 320), bool)
        valid[60:90, 100:110] = False  # 20% of the mask
        frame = RectifiedFrame(np.full((180, 320, 3), 9, np.uint8), valid, small_rig, labels, "s")
        out = compose(bg, [MaskedSource(frame, (InstanceMask(bits, 0, "car"),))])
        assert len(out.labels) == 0 and out.rejected_invalid == 1

    def test_rig_mismatch(self, small_rig, rng):
        other = make_rig(Intrinsics(240.0, 240.0, 160.0, 90.0), 6.0, 0.25, image_size=(320, 180))
        bg = BackgroundFrame(np.zeros((180, 320, 3), np.uint8), small_rig)
        src = single_source(other, Box3D(0, 20, 0.75, 1.5, 1.8, 4.5), np.ones((180, 320), bool), bg.image)
        with pytest.raises(RigMismatch):
            compose(bg, [src])

    def test_max_instances(self, small_rig, rng):
        bg, sources = random_plan(rng, small_rig, n_sources=4)
        out = compose(bg, sources, max_instances=2)
        assert len(out.labels) <= 2

    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 0.25, 0.5]))
    def test_matches_painter_oracle(self, seed, t_iou):
        small_rig = SMALL_RIG
        rng = np.random.default_rng(seed)
        bg, sources = random_plan(rng, small_rig)
        out = compose(bg, sources, t_iou=t_iou)
        image, accepted, filled = painter_oracle(bg.image, small_rig, sources, t_iou, 32)
        assert np.array_equal(out.image, image)
        assert list(out.labels.boxes) == accepted
        assert np.array_equal(out.combined_mask, filled)
        assert np.array_equal(out.image[~out.combined_mask], bg.image[~out.combined_mask])
        for i, a in enumerate(out.labels.boxes):
            for b in out.labels.boxes[i + 1 :]:
                assert bev_iou(a, b) < t_iou

    def test_feather_blends_boundary(self, small_rig):
        bg = BackgroundFrame(np.zeros((180, 320, 3), np.uint8), small_rig)
        bits = np.zeros((180, 320), bool)
        bits[60:90, 100:150] = True
        src = single_source(small_rig, Box3D(0, 20, 0.75, 1.5, 1.8, 4.5), bits, np.full((180, 320, 3), 200, np.uint8))
        out = compose(bg, [src], feather=True)
        assert out.image[75, 120, 0] == 200 and out.image[60, 120, 0] == 100
        assert np.all(out.image[~bits] == 0)


class TestPlanBatches:
    def sets(self, n):
        return [LabelSet(f"f{k:02d}", (Box3D(0, 10, 0, 1, 1, 1),)) for k in range(n)]

    def test_single_frame(self):
        plans = plan_batches(self.sets(1), 4)
        assert [p.frame_ids for p in plans] == [("f00",)]

    def test_partition(self):
        plans = plan_batches(self.sets(8), 4, seed=3)
        assert [len(p.frame_ids) for p in plans] == [4, 4]
        assert sorted(plans[0].frame_ids + plans[1].frame_ids) == [f"f{k:02d}" for k in range(8)]

    def test_seeded(self):
        a = plan_batches(self.sets(11), 3, seed=9, backgrounds=["b0", "b1"])
        b = plan_batches(self.sets(11), 3, seed=9, backgrounds=["b0", "b1"])
        assert a == b
        assert a != plan_batches(self.sets(11), 3, seed=10, backgrounds=["b0", "b1"])

    def test_empty_frames_skipped(self):
        sets = self.sets(3) + [LabelSet("empty")]
        assert all("empty" not in p.frame_ids for p in plan_batches(sets, 2))

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            plan_batches(self.sets(2), 0)
