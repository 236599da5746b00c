import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from objtrans.core import BBox, HsvParams, ImageFrame, InstanceMask
from objtrans.dataset import load_dataset
from objtrans.transforms import (
    AugmentationPlan,
    TransformSampler,
    generate_augmented_dataset,
    perturb_object,
    sample_params,
)


def random_frame(rng, size=24, image_id="img"):
    return ImageFrame(
        rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8), image_id=image_id
    )


def random_mask(rng, size=24, image_id="img"):
    bitmap = rng.random((size, size)) < 0.3
    if not bitmap.any():
        bitmap[size // 2, size // 2] = True
    return InstanceMask(image_id=image_id, instance_id=1, class_id=0, bitmap=bitmap)


class TestSampler:
    def test_defaults(self):
        inf = TransformSampler.inference()
        train = TransformSampler.training()
        assert inf.hue_range == 30.0 and inf.sat_range == (0.7, 1.3)
        assert train.hue_range == 180.0 and train.sat_range == (0.5, 1.5)

    def test_collapsed_ranges_give_identity(self):
        s = TransformSampler.identity(seed=5)
        for k in range(10):
            assert sample_params(s, ("img", 0, k)) == HsvParams.identity()

    def test_deterministic_per_key(self):
        s = TransformSampler(seed=42)
        a = sample_params(s, ("img_a", 3, 7))
        b = sample_params(s, ("img_a", 3, 7))
        assert a == b

    def test_streams_differ_across_keys_and_seeds(self):
        s = TransformSampler(seed=42)
        base = sample_params(s, ("img_a", 0, 0))
        assert sample_params(s, ("img_a", 0, 1)) != base
        assert sample_params(s, ("img_a", 1, 0)) != base
        assert sample_params(s, ("img_b", 0, 0)) != base
        assert sample_params(TransformSampler(seed=43), ("img_a", 0, 0)) != base

    def test_uniform_law_statistics(self):
        s = TransformSampler(hue_range=30.0, seed=9)
        draws = np.array(
            [sample_params(s, ("stat", 0, k)).hue_shift for k in range(100_000)]
        )
        # mean of U(-30, 30) is 0 with sd 30/sqrt(3); 3 sigma of the mean
        three_sigma = 3 * (30.0 / np.sqrt(3.0)) / np.sqrt(draws.size)
        assert abs(draws.mean()) < three_sigma
        assert draws.min() >= -30.0
        assert draws.max() < 30.0

    def test_invalid_ranges_rejected(self):
        with pytest.raises(ValueError):
            TransformSampler(hue_range=-1.0)
        with pytest.raises(ValueError):
            TransformSampler(sat_range=(0.0, 1.0))
        with pytest.raises(ValueError):
            TransformSampler(val_range=(1.2, 0.8))


class TestPerturbObject:
    def test_identity_params_bit_identical(self):
        rng = np.random.default_rng(0)
        frame = random_frame(rng)
        mask = random_mask(rng)
        out = perturb_object(frame, mask, HsvParams.identity())
        np.testing.assert_array_equal(out.pixels, frame.pixels)

    def test_outside_mask_untouched(self):
        rng = np.random.default_rng(1)
        frame = random_frame(rng)
        mask = random_mask(rng)
        out = perturb_object(frame, mask, HsvParams(hue_shift=77.0, sat_scale=1.4))
        np.testing.assert_array_equal(
            out.pixels[~mask.bitmap], frame.pixels[~mask.bitmap]
        )

    def test_full_image_red_to_green(self):
        red = ImageFrame(
            np.tile(np.array([255, 0, 0], dtype=np.uint8), (10, 10, 1)), image_id="r"
        )
        mask = InstanceMask("r", 1, 0, np.ones((10, 10), dtype=bool))
        out = perturb_object(red, mask, HsvParams(hue_shift=120.0))
        np.testing.assert_array_equal(
            out.pixels, np.tile(np.array([0, 255, 0], dtype=np.uint8), (10, 10, 1))
        )

    def test_bbox_region(self):
        rng = np.random.default_rng(2)
        frame = random_frame(rng, size=32)
        box = BBox(0.5, 0.5, 0.25, 0.25)
        out = perturb_object(frame, box, HsvParams(hue_shift=90.0))
        left, top, right, bottom = box.pixel_rect(32, 32)
        inside = np.zeros((32, 32), dtype=bool)
        inside[top:bottom, left:right] = True
        np.testing.assert_array_equal(out.pixels[~inside], frame.pixels[~inside])
        assert (out.pixels[inside] != frame.pixels[inside]).any()

    def test_tiny_bbox_still_covers_a_pixel(self):
        # the floor/ceil raster convention never produces an empty rectangle
        # for a valid box, so even near-degenerate boxes perturb something
        rng = np.random.default_rng(7)
        frame = random_frame(rng, size=16)
        out = perturb_object(frame, BBox(0.5, 0.5, 1e-9, 1e-9), HsvParams(hue_shift=120.0))
        assert out.pixels.shape == frame.pixels.shape

    def test_mask_shape_mismatch_rejected(self):
        frame = ImageFrame(np.zeros((16, 16, 3), dtype=np.uint8), image_id="z")
        mask = InstanceMask("z", 1, 0, np.ones((8, 8), dtype=bool))
        with pytest.raises(ValueError, match="shape"):
            perturb_object(frame, mask, HsvParams.identity())

    @settings(max_examples=25, deadline=None)
    @given(
        st.integers(0, 2**32 - 1),
        st.floats(-179.9, 179.9),
        st.floats(0.3, 2.5),
        st.floats(0.3, 2.5),
    )
    def test_confinement_property(self, seed, hue, sat, val):
        rng = np.random.default_rng(seed)
        frame = random_frame(rng, size=16)
        mask = random_mask(rng, size=16)
        out = perturb_object(frame, mask, HsvParams(hue, sat, val))
        np.testing.assert_array_equal(
            out.pixels[~mask.bitmap], frame.pixels[~mask.bitmap]
        )


class TestGenerateAugmentedDataset:
    def test_counts_and_manifest(self, miniset, tmp_path):
        handle = load_dataset(miniset)
        plan = AugmentationPlan(transforms_per_image=2)
        report = generate_augmented_dataset(
            handle, plan, TransformSampler.training(seed=1), tmp_path / "aug"
        )
        assert report.images_written == 12
        # scene_001 has one labeled instance and no mask artifact
        assert report.instances_skipped == 2
        assert len(report.warnings) == 1 and "scene_001" in report.warnings[0]
        lines = (tmp_path / "aug" / "manifest.jsonl").read_text().splitlines()
        assert len(lines) == 12
        rec = json.loads(lines[0])
        assert set(rec) == {"out_image", "src_image", "instances"}
        for inst in rec["instances"]:
            assert set(inst) == {
                "instance_id",
                "class_id",
                "hue_shift",
                "sat_scale",
                "val_scale",
            }
        out_handle = load_dataset(tmp_path / "aug")
        assert out_handle.n_images == 12

    def test_labels_copied_unchanged(self, miniset, tmp_path):
        handle = load_dataset(miniset)
        generate_augmented_dataset(
            handle,
            AugmentationPlan(transforms_per_image=1),
            TransformSampler.training(seed=1),
            tmp_path / "aug",
        )
        src = (miniset / "labels" / "train" / "scene_000.txt").read_bytes()
        out = (tmp_path / "aug" / "labels" / "train" / "scene_000__aug000.txt").read_bytes()
        assert src == out

    def test_noop_plan_reproduces_sources(self, miniset, tmp_path):
        from PIL import Image

        handle = load_dataset(miniset)
        plan = AugmentationPlan(transforms_per_image=1, classes_hsv=frozenset())
        generate_augmented_dataset(
            handle, plan, TransformSampler.training(seed=3), tmp_path / "aug"
        )
        for split, stems in handle.splits.items():
            for stem in stems:
                src = np.asarray(Image.open(handle.image_path(split, stem)))
                out = np.asarray(
                    Image.open(tmp_path / "aug" / "images" / split / f"{stem}__aug000.png")
                )
                np.testing.assert_array_equal(src, out)

    def test_identity_sampler_reproduces_sources(self, miniset, tmp_path):
        from PIL import Image

        handle = load_dataset(miniset)
        generate_augmented_dataset(
            handle,
            AugmentationPlan(transforms_per_image=1),
            TransformSampler.identity(seed=3),
            tmp_path / "aug",
        )
        src = np.asarray(Image.open(handle.image_path("train", "scene_000")))
        out = np.asarray(
            Image.open(tmp_path / "aug" / "images" / "train" / "scene_000__aug000.png")
        )
        np.testing.assert_array_equal(src, out)

    def test_same_seed_identical_trees(self, miniset, tmp_path, hash_tree):
        handle = load_dataset(miniset)
        plan = AugmentationPlan(transforms_per_image=2)
        for name, jobs in (("a", 1), ("b", 4)):
            generate_augmented_dataset(
                handle, plan, TransformSampler.training(seed=11), tmp_path / name, jobs=jobs
            )
        assert hash_tree(tmp_path / "a") == hash_tree(tmp_path / "b")

    def test_different_seed_differs(self, miniset, tmp_path, hash_tree):
        handle = load_dataset(miniset)
        plan = AugmentationPlan(transforms_per_image=1)
        generate_augmented_dataset(
            handle, plan, TransformSampler.training(seed=1), tmp_path / "a"
        )
        generate_augmented_dataset(
            handle, plan, TransformSampler.training(seed=2), tmp_path / "b"
        )
        assert hash_tree(tmp_path / "a") != hash_tree(tmp_path / "b")

    def test_skip_classes_respected(self, miniset, tmp_path):
        handle = load_dataset(miniset)
        # skip everything except class 1: only class-1 instances perturbed
        plan = AugmentationPlan(
            transforms_per_image=1, classes_hsv=frozenset({1}), skip_classes=frozenset({0})
        )
        report = generate_augmented_dataset(
            handle, plan, TransformSampler.training(seed=1), tmp_path / "aug"
        )
        manifest = [
            json.loads(l)
            for l in (tmp_path / "aug" / "manifest.jsonl").read_text().splitlines()
        ]
        classes = {i["class_id"] for rec in manifest for i in rec["instances"]}
        assert classes == {1}
        assert report.instances_perturbed == 3  # one class-1 mask in scenes 000/100/200
