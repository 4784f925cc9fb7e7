import numpy as np
import pytest
from numpy.testing import assert_array_equal

from app.core.errors import DatasetConfigError, UnusableImageError
from app.models.schemas import DatasetSpec
from app.services.data_pipeline import BatchPrefetcher, PatchDataset, degrade, list_images
from app.services.image_processor import bicubic_resize, dihedral_inverse
from tests.helpers import smooth_image


class TestDegrade:
    def test_crops_to_multiple_of_scale(self):
        lr, hr = degrade(smooth_image(37, 52), 2)
        assert hr.shape == (36, 52, 3)
        assert lr.shape == (18, 26, 3)

    def test_matches_bicubic_of_cropped_image(self):
        img = smooth_image(25, 31)
        lr, hr = degrade(img, 3)
        assert_array_equal(hr, img[:24, :30])
        assert_array_equal(lr, bicubic_resize(img[:24, :30], 8, 10))

    def test_quantized_lr_is_8bit(self):
        lr, _ = degrade(smooth_image(16, 16), 2, quantized=True)
        codes = lr.astype(np.float64) * 255
        assert np.abs(codes - np.round(codes)).max() < 1e-4

    def test_smaller_than_scale(self):
        with pytest.raises(UnusableImageError):
            degrade(np.zeros((3, 8, 3), np.float32), 4)


class TestListing:
    def test_lexicographic(self, image_dir):
        (image_dir / "notes.txt").write_text("ignored")
        assert [p.name for p in list_images(image_dir)] == ["a.png", "b.png", "c.png"]

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DatasetConfigError):
            list_images(tmp_path / "nowhere")


def _replay_position(dataset, seed, augment):
    rng = np.random.default_rng(seed)
    pair = dataset.pairs[int(rng.integers(len(dataset.pairs)))]
    h, w = pair.lr.shape[1:]
    y = int(rng.integers(h - dataset.patch_size + 1))
    x = int(rng.integers(w - dataset.patch_size + 1))
    k = int(rng.integers(8)) if augment else 0
    return pair, y, x, k


class TestPatchDataset:
    def test_batch_shapes(self, image_dir):
        dataset = PatchDataset.from_spec(DatasetSpec(hr_dir=str(image_dir), scale=2, patch_size=8))
        lr, hr = dataset.sample(4, np.random.default_rng(0))
        assert lr.shape == (4, 3, 8, 8) and hr.shape == (4, 3, 16, 16)
        assert lr.dtype == hr.dtype == np.float32

    @pytest.mark.parametrize("augment", [False, True])
    def test_patches_are_aligned(self, image_dir, augment):
        dataset = PatchDataset.from_spec(DatasetSpec(hr_dir=str(image_dir), scale=2, patch_size=6, augment=augment))
        lr, hr = dataset.sample(1, np.random.default_rng(42))
        pair, y, x, k = _replay_position(dataset, 42, augment)
        assert_array_equal(dihedral_inverse(lr[0], k, axes=(1, 2)), pair.lr[:, y:y + 6, x:x + 6])
        assert_array_equal(dihedral_inverse(hr[0], k, axes=(1, 2)), pair.hr[:, 2 * y:2 * y + 12, 2 * x:2 * x + 12])

    def test_image_too_small_for_patch(self, image_dir):
        with pytest.raises(DatasetConfigError):
            PatchDataset.from_spec(DatasetSpec(hr_dir=str(image_dir), scale=4, patch_size=16))

    def test_empty_directory(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(DatasetConfigError):
            PatchDataset.from_spec(DatasetSpec(hr_dir=str(tmp_path / "empty")))

    def test_from_images(self):
        dataset = PatchDataset.from_images([smooth_image(20, 20)], scale=2, patch_size=4)
        assert dataset.pairs[0].lr.shape == (3, 10, 10)


class TestBatchPrefetcher:
    @staticmethod
    def sampler(batch_size, rng):
        return rng.random((batch_size, 1)), rng.random((batch_size, 1))

    def _draw(self, workers, n=7):
        with BatchPrefetcher(self.sampler, 2, seed=5, workers=workers, total=n) as batches:
            return [batches.next() for _ in range(n)]

    @pytest.mark.parametrize("workers", [1, 3])
    def test_same_seed_same_sequence(self, workers):
        first, second = self._draw(workers), self._draw(workers)
        for (a_lr, a_hr), (b_lr, b_hr) in zip(first, second):
            assert_array_equal(a_lr, b_lr)
            assert_array_equal(a_hr, b_hr)

    def test_single_worker_stream(self):
        rng = np.random.default_rng([5, 0])
        expected = [self.sampler(2, rng) for _ in range(4)]
        for (lr, hr), (e_lr, e_hr) in zip(self._draw(1, 4), expected):
            assert_array_equal(lr, e_lr)
            assert_array_equal(hr, e_hr)

    def test_round_robin_over_worker_streams(self):
        batches = self._draw(3, 6)
        streams = [np.random.default_rng([5, w]) for w in range(3)]
        for i, (lr, _) in enumerate(batches):
            e_lr, _ = self.sampler(2, streams[i % 3])
            assert_array_equal(lr, e_lr)

    def test_sampler_errors_reach_the_consumer(self):
        def broken(batch_size, rng):
            raise DatasetConfigError("no data")

        with BatchPrefetcher(broken, 1, seed=0) as batches:
            with pytest.raises(DatasetConfigError):
                batches.next()
