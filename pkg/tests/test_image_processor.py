import base64
import io

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from PIL import Image

from app.core.errors import DimensionError, UnusableImageError
from app.services.image_processor import (
    DIHEDRAL, ImageProcessor, bicubic_resize, cubic, dihedral, dihedral_inverse, image_to_tensor,
    load_image, png_bytes, quantize, resize_weights, rgb_to_y, save_image, tensor_to_image, to_uint8,
)
from tests.helpers import smooth_image


class TestBicubic:
    def test_checkerboard_downscale_is_half(self):
        board = np.array([[0.0, 1.0], [1.0, 0.0]])
        img = np.repeat(board[:, :, None], 3, axis=2)
        out = bicubic_resize(img, 1, 1, antialias=True)
        assert_allclose(out, 0.5, atol=1e-6)

    def test_kernel_values(self):
        assert cubic(np.array(0.0)) == 1.0
        assert cubic(np.array(1.0)) == 0.0
        assert cubic(np.array(2.0)) == 0.0
        assert_allclose(cubic(np.array(0.5)), 0.5625)

    @pytest.mark.parametrize("shape", [(7, 9), (20, 6), (3, 3)])
    def test_weight_rows_sum_to_one(self, shape):
        in_len, out_len = shape
        assert_allclose(resize_weights(in_len, out_len).sum(axis=1), 1.0, atol=1e-12)

    def test_constant_image_is_preserved(self):
        img = np.full((13, 17, 3), 0.3, dtype=np.float32)
        for size in [(5, 7), (26, 34), (13, 17)]:
            assert_allclose(bicubic_resize(img, *size), 0.3, atol=1e-6)

    def test_same_size_is_identity(self):
        img = smooth_image(12, 9)
        assert_array_equal(bicubic_resize(img, 12, 9), img)

    def test_output_is_clamped(self):
        img = np.zeros((8, 8, 3), dtype=np.float32)
        img[::2, ::2] = 1.0
        out = bicubic_resize(img, 16, 16)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_antialias_smooths_more(self):
        rng = np.random.default_rng(0)
        img = rng.random((32, 32, 3)).astype(np.float32)
        assert bicubic_resize(img, 8, 8, antialias=True).std() < bicubic_resize(img, 8, 8, antialias=False).std()

    def test_invalid_target(self):
        with pytest.raises(DimensionError):
            bicubic_resize(np.zeros((4, 4, 3)), 0, 4)


class TestColour:
    def test_studio_swing_range(self):
        white = np.ones((1, 1, 3))
        black = np.zeros((1, 1, 3))
        assert_allclose(rgb_to_y(white) * 255, 235.0)
        assert_allclose(rgb_to_y(black) * 255, 16.0)

    def test_quantize(self):
        img = np.array([[[0.0, 0.5, 1.2]]], dtype=np.float32)
        assert_array_equal(to_uint8(img), [[[0, 128, 255]]])
        assert_allclose(quantize(img), [[[0.0, 128 / 255, 1.0]]])


class TestDihedral:
    def test_eight_distinct_transforms(self):
        x = np.arange(6).reshape(2, 3)
        seen = {dihedral(x, k).tobytes() + bytes(dihedral(x, k).shape) for k in DIHEDRAL}
        assert len(seen) == 8

    @pytest.mark.parametrize("k", DIHEDRAL)
    def test_inverse(self, k):
        x = np.random.default_rng(k).random((5, 7, 3))
        assert_array_equal(dihedral_inverse(dihedral(x, k), k), x)

    @pytest.mark.parametrize("k", DIHEDRAL)
    def test_hwc_and_chw_agree(self, k):
        x = np.random.default_rng(k).random((4, 6, 3))
        chw = dihedral(x.transpose(2, 0, 1), k, axes=(1, 2))
        assert_array_equal(chw.transpose(1, 2, 0), dihedral(x, k))

    def test_rejects_bad_index(self):
        with pytest.raises(ValueError):
            dihedral(np.zeros((2, 2)), 8)


class TestIO:
    def test_save_load_roundtrip(self, tmp_path):
        img = quantize(smooth_image(10, 14))
        path = save_image(img, tmp_path / "nested" / "img.png")
        assert_array_equal(load_image(path), img)

    def test_png_bytes_decode(self):
        img = quantize(smooth_image(6, 5))
        decoded = np.asarray(Image.open(io.BytesIO(png_bytes(img))), dtype=np.float32) / 255.0
        assert_array_equal(decoded, img)

    def test_grayscale_is_expanded_to_rgb(self, tmp_path):
        path = tmp_path / "gray.png"
        Image.fromarray(np.full((4, 4), 100, dtype=np.uint8)).save(path)
        img = load_image(path)
        assert img.shape == (4, 4, 3)
        assert_allclose(img, 100 / 255)

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_bytes(b"not an image")
        with pytest.raises(UnusableImageError):
            load_image(path)

    def test_tensor_layout(self):
        img = smooth_image(4, 5)
        t = image_to_tensor(img)
        assert t.shape == (1, 3, 4, 5)
        assert_array_equal(tensor_to_image(t), img)


class TestImageProcessor:
    def test_base64_with_data_url_prefix(self):
        payload = png_bytes(smooth_image(4, 4))
        encoded = "data:image/png;base64," + base64.b64encode(payload).decode()
        assert ImageProcessor.base64_to_bytes(encoded) == payload

    def test_invalid_base64(self):
        with pytest.raises(UnusableImageError):
            ImageProcessor.base64_to_bytes("***")

    def test_size_limit(self):
        processor = ImageProcessor(max_dimension=8)
        image = ImageProcessor.bytes_to_image(png_bytes(smooth_image(9, 4)))
        with pytest.raises(UnusableImageError):
            processor.prepare_image(image)

    def test_info(self):
        image = ImageProcessor.bytes_to_image(png_bytes(smooth_image(3, 7)))
        assert ImageProcessor.get_image_info(image) == {"width": 7, "height": 3, "mode": "RGB", "format": "PNG"}
        assert ImageProcessor.validate_image(png_bytes(smooth_image(3, 7)))
        assert not ImageProcessor.validate_image(b"junk")
