from PIL import Image
from pathlib import Path
from typing import Tuple, Union
import io
import base64
import logging

import numpy as np

from app.core.errors import DimensionError, UnusableImageError

logger = logging.getLogger(__name__)

# ImageRGB: float32 array (H, W, 3) with values in [0, 1]
ImageRGB = np.ndarray

KEYS_A = -0.5


class ImageProcessor:
    """Image decoding/encoding between bytes, Pillow and float RGB arrays"""

    def __init__(self, max_dimension: int = 1024):
        self.max_dimension = max_dimension

    @staticmethod
    def validate_image(image_bytes: bytes) -> bool:
        """Validate if bytes represent a valid image"""
        try:
            Image.open(io.BytesIO(image_bytes))
            return True
        except Exception as e:
            logger.error(f"Invalid image: {str(e)}")
            return False

    @staticmethod
    def bytes_to_image(image_bytes: bytes) -> Image.Image:
        """Convert bytes to PIL Image"""
        try:
            image = Image.open(io.BytesIO(image_bytes))
            image.load()
            return image
        except Exception as e:
            logger.error(f"Failed to convert bytes to image: {str(e)}")
            raise UnusableImageError("Invalid image data")

    @staticmethod
    def base64_to_bytes(base64_string: str) -> bytes:
        """Decode a base64 string (data URL prefix allowed)"""
        try:
            if ',' in base64_string:
                base64_string = base64_string.split(',')[1]
            return base64.b64decode(base64_string, validate=True)
        except Exception as e:
            logger.error(f"Failed to decode base64 image: {str(e)}")
            raise UnusableImageError("Invalid base64 image data")

    def prepare_image(self, image: Image.Image) -> ImageRGB:
        """Convert to RGB floats, refusing inputs over the size limit"""
        if image.width > self.max_dimension or image.height > self.max_dimension:
            raise UnusableImageError(
                f"Image {image.width}x{image.height} exceeds the {self.max_dimension}px input limit")
        return pil_to_array(image)

    @staticmethod
    def get_image_info(image: Image.Image) -> dict:
        """Extract image metadata"""
        return {
            "width": image.width,
            "height": image.height,
            "mode": image.mode,
            "format": image.format or "Unknown"
        }


def pil_to_array(image: Image.Image) -> ImageRGB:
    if image.mode != 'RGB':
        image = image.convert('RGB')
    return np.asarray(image, dtype=np.float32) / 255.0


def to_uint8(img: ImageRGB) -> np.ndarray:
    """8-bit quantization: round(v * 255) after clamping to [0, 1]"""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def quantize(img: ImageRGB) -> ImageRGB:
    return to_uint8(img).astype(np.float32) / 255.0


def array_to_pil(img: ImageRGB) -> Image.Image:
    return Image.fromarray(to_uint8(img))


def png_bytes(img: ImageRGB) -> bytes:
    buffer = io.BytesIO()
    array_to_pil(img).save(buffer, format="PNG")
    return buffer.getvalue()


def load_image(path: Union[str, Path]) -> ImageRGB:
    try:
        with Image.open(path) as image:
            return pil_to_array(image)
    except (OSError, ValueError) as e:
        raise UnusableImageError(f"cannot read {path}: {e}")


def save_image(img: ImageRGB, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array_to_pil(img).save(path, format="PNG")
    return path


def image_to_tensor(img: ImageRGB, dtype=np.float32) -> np.ndarray:
    """(H, W, C) -> (1, C, H, W)"""
    return np.ascontiguousarray(np.asarray(img, dtype=dtype).transpose(2, 0, 1)[None])


def tensor_to_image(t: np.ndarray, index: int = 0) -> ImageRGB:
    """(N, C, H, W) -> (H, W, C) of batch element ``index``"""
    return np.ascontiguousarray(t[index].transpose(1, 2, 0))


# Bicubic resampling

def cubic(x: np.ndarray, a: float = KEYS_A) -> np.ndarray:
    """Keys cubic-convolution kernel"""
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_weights(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """
    Dense (out_len, in_len) resampling matrix.

    When shrinking with antialiasing the kernel is stretched by 1/scale, as
    the reference imresize does. Out-of-range taps are clamped to the edge.
    """
    scale = out_len / in_len
    width = 4.0
    if scale < 1 and antialias:
        def kernel(d):
            return scale * cubic(scale * d)
        width /= scale
    else:
        kernel = cubic

    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(np.ceil(width)) + 2
    ind = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(u[:, None] - ind)
    weights = weights / weights.sum(axis=1, keepdims=True)
    ind = np.clip(ind, 1, in_len).astype(np.int64) - 1

    matrix = np.zeros((out_len, in_len), dtype=np.float64)
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(matrix, (rows, ind.reshape(-1)), weights.reshape(-1))
    return matrix


def bicubic_resize(img: ImageRGB, out_h: int, out_w: int, antialias: bool = True) -> ImageRGB:
    """Separable cubic resampling (rows, then columns); output clamped to [0, 1]"""
    if out_h < 1 or out_w < 1:
        raise DimensionError("bicubic_resize target must be at least 1x1", (out_h, out_w))
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    rows = resize_weights(h, out_h, antialias)
    cols = resize_weights(w, out_w, antialias)
    out = np.einsum("oh,hwc->owc", rows, img)
    out = np.einsum("pw,owc->opc", cols, out)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# Colour

def rgb_to_y(img: ImageRGB) -> np.ndarray:
    """BT.601 studio-swing luma in [16/255, 235/255] for RGB in [0, 1]"""
    img = np.asarray(img, dtype=np.float64)
    return (65.481 * img[..., 0] + 128.553 * img[..., 1] + 24.966 * img[..., 2] + 16.0) / 255.0


# Dihedral group: k in 0..7 = rotate k % 4 quarter turns, then flip horizontally when k >= 4

DIHEDRAL = tuple(range(8))


def dihedral(x: np.ndarray, k: int, axes: Tuple[int, int] = (0, 1)) -> np.ndarray:
    if k not in DIHEDRAL:
        raise ValueError(f"dihedral index must be in 0..7, got {k}")
    y = np.rot90(x, k % 4, axes=axes)
    if k >= 4:
        y = np.flip(y, axis=axes[1])
    return np.ascontiguousarray(y)


def dihedral_inverse(x: np.ndarray, k: int, axes: Tuple[int, int] = (0, 1)) -> np.ndarray:
    if k not in DIHEDRAL:
        raise ValueError(f"dihedral index must be in 0..7, got {k}")
    y = np.flip(x, axis=axes[1]) if k >= 4 else x
    return np.ascontiguousarray(np.rot90(y, -(k % 4), axes=axes))
