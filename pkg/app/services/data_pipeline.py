"""
Training data: bicubic degradation, aligned LR/HR patch sampling, dihedral
augmentation and a deterministic multi-threaded prefetcher.

Patches are always cut from images that were degraded whole, so an LR patch
and its HR counterpart never see per-patch boundary effects.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple
import logging
import queue
import threading

import numpy as np

from app.core.errors import DatasetConfigError, UnusableImageError
from app.models.schemas import DatasetSpec
from app.services.image_processor import (
    ImageRGB, bicubic_resize, dihedral, load_image, quantize,
)

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".bmp", ".tif", ".tiff")

# A batch is (LR N x C x h x w, HR N x 3 x sh x sw), float32
Batch = Tuple[np.ndarray, np.ndarray]


def list_images(directory) -> List[Path]:
    """Image files of a directory in lexicographic order"""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetConfigError(f"dataset directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def degrade(hr: ImageRGB, s: int, antialias: bool = True, quantized: bool = False) -> Tuple[ImageRGB, ImageRGB]:
    """
    Crop HR to a multiple of s, then bicubic-downscale by 1/s.

    HR block [s*y, s*y + s) x [s*x, s*x + s) corresponds to LR pixel (y, x).
    ``quantized`` rounds the LR image to 8 bits, as a saved LR PNG would be.
    """
    h, w = hr.shape[:2]
    if h < s or w < s:
        raise UnusableImageError(f"image {h}x{w} is smaller than the scale factor {s}")
    hr_cropped = np.ascontiguousarray(hr[: h - h % s, : w - w % s])
    lr = bicubic_resize(hr_cropped, hr_cropped.shape[0] // s, hr_cropped.shape[1] // s, antialias=antialias)
    if quantized:
        lr = quantize(lr)
    return lr, hr_cropped


def hwc_to_chw(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(img, dtype=np.float32).transpose(2, 0, 1))


@dataclass
class TrainingPair:
    name: str
    lr: np.ndarray  # C x h x w
    hr: np.ndarray  # 3 x sh x sw


class PatchDataset:
    """Pre-degraded image pairs from which aligned patches are sampled"""

    def __init__(self, pairs: Sequence[TrainingPair], scale: int, patch_size: int, augment: bool):
        if not pairs:
            raise DatasetConfigError("dataset is empty")
        self.pairs = list(pairs)
        self.scale = scale
        self.patch_size = patch_size
        self.augment = augment
        for pair in self.pairs:
            h, w = pair.lr.shape[1:]
            if h < patch_size or w < patch_size:
                raise DatasetConfigError(
                    f"{pair.name}: LR size {h}x{w} cannot hold a {patch_size}px patch")

    @classmethod
    def from_spec(cls, spec: DatasetSpec) -> "PatchDataset":
        paths = list_images(spec.hr_dir)
        if not paths:
            raise DatasetConfigError(f"no images found in {spec.hr_dir}")
        pairs = []
        for path in paths:
            lr, hr = degrade(load_image(path), spec.scale, antialias=spec.antialias)
            pairs.append(TrainingPair(path.name, hwc_to_chw(lr), hwc_to_chw(hr)))
        logger.info(f"📚 Loaded {len(pairs)} training images from {spec.hr_dir} at x{spec.scale}")
        return cls(pairs, spec.scale, spec.patch_size, spec.augment)

    @classmethod
    def from_images(cls, images: Sequence[ImageRGB], scale: int, patch_size: int,
                    augment: bool = False, antialias: bool = True) -> "PatchDataset":
        pairs = []
        for i, img in enumerate(images):
            lr, hr = degrade(img, scale, antialias=antialias)
            pairs.append(TrainingPair(f"image{i}", hwc_to_chw(lr), hwc_to_chw(hr)))
        return cls(pairs, scale, patch_size, augment)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        return sample_batch(self, batch_size, rng)


def sample_batch(dataset: PatchDataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """
    Uniformly random image and LR position; the HR patch is the exact
    s*patch counterpart at (s*y, s*x). One dihedral transform per pair,
    applied identically to both members.
    """
    p, s = dataset.patch_size, dataset.scale
    lr_batch, hr_batch = [], []
    for _ in range(batch_size):
        pair = dataset.pairs[int(rng.integers(len(dataset.pairs)))]
        h, w = pair.lr.shape[1:]
        y = int(rng.integers(h - p + 1))
        x = int(rng.integers(w - p + 1))
        lr = pair.lr[:, y:y + p, x:x + p]
        hr = pair.hr[:, s * y:s * (y + p), s * x:s * (x + p)]
        if dataset.augment:
            k = int(rng.integers(8))
            lr = dihedral(lr, k, axes=(1, 2))
            hr = dihedral(hr, k, axes=(1, 2))
        lr_batch.append(lr)
        hr_batch.append(hr)
    return np.stack(lr_batch).astype(np.float32), np.stack(hr_batch).astype(np.float32)


class BatchPrefetcher:
    """
    Bounded hand-off of ready batches from worker threads.

    Batch i is built by worker i % workers from that worker's own RNG stream
    (seeded from (seed, worker)) and consumed round-robin, so the sequence of
    batches is the same for any thread timing.
    """

    def __init__(self, sampler: Callable[[int, np.random.Generator], Batch], batch_size: int,
                 seed: int, workers: int = 1, depth: int = 2, total: Optional[int] = None):
        self.sampler = sampler
        self.batch_size = batch_size
        self.workers = max(1, workers)
        self.total = total
        self._queues = [queue.Queue(maxsize=max(1, depth)) for _ in range(self.workers)]
        self._stop = threading.Event()
        self._next = 0
        self._threads = [
            threading.Thread(target=self._run, args=(w, np.random.default_rng([seed, w])), daemon=True)
            for w in range(self.workers)
        ]
        for t in self._threads:
            t.start()

    def _quota(self, worker: int) -> Optional[int]:
        if self.total is None:
            return None
        return len(range(worker, self.total, self.workers))

    def _run(self, worker: int, rng: np.random.Generator):
        quota = self._quota(worker)
        produced = 0
        q = self._queues[worker]
        while not self._stop.is_set() and (quota is None or produced < quota):
            try:
                item = self.sampler(self.batch_size, rng)
            except Exception as e:  # surfaced to the consumer
                item = e
            while not self._stop.is_set():
                try:
                    q.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            produced += 1
            if isinstance(item, Exception):
                return

    def next(self) -> Batch:
        item = self._queues[self._next % self.workers].get()
        self._next += 1
        if isinstance(item, Exception):
            raise item
        return item

    def close(self):
        self._stop.set()
        for q in self._queues:
            while not q.empty():
                try:
                    q.get_nowait()
                except queue.Empty:
                    break
        for t in self._threads:
            t.join(timeout=1.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
