"""
Early-fusion video SR: 5-frame windows stacked into a 15-channel input, the
Vid4 evaluation protocol and synthetic sub-pixel sequences for training.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple
import logging
import re

import numpy as np
from scipy import ndimage

from app.core.errors import DatasetConfigError, DimensionError, UnusableImageError
from app.models.schemas import EvalReport, ImageScore
from app.services.data_pipeline import Batch, degrade, hwc_to_chw, list_images
from app.services.image_processor import ImageRGB, bicubic_resize, dihedral, load_image, save_image
from app.services.mdcn_arch import ModelParams, super_resolve
from app.services.metrics import aggregate, psnr_planes, ssim_planes, crop_y_planes

logger = logging.getLogger(__name__)

WINDOW = 5
CENTER = WINDOW // 2
VID4_CROP = 8
VID4_FRAMES = 30


@dataclass(frozen=True)
class FrameWindow:
    """Frames t-2 .. t+2 in temporal order; frames[CENTER] is the one to super-resolve"""
    frames: Tuple[ImageRGB, ...]

    def __post_init__(self):
        if len(self.frames) != WINDOW:
            raise DimensionError(f"a frame window holds exactly {WINDOW} frames, got {len(self.frames)}")
        shape = self.frames[0].shape
        for f in self.frames[1:]:
            if f.shape != shape:
                raise DimensionError("window frames differ in size", shape, f.shape)

    @property
    def center(self) -> ImageRGB:
        return self.frames[CENTER]


# A video SR function maps a window of LR frames and a factor to the HR center frame
VideoSRFunction = Callable[[FrameWindow, int], ImageRGB]


def fuse_frames(window: FrameWindow) -> np.ndarray:
    """1 x 15 x H x W, channels [t-2 RGB, t-1 RGB, t RGB, t+1 RGB, t+2 RGB]"""
    stacked = np.concatenate([np.asarray(f, dtype=np.float32) for f in window.frames], axis=2)
    return np.ascontiguousarray(stacked.transpose(2, 0, 1)[None])


def window_indices(n: int, t: int) -> List[int]:
    if n <= 0:
        raise DatasetConfigError("cannot take a window of an empty sequence")
    return [min(max(t + d, 0), n - 1) for d in range(-CENTER, CENTER + 1)]


def window_at(frames: Sequence[ImageRGB], t: int) -> FrameWindow:
    """Replicate padding at the sequence ends"""
    return FrameWindow(tuple(frames[i] for i in window_indices(len(frames), t)))


def model_upscaler(params: ModelParams) -> VideoSRFunction:
    """A 15-channel model sees the fused window, a 3-channel model only the center frame"""
    def upscale(window: FrameWindow, factor: int) -> ImageRGB:
        if params.config.in_channels == 3 * WINDOW:
            x = fuse_frames(window)
        else:
            x = window.center.transpose(2, 0, 1)[None]
        out = super_resolve(x, params, factor)
        return np.clip(out[0].transpose(1, 2, 0), 0.0, 1.0).astype(np.float32)
    return upscale


def bicubic_window(window: FrameWindow, factor: int) -> ImageRGB:
    lr = window.center
    return bicubic_resize(lr, lr.shape[0] * factor, lr.shape[1] * factor)


def video_sr_frames(fn: VideoSRFunction, frames: Sequence[ImageRGB], factor: int,
                    workers: int = 1) -> List[ImageRGB]:
    """Super-resolve every frame of a sequence"""
    def run(t):
        return fn(window_at(frames, t), factor)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(run, range(len(frames))))


# Sequences on disk

_NUMBER = re.compile(r"(\d+)(?!.*\d)")


def list_frames(directory) -> List[Path]:
    """
    Frames of one video in numeric order.

    Raises DatasetConfigError when the directory is empty, a frame name has
    no number or the numbering has a gap.
    """
    paths = list_images(directory)
    if not paths:
        raise DatasetConfigError(f"no frames in {directory}")
    numbered = []
    for p in paths:
        match = _NUMBER.search(p.stem)
        if not match:
            raise DatasetConfigError(f"frame {p.name} has no frame number")
        numbered.append((int(match.group(1)), p))
    numbered.sort()
    numbers = [n for n, _ in numbered]
    missing = sorted(set(range(numbers[0], numbers[-1] + 1)) - set(numbers))
    if missing:
        raise DatasetConfigError(f"{Path(directory).name}: missing frame(s) {missing[:5]}")
    return [p for _, p in numbered]


def video_title(directory) -> str:
    return Path(directory).name.capitalize()


def _score_video(fn: VideoSRFunction, directory: Path, s: int, max_frames: int, crop: int,
                 quantized: bool, antialias: bool) -> ImageScore:
    paths = list_frames(directory)[:max_frames]
    pairs = [degrade(load_image(p), s, antialias=antialias, quantized=True) for p in paths]
    lr_frames = [lr for lr, _ in pairs]
    psnrs, ssims = [], []
    for t, (_, hr) in enumerate(pairs):
        sr = np.clip(np.asarray(fn(window_at(lr_frames, t), s), dtype=np.float32), 0.0, 1.0)
        a, b = crop_y_planes(sr, hr, crop, quantized)
        psnrs.append(psnr_planes(a, b))
        ssims.append(ssim_planes(a, b))
    # a sequence with any inf frame is reported as inf
    psnr = float(np.mean(psnrs)) if np.all(np.isfinite(psnrs)) else float("inf")
    return ImageScore(name=video_title(directory), psnr=psnr, ssim=float(np.mean(ssims)))


def vsr_evaluate(fn: VideoSRFunction, video_dirs: Sequence, s: int = 4, max_frames: int = VID4_FRAMES,
                 crop: int = VID4_CROP, quantized: bool = True, antialias: bool = True,
                 workers: int = 1, dataset: str = "Vid4") -> EvalReport:
    """
    Per-video and average Y PSNR/SSIM over the first ``max_frames`` frames,
    ``crop`` pixels removed per side. A video with missing or unreadable
    frames, or frames of different sizes, is excluded with a warning.
    """
    if not video_dirs:
        raise DatasetConfigError("no video directories given")
    report = EvalReport(dataset=dataset, scale=s, crop=crop)

    def score(directory):
        try:
            return _score_video(fn, Path(directory), s, max_frames, crop, quantized, antialias)
        except (DatasetConfigError, UnusableImageError, DimensionError) as e:
            logger.warning(f"⚠️ Skipping video {Path(directory).name}: {e}")
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(score, video_dirs))

    for directory, row in zip(video_dirs, results):
        if row is None:
            report.skipped.append(Path(directory).name)
        else:
            report.rows.append(row)
            logger.info(f"🎬 {row.name:<10} PSNR {row.psnr:7.3f} dB  SSIM {row.ssim:.4f}")
    if not report.rows:
        raise DatasetConfigError("none of the videos could be evaluated")
    return aggregate(report)


def video_dirs_of(root) -> List[Path]:
    """Subdirectories of a Vid4-style root, sorted by name"""
    root = Path(root)
    if not root.is_dir():
        raise DatasetConfigError(f"video root {root} does not exist")
    return sorted(p for p in root.iterdir() if p.is_dir())


def format_video_report(report: EvalReport, method: str = "MDCN") -> str:
    """Table with one column per video plus Average, PSNR/SSIM per cell"""
    names = [r.name for r in report.rows] + ["Average"]
    cells = [f"{r.psnr:.2f}/{r.ssim:.4f}" for r in report.rows]
    cells.append(f"{report.avg_psnr:.2f}/{report.avg_ssim:.4f}")
    width = max(len(c) for c in cells + names)
    label = max(len("Method"), len(method))
    lines = [
        f"{report.dataset} x{report.scale} (crop {report.crop})",
        f"{'Method':<{label}}  " + "  ".join(f"{n:>{width}}" for n in names),
        f"{method:<{label}}  " + "  ".join(f"{c:>{width}}" for c in cells),
    ]
    for name in report.skipped:
        lines.append(f"skipped: {name}")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def save_sequence(frames: Sequence[ImageRGB], out_dir, prefix: str = "frame") -> List[Path]:
    out_dir = Path(out_dir)
    return [save_image(f, out_dir / f"{prefix}{i:04d}.png") for i, f in enumerate(frames)]


# Synthetic training sequences

def synthesize_sequence(image: ImageRGB, n_frames: int, rng: np.random.Generator,
                        max_shift: float = 1.5,
                        velocity: Optional[Tuple[float, float]] = None) -> List[ImageRGB]:
    """
    HR frames made by translating one still image along a random sub-pixel
    walk (cubic spline shift, edge replication). Consecutive frames then carry
    genuinely different samples of the same scene.

    With ``velocity`` = (dy, dx) the walk is a constant pan instead: frame k
    sits at (k - center) * velocity HR pixels and ``rng`` is not drawn from.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be positive")
    image = np.asarray(image, dtype=np.float64)
    if velocity is None:
        steps = rng.uniform(-max_shift, max_shift, size=(n_frames, 2))
    else:
        steps = np.tile(np.asarray(velocity, dtype=np.float64), (n_frames, 1))
    steps[0] = 0.0
    offsets = np.cumsum(steps, axis=0)
    offsets -= offsets[n_frames // 2]
    frames = []
    for dy, dx in offsets:
        shifted = ndimage.shift(image, (dy, dx, 0.0), order=3, mode="nearest")
        frames.append(np.clip(shifted, 0.0, 1.0).astype(np.float32))
    return frames


@dataclass
class VideoSequence:
    name: str
    lr: List[np.ndarray]  # C x h x w per frame
    hr: List[np.ndarray]


class VideoPatchDataset:
    """
    Aligned (15-channel LR window, HR center) patch pairs.

    With ``center_only`` the LR side is just the center frame, which gives the
    single-image baseline on exactly the same targets.
    """

    def __init__(self, sequences: Sequence[VideoSequence], scale: int, patch_size: int,
                 augment: bool = False, center_only: bool = False):
        if not sequences:
            raise DatasetConfigError("video dataset is empty")
        self.sequences = list(sequences)
        self.scale = scale
        self.patch_size = patch_size
        self.augment = augment
        self.center_only = center_only
        for seq in self.sequences:
            h, w = seq.lr[0].shape[1:]
            if h < patch_size or w < patch_size:
                raise DatasetConfigError(f"{seq.name}: LR size {h}x{w} cannot hold a {patch_size}px patch")

    @classmethod
    def from_frames(cls, sequences: Sequence[Sequence[ImageRGB]], scale: int, patch_size: int,
                    augment: bool = False, antialias: bool = True, center_only: bool = False):
        prepared = []
        for i, frames in enumerate(sequences):
            pairs = [degrade(f, scale, antialias=antialias) for f in frames]
            prepared.append(VideoSequence(f"sequence{i}", [hwc_to_chw(lr) for lr, _ in pairs],
                                          [hwc_to_chw(hr) for _, hr in pairs]))
        return cls(prepared, scale, patch_size, augment, center_only)

    @classmethod
    def synthetic(cls, images: Sequence[ImageRGB], scale: int, patch_size: int, seed: int = 0,
                  n_frames: int = 7, max_shift: float = 1.5,
                  velocity: Optional[Tuple[float, float]] = None, **kwargs):
        rng = np.random.default_rng(seed)
        sequences = [synthesize_sequence(img, n_frames, rng, max_shift, velocity) for img in images]
        return cls.from_frames(sequences, scale, patch_size, **kwargs)

    @classmethod
    def from_dir(cls, directory, scale: int, patch_size: int, augment: bool = True,
                 antialias: bool = True, seed: int = 0, n_frames: int = 7):
        """Subdirectories are read as frame sequences; otherwise still images are animated"""
        directory = Path(directory)
        subdirs = sorted(p for p in directory.iterdir() if p.is_dir()) if directory.is_dir() else []
        if subdirs:
            sequences = [[load_image(p) for p in list_frames(d)] for d in subdirs]
            logger.info(f"🎞️ Loaded {len(sequences)} frame sequences from {directory}")
            return cls.from_frames(sequences, scale, patch_size, augment=augment, antialias=antialias)
        images = [load_image(p) for p in list_images(directory)]
        if not images:
            raise DatasetConfigError(f"no images found in {directory}")
        logger.info(f"🎞️ Synthesizing {len(images)} sequences of {n_frames} frames from stills in {directory}")
        return cls.synthetic(images, scale, patch_size, seed=seed, n_frames=n_frames,
                             augment=augment, antialias=antialias)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        p, s = self.patch_size, self.scale
        lr_batch, hr_batch = [], []
        for _ in range(batch_size):
            seq = self.sequences[int(rng.integers(len(self.sequences)))]
            t = int(rng.integers(len(seq.lr)))
            h, w = seq.lr[t].shape[1:]
            y = int(rng.integers(h - p + 1))
            x = int(rng.integers(w - p + 1))
            if self.center_only:
                lr = seq.lr[t][:, y:y + p, x:x + p]
            else:
                lr = np.concatenate([seq.lr[i][:, y:y + p, x:x + p]
                                     for i in window_indices(len(seq.lr), t)], axis=0)
            hr = seq.hr[t][:, s * y:s * (y + p), s * x:s * (x + p)]
            if self.augment:
                k = int(rng.integers(8))
                lr = dihedral(lr, k, axes=(1, 2))
                hr = dihedral(hr, k, axes=(1, 2))
            lr_batch.append(lr)
            hr_batch.append(hr)
        return np.stack(lr_batch).astype(np.float32), np.stack(hr_batch).astype(np.float32)
