"""
Y-channel PSNR/SSIM with boundary cropping, geometric self-ensemble and
dataset-level evaluation.
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple
import io
import csv
import logging
import math

import numpy as np
from skimage.metrics import mean_squared_error, structural_similarity

from app.core.errors import DatasetConfigError, DimensionError, UnusableImageError
from app.models.schemas import DatasetSpec, EvalReport, ImageScore
from app.services.data_pipeline import degrade, list_images
from app.services.image_processor import (
    DIHEDRAL, ImageRGB, bicubic_resize, dihedral, dihedral_inverse, load_image, quantize, rgb_to_y,
)

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

# An SR function maps an LR image and a factor to the HR estimate
SRFunction = Callable[[ImageRGB, int], ImageRGB]


def _y255(img: ImageRGB, quantized: bool) -> np.ndarray:
    if quantized:
        img = quantize(img)
    return rgb_to_y(img) * 255.0


def crop_y_planes(sr: ImageRGB, hr: ImageRGB, crop: int, quantized: bool) -> Tuple[np.ndarray, np.ndarray]:
    if sr.shape != hr.shape:
        raise DimensionError("SR and HR images differ in size", sr.shape, hr.shape)
    h, w = sr.shape[:2]
    if crop < 0 or 2 * crop >= min(h, w):
        raise DimensionError(f"crop {crop} must be below half of the smaller side", sr.shape)
    a, b = _y255(sr, quantized), _y255(hr, quantized)
    if crop:
        a, b = a[crop:-crop, crop:-crop], b[crop:-crop, crop:-crop]
    return a, b


def psnr_planes(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR of two 255-scale planes; identical planes give +inf"""
    mse = mean_squared_error(a, b)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(255.0 ** 2 / mse))


def ssim_planes(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=255"""
    if min(a.shape) < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels after crop", a.shape)
    return float(structural_similarity(
        a, b, data_range=255.0, gaussian_weights=True, sigma=SSIM_SIGMA,
        use_sample_covariance=False, K1=0.01, K2=0.03,
    ))


def psnr_y(sr: ImageRGB, hr: ImageRGB, crop: int, quantized: bool = True) -> float:
    a, b = crop_y_planes(sr, hr, crop, quantized)
    return psnr_planes(a, b)


def ssim_y(sr: ImageRGB, hr: ImageRGB, crop: int, quantized: bool = True) -> float:
    a, b = crop_y_planes(sr, hr, crop, quantized)
    return ssim_planes(a, b)


def self_ensemble(forward: Callable[[ImageRGB], ImageRGB], lr: ImageRGB,
                  order: Sequence[int] = DIHEDRAL) -> ImageRGB:
    """Mean over the 8 dihedral transforms T of T^-1(forward(T(lr)))"""
    total = None
    for k in order:
        out = dihedral_inverse(np.asarray(forward(dihedral(lr, k)), dtype=np.float64), k)
        total = out if total is None else total + out
    return (total / len(order)).astype(np.float32)


# Baseline SR functions

def bicubic_upscale(lr: ImageRGB, factor: int) -> ImageRGB:
    return bicubic_resize(lr, lr.shape[0] * factor, lr.shape[1] * factor)


def identity_upscale(lr: ImageRGB, factor: int) -> ImageRGB:
    if factor != 1:
        raise ValueError("the identity model only supports factor 1")
    return lr


def _mean_finite(values: Sequence[float]) -> Tuple[float, int]:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return (math.inf if values else 0.0), len(values)
    return float(np.mean(finite)), len(values) - len(finite)


def aggregate(report: EvalReport) -> EvalReport:
    """Fill in dataset averages; infinite PSNRs are left out with a note"""
    avg_psnr, n_inf = _mean_finite([r.psnr for r in report.rows])
    report.avg_psnr = avg_psnr
    report.avg_ssim = float(np.mean([r.ssim for r in report.rows])) if report.rows else 0.0
    if n_inf:
        report.notes.append(f"{n_inf} image(s) with zero error (PSNR inf) excluded from the PSNR average")
    return report


def _score_image(path: Path, sr_fn: SRFunction, spec: DatasetSpec, crop: int,
                 quantized: bool) -> Optional[ImageScore]:
    hr = load_image(path)
    lr, hr = degrade(hr, spec.scale, antialias=spec.antialias, quantized=True)
    sr = np.asarray(sr_fn(lr, spec.scale), dtype=np.float32)
    sr = np.clip(sr, 0.0, 1.0)
    return ImageScore(name=path.name, psnr=psnr_y(sr, hr, crop, quantized),
                      ssim=ssim_y(sr, hr, crop, quantized))


def evaluate_dataset(sr_fn: SRFunction, spec: DatasetSpec, crop: Optional[int] = None,
                     quantized: bool = True, workers: int = 1) -> EvalReport:
    """
    Degrade each HR image, super-resolve, score on Y with a boundary crop of s.

    Unreadable images, and images too small to score after the crop, are
    skipped with a warning and listed in the report.
    """
    paths = list_images(spec.hr_dir)
    if not paths:
        raise DatasetConfigError(f"no images found in {spec.hr_dir}")
    crop = spec.scale if crop is None else crop
    report = EvalReport(dataset=Path(spec.hr_dir).name, scale=spec.scale, crop=crop)

    def score(path):
        try:
            return _score_image(path, sr_fn, spec, crop, quantized)
        except (UnusableImageError, DimensionError) as e:
            logger.warning(f"⚠️ Skipping {path.name}: {e}")
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(score, paths))

    for path, row in zip(paths, results):
        if row is None:
            report.skipped.append(path.name)
        else:
            report.rows.append(row)
            logger.info(f"{row.name:<24} PSNR {row.psnr:7.3f} dB  SSIM {row.ssim:.4f}")
    if not report.rows:
        raise DatasetConfigError(f"none of the {len(paths)} images in {spec.hr_dir} could be evaluated")
    return aggregate(report)


def format_report(report: EvalReport) -> str:
    """Aligned plain-text table"""
    width = max([len("Image"), len("Average")] + [len(r.name) for r in report.rows])
    lines = [f"{report.dataset} x{report.scale} (crop {report.crop})",
             f"{'Image':<{width}}  {'PSNR':>8}  {'SSIM':>7}"]
    for r in report.rows:
        lines.append(f"{r.name:<{width}}  {r.psnr:>8.3f}  {r.ssim:>7.4f}")
    lines.append(f"{'Average':<{width}}  {report.avg_psnr:>8.3f}  {report.avg_ssim:>7.4f}")
    for name in report.skipped:
        lines.append(f"skipped: {name}")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def report_csv(report: EvalReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["name", "psnr", "ssim"])
    for r in report.rows:
        writer.writerow([r.name, f"{r.psnr:.6f}", f"{r.ssim:.6f}"])
    writer.writerow(["average", f"{report.avg_psnr:.6f}", f"{report.avg_ssim:.6f}"])
    return buffer.getvalue()
