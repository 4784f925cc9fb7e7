import logging
import threading
import time
from typing import Any, Dict, Optional

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigError, IncompatibleFactorError
from app.services.checkpoint import load_checkpoint
from app.services.image_processor import ImageProcessor, ImageRGB, array_to_pil, png_bytes
from app.services.mdcn_arch import ModelParams, count_params, super_resolve, supported_factors
from app.services.metrics import SRFunction, self_ensemble

logger = logging.getLogger(__name__)


def check_factor(params: ModelParams, factor: int):
    supported = supported_factors(params.config)
    if factor not in supported:
        raise IncompatibleFactorError(factor, params.config.scale, supported)


def make_upscaler(params: ModelParams, ensemble: bool = False) -> SRFunction:
    """HWC image in, clamped HWC image out; ``ensemble`` averages the 8 dihedral variants"""
    def forward(lr: ImageRGB, factor: int) -> ImageRGB:
        check_factor(params, factor)

        def single(img):
            x = np.ascontiguousarray(np.asarray(img, dtype=np.float32).transpose(2, 0, 1)[None])
            # a still image is a static 5-frame window for the video head
            x = np.tile(x, (1, params.config.in_channels // 3, 1, 1))
            return super_resolve(x, params, factor)[0].transpose(1, 2, 0)

        out = self_ensemble(single, lr) if ensemble else single(lr)
        return np.clip(out, 0.0, 1.0).astype(np.float32)
    return forward


class SRModelService:
    """
    Serves one MDCN checkpoint over HTTP.
    The checkpoint named by MDCN_CHECKPOINT is read on first use.
    """

    def __init__(self, checkpoint_path: Optional[str] = None, params: Optional[ModelParams] = None):
        self.checkpoint_path = checkpoint_path if checkpoint_path is not None else settings.MDCN_CHECKPOINT
        self.params = params
        self.processor = ImageProcessor(max_dimension=settings.MAX_IMAGE_DIMENSION)
        self._lock = threading.Lock()

    @property
    def is_loaded(self) -> bool:
        return self.params is not None

    def load_model(self) -> ModelParams:
        with self._lock:
            if self.params is None:
                if not self.checkpoint_path:
                    raise ConfigError("MDCN_CHECKPOINT", "no checkpoint configured for the SR service")
                self.params = load_checkpoint(self.checkpoint_path)
                logger.info(f"✅ SR model ready from {self.checkpoint_path}")
        return self.params

    def upscale(self, image_bytes: bytes, factor: Optional[int] = None, ensemble: bool = False) -> Dict[str, Any]:
        """
        Super-resolve an encoded image.

        Returns the PNG bytes with input/output metadata and timing.
        """
        start_time = time.time()
        params = self.load_model()
        factor = factor or settings.MDCN_DEFAULT_FACTOR
        check_factor(params, factor)

        image = self.processor.bytes_to_image(image_bytes)
        input_info = self.processor.get_image_info(image)
        lr = self.processor.prepare_image(image)
        sr = make_upscaler(params, ensemble)(lr, factor)

        output = array_to_pil(sr)
        processing_time = time.time() - start_time
        logger.info(f"✅ Upscaled {input_info['width']}x{input_info['height']} -> "
                    f"{output.width}x{output.height} (x{factor}{', ensemble' if ensemble else ''}) "
                    f"in {processing_time:.2f}s")
        return {
            "png": png_bytes(sr),
            "factor": factor,
            "ensemble": ensemble,
            "processing_time": round(processing_time, 3),
            "input_info": input_info,
            "output_info": {"width": output.width, "height": output.height, "mode": output.mode, "format": "PNG"},
        }

    def get_model_info(self) -> Dict[str, Any]:
        """Get information about the served model"""
        info = {
            "model_name": "MDCN",
            "checkpoint": self.checkpoint_path,
            "status": "loaded" if self.is_loaded else "not_loaded",
        }
        if self.params is not None:
            cfg = self.params.config
            info.update({
                "config": cfg.model_dump(),
                "tail_factor": self.params.upscale,
                "supported_factors": list(supported_factors(cfg)),
                "parameters": count_params(self.params).total,
            })
        return info

    def cleanup(self):
        """Release the loaded parameters"""
        self.params = None
        logger.info("🧹 SRModelService cleanup completed")
