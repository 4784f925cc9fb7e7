from pydantic import BaseModel, Field, field_validator
from typing import Optional, List, Literal
import math


SR_FACTORS = (2, 3, 4, 8)


class NetConfig(BaseModel):
    """Architecture hyperparameters of an MDCN"""
    feat: int = Field(default=64, gt=0, description="F: base channel count")
    growth: int = Field(default=36, gt=0, description="K: growth rate of each dual-link unit")
    n_blocks: int = Field(default=12, ge=1, description="Number of MDCBs")
    n_units: int = Field(default=6, ge=1, description="Dual-link units per MDCB")
    scale: int = Field(default=2, description="Target SR factor")
    in_channels: Literal[3, 15] = Field(default=3, description="3 for images, 15 for 5-frame early fusion")
    global_skip: bool = Field(default=False, description="Add head features to the body output")
    mean_shift: bool = Field(default=False, description="Subtract the DIV2K RGB mean at the input")

    @field_validator("scale")
    @classmethod
    def validate_scale(cls, v):
        if v not in SR_FACTORS:
            raise ValueError(f"scale must be one of {SR_FACTORS}")
        return v

    @property
    def upscale(self) -> int:
        """Sub-pixel factor r of the tail: 3 for x3, otherwise 2 (recurrent)"""
        return 3 if self.scale == 3 else 2

    @property
    def passes(self) -> int:
        """Number of x2 passes needed to reach ``scale``"""
        return 1 if self.scale == 3 else int(math.log2(self.scale))

    @property
    def fused_width(self) -> int:
        return self.feat + self.n_units * self.growth


class TrainConfig(BaseModel):
    """Optimizer and schedule settings"""
    lr0: float = Field(default=1e-4, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    batch_size: int = Field(default=16, ge=1)
    halve_every: int = Field(default=200_000, ge=1)
    max_iters: int = Field(default=1000, ge=0)
    loss_kind: Literal["l1", "l2"] = "l1"
    seed: int = 0
    clip_norm: Optional[float] = Field(default=None, gt=0, description="Global gradient-norm cap; off when None")
    log_every: int = Field(default=10, ge=1)
    checkpoint_every: int = Field(default=0, ge=0, description="0 disables periodic checkpoints")

    @field_validator("loss_kind", mode="before")
    @classmethod
    def lower_loss(cls, v):
        return v.lower() if isinstance(v, str) else v


class DatasetSpec(BaseModel):
    """Directory of HR images and how to cut training pairs from it"""
    hr_dir: str
    scale: int = 2
    patch_size: int = Field(default=32, ge=1, description="LR-space patch edge")
    augment: bool = True
    antialias: bool = True

    @field_validator("scale")
    @classmethod
    def validate_scale(cls, v):
        # 1 is the identity diagnostic mode of the evaluator
        if v not in (1,) + SR_FACTORS:
            raise ValueError(f"scale must be one of {(1,) + SR_FACTORS}")
        return v


class ImageScore(BaseModel):
    name: str
    psnr: float
    ssim: float


class EvalReport(BaseModel):
    """Per-image scores and dataset averages"""
    dataset: str
    scale: int
    crop: int
    rows: List[ImageScore] = Field(default_factory=list)
    avg_psnr: float = 0.0
    avg_ssim: float = 0.0
    skipped: List[str] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)


class RunConfig(BaseModel):
    """Fully resolved command configuration (defaults < config file < flags)"""
    command: str
    seed: int = 0
    scale: int = 2
    blocks: int = Field(default=12, ge=1)
    units: int = Field(default=6, ge=1)
    feat: int = Field(default=64, gt=0)
    growth: int = Field(default=36, gt=0)
    global_skip: bool = False
    mean_shift: bool = False
    iters: int = Field(default=1000, ge=0)
    batch: int = Field(default=16, ge=1)
    lr: float = Field(default=1e-4, gt=0)
    halve_every: int = Field(default=200_000, ge=1)
    loss: Literal["l1", "l2"] = "l1"
    clip_norm: Optional[float] = Field(default=None, gt=0)
    patch: int = Field(default=32, ge=1)
    augment: bool = True
    antialias: bool = True
    quantize: bool = True
    ensemble: bool = False
    video: bool = False
    video_from_scratch: bool = False
    warm_start: Optional[str] = None
    checkpoint: Optional[str] = None
    data: Optional[str] = None
    inputs: List[str] = Field(default_factory=list)
    out: str = "runs"
    tag: str = "mdcn"
    log_every: int = Field(default=10, ge=1)
    checkpoint_every: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)
    frames: int = Field(default=30, ge=1)
    host: Optional[str] = None
    port: Optional[int] = Field(default=None, ge=1, le=65535)

    @field_validator("loss", mode="before")
    @classmethod
    def lower_loss(cls, v):
        return v.lower() if isinstance(v, str) else v

    @field_validator("scale")
    @classmethod
    def validate_scale(cls, v):
        if v not in (1,) + SR_FACTORS:
            raise ValueError(f"scale must be one of {(1,) + SR_FACTORS}")
        return v

    def net_config(self) -> NetConfig:
        return NetConfig(
            feat=self.feat, growth=self.growth, n_blocks=self.blocks, n_units=self.units,
            scale=self.scale, in_channels=15 if self.video else 3,
            global_skip=self.global_skip, mean_shift=self.mean_shift,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr0=self.lr, batch_size=self.batch, halve_every=self.halve_every,
            max_iters=self.iters, loss_kind=self.loss, seed=self.seed,
            clip_norm=self.clip_norm, log_every=self.log_every,
            checkpoint_every=self.checkpoint_every,
        )


# HTTP API models

class ImageInfo(BaseModel):
    """Image metadata"""
    width: int
    height: int
    mode: str
    format: str


class SRResponse(BaseModel):
    """Super-resolution response model"""
    success: bool = Field(
        default=True,
        description="Whether the operation was successful"
    )
    image_base64: str = Field(
        ...,
        description="Super-resolved image as base64 PNG"
    )
    factor: int
    ensemble: bool = False
    processing_time: float = Field(
        ...,
        description="Time taken to process the image in seconds"
    )
    input_info: Optional[ImageInfo] = None
    output_info: Optional[ImageInfo] = None


class SRBase64Request(BaseModel):
    """Request model for SR from a base64 image"""
    image_base64: str = Field(
        ...,
        description="Base64 encoded image data",
        min_length=1
    )
    factor: Optional[int] = Field(default=None, description="Defaults to MDCN_DEFAULT_FACTOR")
    ensemble: bool = False


class ErrorResponse(BaseModel):
    """Error response model"""
    success: bool = False
    error: str = Field(
        ...,
        description="Error message"
    )
    detail: Optional[str] = Field(
        default=None,
        description="Detailed error information"
    )


class HealthResponse(BaseModel):
    """Health check response model"""
    status: str
    model_loaded: bool
    checkpoint: Optional[str] = None
    version: str
