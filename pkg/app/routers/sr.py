from fastapi import APIRouter, File, Form, HTTPException, Request, UploadFile
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import Response
from typing import Optional
import base64
import logging

from app.models.schemas import (
    SRResponse, SRBase64Request,
    ErrorResponse, ImageInfo
)
from app.services.model_service import SRModelService
from app.core.config import settings
from app.core.errors import MDCNError

logger = logging.getLogger(__name__)
router = APIRouter()


async def get_model_service(request: Request) -> SRModelService:
    """Get model service from app state or create a new instance"""
    try:
        return request.app.state.model_service
    except AttributeError:
        logger.info("Using lazy-loaded model service")
        service = SRModelService()
        request.app.state.model_service = service
        return service


def _check_upload(contents: bytes, content_type: Optional[str]):
    if len(contents) > settings.MAX_IMAGE_SIZE:
        raise HTTPException(
            status_code=400,
            detail=f"File too large. Maximum size: {settings.MAX_IMAGE_SIZE / 1024 / 1024}MB"
        )
    if content_type not in settings.SUPPORTED_FORMATS:
        raise HTTPException(
            status_code=400,
            detail=f"Unsupported file format. Supported: {', '.join(settings.SUPPORTED_FORMATS)}"
        )


@router.post(
    "/upscale",
    responses={
        200: {"content": {"image/png": {}}},
        400: {"model": ErrorResponse},
        500: {"model": ErrorResponse}
    },
    summary="Super-resolve an uploaded image",
    description="Upload a PNG or JPEG image and receive the super-resolved PNG"
)
async def upscale_upload(
    request: Request,
    image: UploadFile = File(..., description="Low-resolution image"),
    factor: Optional[int] = Form(default=None, description="SR factor, defaults to MDCN_DEFAULT_FACTOR"),
    ensemble: bool = Form(default=False, description="Average over the 8 flips/rotations")
):
    """Returns the SR image as image/png; timing and factor are in the response headers"""
    try:
        contents = await image.read()
        _check_upload(contents, image.content_type)
        logger.info(f"Processing uploaded file: {image.filename} ({len(contents)} bytes)")

        model_service = await get_model_service(request)
        result = await run_in_threadpool(model_service.upscale, contents, factor, ensemble)
        return Response(
            content=result["png"],
            media_type="image/png",
            headers={
                "X-SR-Factor": str(result["factor"]),
                "X-Processing-Time": str(result["processing_time"]),
            }
        )

    except HTTPException:
        raise
    except MDCNError as e:
        raise HTTPException(status_code=400, detail=e.one_line())
    except Exception as e:
        logger.error(f"Super-resolution failed: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=500,
            detail=f"Super-resolution failed: {str(e)}"
        )


@router.post(
    "/upscale-base64",
    response_model=SRResponse,
    responses={
        400: {"model": ErrorResponse},
        500: {"model": ErrorResponse}
    },
    summary="Super-resolve a base64 image",
    description="Provide a base64 encoded image and receive the super-resolved PNG as base64"
)
async def upscale_base64(
    request: Request,
    sr_request: SRBase64Request
):
    """
    Supports data URLs (data:image/png;base64,...) or raw base64 strings.
    """
    try:
        model_service = await get_model_service(request)
        image_bytes = model_service.processor.base64_to_bytes(sr_request.image_base64)
        if len(image_bytes) > settings.MAX_IMAGE_SIZE:
            raise HTTPException(
                status_code=400,
                detail=f"Image too large. Maximum size: {settings.MAX_IMAGE_SIZE / 1024 / 1024}MB"
            )

        result = await run_in_threadpool(
            model_service.upscale, image_bytes, sr_request.factor, sr_request.ensemble)

        return SRResponse(
            success=True,
            image_base64=base64.b64encode(result["png"]).decode("ascii"),
            factor=result["factor"],
            ensemble=result["ensemble"],
            processing_time=result["processing_time"],
            input_info=ImageInfo(**result["input_info"]),
            output_info=ImageInfo(**result["output_info"])
        )

    except HTTPException:
        raise
    except MDCNError as e:
        raise HTTPException(status_code=400, detail=e.one_line())
    except Exception as e:
        logger.error(f"Base64 super-resolution failed: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=500,
            detail=f"Failed to process base64 image: {str(e)}"
        )


@router.get(
    "/model-info",
    summary="Get model information",
    description="Configuration, supported factors and parameter count of the served checkpoint"
)
async def get_model_info_endpoint(request: Request):
    try:
        model_service = await get_model_service(request)
        if not model_service.is_loaded and model_service.checkpoint_path:
            await run_in_threadpool(model_service.load_model)
        return model_service.get_model_info()
    except MDCNError as e:
        raise HTTPException(status_code=400, detail=e.one_line())
    except Exception as e:
        logger.error(f"Failed to get model info: {str(e)}")
        raise HTTPException(status_code=500, detail="Failed to get model information")
