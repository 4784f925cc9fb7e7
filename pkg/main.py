from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
import uvicorn
from contextlib import asynccontextmanager
import logging

from app.routers import sr
from app.core.config import settings
from app.core.errors import MDCNError
from app.models.schemas import HealthResponse
from app.services.model_service import SRModelService

# Configure logging
logging.basicConfig(
    level=settings.LOG_LEVEL,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

VERSION = "1.0.0"


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    Lifecycle manager for the FastAPI application.
    The checkpoint itself is loaded on the first request.
    """
    logger.info("🚀 Starting MDCN Super-Resolution API Server...")
    service = SRModelService()
    app.state.model_service = service
    if service.checkpoint_path:
        logger.info(f"Checkpoint: {service.checkpoint_path}")
    else:
        logger.warning("⚠️ MDCN_CHECKPOINT is not set; SR endpoints will fail until it is")
    logger.info(f"📡 API ready at: http://{settings.HOST}:{settings.PORT}")
    try:
        yield
    finally:
        logger.info("🔄 Shutting down server...")
        service.cleanup()
        logger.info("👋 Server stopped")


# Create FastAPI application
app = FastAPI(
    title="MDCN Super-Resolution API",
    description="Image super-resolution with a mixed-dense connection network running on numpy",
    version=VERSION,
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan
)

# CORS configuration
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.ALLOWED_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get("/")
async def root():
    """Root endpoint - API information"""
    return {
        "service": "MDCN Super-Resolution API",
        "version": VERSION,
        "status": "running",
        "model": "MDCN",
        "endpoints": {
            "health": "/health",
            "docs": "/docs",
            "sr_upscale": "/api/sr/upscale",
            "sr_upscale_base64": "/api/sr/upscale-base64",
            "sr_model_info": "/api/sr/model-info"
        }
    }


@app.get("/health", response_model=HealthResponse)
async def health_check():
    """Health check endpoint for monitoring"""
    service = getattr(app.state, "model_service", None)
    return {
        "status": "healthy",
        "model_loaded": bool(service and service.is_loaded),
        "checkpoint": service.checkpoint_path if service else settings.MDCN_CHECKPOINT,
        "version": VERSION
    }


# Include routers
app.include_router(sr.router, prefix="/api/sr", tags=["Super-Resolution"])


@app.exception_handler(MDCNError)
async def mdcn_exception_handler(request, exc: MDCNError):
    logger.warning(f"Request failed: {exc.one_line()}")
    return JSONResponse(
        status_code=400,
        content={"success": False, "error": exc.kind, "detail": exc.message}
    )


# Global exception handler
@app.exception_handler(Exception)
async def global_exception_handler(request, exc):
    """Global exception handler for unhandled errors"""
    logger.error(f"Unhandled exception: {str(exc)}", exc_info=True)
    return JSONResponse(
        status_code=500,
        content={
            "success": False,
            "error": "Internal server error",
            "detail": str(exc) if settings.DEBUG else "An unexpected error occurred"
        }
    )


if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host=settings.HOST,
        port=settings.PORT,
        reload=settings.DEBUG,
        log_level="info"
    )
