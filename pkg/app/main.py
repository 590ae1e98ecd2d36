"""
FastAPI application entry point for the scoring service.
"""

import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.core.config import settings
from app.core.errors import EngageError
from app.core.logging import setup_logging
from app.services.models import load_model

# Import routers
from app.api.endpoints import scoring


# Set up logging before anything else
setup_logging()
logger = logging.getLogger(__name__)


def create_app(model_path: str | None = None) -> FastAPI:
    """
    Build the scoring application.

    Args:
        model_path: Model file to serve; defaults to ``settings.model_path``.
    """
    path = model_path or settings.model_path

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        """Application lifespan events."""
        # Startup
        logger.info("=" * 60)
        logger.info(f"Starting {settings.app_name} v{settings.app_version}")
        logger.info(f"Environment: {settings.app_env}")
        logger.info(f"Debug mode: {settings.debug}")
        logger.info("=" * 60)

        app.state.model = None
        if path:
            try:
                app.state.model = load_model(path)
                logger.info(f"✓ Loaded {app.state.model.variant.display_name} model from {path}")
            except EngageError as e:
                logger.error(f"✗ Could not load model from {path}: {e.message}")
                logger.warning("Application will start but scoring requests will fail")
        else:
            logger.warning("No model path configured; scoring endpoints are disabled")

        yield

        # Shutdown
        logger.info("Shutting down application...")

    app = FastAPI(
        title=settings.app_name,
        version=settings.app_version,
        description="Scores the likelihood that a volunteer keeps annotating in the current session",
        debug=settings.debug,
        lifespan=lifespan
    )

    # Configure CORS middleware
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=False,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    # Include routers
    app.include_router(scoring.router, prefix="/api/v1")

    @app.get("/")
    async def root():
        """Root endpoint."""
        return {
            "message": f"Welcome to {settings.app_name}",
            "version": settings.app_version,
            "environment": settings.app_env,
            "docs": "/docs",
            "health": "/health"
        }

    @app.get("/health")
    async def health_check():
        """Health check endpoint."""
        model_loaded = getattr(app.state, "model", None) is not None
        return {
            "status": "healthy" if model_loaded else "degraded",
            "app_name": settings.app_name,
            "version": settings.app_version,
            "environment": settings.app_env,
            "model": "loaded" if model_loaded else "not loaded"
        }

    return app


# Create FastAPI application instance
app = create_app()
