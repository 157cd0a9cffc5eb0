from fastapi import FastAPI
import logging

from .core.config import settings
from .api.endpoints import router as api_router
from .services.policies import PolicyFactory

logging.basicConfig(level=settings.LOG_LEVEL, format=settings.LOG_FORMAT)
logger = logging.getLogger(__name__)

app = FastAPI(
    title=settings.APP_NAME,
    version=settings.APP_VERSION,
    description="Posterior of a hidden volatility chain from randomly timed prices",
)
app.include_router(api_router, prefix="/api/v1")


@app.on_event("startup")
async def log_capabilities():
    logger.info(
        f"{settings.APP_NAME} {settings.APP_VERSION} ready: policies {', '.join(PolicyFactory.available())}, "
        f"table format v{settings.TABLE_FORMAT_VERSION}"
    )


@app.get("/")
async def root():
    """Service name, version and the observation policies it can filter."""
    return {
        "message": "Volatility Filter API",
        "version": settings.APP_VERSION,
        "policies": PolicyFactory.available(),
    }


@app.get("/health")
async def health_check():
    return {"status": "healthy", "table_format_version": settings.TABLE_FORMAT_VERSION}
