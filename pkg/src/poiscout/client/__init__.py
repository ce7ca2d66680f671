from .batch import MAX_BATCH_IMAGES, BatchClient, BatchJob
from .http import (
    TOKEN_ENV,
    ApiSession,
    ClientConfig,
    FixtureTransport,
    RateLimiter,
    SystemClock,
    VirtualClock,
    fixture_key,
    record_fixture,
)
from .streetview import StreetViewClient, fetch_images_radius

__all__ = [
    "MAX_BATCH_IMAGES",
    "TOKEN_ENV",
    "ApiSession",
    "BatchClient",
    "BatchJob",
    "ClientConfig",
    "FixtureTransport",
    "RateLimiter",
    "StreetViewClient",
    "SystemClock",
    "VirtualClock",
    "fetch_images_radius",
    "fixture_key",
    "record_fixture",
]
