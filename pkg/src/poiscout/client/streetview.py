"""Street-view metadata retrieval (Mapillary Graph API style).

The API is queried by bounding box, so results are filtered down to the
exact radius here and sorted by (distance, image_id).
"""

from __future__ import annotations

import math
from typing import Any
from urllib.parse import parse_qsl, urlparse

from ..errors import ClientError, ValidationError
from ..geo import bbox_for_radius, haversine_m
from ..ingest import StreetViewImage
from .http import ApiSession, ClientConfig

IMAGES_PATH = "/images"
FIELDS = "id,geometry,captured_at,thumb_1024_url"
PAGE_LIMIT = 2000
MAX_PAGES = 1000


def _fmt_bbox(lat_min: float, lat_max: float, lon_min: float, lon_max: float) -> str:
    # outward rounding to 1e-7 degrees keeps the box a superset
    lo = [math.floor(v * 1e7) / 1e7 for v in (lon_min, lat_min)]
    hi = [math.ceil(v * 1e7) / 1e7 for v in (lon_max, lat_max)]
    return ",".join(f"{v:.7f}" for v in (*lo, *hi))


def _parse_image(item: Any) -> StreetViewImage:
    try:
        lon, lat = item["geometry"]["coordinates"][:2]
        return StreetViewImage(
            image_id=str(item["id"]),
            lat=lat,
            lon=lon,
            captured_at=item.get("captured_at"),
            source_url=item.get("thumb_1024_url"),
        )
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise ClientError(f"malformed image record: {exc}") from None


class StreetViewClient:
    def __init__(self, cfg: ClientConfig, session: ApiSession | None = None, **session_kwargs: Any):
        self.cfg = cfg
        self.session = session or ApiSession(cfg, **session_kwargs)

    @staticmethod
    def bbox_params(lat: float, lon: float, radius_m: float) -> dict[str, Any]:
        return {"bbox": _fmt_bbox(*bbox_for_radius(lat, lon, radius_m)), "fields": FIELDS, "limit": PAGE_LIMIT}

    def fetch_images_radius(self, lat: float, lon: float, radius_m: float) -> list[StreetViewImage]:
        """Every image within ``radius_m`` of the point, nearest first."""
        params: dict[str, Any] = self.bbox_params(lat, lon, radius_m)
        found: dict[str, StreetViewImage] = {}
        seen_pages: set[str] = set()
        for _ in range(MAX_PAGES):
            body = self.session.request("GET", IMAGES_PATH, params).body
            if not isinstance(body, dict) or not isinstance(body.get("data"), list):
                raise ClientError(f"malformed response body for {IMAGES_PATH}")
            for item in body["data"]:
                img = _parse_image(item)
                found.setdefault(img.image_id, img)
            nxt = (body.get("paging") or {}).get("next")
            if not nxt:
                break
            params = dict(parse_qsl(urlparse(nxt).query))
            params.pop("access_token", None)
            marker = repr(sorted(params.items()))
            if marker in seen_pages:
                raise ClientError("pagination loop detected")
            seen_pages.add(marker)
        else:
            raise ClientError(f"more than {MAX_PAGES} pages")
        hits = []
        for img in found.values():
            d = haversine_m(lat, lon, img.lat, img.lon)
            if d <= radius_m:
                hits.append((d, img.image_id, img))
        hits.sort(key=lambda h: (h[0], h[1]))
        return [img for _, _, img in hits]


def fetch_images_radius(cfg: ClientConfig, lat: float, lon: float, radius_m: float, **kwargs: Any) -> list[StreetViewImage]:
    if not radius_m > 0:
        raise ValidationError("radius must be positive")
    return StreetViewClient(cfg, **kwargs).fetch_images_radius(lat, lon, radius_m)
