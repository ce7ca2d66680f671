"""Geospatial primitives and log/street-view co-location.

Distances use the haversine formula on a sphere of mean Earth radius. At
the 10 m scale used for co-location the ellipsoid correction is far below
GPS noise.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ValidationError
from .ingest import DrivingLog, StreetViewImage, write_jsonl

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_RADIUS_M = 10.0
DEFAULT_MAX_IMAGES = 10
DEFAULT_CELL_DEG = 0.001
BBOX_INFLATE = 1.01
MAX_ABS_LAT = 89.9


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters between two WGS84 points (degrees)."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(min(1.0, a)))


def bbox_for_radius(lat: float, lon: float, radius_m: float) -> tuple[float, float, float, float]:
    """Box ``(lat_min, lat_max, lon_min, lon_max)`` containing the radius disc.

    Longitudes are not wrapped, so ``lon_min`` may fall below -180 or
    ``lon_max`` above 180 near the antimeridian.
    """
    if not radius_m > 0:
        raise ValidationError(f"radius must be positive, got {radius_m}")
    if abs(lat) >= MAX_ABS_LAT:
        raise ValidationError(f"center latitude {lat} too close to a pole")
    dlat = math.degrees(radius_m / EARTH_RADIUS_M)
    dlon = dlat / math.cos(math.radians(lat))
    dlat *= BBOX_INFLATE
    dlon *= BBOX_INFLATE
    return lat - dlat, lat + dlat, lon - dlon, lon + dlon


def _cell(lat: float, lon: float, size: float) -> tuple[int, int]:
    return math.floor(lon / size), math.floor(lat / size)


@dataclass(frozen=True)
class GridIndex:
    """Uniform lat/lon grid over a fixed image corpus."""

    images: tuple[StreetViewImage, ...]
    cell_size_deg: float
    cells: dict[tuple[int, int], tuple[int, ...]] = field(repr=False)

    def __len__(self) -> int:
        return len(self.images)


def build_grid_index(images: Iterable[StreetViewImage], cell_size_deg: float = DEFAULT_CELL_DEG) -> GridIndex:
    if not cell_size_deg > 0:
        raise ValidationError(f"cell_size_deg must be positive, got {cell_size_deg}")
    images = tuple(images)
    cells: dict[tuple[int, int], list[int]] = defaultdict(list)
    for i, img in enumerate(images):
        cells[_cell(img.lat, img.lon, cell_size_deg)].append(i)
    return GridIndex(images, cell_size_deg, {k: tuple(v) for k, v in cells.items()})


def _lon_ranges(lon_min: float, lon_max: float) -> list[tuple[float, float]]:
    if lon_max - lon_min >= 360:
        return [(-180.0, 180.0)]
    ranges = [(max(lon_min, -180.0), min(lon_max, 180.0))]
    if lon_min < -180:
        ranges.append((lon_min + 360, 180.0))
    if lon_max > 180:
        ranges.append((-180.0, lon_max - 360))
    return ranges


def radius_query(index: GridIndex, lat: float, lon: float, radius_m: float) -> list[tuple[str, float]]:
    """All ``(image_id, distance_m)`` with distance <= ``radius_m``.

    Sorted by distance, then image id.
    """
    lat_min, lat_max, lon_min, lon_max = bbox_for_radius(lat, lon, radius_m)
    size = index.cell_size_deg
    y0, y1 = math.floor(lat_min / size), math.floor(lat_max / size)
    seen: set[int] = set()
    hits = []
    for lo, hi in _lon_ranges(lon_min, lon_max):
        for cx in range(math.floor(lo / size), math.floor(hi / size) + 1):
            for cy in range(y0, y1 + 1):
                for i in index.cells.get((cx, cy), ()):
                    if i in seen:
                        continue
                    seen.add(i)
                    img = index.images[i]
                    d = haversine_m(lat, lon, img.lat, img.lon)
                    if d <= radius_m:
                        hits.append((d, img.image_id))
    hits.sort()
    return [(image_id, d) for d, image_id in hits]


@dataclass
class CoLocationTable:
    """Per-log lists of nearby images, nearest first."""

    entries: dict[str, list[tuple[str, float]]]
    radius_m: float = DEFAULT_RADIUS_M
    max_images: int = DEFAULT_MAX_IMAGES

    def __post_init__(self) -> None:
        for log_id, images in self.entries.items():
            if len(images) > self.max_images:
                raise ValidationError(f"{log_id}: {len(images)} images exceeds cap {self.max_images}")
            keys = [(d, i) for i, d in images]
            if keys != sorted(keys):
                raise ValidationError(f"{log_id}: images not sorted by (distance, image_id)")
            if any(not 0 <= d <= self.radius_m for d, _ in keys):
                raise ValidationError(f"{log_id}: distance outside [0, {self.radius_m}] m")

    def __len__(self) -> int:
        return len(self.entries)

    def image_ids(self) -> set[str]:
        return {i for images in self.entries.values() for i, _ in images}

    def to_rows(self) -> list[dict[str, Any]]:
        return [
            {"log_id": log_id, "images": [{"image_id": i, "distance_m": d} for i, d in images]}
            for log_id, images in self.entries.items()
        ]

    def write(self, path: str | Path) -> None:
        write_jsonl(path, self.to_rows())

    @classmethod
    def read(cls, path: str | Path, radius_m: float | None = None, max_images: int | None = None) -> CoLocationTable:
        """Load a table; ``None`` limits are taken from the data instead of checked."""
        entries: dict[str, list[tuple[str, float]]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    row = json.loads(raw)
                    log_id = row["log_id"]
                    images = [(img["image_id"], float(img["distance_m"])) for img in row["images"]]
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ValidationError(f"malformed co-location row: {exc}", line=lineno) from None
                if log_id in entries:
                    raise ValidationError(f"duplicate log_id {log_id!r}", line=lineno)
                entries[log_id] = images
        if radius_m is None:
            radius_m = max([DEFAULT_RADIUS_M] + [d for imgs in entries.values() for _, d in imgs])
        if max_images is None:
            max_images = max([DEFAULT_MAX_IMAGES] + [len(imgs) for imgs in entries.values()])
        return cls(entries, radius_m, max_images)


def colocate(
    logs: Sequence[DrivingLog],
    images: Iterable[StreetViewImage] | GridIndex,
    radius_m: float = DEFAULT_RADIUS_M,
    max_images: int = DEFAULT_MAX_IMAGES,
) -> CoLocationTable:
    """Pair every log with its nearest street-view images within ``radius_m``."""
    if max_images < 0:
        raise ValidationError("max_images must be non-negative")
    index = images if isinstance(images, GridIndex) else build_grid_index(images)
    entries = {log.log_id: radius_query(index, log.lat, log.lon, radius_m)[:max_images] for log in logs}
    return CoLocationTable(entries, radius_m, max_images)
