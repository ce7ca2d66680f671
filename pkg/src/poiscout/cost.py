"""Cost of running attribute extraction over a whole road network.

One image is sampled every ``sampling_interval_m`` meters of road, each
image costs ``tokens_per_image`` tokens, and tokens are billed per million.
Arithmetic is done in :class:`~decimal.Decimal` so whole-dollar rounding is
exact.
"""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import dataclass
from decimal import ROUND_FLOOR, ROUND_HALF_UP, Decimal

from .errors import ValidationError


def _dec(x: float | int | str | Decimal) -> Decimal:
    return x if isinstance(x, Decimal) else Decimal(str(x))


@dataclass(frozen=True)
class CostModel:
    sampling_interval_m: float = 20.0
    tokens_per_image: int = 200
    usd_per_million_tokens: float = 2.0

    def __post_init__(self) -> None:
        for name in ("sampling_interval_m", "tokens_per_image", "usd_per_million_tokens"):
            value = getattr(self, name)
            if not math.isfinite(float(value)) or value <= 0:
                raise ValidationError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class CostEstimate:
    road_length_km: float
    images: int
    tokens: int
    usd_exact: Decimal
    usd_display: int
    name: str | None = None


def estimate_cost(road_length_km: float, model: CostModel = CostModel(), name: str | None = None) -> CostEstimate:
    length = _dec(road_length_km)
    if not length.is_finite() or length < 0:
        raise ValidationError(f"road length must be >= 0 km, got {road_length_km}")
    images = int((length * 1000 / _dec(model.sampling_interval_m)).to_integral_value(rounding=ROUND_FLOOR))
    tokens = images * int(model.tokens_per_image)
    usd = Decimal(tokens) * _dec(model.usd_per_million_tokens) / Decimal(1_000_000)
    display = int(usd.to_integral_value(rounding=ROUND_HALF_UP))
    return CostEstimate(float(road_length_km), images, tokens, usd, display, name)


def country_table(entries: Iterable[tuple[str, float]], model: CostModel = CostModel()) -> list[CostEstimate]:
    return [estimate_cost(km, model, name=name) for name, km in entries]


def format_usd(amount: int) -> str:
    return f"-${-amount:,}" if amount < 0 else f"${amount:,}"
