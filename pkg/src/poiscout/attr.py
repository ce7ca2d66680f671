"""Traffic-sign attribute ontology and attribute-level location scoring.

Each detected sign is reduced to an 8-field vector (category, shape, border,
background and symbol colors, symbol, text, language). A location is scored
by summing, over its unique signs, the Hamming distance to the closest sign
seen in the source country.
"""

from __future__ import annotations

import re
from collections.abc import Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from .errors import PoiError, ValidationError

if TYPE_CHECKING:
    from .ingest import AttributeRecord
    from .select import PoiScore

CATEGORIES = ("regulatory", "warning", "informational", "guide", "construction", "school_zone", "other")
SHAPES = ("circle", "triangle", "rectangle", "square", "octagon", "diamond", "inverted_triangle")
COLORS = ("red", "white", "yellow", "black", "blue", "green", "none")
SYMBOLS = ("arrow", "pedestrian", "car", "bicycle", "stop_hand", "number", "none", "other")

FIELDS = (
    "category",
    "shape",
    "color_border",
    "color_background",
    "color_symbol",
    "symbol",
    "text",
    "language",
)
N_FIELDS = len(FIELDS)

_ENUMS: dict[str, tuple[str, ...]] = {
    "category": CATEGORIES,
    "shape": SHAPES,
    "color_border": COLORS,
    "color_background": COLORS,
    "color_symbol": COLORS,
    "symbol": SYMBOLS,
}

_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class SignAttributes:
    category: str
    shape: str
    color_border: str
    color_background: str
    color_symbol: str
    symbol: str
    text: str = "none"
    language: str = "none"
    # free-text label from the prompt; metadata only, never compared
    name: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        for key, allowed in _ENUMS.items():
            value = getattr(self, key)
            if value not in allowed:
                raise ValidationError(f"{key}={value!r} is not one of {', '.join(allowed)}", field=key)
        for key in ("text", "language"):
            if not isinstance(getattr(self, key), str):
                raise ValidationError(f"{key} must be a string", field=key)

    def vector(self) -> tuple[str, ...]:
        return tuple(getattr(self, f) for f in FIELDS)

    @classmethod
    def from_prompt_json(cls, obj: Mapping[str, Any]) -> SignAttributes:
        """Build a sign from one element of the extraction prompt's JSON array.

        Expected layout::

            {"name": ..., "category": ..., "symbol": ..., "text": ..., "language": ...,
             "attributes": {"shape": ..., "color": {"border": ..., "background": ..., "symbol": ...}}}
        """
        if not isinstance(obj, Mapping):
            raise ValidationError("sign must be a JSON object")
        attrs = _require(obj, "attributes")
        if not isinstance(attrs, Mapping):
            raise ValidationError("attributes must be an object", field="attributes")
        color = _require(attrs, "color")
        if not isinstance(color, Mapping):
            raise ValidationError("attributes.color must be an object", field="color")
        name = obj.get("name")
        return cls(
            category=_require(obj, "category"),
            shape=_require(attrs, "shape"),
            color_border=_require(color, "border"),
            color_background=_require(color, "background"),
            color_symbol=_require(color, "symbol"),
            symbol=_require(obj, "symbol"),
            text=_require(obj, "text"),
            language=_require(obj, "language"),
            name=name if isinstance(name, str) else None,
        )

    def to_prompt_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.name is not None:
            out["name"] = self.name
        out["category"] = self.category
        out["attributes"] = {
            "shape": self.shape,
            "color": {
                "border": self.color_border,
                "background": self.color_background,
                "symbol": self.color_symbol,
            },
        }
        out["symbol"] = self.symbol
        out["text"] = self.text
        out["language"] = self.language
        return out


def _require(obj: Mapping[str, Any], key: str) -> Any:
    if key not in obj:
        raise ValidationError(f"missing required field {key!r}", field=key)
    return obj[key]


def _norm_text(value: str) -> str:
    value = _WS.sub(" ", value.strip()).casefold()
    return value or "none"


def canonicalize(sign: SignAttributes) -> SignAttributes:
    """Trim, case-fold and collapse whitespace in ``text`` and ``language``.

    Empty strings become the literal ``"none"``. Idempotent.
    """
    text = _norm_text(sign.text)
    language = _norm_text(sign.language)
    if text == sign.text and language == sign.language:
        return sign
    return SignAttributes(
        category=sign.category,
        shape=sign.shape,
        color_border=sign.color_border,
        color_background=sign.color_background,
        color_symbol=sign.color_symbol,
        symbol=sign.symbol,
        text=text,
        language=language,
        name=sign.name,
    )


class AttributeSet:
    """An immutable set of canonical sign vectors.

    Members are kept in first-seen order so serialization is stable, and an
    integer code matrix is cached for vectorized nearest-sign lookups.
    """

    def __init__(self, signs: Iterable[SignAttributes] = ()):
        seen: dict[tuple[str, ...], SignAttributes] = {}
        for sign in signs:
            sign = canonicalize(sign)
            seen.setdefault(sign.vector(), sign)
        self._signs = tuple(seen.values())
        self._vectors = frozenset(seen)
        self._codes: list[dict[str, int]] | None = None
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._signs)

    def __iter__(self):
        return iter(self._signs)

    def __contains__(self, sign: object) -> bool:
        return isinstance(sign, SignAttributes) and canonicalize(sign).vector() in self._vectors

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AttributeSet):
            return NotImplemented
        return self._vectors == other._vectors

    def __hash__(self) -> int:
        return hash(self._vectors)

    def __repr__(self) -> str:
        return f"AttributeSet(n={len(self)})"

    @property
    def vectors(self) -> frozenset[tuple[str, ...]]:
        return self._vectors

    def _encoded(self) -> tuple[list[dict[str, int]], np.ndarray]:
        if self._matrix is None:
            codes: list[dict[str, int]] = [{} for _ in FIELDS]
            matrix = np.empty((len(self._signs), N_FIELDS), dtype=np.int32)
            for i, sign in enumerate(self._signs):
                for j, value in enumerate(sign.vector()):
                    matrix[i, j] = codes[j].setdefault(value, len(codes[j]))
            self._codes, self._matrix = codes, matrix
        assert self._codes is not None
        return self._codes, self._matrix

    def encode(self, sign: SignAttributes) -> np.ndarray:
        # values never seen in this set get -1, which matches no member
        codes, _ = self._encoded()
        return np.array([codes[j].get(v, -1) for j, v in enumerate(sign.vector())], dtype=np.int32)


def dedup_location(records: Iterable[AttributeRecord]) -> AttributeSet:
    """Union of canonical signs across one location's images."""
    records = list(records)
    ids = {r.location_id for r in records}
    if len(ids) > 1:
        raise ValidationError(f"records span {len(ids)} locations: {sorted(ids)[:3]}")
    return AttributeSet(sign for r in records for sign in r.signs)


def build_source_set(records: Iterable[AttributeRecord]) -> AttributeSet:
    """Global dedup of every source-country sign (may be empty)."""
    return AttributeSet(sign for r in records for sign in r.signs)


def hamming(a: SignAttributes, b: SignAttributes) -> int:
    return sum(x != y for x, y in zip(a.vector(), b.vector()))


class EmptySourceError(PoiError, ValueError):
    def __init__(self) -> None:
        super().__init__("empty source attribute set")


def min_hamming(sign: SignAttributes, source: AttributeSet) -> int:
    if len(source) == 0:
        raise EmptySourceError()
    sign = canonicalize(sign)
    if sign.vector() in source.vectors:
        return 0
    _, matrix = source._encoded()
    return int((matrix != source.encode(sign)).sum(axis=1).min())


def score_location_attr(location_set: AttributeSet, source: AttributeSet) -> int:
    """Sum of per-sign nearest-source Hamming distances; 0 for no signs."""
    if len(source) == 0:
        raise EmptySourceError()
    return sum(min_hamming(sign, source) for sign in location_set)


def score_locations_attr(
    location_ids: Iterable[str],
    records: Iterable[AttributeRecord],
    source: AttributeSet,
    workers: int | None = 1,
) -> list[PoiScore]:
    """Score every location in ``location_ids``.

    Records are grouped by ``location_id``; locations without records score 0.
    Records whose location is not listed are ignored.
    """
    from .select import PoiScore

    if len(source) == 0:
        raise EmptySourceError()
    location_ids = list(location_ids)
    grouped: dict[str, list[AttributeRecord]] = {lid: [] for lid in location_ids}
    for rec in records:
        if rec.location_id in grouped:
            grouped[rec.location_id].append(rec)

    def one(lid: str) -> PoiScore:
        return PoiScore(lid, float(score_location_attr(dedup_location(grouped[lid]), source)), "attr")

    if workers is None or workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, location_ids))
    return [one(lid) for lid in location_ids]
