"""Input corpora: driving logs, street-view metadata, embeddings, attributes.

Text inputs are JSONL (logs also accept CSV). Parsers are lenient by default:
invalid lines are skipped and described in :attr:`ParseResult.errors`;
``strict=True`` turns the first invalid line into an exception. A duplicate
``log_id`` or ``image_id`` is fatal in either mode.

Embeddings use a small little-endian binary container plus a text sidecar
holding one image id per line::

    offset  size  field
    0       8     magic  b"POIFV01\\0"
    8       4     u32 version (1)
    12      4     u32 dim
    16      8     u64 count
    24      1     u8 normalized flag
    25      7     reserved, zero
    32      ...   count * dim float32, row-major
"""

from __future__ import annotations

import csv
import json
import re
import struct
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from .attr import SignAttributes
from .errors import FormatError, ValidationError

if TYPE_CHECKING:
    from .geo import CoLocationTable

SPLITS = ("train", "val")
LOG_FIELDS = ("log_id", "lat", "lon", "country", "split", "has_traffic_sign")

MAGIC = b"POIFV01\0"
VERSION = 1
_HEADER = struct.Struct("<8sIIQB7x")
HEADER_SIZE = _HEADER.size
NORM_TOL = 1e-4

_COUNTRY = re.compile(r"[A-Z]{2}")


def _check_coords(lat: Any, lon: Any) -> tuple[float, float]:
    if isinstance(lat, bool) or isinstance(lon, bool):
        raise ValidationError("coordinates must be numbers")
    try:
        lat, lon = float(lat), float(lon)
    except (TypeError, ValueError):
        raise ValidationError("coordinates must be numbers") from None
    if not -90.0 <= lat <= 90.0:
        raise ValidationError(f"lat {lat} outside [-90, 90]", field="lat")
    if not -180.0 <= lon <= 180.0:
        raise ValidationError(f"lon {lon} outside [-180, 180]", field="lon")
    return lat, lon


def _check_id(value: Any, name: str) -> str:
    if not isinstance(value, str) or not value:
        raise ValidationError(f"{name} must be a non-empty string", field=name)
    if "\n" in value or "\r" in value:
        raise ValidationError(f"{name} must not contain line breaks", field=name)
    return value


@dataclass(frozen=True)
class DrivingLog:
    log_id: str
    lat: float
    lon: float
    country: str
    split: str
    has_traffic_sign: bool

    def __post_init__(self) -> None:
        _check_id(self.log_id, "log_id")
        lat, lon = _check_coords(self.lat, self.lon)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)
        if not isinstance(self.country, str) or not _COUNTRY.fullmatch(self.country):
            raise ValidationError(f"country {self.country!r} is not an ISO alpha-2 code", field="country")
        if self.split not in SPLITS:
            raise ValidationError(f"split {self.split!r} not in {SPLITS}", field="split")
        if not isinstance(self.has_traffic_sign, bool):
            raise ValidationError("has_traffic_sign must be a boolean", field="has_traffic_sign")

    def to_json(self) -> dict[str, Any]:
        return {f: getattr(self, f) for f in LOG_FIELDS}


@dataclass(frozen=True)
class StreetViewImage:
    image_id: str
    lat: float
    lon: float
    captured_at: int | None = None
    source_url: str | None = None

    def __post_init__(self) -> None:
        _check_id(self.image_id, "image_id")
        lat, lon = _check_coords(self.lat, self.lon)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)
        if self.captured_at is not None:
            if isinstance(self.captured_at, bool) or not isinstance(self.captured_at, int) or self.captured_at < 0:
                raise ValidationError("captured_at must be a non-negative integer (epoch ms)", field="captured_at")
        if self.source_url is not None and not isinstance(self.source_url, str):
            raise ValidationError("source_url must be a string", field="source_url")

    def to_json(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "lat": self.lat,
            "lon": self.lon,
            "captured_at": self.captured_at,
            "source_url": self.source_url,
        }


@dataclass(frozen=True)
class AttributeRecord:
    image_id: str
    location_id: str
    signs: tuple[SignAttributes, ...] = ()

    def __post_init__(self) -> None:
        _check_id(self.image_id, "image_id")
        _check_id(self.location_id, "location_id")
        object.__setattr__(self, "signs", tuple(self.signs))

    def to_json(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "location_id": self.location_id,
            "signs": [s.to_prompt_json() for s in self.signs],
        }


@dataclass(frozen=True)
class LineError:
    line: int
    message: str
    sign_index: int | None = None

    def to_json(self) -> dict[str, Any]:
        return {"line": self.line, "sign_index": self.sign_index, "message": self.message}


@dataclass
class ParseResult:
    """Records that passed validation plus one error per rejected line or sign."""

    records: list = field(default_factory=list)
    errors: list[LineError] = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def _open_text(path: str | Path):
    return open(path, encoding="utf-8", newline="")


def _jsonl_objects(path: str | Path) -> Iterator[tuple[int, Any]]:
    """Yield ``(line_number, parsed_or_exception)`` for non-blank lines."""
    with _open_text(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                yield lineno, json.loads(raw)
            except json.JSONDecodeError as exc:
                yield lineno, ValidationError(f"malformed JSON: {exc.msg}")


def _log_from_obj(obj: Any) -> DrivingLog:
    if not isinstance(obj, dict):
        raise ValidationError("expected a JSON object")
    missing = [f for f in LOG_FIELDS if f not in obj]
    if missing:
        raise ValidationError(f"missing field(s) {', '.join(missing)}")
    return DrivingLog(**{f: obj[f] for f in LOG_FIELDS})


_BOOL = {"true": True, "1": True, "false": False, "0": False}


def _log_from_row(row: list[str]) -> DrivingLog:
    if len(row) != len(LOG_FIELDS):
        raise ValidationError(f"expected {len(LOG_FIELDS)} columns, got {len(row)}")
    log_id, lat, lon, country, split, flag = (c.strip() for c in row)
    try:
        has_sign = _BOOL[flag.lower()]
    except KeyError:
        raise ValidationError(f"has_traffic_sign {flag!r} is not a boolean", field="has_traffic_sign") from None
    return DrivingLog(log_id, lat, lon, country, split, has_sign)


def _collect(items: Iterable[tuple[int, Any]], build, key: str, strict: bool) -> ParseResult:
    result = ParseResult()
    seen: dict[str, int] = {}
    for lineno, item in items:
        try:
            if isinstance(item, Exception):
                raise item
            rec = build(item)
        except ValidationError as exc:
            if strict:
                raise ValidationError(str(exc), line=lineno, field=exc.field) from None
            result.errors.append(LineError(lineno, str(exc)))
            continue
        ident = getattr(rec, key)
        if ident in seen:
            raise ValidationError(f"duplicate {key} {ident!r} (first seen on line {seen[ident]})", line=lineno)
        seen[ident] = lineno
        result.records.append(rec)
    return result


def parse_logs(path: str | Path, format: str | None = None, *, strict: bool = False) -> ParseResult:
    """Read driving logs from JSONL or CSV.

    ``format`` defaults to the file suffix (``.csv`` means CSV, anything else
    JSONL). CSV files need the header ``log_id,lat,lon,country,split,has_traffic_sign``.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if format == "jsonl":
        return _collect(_jsonl_objects(path), _log_from_obj, "log_id", strict)
    if format != "csv":
        raise ValueError(f"unknown log format {format!r}")

    def rows() -> Iterator[tuple[int, list[str]]]:
        with _open_text(path) as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                return
            if tuple(h.strip() for h in header) != LOG_FIELDS:
                raise FormatError(f"{path}: CSV header must be {','.join(LOG_FIELDS)}, got {','.join(header)}")
            for row in reader:
                if row and any(c.strip() for c in row):
                    yield reader.line_num, row

    return _collect(rows(), _log_from_row, "log_id", strict)


def _image_from_obj(obj: Any) -> StreetViewImage:
    if not isinstance(obj, dict):
        raise ValidationError("expected a JSON object")
    missing = [f for f in ("image_id", "lat", "lon") if f not in obj]
    if missing:
        raise ValidationError(f"missing field(s) {', '.join(missing)}")
    return StreetViewImage(obj["image_id"], obj["lat"], obj["lon"], obj.get("captured_at"), obj.get("source_url"))


def parse_images(path: str | Path, *, strict: bool = False) -> ParseResult:
    """Read street-view image metadata from JSONL."""
    return _collect(_jsonl_objects(path), _image_from_obj, "image_id", strict)


def parse_attribute_lines(lines: Iterable[str], *, strict: bool = False) -> ParseResult:
    """Parse attribute JSONL content.

    A line that is not a JSON object or lacks ``image_id``/``location_id`` is
    rejected whole. An invalid sign inside a valid line is dropped (lenient)
    and reported with its index.
    """
    result = ParseResult()
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            if strict:
                raise ValidationError(f"malformed JSON: {exc.msg}", line=lineno) from None
            result.errors.append(LineError(lineno, f"malformed JSON: {exc.msg}"))
            continue
        try:
            if not isinstance(obj, dict):
                raise ValidationError("expected a JSON object")
            for key in ("image_id", "location_id", "signs"):
                if key not in obj:
                    raise ValidationError(f"missing required field {key!r}", field=key)
            if not isinstance(obj["signs"], list):
                raise ValidationError("signs must be a list", field="signs")
            image_id = _check_id(obj["image_id"], "image_id")
            location_id = _check_id(obj["location_id"], "location_id")
        except ValidationError as exc:
            if strict:
                raise ValidationError(str(exc), line=lineno, field=exc.field) from None
            result.errors.append(LineError(lineno, str(exc)))
            continue
        signs = []
        for i, sign_obj in enumerate(obj["signs"]):
            try:
                signs.append(SignAttributes.from_prompt_json(sign_obj))
            except ValidationError as exc:
                if strict:
                    raise ValidationError(f"sign {i}: {exc}", line=lineno, field=exc.field) from None
                result.errors.append(LineError(lineno, str(exc), sign_index=i))
        result.records.append(AttributeRecord(image_id, location_id, tuple(signs)))
    return result


def parse_attributes(path: str | Path, mode: str = "lenient") -> ParseResult:
    if mode not in ("strict", "lenient"):
        raise ValueError(f"mode must be 'strict' or 'lenient', got {mode!r}")
    with _open_text(path) as fh:
        return parse_attribute_lines(fh, strict=mode == "strict")


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, separators=(", ", ": ")))
            fh.write("\n")


# --- embeddings -------------------------------------------------------------


class FeatureSet:
    """Row-aligned float32 embeddings.

    ``data`` is an owned, read-only ``(count, dim)`` float32 array.
    """

    __slots__ = ("data", "row_ids", "normalized")

    def __init__(self, data: np.ndarray, row_ids: Iterable[str], normalized: bool = False, *, dim: int | None = None):
        arr = np.array(data, dtype=np.float32, order="C", copy=True)
        if arr.ndim == 1 and arr.size == 0 and dim is not None:
            arr = arr.reshape(0, dim)
        if arr.ndim != 2:
            raise ValidationError(f"embedding matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[1] == 0:
            raise ValidationError("dim must be positive")
        ids = tuple(row_ids)
        if len(ids) != arr.shape[0]:
            raise ValidationError(f"{len(ids)} row ids for {arr.shape[0]} rows")
        for rid in ids:
            _check_id(rid, "image_id")
        finite = np.isfinite(arr).all(axis=1)
        if not finite.all():
            raise ValidationError(f"non-finite value in row {int(np.argmin(finite))}")
        if normalized and arr.shape[0]:
            norms = np.linalg.norm(arr.astype(np.float64), axis=1)
            bad = np.abs(norms - 1.0) > NORM_TOL
            if bad.any():
                raise ValidationError(f"row {int(np.argmax(bad))} has norm {norms[bad][0]:.6f}, expected 1")
        arr.setflags(write=False)
        self.data = arr
        self.row_ids = ids
        self.normalized = bool(normalized)

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def count(self) -> int:
        return self.data.shape[0]

    def __len__(self) -> int:
        return self.count

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
            and self.row_ids == other.row_ids
            and self.normalized == other.normalized
        )

    def __repr__(self) -> str:
        return f"FeatureSet(count={self.count}, dim={self.dim}, normalized={self.normalized})"


def write_embeddings(fs: FeatureSet, path: str | Path, ids_path: str | Path) -> None:
    header = _HEADER.pack(MAGIC, VERSION, fs.dim, fs.count, int(fs.normalized))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(fs.data.astype("<f4", copy=False).tobytes(order="C"))
    with open(ids_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(rid + "\n" for rid in fs.row_ids)


def read_ids(ids_path: str | Path) -> list[str]:
    text = Path(ids_path).read_bytes().decode("utf-8")
    if not text:
        return []
    if "\r" in text:
        raise FormatError(f"{ids_path}: ids file must use LF line endings")
    if text.endswith("\n"):
        text = text[:-1]
    return text.split("\n")


def read_embeddings(path: str | Path, ids_path: str | Path) -> FeatureSet:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, dim, count, flag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim == 0:
        raise FormatError(f"{path}: dim must be positive")
    if flag not in (0, 1) or any(raw[25:HEADER_SIZE]):
        raise FormatError(f"{path}: corrupt flag or reserved bytes")
    expected = HEADER_SIZE + 4 * dim * count
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw) - HEADER_SIZE} bytes, header implies {expected - HEADER_SIZE}")
    ids = read_ids(ids_path)
    if len(ids) != count:
        raise FormatError(f"{ids_path}: {len(ids)} ids for {count} rows")
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE).reshape(count, dim)
    bad = ~np.isfinite(data).all(axis=1)
    if bad.any():
        raise FormatError(f"{path}: non-finite value in row {int(np.argmax(bad))}")
    return FeatureSet(data, ids, bool(flag), dim=dim)


# --- statistics -------------------------------------------------------------


def percent(numerator: int, denominator: int, places: int = 2) -> Decimal:
    """``100 * numerator / denominator`` rounded half away from zero."""
    if denominator <= 0:
        return Decimal(0).quantize(Decimal(1).scaleb(-places))
    value = Decimal(numerator) * 100 / Decimal(denominator)
    return value.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class CorpusStats:
    total_logs: int
    logs_with_sign: int
    logs_with_returns: int

    def __post_init__(self) -> None:
        if not 0 <= self.logs_with_returns <= self.logs_with_sign <= self.total_logs:
            raise ValidationError(
                f"inconsistent counts: returns={self.logs_with_returns} sign={self.logs_with_sign} total={self.total_logs}"
            )

    @property
    def return_ratio(self) -> float:
        return self.logs_with_returns / self.logs_with_sign if self.logs_with_sign else 0.0

    @property
    def return_percent(self) -> Decimal:
        return percent(self.logs_with_returns, self.logs_with_sign)


def dataset_stats(logs: Iterable[DrivingLog], colocations: CoLocationTable) -> CorpusStats:
    """Count logs, logs with a traffic sign, and signed logs with street-view returns."""
    total = with_sign = with_returns = 0
    for log in logs:
        total += 1
        if not log.has_traffic_sign:
            continue
        with_sign += 1
        if colocations.entries.get(log.log_id):
            with_returns += 1
    return CorpusStats(total, with_sign, with_returns)
