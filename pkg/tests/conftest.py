from __future__ import annotations

import json
import socket
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from poiscout.attr import CATEGORIES, COLORS, SHAPES, SYMBOLS, SignAttributes
from poiscout.ingest import AttributeRecord, DrivingLog, FeatureSet, StreetViewImage


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Fail any attempt to open an internet socket."""
    real_connect = socket.socket.connect

    def guarded(self, address):
        if self.family in (socket.AF_INET, socket.AF_INET6):
            raise RuntimeError(f"network access attempted: {address}")
        return real_connect(self, address)

    monkeypatch.setattr(socket.socket, "connect", guarded)
    monkeypatch.setattr(socket, "create_connection", lambda *a, **k: (_ for _ in ()).throw(RuntimeError("network")))


def random_features(rng: np.random.Generator, n: int, dim: int, prefix: str = "r", normalized: bool = False) -> FeatureSet:
    data = rng.standard_normal((n, dim)).astype(np.float32)
    if normalized:
        data = (data / np.linalg.norm(data.astype(np.float64), axis=1, keepdims=True)).astype(np.float32)
    return FeatureSet(data, [f"{prefix}{i:06d}" for i in range(n)], normalized, dim=dim)


def sign(
    category="warning",
    shape="triangle",
    border="red",
    background="white",
    symbol_color="black",
    symbol="pedestrian",
    text="none",
    language="none",
    name=None,
) -> SignAttributes:
    return SignAttributes(category, shape, border, background, symbol_color, symbol, text, language, name)


def sign_json(**overrides) -> dict:
    obj = sign().to_prompt_json()
    for key, value in overrides.items():
        if key in ("shape",):
            obj["attributes"][key] = value
        elif key in ("border", "background", "symbol_color"):
            obj["attributes"]["color"]["symbol" if key == "symbol_color" else key] = value
        else:
            obj[key] = value
    return obj


_words = st.sampled_from(["none", "stop", "STOP ", "  Ustąp  pierwszeństwa", "", "Zone 30", "ulica"])
_langs = st.sampled_from(["none", "English", "polish", " Polish ", "German", ""])

signs = st.builds(
    SignAttributes,
    category=st.sampled_from(CATEGORIES),
    shape=st.sampled_from(SHAPES),
    color_border=st.sampled_from(COLORS),
    color_background=st.sampled_from(COLORS),
    color_symbol=st.sampled_from(COLORS),
    symbol=st.sampled_from(SYMBOLS),
    text=_words,
    language=_langs,
)


def random_sign(rng, vocab: int = 3) -> SignAttributes:
    """A random sign drawn from small per-field vocabularies, so near matches are common."""
    return SignAttributes(
        category=CATEGORIES[rng.integers(vocab)],
        shape=SHAPES[rng.integers(vocab)],
        color_border=COLORS[rng.integers(vocab)],
        color_background=COLORS[rng.integers(vocab)],
        color_symbol=COLORS[rng.integers(vocab)],
        symbol=SYMBOLS[rng.integers(vocab)],
        text=["none", "stop", "30"][rng.integers(3)],
        language=["none", "polish", "english"][rng.integers(3)],
    )


def write_jsonl(path: Path, rows) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def make_log(log_id: str, lat: float, lon: float, country="PL", split="train", sign=True) -> DrivingLog:
    return DrivingLog(log_id, lat, lon, country, split, sign)


def make_image(image_id: str, lat: float, lon: float) -> StreetViewImage:
    return StreetViewImage(image_id, lat, lon)


def record(image_id: str, location_id: str, *signs_: SignAttributes) -> AttributeRecord:
    return AttributeRecord(image_id, location_id, tuple(signs_))
