"""Budgeted selection of POI locations and the driving logs they map to.

Ranking is by score descending with ``location_id`` ascending as the
tie-break, so identical inputs always produce the identical ranked list.

The random baseline shuffles with NumPy's PCG64 bit generator
(``numpy.random.Generator(numpy.random.PCG64(seed))``). It runs a partial
Fisher-Yates shuffle over the ids sorted ascending: for position ``i`` in
``0..k-1`` it draws ``j = rng.integers(i, n)`` and swaps items ``i`` and
``j``. The first ``k`` items are the sample. PCG64 output does not depend
on platform, so a seed gives the same subset on every machine with the
same NumPy release line.
"""

from __future__ import annotations

import heapq
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ValidationError
from .ingest import DrivingLog, write_jsonl

METHODS = ("knn", "attr", "random")
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class PoiScore:
    location_id: str
    score: float
    method: str

    def __post_init__(self) -> None:
        if not isinstance(self.score, (int, float)) or not math.isfinite(self.score) or self.score < 0:
            raise ValidationError(f"{self.location_id}: score must be finite and >= 0, got {self.score!r}")
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")


def write_scores(path: str | Path, scores: Iterable[PoiScore], k: int | None = None) -> None:
    rows = []
    for s in scores:
        row: dict[str, Any] = {"location_id": s.location_id, "score": s.score, "method": s.method}
        if s.method == "knn":
            row["k"] = k
        rows.append(row)
    write_jsonl(path, rows)


def read_scores(path: str | Path) -> list[PoiScore]:
    scores = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
                scores.append(PoiScore(row["location_id"], row["score"], row["method"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"malformed score row: {exc}", line=lineno) from None
            except ValidationError as exc:
                raise ValidationError(str(exc), line=lineno) from None
    return scores


@dataclass(frozen=True)
class SelectionBudget:
    """Exactly one of ``alpha`` (fraction of the corpus) or ``k_absolute``."""

    alpha: float | None = None
    k_absolute: int | None = None

    def __post_init__(self) -> None:
        if (self.alpha is None) == (self.k_absolute is None):
            raise ValidationError("budget needs exactly one of alpha or k")
        if self.alpha is not None and not 0 < self.alpha <= 1:
            raise ValidationError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.k_absolute is not None and (isinstance(self.k_absolute, bool) or self.k_absolute < 1):
            raise ValidationError(f"k must be a positive integer, got {self.k_absolute}")

    def to_json(self) -> dict[str, Any]:
        return {"alpha": self.alpha} if self.alpha is not None else {"k_absolute": self.k_absolute}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> SelectionBudget:
        return cls(alpha=obj.get("alpha"), k_absolute=obj.get("k_absolute"))


def budget_to_k(budget: SelectionBudget, n_total: int) -> int:
    """Resolve a budget against a corpus of ``n_total`` logs.

    ``floor(alpha * n_total)`` clamped to ``[1, n_total]``.
    """
    if n_total < 1:
        raise ValidationError("cannot resolve a budget over an empty corpus")
    if budget.alpha is not None:
        # tolerate products like 0.29 * 100 = 28.999999999999996
        k = math.floor(budget.alpha * n_total + 1e-9)
    else:
        k = budget.k_absolute
    return max(1, min(k, n_total))


def _rank_key(s: PoiScore) -> tuple[float, str]:
    return (-s.score, s.location_id)


def top_k_locations(scores: Sequence[PoiScore], k: int) -> list[str]:
    if not scores:
        raise ValidationError("no scores to rank")
    seen: set[str] = set()
    for s in scores:
        if s.location_id in seen:
            raise ValidationError(f"duplicate location_id {s.location_id!r}")
        seen.add(s.location_id)
    return [s.location_id for s in heapq.nsmallest(k, scores, key=_rank_key)]


def map_to_logs(locations: Sequence[str], logs: Iterable[DrivingLog]) -> list[str]:
    """Map locations to driving logs; each location key is a ``log_id``."""
    known = {log.log_id for log in logs}
    out: list[str] = []
    seen: set[str] = set()
    for lid in locations:
        if lid not in known:
            raise ValidationError(f"unknown location_id {lid!r}")
        if lid not in seen:
            seen.add(lid)
            out.append(lid)
    return out


@dataclass(frozen=True)
class Selection:
    method: str
    budget: SelectionBudget
    k: int
    locations: tuple[str, ...]
    logs: tuple[str, ...]
    seed: int | None = None
    scores: Mapping[str, float] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        if len(set(self.logs)) != len(self.logs):
            raise ValidationError("selection logs contain duplicates")
        object.__setattr__(self, "locations", tuple(self.locations))
        object.__setattr__(self, "logs", tuple(self.logs))


def select_top_k(
    scores: Sequence[PoiScore], budget: SelectionBudget, logs: Sequence[DrivingLog], n_total: int | None = None
) -> Selection:
    """Rank ``scores`` and keep the budgeted prefix.

    ``n_total`` defaults to the number of scored locations.
    """
    if not scores:
        raise ValidationError("no scores to rank")
    methods = {s.method for s in scores}
    if len(methods) != 1:
        raise ValidationError(f"scores mix methods {sorted(methods)}")
    k = budget_to_k(budget, len(scores) if n_total is None else n_total)
    locations = top_k_locations(scores, k)
    by_id = {s.location_id: s.score for s in scores}
    return Selection(
        method=methods.pop(),
        budget=budget,
        k=k,
        locations=tuple(locations),
        logs=tuple(map_to_logs(locations, logs)),
        scores={lid: by_id[lid] for lid in locations},
    )


def random_select(
    location_ids: Iterable[str],
    k: int,
    seed: int,
    budget: SelectionBudget | None = None,
    logs: Iterable[DrivingLog] | None = None,
) -> Selection:
    """Uniform random subset of size ``k`` (see the module docstring for the algorithm)."""
    ids = sorted(set(location_ids))
    n = len(ids)
    if not 0 <= k <= n:
        raise ValidationError(f"cannot draw {k} of {n} locations")
    rng = np.random.Generator(np.random.PCG64(seed))
    for i in range(k):
        j = int(rng.integers(i, n))
        ids[i], ids[j] = ids[j], ids[i]
    chosen = tuple(ids[:k])
    mapped = tuple(map_to_logs(chosen, logs)) if logs is not None else chosen
    return Selection(
        method="random",
        budget=budget or SelectionBudget(k_absolute=max(k, 1)),
        k=k,
        locations=chosen,
        logs=mapped,
        seed=seed,
    )


def export_subset(sel: Selection, scores: Iterable[PoiScore] | None, path: str | Path) -> None:
    """Write the ranked selection as JSONL: one header line, then one row per location."""
    by_id = dict(sel.scores)
    if scores is not None:
        by_id.update((s.location_id, s.score) for s in scores)
    header = {
        "type": "header",
        "version": MANIFEST_VERSION,
        "method": sel.method,
        "budget": sel.budget.to_json(),
        "k": sel.k,
        "seed": sel.seed,
        "n_selected": len(sel.locations),
    }
    rows = [header]
    for rank, (lid, log_id) in enumerate(zip(sel.locations, sel.logs), start=1):
        rows.append(
            {
                "rank": rank,
                "location_id": lid,
                "log_id": log_id,
                "score": by_id.get(lid),
                "method": sel.method,
                "k": sel.k,
                "seed": sel.seed,
            }
        )
    write_jsonl(path, rows)


def read_selection(path: str | Path) -> Selection:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("type") != "header":
        raise ValidationError(f"{path}: missing selection header")
    header, rows = lines[0], lines[1:]
    if [r["rank"] for r in rows] != list(range(1, len(rows) + 1)):
        raise ValidationError(f"{path}: ranks are not 1..{len(rows)}")
    return Selection(
        method=header["method"],
        budget=SelectionBudget.from_json(header["budget"]),
        k=header["k"],
        locations=tuple(r["location_id"] for r in rows),
        logs=tuple(r["log_id"] for r in rows),
        seed=header["seed"],
        scores={r["location_id"]: r["score"] for r in rows if r["score"] is not None},
    )
