"""k-th nearest neighbor feature distance scoring.

An image's discrepancy is the Euclidean distance from its embedding to the
k-th closest source-country embedding (unit-normalized by default). A
location takes the minimum over its images, or 0 when it has none.

:func:`score_images` is the fast path. Per block of targets it computes
squared distances with one float64 matrix product
(``|q|^2 + |s|^2 - 2 q.s``), picks the k-th value with ``np.partition``,
then recomputes exact squared distances (explicit differences) for every
source row within a small tolerance of that value. The final statistic
comes from the exact values only, so the result matches a full sort up to
summation order and does not depend on how blocks are scheduled.
"""

from __future__ import annotations

import os
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .geo import CoLocationTable
from .ingest import FeatureSet
from .select import PoiScore

DEFAULT_K = 10
MIN_NORM = 1e-12
TARGET_BLOCK = 128
SOURCE_BLOCK = 32768
# relative slack on the GEMM-based squared distance before exact refinement
_REFINE_RTOL = 1e-9


@dataclass(frozen=True)
class KnnConfig:
    k: int = DEFAULT_K
    normalize: bool = True

    def __post_init__(self) -> None:
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise ValidationError(f"k must be a positive integer, got {self.k!r}")


@dataclass(frozen=True)
class ImageScore:
    image_id: str
    score: float


def l2_normalize(fs: FeatureSet) -> FeatureSet:
    """Scale every row to unit L2 norm."""
    if fs.count == 0:
        return FeatureSet(fs.data, fs.row_ids, normalized=True, dim=fs.dim)
    data = fs.data.astype(np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", data, data))
    small = norms < MIN_NORM
    if small.any():
        raise ValidationError(f"row {int(np.argmax(small))} has zero norm and cannot be normalized")
    return FeatureSet((data / norms[:, None]).astype(np.float32), fs.row_ids, normalized=True)


def _check_k(k: int, n_source: int) -> None:
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if k > n_source:
        raise ValidationError(f"k={k} exceeds source size {n_source}")


def kth_nn_distance(query: Sequence[float] | np.ndarray, source: FeatureSet, k: int) -> float:
    """Exact k-th smallest Euclidean distance from ``query`` to the source rows."""
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != source.dim:
        raise ValidationError(f"query dim {q.shape[0]} != source dim {source.dim}")
    _check_k(k, source.count)
    diff = source.data.astype(np.float64) - q
    d2 = np.einsum("ij,ij->i", diff, diff)
    return float(np.sqrt(np.partition(d2, k - 1)[k - 1]))


class _Source:
    """Float64 copy of the source matrix split into fixed blocks, plus row norms."""

    def __init__(self, fs: FeatureSet, block: int):
        self.data = fs.data.astype(np.float64)
        self.sqnorm = np.einsum("ij,ij->i", self.data, self.data)
        self.bounds = [(lo, min(lo + block, fs.count)) for lo in range(0, fs.count, block)]


def _score_block(q: np.ndarray, src: _Source, k: int) -> np.ndarray:
    qn = np.einsum("ij,ij->i", q, q)
    approx = np.empty((q.shape[0], src.data.shape[0]), dtype=np.float64)
    for lo, hi in src.bounds:
        g = approx[:, lo:hi]
        np.matmul(q, src.data[lo:hi].T, out=g)
        g *= -2.0
        g += qn[:, None]
        g += src.sqnorm[None, lo:hi]
    kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
    slack = _REFINE_RTOL * (qn + src.sqnorm.max()) + 1e-30
    out = np.empty(q.shape[0], dtype=np.float64)
    for i in range(q.shape[0]):
        cand = np.flatnonzero(approx[i] <= kth[i] + slack[i])
        diff = src.data[cand] - q[i]
        exact = np.einsum("ij,ij->i", diff, diff)
        out[i] = np.partition(exact, k - 1)[k - 1]
    return np.sqrt(out)


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def score_images(
    targets: FeatureSet,
    source: FeatureSet,
    cfg: KnnConfig = KnnConfig(),
    workers: int | None = 1,
    block: int = TARGET_BLOCK,
) -> list[ImageScore]:
    """Score every target row; output order follows ``targets.row_ids``.

    Targets are cut into fixed-size blocks regardless of ``workers``, so the
    output is bit-identical for any worker count.
    """
    if targets.dim != source.dim:
        raise ValidationError(f"target dim {targets.dim} != source dim {source.dim}")
    _check_k(cfg.k, source.count)
    if cfg.normalize:
        if not source.normalized:
            source = l2_normalize(source)
        if not targets.normalized:
            targets = l2_normalize(targets)
    if targets.count == 0:
        return []
    src = _Source(source, SOURCE_BLOCK)
    tdata = targets.data.astype(np.float64)
    starts = range(0, targets.count, block)

    def run(lo: int) -> np.ndarray:
        return _score_block(tdata[lo : lo + block], src, cfg.k)

    n_workers = default_workers() if workers is None else max(1, workers)
    if n_workers == 1 or len(starts) == 1:
        parts = [run(lo) for lo in starts]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(run, starts))
    scores = np.concatenate(parts)
    return [ImageScore(rid, float(s)) for rid, s in zip(targets.row_ids, scores)]


@dataclass
class AggregationReport:
    """Counts gathered while turning image scores into location scores."""

    locations: int = 0
    locations_without_images: int = 0
    locations_without_embeddings: int = 0
    missing_embeddings: int = 0
    missing_image_ids: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, int]:
        return {
            "locations": self.locations,
            "locations_without_images": self.locations_without_images,
            "locations_without_embeddings": self.locations_without_embeddings,
            "missing_embeddings": self.missing_embeddings,
        }


def aggregate_location(
    table: CoLocationTable,
    scores: Iterable[ImageScore] | Mapping[str, float],
    report: AggregationReport | None = None,
) -> list[PoiScore]:
    """Minimum image score per location; 0 when no co-located image was scored."""
    if isinstance(scores, Mapping):
        by_id = dict(scores)
    else:
        by_id = {s.image_id: s.score for s in scores}
    report = report if report is not None else AggregationReport()
    out = []
    for log_id, images in table.entries.items():
        report.locations += 1
        found = []
        for image_id, _ in images:
            if image_id in by_id:
                found.append(by_id[image_id])
            else:
                report.missing_embeddings += 1
                report.missing_image_ids.append(image_id)
        if not images:
            report.locations_without_images += 1
        elif not found:
            report.locations_without_embeddings += 1
        out.append(PoiScore(log_id, min(found) if found else 0.0, "knn"))
    return out


def score_locations_knn(
    table: CoLocationTable,
    targets: FeatureSet,
    source: FeatureSet,
    cfg: KnnConfig = KnnConfig(),
    workers: int | None = 1,
    report: AggregationReport | None = None,
) -> list[PoiScore]:
    """Score only the target images referenced by ``table`` and aggregate."""
    wanted = table.image_ids()
    keep = [i for i, rid in enumerate(targets.row_ids) if rid in wanted]
    if len(keep) != targets.count:
        targets = FeatureSet(targets.data[keep], [targets.row_ids[i] for i in keep], targets.normalized, dim=targets.dim)
    image_scores = score_images(targets, source, cfg, workers=workers)
    return aggregate_location(table, image_scores, report)
