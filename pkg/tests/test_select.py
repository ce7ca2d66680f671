from __future__ import annotations

import numpy as np
import pytest
from conftest import make_log
from hypothesis import given, settings
from hypothesis import strategies as st

from poiscout.errors import ValidationError
from poiscout.select import (
    PoiScore,
    Selection,
    SelectionBudget,
    budget_to_k,
    export_subset,
    map_to_logs,
    random_select,
    read_scores,
    read_selection,
    select_top_k,
    top_k_locations,
    write_scores,
)


def scored(pairs, method="knn"):
    return [PoiScore(lid, s, method) for lid, s in pairs]


# --- budget ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "budget,n,k",
    [
        (SelectionBudget(alpha=0.25), 1000, 250),
        (SelectionBudget(alpha=0.05), 19, 1),
        (SelectionBudget(alpha=1.0), 777, 777),
        (SelectionBudget(alpha=0.29), 100, 29),
        (SelectionBudget(k_absolute=50), 10, 10),
        (SelectionBudget(k_absolute=3), 10, 3),
    ],
)
def test_budget_to_k(budget, n, k):
    assert budget_to_k(budget, n) == k


def test_budget_validation():
    with pytest.raises(ValidationError):
        SelectionBudget()
    with pytest.raises(ValidationError):
        SelectionBudget(alpha=0.1, k_absolute=3)
    for bad in (0.0, 1.5, -0.2):
        with pytest.raises(ValidationError):
            SelectionBudget(alpha=bad)
    with pytest.raises(ValidationError):
        SelectionBudget(k_absolute=0)
    with pytest.raises(ValidationError):
        budget_to_k(SelectionBudget(alpha=0.5), 0)


# --- top-k -------------------------------------------------------------------------


def test_top_k_basic():
    assert top_k_locations(scored([("A", 0.9), ("B", 0.1), ("C", 0.5)]), 2) == ["A", "C"]


def test_top_k_ties_use_smallest_ids():
    assert top_k_locations(scored([("d", 1.0), ("b", 1.0), ("c", 1.0), ("a", 1.0)]), 2) == ["a", "b"]


def test_top_k_duplicate_ids():
    with pytest.raises(ValidationError, match="duplicate"):
        top_k_locations(scored([("a", 1.0), ("a", 2.0)]), 1)


def test_top_k_matches_sort_oracle():
    rng = np.random.default_rng(0)
    values = rng.integers(0, 300, size=10_000) / 7.0  # plenty of ties
    scores = scored([(f"loc{i:05d}", float(v)) for i, v in enumerate(values)])
    oracle = [s.location_id for s in sorted(scores, key=lambda s: (-s.score, s.location_id))][:500]
    assert top_k_locations(scores, 500) == oracle


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=30))
def test_budget_prefix_and_rank_consistency(values):
    scores = scored([(f"l{i:02d}", float(v)) for i, v in enumerate(values)])
    full = top_k_locations(scores, len(scores))
    by_id = {s.location_id: s.score for s in scores}
    assert [by_id[x] for x in full] == sorted(by_id.values(), reverse=True)
    for k in range(1, len(scores) + 1):
        assert top_k_locations(scores, k) == full[:k]
    rng = np.random.default_rng(len(values))
    shuffled = [scores[i] for i in rng.permutation(len(scores))]
    assert top_k_locations(shuffled, len(scores)) == full


def test_zero_scores_sink_but_remain_eligible():
    scores = scored([("a", 0.0), ("b", 0.2), ("c", 0.0)])
    assert top_k_locations(scores, 3) == ["b", "a", "c"]


# --- mapping -----------------------------------------------------------------------


def test_map_identity_preserves_rank():
    logs = [make_log("L1", 1, 1), make_log("L3", 1, 1)]
    assert map_to_logs(["L3", "L1"], logs) == ["L3", "L1"]


def test_map_unknown():
    with pytest.raises(ValidationError, match="'ghost'"):
        map_to_logs(["ghost"], [make_log("L1", 1, 1)])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.floats(0.01, 1.0))
def test_select_then_lookup(values, alpha):
    logs = [make_log(f"log{i}", 1, 1) for i in range(len(values))]
    sel = select_top_k(scored([(f"log{i}", v) for i, v in enumerate(values)]), SelectionBudget(alpha=alpha), logs)
    known = {log.log_id for log in logs}
    assert all(x in known for x in sel.logs)
    assert len(sel.logs) == sel.k == budget_to_k(SelectionBudget(alpha=alpha), len(values))


# --- random baseline -------------------------------------------------------------


def test_random_full_set():
    ids = [f"x{i}" for i in range(12)]
    sel = random_select(ids, 12, seed=3)
    assert sorted(sel.locations) == sorted(ids)


def test_random_same_seed_same_subset():
    ids = [f"x{i}" for i in range(100)]
    assert random_select(ids, 10, 42).locations == random_select(list(reversed(ids)), 10, 42).locations
    assert random_select(ids, 10, 42).locations != random_select(ids, 10, 43).locations


def test_random_too_large():
    with pytest.raises(ValidationError):
        random_select(["a", "b"], 3, seed=0)


def test_random_uniformity():
    ids = [f"id{i}" for i in range(10)]
    counts = dict.fromkeys(ids, 0)
    for seed in range(10_000):
        counts[random_select(ids, 1, seed).locations[0]] += 1
    assert all(850 <= c <= 1150 for c in counts.values()), counts
    chi2 = sum((c - 1000) ** 2 / 1000 for c in counts.values())
    assert chi2 < 27.88  # chi-square, 9 dof, p = 0.001


def test_random_maps_logs():
    logs = [make_log(f"L{i}", 1, 1) for i in range(5)]
    sel = random_select([log.log_id for log in logs], 2, seed=1, logs=logs)
    assert sel.logs == sel.locations and sel.seed == 1 and sel.method == "random"


# --- export -----------------------------------------------------------------------


def _selection():
    logs = [make_log(x, 1, 1) for x in ("a", "b", "c", "d")]
    scores = scored([("a", 0.2), ("b", 0.9), ("c", 0.5), ("d", 0.1)], method="attr")
    return select_top_k(scores, SelectionBudget(k_absolute=3), logs), scores


def test_export_rows(tmp_path):
    sel, scores = _selection()
    export_subset(sel, scores, tmp_path / "sel.jsonl")
    lines = (tmp_path / "sel.jsonl").read_text().splitlines()
    assert len(lines) == 4
    assert '"type": "header"' in lines[0]
    assert [line.split('"location_id": ')[1][1] for line in lines[1:]] == ["b", "c", "a"]


def test_export_is_byte_stable(tmp_path):
    sel, scores = _selection()
    export_subset(sel, scores, tmp_path / "one.jsonl")
    export_subset(sel, scores, tmp_path / "two.jsonl")
    assert (tmp_path / "one.jsonl").read_bytes() == (tmp_path / "two.jsonl").read_bytes()


def test_manifest_round_trip(tmp_path):
    sel, scores = _selection()
    export_subset(sel, scores, tmp_path / "sel.jsonl")
    back = read_selection(tmp_path / "sel.jsonl")
    assert back == sel
    assert back.scores == {"b": 0.9, "c": 0.5, "a": 0.2}
    rnd = random_select(list("abcdef"), 4, seed=9, budget=SelectionBudget(alpha=0.7))
    export_subset(rnd, None, tmp_path / "r.jsonl")
    assert read_selection(tmp_path / "r.jsonl") == rnd


def test_selection_rejects_duplicate_logs():
    with pytest.raises(ValidationError):
        Selection("knn", SelectionBudget(k_absolute=2), 2, ("a", "a"), ("a", "a"))


def test_scores_file_round_trip(tmp_path):
    scores = scored([("a", 0.25), ("b", 0.0)])
    write_scores(tmp_path / "s.jsonl", scores, k=10)
    assert (tmp_path / "s.jsonl").read_text().splitlines()[0] == '{"location_id": "a", "score": 0.25, "method": "knn", "k": 10}'
    assert read_scores(tmp_path / "s.jsonl") == scores


def test_score_invariants():
    for bad in (-0.1, float("nan"), float("inf")):
        with pytest.raises(ValidationError):
            PoiScore("a", bad, "knn")
