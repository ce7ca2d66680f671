from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from poiscout.cost import CostModel, country_table, estimate_cost, format_usd
from poiscout.errors import ValidationError


def test_hundred_thousand_km():
    est = estimate_cost(100_000)
    assert est.images == 5_000_000
    assert est.tokens == 1_000_000_000
    assert est.usd_display == 2000


@pytest.mark.parametrize(
    "name,km,exact,display",
    [
        ("Poland", 429_800, Decimal("8596"), 8596),
        ("France", 1_053_215, Decimal("21064.3"), 21064),
        ("Sweden", 573_134, Decimal("11462.68"), 11463),
    ],
)
def test_country_rows(name, km, exact, display):
    (est,) = country_table([(name, km)])
    assert est.name == name
    assert est.usd_exact == exact
    assert est.usd_display == display


def test_zero_and_empty():
    assert estimate_cost(0).usd_display == 0
    assert country_table([]) == []


def test_negative_length():
    with pytest.raises(ValidationError):
        estimate_cost(-1)


def test_partial_interval_has_no_image():
    assert estimate_cost(0.039).images == 1
    assert estimate_cost(0.04).images == 2


def test_model_validation():
    with pytest.raises(ValidationError):
        CostModel(sampling_interval_m=0)
    with pytest.raises(ValidationError):
        CostModel(usd_per_million_tokens=-2)


def test_order_preserved():
    rows = country_table([("b", 10), ("a", 5)])
    assert [r.name for r in rows] == ["b", "a"]


@given(st.integers(0, 10**8), st.integers(0, 10**8))
def test_linear_before_rounding(a, b):
    # lengths that are exact multiples of the 20 m interval
    ka, kb = Decimal(a) * Decimal("0.02"), Decimal(b) * Decimal("0.02")
    total = estimate_cost(ka + kb).usd_exact
    assert abs(total - (estimate_cost(ka).usd_exact + estimate_cost(kb).usd_exact)) <= Decimal("1e-9")


@given(st.floats(0, 2e6), st.floats(0, 2e6))
def test_monotone(a, b):
    lo, hi = sorted((a, b))
    assert estimate_cost(lo).usd_exact <= estimate_cost(hi).usd_exact


def test_format():
    assert format_usd(21064) == "$21,064"
    assert format_usd(0) == "$0"
