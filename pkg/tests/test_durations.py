from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from colobench.durations import Duration, format_duration, parse_duration
from colobench.errors import FormatError

FACTORS = {"s": 1, "m": 60, "h": 3600}


@pytest.mark.parametrize(
    "text, seconds",
    [("20m", 1200), ("5m", 300), ("2m", 120), ("0s", 0), ("90s", 90), ("1h", 3600), ("30s", 30)],
)
def test_parse(text, seconds):
    assert parse_duration(text).seconds == seconds


@pytest.mark.parametrize("text", ["", "20", "1.5m", "-5m", "5 m", "5d", "m", "5M", " 5m", "5m ", "٣m", 20, None])
def test_rejects_outside_grammar(text):
    with pytest.raises(FormatError):
        parse_duration(text)


@pytest.mark.parametrize("seconds, text", [(0, "0s"), (90, "90s"), (120, "2m"), (1200, "20m"), (7200, "2h"), (3660, "61m")])
def test_format_most_compact_exact_unit(seconds, text):
    assert format_duration(Duration(seconds)) == text


def test_negative_duration_rejected():
    with pytest.raises(ValueError):
        Duration(-1)


@given(st.integers(min_value=0, max_value=10**7), st.sampled_from("smh"))
def test_parse_of_any_unit_is_exact(n, unit):
    assert parse_duration(f"{n}{unit}").seconds == n * FACTORS[unit]


@given(st.integers(min_value=0, max_value=10**8))
def test_format_parse_identity(seconds):
    d = Duration(seconds)
    assert parse_duration(format_duration(d)) == d


@given(st.text(max_size=8))
def test_parse_never_raises_anything_else(text):
    try:
        d = parse_duration(text)
    except FormatError:
        return
    assert format_duration(d)
