"""Trace text format round-trips and the argument digest."""

import pytest
from hypothesis import given, settings, strategies as st

from vfpga.errors import FormatError
from vfpga.trace import Trace, args_digest, parse


def test_render_parse_round_trip():
    trace = Trace("cafe0123cafe0123")
    trace.record(0.0, 1, "attach", args_digest(1), "ok")
    trace.record(0.1 + 0.2, 2, "alloc", args_digest(2, 4096), "OutOfDeviceMemory")
    trace.record(1e-7, -1, "orphan_irq", args_digest(3), "note")
    back = parse(trace.render())
    assert back.config_hash == "cafe0123cafe0123"
    assert back.events == trace.events   # incl. exact float times


def test_empty_trace_round_trips():
    back = parse(Trace("beef").render())
    assert back.events == []
    assert back.config_hash == "beef"


@pytest.mark.parametrize("text", [
    "", "nonsense\n", "# other-format 1\n", "# vfpga-trace 2\n"])
def test_parse_rejects_foreign_text(text):
    with pytest.raises(FormatError):
        parse(text)


def test_parse_rejects_malformed_rows():
    good = Trace("x")
    good.record(0.0, 1, "attach", "d", "ok")
    text = good.render() + "0\tonly-two\n"
    with pytest.raises(FormatError, match="malformed"):
        parse(text)


def test_args_digest_is_stable_and_injective_enough():
    assert args_digest(1, "a") == args_digest(1, "a")
    assert args_digest(1, "a") != args_digest("a", 1)
    assert args_digest(b"12") != args_digest("12")   # bytes are not text
    assert args_digest(1, 23) != args_digest(12, 3)  # no field bleed
    assert len(args_digest()) == 16


@settings(max_examples=60, deadline=None)
@given(times=st.lists(st.floats(allow_nan=False, allow_infinity=False,
                                min_value=0, max_value=1e9), max_size=10))
def test_times_survive_text_round_trip(times):
    trace = Trace("h")
    for i, t in enumerate(times):
        trace.record(t, i, "sleep", "d", "ok")
    assert [e.time for e in parse(trace.render()).events] == times
