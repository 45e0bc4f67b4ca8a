import pytest
from hypothesis import given, strategies as st

from vfpga.sim import EventQueue


def test_empty_queue():
    q = EventQueue()
    assert q.now == 0.0
    assert not q
    assert len(q) == 0
    assert q.next_time() is None
    assert q.step() is False


def test_fires_in_time_order():
    q = EventQueue()
    seen = []
    q.schedule(3.0, seen.append, "c")
    q.schedule(1.0, seen.append, "a")
    q.schedule(2.0, seen.append, "b")
    q.run_until_idle()
    assert seen == ["a", "b", "c"]
    assert q.now == 3.0


def test_same_time_is_fifo():
    # ties broken by insertion order, never by callback identity
    q = EventQueue()
    seen = []
    for tag in range(20):
        q.schedule(1.0, seen.append, tag)
    q.run_until_idle()
    assert seen == list(range(20))


def test_schedule_in_past_rejected():
    q = EventQueue()
    q.schedule(5.0, lambda: None)
    q.run_until_idle()
    with pytest.raises(ValueError):
        q.schedule(4.999, lambda: None)


def test_schedule_after_is_relative():
    q = EventQueue()
    at = []
    q.schedule(2.0, lambda: q.schedule_after(0.5, lambda: at.append(q.now)))
    q.run_until_idle()
    assert at == [2.5]


def test_zero_delay_event_runs_after_current():
    q = EventQueue()
    order = []

    def first():
        order.append("first")
        q.schedule_after(0.0, lambda: order.append("chained"))

    q.schedule(1.0, first)
    q.schedule(1.0, lambda: order.append("second"))
    q.run_until_idle()
    # the chained event lands behind everything already queued for t=1.0
    assert order == ["first", "second", "chained"]


def test_step_returns_false_when_idle():
    q = EventQueue()
    q.schedule(1.0, lambda: None)
    assert q.step() is True
    assert q.step() is False


def test_run_until_deadline():
    q = EventQueue()
    seen = []
    for t in (1.0, 2.0, 3.0):
        q.schedule(t, seen.append, t)
    q.run_until(2.0)
    assert seen == [1.0, 2.0]
    assert q.now == 2.0
    q.run_until_idle()
    assert seen == [1.0, 2.0, 3.0]


@given(st.lists(st.floats(min_value=0.0, max_value=1e6,
                          allow_nan=False, allow_infinity=False),
                min_size=1, max_size=50))
def test_delivery_respects_time_then_insertion(times):
    q = EventQueue()
    seen = []
    for i, t in enumerate(times):
        q.schedule(t, seen.append, (t, i))
    q.run_until_idle()
    assert seen == sorted(seen, key=lambda p: (p[0], p[1]))
    assert q.now == max(times)
