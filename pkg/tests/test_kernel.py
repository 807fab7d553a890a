import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from castsim.kernel import EventKind, SchedulingError, Simulator, make_rng, seconds

K = EventKind.CLIENT_TICK


def test_equal_time_dispatches_in_insertion_order():
    sim = Simulator()
    seen = []
    sim.schedule(5, K, lambda ev: seen.append("E"))
    sim.schedule(5, K, lambda ev: seen.append("E'"))
    sim.run_until(10)
    assert seen == ["E", "E'"]


def test_handler_observes_fire_time():
    sim = Simulator()
    at = []
    sim.schedule(3, K, lambda ev: at.append(sim.now()))
    sim.run_until(10)
    assert at == [3]
    assert sim.now() == 10


def test_empty_queue_advances_clock():
    sim = Simulator()
    assert sim.run_until(100) == 0
    assert sim.now() == 100


def test_run_until_is_inclusive():
    sim = Simulator()
    for t in (1, 2, 3):
        sim.schedule(t, K, lambda ev: None)
    assert sim.run_until(2) == 2
    assert sim.run_until(3) == 1


def test_events_scheduled_at_now_fire_in_same_call():
    sim = Simulator()
    count = [0]

    def chain(ev):
        count[0] += 1
        if count[0] < 5:
            sim.schedule(sim.now(), K, chain)

    sim.schedule(7, K, chain)
    assert sim.run_until(7) == 5


def test_past_scheduling_fails_loudly():
    sim = Simulator()
    sim.run_until(10)
    with pytest.raises(SchedulingError):
        sim.schedule(9, K, lambda ev: None)
    with pytest.raises(SchedulingError):
        sim.run_until(5)


def test_cancelled_event_is_skipped():
    sim = Simulator()
    hit = []
    ev = sim.schedule(4, K, lambda e: hit.append(1))
    ev.cancel()
    assert sim.run_until(10) == 0
    assert hit == []


def _random_run(seed):
    sim = Simulator(seed=seed, trace=True)
    rng = sim.rng("arrival-jitter")

    def spawn(ev):
        if ev.payload > 0:
            for _ in range(2):
                sim.schedule(sim.now() + int(rng.integers(0, 20)), K, spawn, ev.payload - 1)

    for _ in range(10):
        sim.schedule(int(rng.integers(0, 50)), K, spawn, 6)
    sim.run_until(10_000)
    return sim.event_log


def test_random_event_storm_replays_identically():
    a, b = _random_run(7), _random_run(7)
    assert len(a) > 1000
    assert a == b


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 200), min_size=1, max_size=60))
def test_clock_never_moves_backwards(times):
    sim = Simulator()
    observed = []
    for t in times:
        sim.schedule(t, K, lambda ev: observed.append(sim.now()))
    sim.run_until(300)
    assert observed == sorted(observed)
    assert len(observed) == len(times)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=2, max_size=40))
def test_dispatch_order_is_fire_then_seq(times):
    sim = Simulator(trace=True)
    for t in times:
        sim.schedule(t, K, lambda ev: None)
    sim.run_until(100)
    keys = [(t, s) for t, s, _ in sim.event_log]
    assert keys == sorted(keys)
    assert len(set(keys)) == len(keys)


def test_named_streams_are_stable_and_independent():
    a = make_rng(42, "mobility").random(5)
    b = make_rng(42, "mobility").random(5)
    c = make_rng(42, "channel").random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    # a stream's draws do not depend on other streams being used first
    sim = Simulator(seed=42)
    sim.rng("channel").random(100)
    np.testing.assert_array_equal(sim.rng("mobility").random(5), a)


def test_seconds_conversion():
    assert seconds(1.0) == 1000
    assert seconds(0.0005) == 0 or seconds(0.0005) == 1
    assert seconds(2.5) == 2500
