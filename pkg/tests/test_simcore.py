import random

import pytest
from hypothesis import given, settings, strategies as st

from smecsim.simcore import ContractViolation, Simulator, check_time, ms, rng_stream, seconds


def test_same_time_events_run_in_insertion_order():
    sim = Simulator()
    seen = []
    sim.schedule(10, "a", seen.append, "a")
    sim.schedule(10, "b", seen.append, "b")
    sim.step()
    assert seen == ["a"] and sim.now == 10
    sim.step()
    assert seen == ["a", "b"]


def test_earliest_event_first():
    sim = Simulator()
    seen = []
    sim.schedule(5, "x", seen.append, 5)
    sim.schedule(3, "y", seen.append, 3)
    sim.step()
    assert seen == [3] and sim.now == 3


def test_schedule_in_the_past_is_rejected():
    sim = Simulator()
    sim.schedule(100, "tick")
    sim.step()
    with pytest.raises(ContractViolation):
        sim.schedule(50, "late")


def test_run_until_empty_queue_advances_clock():
    sim = Simulator()
    sim.run_until(1000)
    assert sim.now == 1000


def test_run_until_fires_event_at_limit_once():
    sim = Simulator()
    seen = []
    sim.schedule(500, "e", seen.append, 1)
    sim.run_until(500)
    sim.run_until(500)
    assert seen == [1] and sim.now == 500


def test_events_scheduled_during_run_are_processed():
    sim = Simulator()
    seen = []

    def chain(n):
        seen.append((sim.now, n))
        if n < 3:
            sim.schedule_in(10, "chain", chain, n + 1)

    sim.schedule(0, "chain", chain, 0)
    sim.run_until(25)
    assert seen == [(0, 0), (10, 1), (20, 2)]
    assert sim.now == 25 and len(sim) == 1


def test_time_bounds():
    assert check_time(0) == 0
    with pytest.raises(OverflowError):
        check_time(2**63)
    with pytest.raises(OverflowError):
        check_time(-1)
    with pytest.raises(TypeError):
        check_time(1.5)
    assert ms(2.5) == 2500 and seconds(1) == 1_000_000


def _random_run(seed):
    sim = Simulator(seed)
    rng = sim.rng("load")
    for i in range(200):
        sim.schedule(rng.randint(0, 1000), "ev", None, tag=i)
    sim.run_until(2000)
    return sim.trace_digest()


def test_trace_digest_is_reproducible():
    assert _random_run(7) == _random_run(7)
    assert _random_run(7) != _random_run(8)


def test_rng_streams_are_independent_of_each_other():
    a1 = [rng_stream(3, "a").random() for _ in range(3)]
    # creating and consuming another stream does not perturb "a"
    b = rng_stream(3, "b")
    [b.random() for _ in range(10)]
    a2 = [rng_stream(3, "a").random() for _ in range(3)]
    assert a1 == a2
    assert rng_stream(3, "a").random() != rng_stream(3, "b").random()


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=60))
def test_processing_order_is_time_then_insertion(times):
    sim = Simulator(keep_trace=True)
    for i, t in enumerate(times):
        sim.schedule(t, "e", tag=i)
    sim.run_until(10_000)
    order = [tag for _t, _s, _k, tag in sim.trace]
    assert order == sorted(range(len(times)), key=lambda i: (times[i], i))
    clock = [t for t, *_ in sim.trace]
    assert clock == sorted(clock)
