import threading
import time

import numpy as np
import pytest

from pdmp.flow import FlowSpec
from pdmp.sampler import (MORPHED, PRIOR, PriorSampler, ProducerError, SampleBucket, SampleSource,
                          default_workers, draw_sample, start_producers, stop_and_join)

LIMITS = [[0.0, 1.0], [-2.0, 2.0]]


def zero_field(Y):
    return np.zeros_like(Y)


def test_prior_streams():
    a, b = PriorSampler(LIMITS, 3), PriorSampler(LIMITS, 3)
    assert np.array_equal(a.draw_batch(50), b.draw_batch(50))
    X = PriorSampler(LIMITS, 3).draw_batch(2000)
    assert np.all((X >= [0, -2]) & (X <= [1, 2]))
    root = PriorSampler(LIMITS, 3)
    assert np.array_equal(root.substream(0).draw_batch(10), PriorSampler(LIMITS, 3).draw_batch(10))
    assert not np.array_equal(root.substream(1).draw_batch(10), root.substream(2).draw_batch(10))
    assert not np.array_equal(root.fallback().draw_batch(10), root.substream(0).draw_batch(10))


def test_default_workers_positive():
    assert default_workers() >= 1


def test_bucket_fifo_and_overflow():
    with pytest.raises(ValueError):
        SampleBucket(0)
    b = SampleBucket(3)
    assert b.push_many([np.array([i, 0.0]) for i in range(5)]) == 3
    assert (b.pushed, b.dropped, len(b)) == (3, 2, 3)
    assert b.try_pop()[0] == 0 and b.try_pop()[0] == 1
    assert b.push([9, 9]) and b.push([8, 8]) and not b.push([7, 7])
    assert len(b) == 3 and b.dropped == 3


def test_draw_sample_contracts():
    prior = PriorSampler(LIMITS, 0)
    b = SampleBucket(4)
    q, src = draw_sample(b, prior)
    assert src == PRIOR and 0 <= q[0] <= 1 and -2 <= q[1] <= 2
    c = np.array([0.25, 0.5])
    b.push(c)
    q, src = draw_sample(b, prior)
    assert src == MORPHED and np.array_equal(q, c) and len(b) == 0
    assert (b.popped_morphed, b.popped_prior) == (1, 1)


def test_epsilon_mixing_fraction():
    prior = PriorSampler(LIMITS, 1)
    b = SampleBucket(10_000)
    b.push_many(list(np.full((10_000, 2), 0.5)))
    src = [draw_sample(b, prior, epsilon=0.2)[1] for _ in range(5000)]
    assert abs(np.mean([s == PRIOR for s in src]) - 0.2) < 0.03


def test_zero_field_fills_with_exact_prior_draws():
    prior = PriorSampler(LIMITS, 5)
    b = SampleBucket(512)
    h = start_producers(b, prior, zero_field, FlowSpec(), workers=1, batch_size=128)
    deadline = time.time() + 5
    while len(b) < 512 and time.time() < deadline:
        time.sleep(0.005)
    stats = stop_and_join(h)
    got = np.array([b.try_pop() for _ in range(512)])
    assert np.array_equal(got, PriorSampler(LIMITS, 5).draw_batch(512))
    assert stats.pushed == 512 and stats.popped_morphed == 0


def test_stop_before_start_pushes_nothing():
    stop = threading.Event()
    stop.set()
    b = SampleBucket(64)
    h = start_producers(b, PriorSampler(LIMITS, 0), zero_field, workers=2, batch_size=8, stop=stop)
    stats = stop_and_join(h)
    assert stats.pushed == 0 and len(b) == 0


def test_immediate_stop_has_no_pops():
    h = start_producers(SampleBucket(64), PriorSampler(LIMITS, 0), zero_field, workers=1, batch_size=8)
    stats = stop_and_join(h)
    assert stats.popped_morphed == 0 and stats.popped_prior == 0


def test_invalid_arguments():
    b, p = SampleBucket(8), PriorSampler(LIMITS, 0)
    with pytest.raises(ValueError):
        start_producers(b, p, zero_field, workers=0)
    with pytest.raises(ValueError):
        start_producers(b, p, zero_field, workers=1, batch_size=0)
    with pytest.raises(ValueError):
        start_producers(b, p, zero_field, workers=1, limit_policy="wrap")


def test_producer_error_is_surfaced():
    def broken(Y):
        raise RuntimeError("net exploded")

    h = start_producers(SampleBucket(64), PriorSampler(LIMITS, 0), broken, workers=2, batch_size=8)
    for t in h.threads:
        t.join(2)
    assert h.failed and h.stop.is_set()
    with pytest.raises(ProducerError):
        stop_and_join(h)


@pytest.mark.parametrize("policy", ["clamp", "reject"])
def test_limit_policies_keep_samples_inside(policy):
    def outward(Y):
        return -np.ones_like(Y) * 50.0   # descent pushes every sample up and to the right

    b = SampleBucket(4096)
    h = start_producers(b, PriorSampler(LIMITS, 2), outward, FlowSpec(1.0, 10, 100.0), workers=1,
                        batch_size=256, limit_policy=policy)
    time.sleep(0.2)
    stop_and_join(h)
    X = np.array(list(b._q)).reshape(-1, 2)
    assert np.all((X >= [0, -2]) & (X <= [1, 2]))
    if policy == "clamp":
        assert len(X) > 0 and np.all(X == [1.0, 2.0])
    else:
        assert len(X) == 0


def test_counters_conserved_under_concurrency(divider_field):
    b = SampleBucket(1024)
    prior = PriorSampler([[0, 1], [0, 1]], 7)
    src = SampleSource(prior.fallback(), b)
    h = start_producers(b, prior, divider_field, FlowSpec(), workers=2, batch_size=64)
    sizes = []
    for i in range(20_000):
        src.draw()
        if i % 97 == 0:
            sizes.append(len(b))
    stats = stop_and_join(h)
    assert stats.popped_morphed + stats.popped_prior == 20_000 == src.draws
    assert stats.popped_morphed <= stats.pushed
    assert max(sizes) <= 1024
    assert len(b) == stats.pushed - stats.popped_morphed


def test_stop_returns_within_one_batch(divider_field):
    b = SampleBucket(1 << 20)
    h = start_producers(b, PriorSampler([[0, 1], [0, 1]], 0), divider_field, FlowSpec(), workers=2, batch_size=256)
    time.sleep(0.3)
    # time for one batch, measured on the same field
    t = time.perf_counter()
    from pdmp.flow import integrate
    integrate(divider_field, np.random.default_rng(0).uniform(size=(256, 2)), FlowSpec())
    one_batch = time.perf_counter() - t
    t = time.perf_counter()
    stop_and_join(h)
    # two producers share one interpreter, so allow both to finish their batch
    assert time.perf_counter() - t < 4 * one_batch + 0.05


def test_bucket_stays_full_without_consumer(divider_field):
    b = SampleBucket(4096)
    h = start_producers(b, PriorSampler([[0, 1], [0, 1]], 0), divider_field, FlowSpec(), workers=2, batch_size=256)
    t0 = time.perf_counter()
    full = []
    while (t := time.perf_counter() - t0) < 1.0:
        if t > 0.2:
            full.append(len(b) == b.capacity)
        time.sleep(0.005)
    stop_and_join(h)
    assert np.mean(full) > 0.9


def test_morphed_fraction_at_planner_pace(divider_field):
    b = SampleBucket(4096)
    prior = PriorSampler([[0, 1], [0, 1]], 3)
    src = SampleSource(prior.fallback(), b)
    h = start_producers(b, prior, divider_field, FlowSpec(), workers=1, batch_size=256)
    for _ in range(10_000):
        src.draw()
        time.sleep(1e-4)   # stand-in for one planner iteration
    stop_and_join(h)
    times, morphed, samples = src.log()
    assert len(samples) == 10_000
    assert morphed[times > 0.2].mean() >= 0.9
