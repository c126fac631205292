"""Background diffeomorphic sampler feeding the planner thread.

Producers draw prior batches, push them through the flow and offer the
results to a bounded bucket.  The planner pops without blocking and falls
back to the prior when the bucket is empty.
"""
from __future__ import annotations

import os
import threading
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .flow import FlowSpec, integrate

MORPHED = "morphed"
PRIOR = "prior"


def default_workers() -> int:
    """Available parallelism minus the planner thread, but at least one."""
    n = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    return max(1, n - 1)


FALLBACK_STREAM = 2**31 - 1


class PriorSampler:
    """Uniform draws over a joint-limit box from a seeded stream.

    Stream 0 is the root stream of ``seed``.  Producer ``i`` draws from
    stream ``i``, so with one producer the morphed sequence is the image of
    exactly the draws a plain uniform planner with the same seed would see.
    The consumer's fallback uses a separate reserved stream.
    """

    def __init__(self, limits, seed=0, stream: int = 0):
        self.limits = np.asarray(limits, dtype=float)
        self.low, self.high = self.limits[:, 0], self.limits[:, 1]
        self.seed = seed
        self.stream = stream
        key = () if stream == 0 else (stream,)
        self.rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))

    def draw(self) -> np.ndarray:
        return self.rng.uniform(self.low, self.high)

    def draw_batch(self, n: int) -> np.ndarray:
        return self.rng.uniform(self.low, self.high, size=(n, len(self.low)))

    def substream(self, index: int) -> "PriorSampler":
        return PriorSampler(self.limits, self.seed, stream=index)

    def fallback(self) -> "PriorSampler":
        return PriorSampler(self.limits, self.seed, stream=FALLBACK_STREAM)


@dataclass(frozen=True)
class SamplerStats:
    pushed: int = 0
    popped_morphed: int = 0
    popped_prior: int = 0
    dropped: int = 0

    @property
    def draws(self) -> int:
        return self.popped_morphed + self.popped_prior


class SampleBucket:
    """Bounded multi-producer / single-consumer FIFO of configurations."""

    def __init__(self, capacity: int = 4096):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._q = deque()
        self._lock = threading.Lock()  # producers only; the consumer pops lock-free
        self.pushed = 0
        self.dropped = 0
        self.popped_morphed = 0
        self.popped_prior = 0

    def __len__(self):
        return len(self._q)

    def free(self) -> int:
        return self.capacity - len(self._q)

    def push_many(self, batch) -> int:
        """Append as many rows as fit; the rest are dropped. Returns the number kept."""
        with self._lock:
            k = max(0, min(len(batch), self.capacity - len(self._q)))
            self._q.extend(batch[:k])
            self.pushed += k
            self.dropped += len(batch) - k
        return k

    def push(self, q) -> bool:
        return self.push_many([np.asarray(q, dtype=float)]) == 1

    def try_pop(self):
        try:
            return self._q.popleft()
        except IndexError:
            return None

    def stats(self) -> SamplerStats:
        return SamplerStats(self.pushed, self.popped_morphed, self.popped_prior, self.dropped)


class ProducerError(RuntimeError):
    pass


class SamplerHandle:
    def __init__(self, bucket, stop, batch_size):
        self.bucket = bucket
        self.stop = stop
        self.batch_size = batch_size
        self.threads = []
        self.error: BaseException | None = None

    @property
    def producers(self) -> int:
        return len(self.threads)

    @property
    def failed(self) -> bool:
        return self.error is not None


def _produce(handle, prior, field, spec, limit_policy, backoff):
    bucket, stop, n = handle.bucket, handle.stop, handle.batch_size
    lo, hi = prior.low, prior.high
    try:
        while not stop.is_set():
            if bucket.free() < n:
                stop.wait(backoff)
                continue
            Y = integrate(field, prior.draw_batch(n), spec)
            if limit_policy == "clamp":
                Y = np.clip(Y, lo, hi)
            else:
                Y = Y[np.all((Y >= lo) & (Y <= hi), axis=1)]
            if stop.is_set():
                break
            bucket.push_many(list(Y))
    except BaseException as exc:  # surfaced through the handle
        handle.error = exc
        stop.set()


def start_producers(bucket: SampleBucket, prior: PriorSampler, field, spec: FlowSpec | None = None,
                    workers: int | None = None, batch_size: int = 256, limit_policy: str = "clamp",
                    stop: threading.Event | None = None, backoff: float = 0.002) -> SamplerHandle:
    """Spawn ``workers`` daemon producer threads, each with its own prior stream."""
    workers = default_workers() if workers is None else workers
    if workers < 1 or batch_size < 1:
        raise ValueError("workers and batch_size must be >= 1")
    if limit_policy not in ("clamp", "reject"):
        raise ValueError(f"unknown limit policy {limit_policy!r}")
    spec = spec or FlowSpec()
    handle = SamplerHandle(bucket, stop or threading.Event(), batch_size)
    for i in range(workers):
        t = threading.Thread(target=_produce, name=f"pdmp-producer-{i}", daemon=True,
                             args=(handle, prior.substream(i), field, spec, limit_policy, backoff))
        handle.threads.append(t)
        t.start()
    return handle


def draw_sample(bucket: SampleBucket | None, prior: PriorSampler, epsilon: float = 0.0):
    """Non-blocking draw: a morphed configuration if one is queued, else a prior draw."""
    if bucket is not None and (epsilon <= 0.0 or prior.rng.random() >= epsilon):
        q = bucket.try_pop()
        if q is not None:
            bucket.popped_morphed += 1
            return q, MORPHED
    if bucket is not None:
        bucket.popped_prior += 1
    return prior.draw(), PRIOR


def stop_and_join(handle: SamplerHandle | None, timeout: float | None = None) -> SamplerStats:
    if handle is None:
        return SamplerStats()
    handle.stop.set()
    for t in handle.threads:
        t.join(timeout)
    if handle.error is not None:
        raise ProducerError("producer thread failed") from handle.error
    return handle.bucket.stats()


class SampleSource:
    """What a planner draws from: bucket with prior fallback, or the prior alone.

    Every draw is logged with its time and origin so that feasibility and
    draw-source curves can be computed after the run.
    """

    def __init__(self, prior: PriorSampler, bucket: SampleBucket | None = None, epsilon: float = 0.0,
                 record: bool = True):
        self.prior = prior
        self.bucket = bucket
        self.epsilon = epsilon
        self.record = record
        self.t0 = time.perf_counter()
        self.times = []
        self.morphed_flags = []
        self.samples = []
        self.n_morphed = 0
        self.n_prior = 0

    def reset_clock(self):
        self.t0 = time.perf_counter()

    def draw(self):
        q, src = draw_sample(self.bucket, self.prior, self.epsilon)
        m = src == MORPHED
        if m:
            self.n_morphed += 1
        else:
            self.n_prior += 1
        if self.record:
            self.times.append(time.perf_counter() - self.t0)
            self.morphed_flags.append(m)
            self.samples.append(q)
        return q, src

    __call__ = draw

    @property
    def draws(self) -> int:
        return self.n_morphed + self.n_prior

    def stats(self) -> SamplerStats:
        if self.bucket is None:
            return SamplerStats(popped_prior=self.n_prior)
        return self.bucket.stats()

    def log(self):
        """(times, morphed flags, samples) as arrays."""
        n = len(self.prior.low)
        return (np.asarray(self.times), np.asarray(self.morphed_flags, dtype=bool),
                np.asarray(self.samples).reshape(-1, n))


class CallableSource(SampleSource):
    """Adapts a bare callable to the SampleSource interface. The callable returns
    either ``(q, source)`` or just ``q``, which then counts as a prior draw."""

    def __init__(self, fn, limits):
        super().__init__(PriorSampler(limits))
        self._fn = fn

    def draw(self):
        out = self._fn()
        if isinstance(out, tuple) and len(out) == 2 and isinstance(out[1], str):
            q, src = out
        else:
            q, src = out, PRIOR
        q = np.asarray(q, dtype=float)
        m = src == MORPHED
        self.n_morphed += m
        self.n_prior += not m
        if self.record:
            self.times.append(time.perf_counter() - self.t0)
            self.morphed_flags.append(m)
            self.samples.append(q)
        return q, src

    __call__ = draw

    def stats(self) -> SamplerStats:
        return SamplerStats(popped_morphed=self.n_morphed, popped_prior=self.n_prior)
