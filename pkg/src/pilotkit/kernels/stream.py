"""In-process bounded message broker and the stream producer/consumer kernels."""
from __future__ import annotations

import threading
import time
from collections import deque
from typing import Deque, Tuple

from ..core import EntityType, EventLog, format_detail

DEFAULT_BOUND = 10_000


class Broker:
    """Bounded FIFO of ``(message id, publish timestamp)``.

    Every publish, drop and consume is written to the event log under the
    broker's id so that throughput and latency can be recomputed from logs.
    """

    def __init__(self, broker_id: str, log: EventLog, bound: int = DEFAULT_BOUND, producers: int = 1):
        if bound < 1:
            raise ValueError("broker bound must be >= 1")
        self.id = broker_id
        self.log = log
        self.bound = bound
        self.queue: Deque[Tuple[int, int]] = deque()
        self.produced = 0
        self.consumed = 0
        self.dropped = 0
        self._producers_left = producers
        self.producers_started = 0
        self._lock = threading.Lock()
        self.latencies = []

    @property
    def producers_done(self) -> bool:
        return self._producers_left <= 0

    def publish(self, msg_id: int, ts=None):
        with self._lock:
            rec = self.log.record(EntityType.EXPERIMENT, self.id, "MSG_PRODUCED",
                                  format_detail(msg=msg_id), ts=ts)
            self.produced += 1
            if len(self.queue) >= self.bound:
                self.dropped += 1
                self.log.record(EntityType.EXPERIMENT, self.id, "MSG_DROPPED",
                                format_detail(msg=msg_id), ts=rec.timestamp_ms)
                return False
            self.queue.append((msg_id, rec.timestamp_ms))
            return True

    def producer_finished(self):
        with self._lock:
            self._producers_left -= 1

    def take(self, consumer: str, max_batch=None, ts=None) -> int:
        with self._lock:
            n = len(self.queue) if max_batch is None else min(len(self.queue), int(max_batch))
            for _ in range(n):
                msg_id, produced_at = self.queue.popleft()
                rec = self.log.record(EntityType.EXPERIMENT, self.id, "MSG_CONSUMED",
                                      format_detail(msg=msg_id, consumer=consumer), ts=ts)
                self.latencies.append(rec.timestamp_ms - produced_at)
            self.consumed += n
            return n

    def drained(self) -> bool:
        with self._lock:
            return self.producers_done and not self.queue


def _broker(ctx) -> Broker:
    return ctx.resources["brokers"][ctx.params["broker"]]


def stream_produce(ctx):
    broker = _broker(ctx)
    rate = float(ctx.params["rate"])
    n = int(round(rate * float(ctx.params["duration"])))
    base = int(ctx.params.get("msg_base", 0))
    if ctx.sim is not None:
        t0 = ctx.sim.now
        broker.producers_started += 1
        for i in range(n):
            ctx.sim.schedule_at(t0 + int(round(i * 1000.0 / rate)), _sim_publish, broker, base + i, ctx.sim)
        ctx.sim.schedule_at(t0 + int(round(float(ctx.params["duration"]) * 1000)),
                            broker.producer_finished)
        return
    start = time.perf_counter()
    try:
        for i in range(n):
            delay = start + i / rate - time.perf_counter()
            if delay > 0 and ctx.cancel.wait(delay):
                return
            broker.publish(base + i)
    finally:
        broker.producer_finished()


def _sim_publish(broker, i, sim):
    broker.publish(i, ts=sim.now)


def stream_consume(ctx):
    broker = _broker(ctx)
    interval = int(ctx.params.get("batch_interval_ms", 100))
    max_batch = ctx.params.get("max_batch")
    if ctx.sim is not None:
        ctx.sim_deferred = True
        _sim_poll(ctx, broker, interval, max_batch)
        return
    while not ctx.cancel.is_set():
        ctx.cancel.wait(interval / 1000.0)
        broker.take(ctx.unit_id, max_batch)
        if broker.drained():
            return


def _sim_poll(ctx, broker, interval, max_batch, take=False):
    if take:
        broker.take(ctx.unit_id, max_batch, ts=ctx.sim.now)
    if broker.drained():
        ctx.sim_complete()
        return
    # while no producer has started, idle polls must not keep the simulation alive
    idle = broker.producers_started == 0 and not broker.queue
    ctx.sim.schedule_in(interval, _sim_poll, ctx, broker, interval, max_batch, True, daemon=idle)
