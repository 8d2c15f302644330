"""FTP3 traffic: Poisson arrivals of fixed-size packets, FIFO buffers, latency bookkeeping."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class TrafficConfig:
    offered_load: float = 21e6  # bit/s per MT
    packet_size: int = 600  # bytes

    def __post_init__(self):
        if self.offered_load < 0 or self.packet_size <= 0:
            raise ValueError("offered_load must be >= 0 and packet_size > 0")

    @property
    def packet_rate(self) -> float:
        return self.offered_load / (8.0 * self.packet_size)


class Packet(NamedTuple):
    id: int
    arrival_time: float
    size: int


class PacketRecord(NamedTuple):
    id: int
    arrival_time: float
    completion_time: float

    @property
    def latency(self) -> float:
        return self.completion_time - self.arrival_time


def ftp3_arrivals(config: TrafficConfig, dt: float, rng: np.random.Generator, t0: float = 0.0,
                  first_id: int = 0) -> list[Packet]:
    """Packets arriving in ``[t0, t0 + dt)``: Poisson count, uniform sorted timestamps."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = rng.poisson(config.packet_rate * dt)
    times = np.sort(t0 + rng.uniform(0.0, dt, size=n))
    return [Packet(first_id + i, float(t), config.packet_size) for i, t in enumerate(times)]


def arrivals_batch(config: TrafficConfig, n_steps: int, dt: float, n_mt: int,
                   rng: np.random.Generator, t0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Arrivals for ``n_mt`` terminals over ``n_steps`` consecutive steps.

    Same law as :func:`ftp3_arrivals` applied per step and terminal. Returns
    ``(mt, time)`` sorted by terminal then time.
    """
    counts = rng.poisson(config.packet_rate * dt, size=(n_steps, n_mt))
    step, mt = np.nonzero(counts)
    reps = counts[step, mt]
    step = np.repeat(step, reps)
    mt = np.repeat(mt, reps)
    t = t0 + (step + rng.uniform(0.0, 1.0, size=step.size)) * dt
    order = np.lexsort((t, mt))
    return mt[order], t[order]


@dataclass
class PacketBuffer:
    queue: deque = field(default_factory=deque)  # [id, arrival_time, remaining_bytes]
    total_backlog: int = 0

    def push(self, packets) -> None:
        for p in packets:
            if self.queue and p.arrival_time < self.queue[-1][1]:
                raise ValueError("arrivals must be non-decreasing")
            self.queue.append([p.id, p.arrival_time, p.size])
            self.total_backlog += p.size

    def __len__(self):
        return len(self.queue)


def drain(buffer: PacketBuffer, nbytes: int, now: float) -> tuple[list[PacketRecord], PacketBuffer]:
    """Remove up to ``nbytes`` from the head of the queue, completing packets in order."""
    if nbytes < 0:
        raise ValueError("bytes must be non-negative")
    done = []
    left = int(nbytes)
    while left > 0 and buffer.queue:
        head = buffer.queue[0]
        take = min(head[2], left)
        head[2] -= take
        left -= take
        buffer.total_backlog -= take
        if head[2] == 0:
            buffer.queue.popleft()
            done.append(PacketRecord(head[0], head[1], now))
    return done, buffer


class LatencyStats(NamedTuple):
    mean: float
    p50: float
    p95: float
    p99: float


def nearest_rank(sorted_values: np.ndarray, pct: float) -> float:
    n = len(sorted_values)
    return float(sorted_values[max(math.ceil(pct / 100.0 * n), 1) - 1])


def latency_stats(latencies) -> LatencyStats | None:
    """Mean and nearest-rank percentiles; ``None`` when there is no data."""
    if not isinstance(latencies, np.ndarray):
        latencies = [r.latency if isinstance(r, PacketRecord) else r for r in latencies]
    x = np.sort(np.asarray(latencies, dtype=float))
    if x.size == 0:
        return None
    return LatencyStats(float(x.mean()), nearest_rank(x, 50), nearest_rank(x, 95), nearest_rank(x, 99))
