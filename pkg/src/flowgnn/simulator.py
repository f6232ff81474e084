"""Deterministic packet-level discrete-event simulator.

Produces per-flow ground-truth labels (mean delay, delay variance, loss
fraction) for a routed sample. Ports are output queues of directed links;
each port runs one scheduling policy (FIFO, strict priority, weighted fair
queuing, or deficit round robin) over its queues and drops arrivals that
would overflow a queue's buffer (drop tail).

Determinism: all randomness derives from the configured seed, and
simultaneous events are ordered by (time, kind rank, sequence number) with
ranks service=0, arrival=1, source=2.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SimulationError
from .netgraph import (
    PACKET_BINOMIAL_N,
    PACKET_MEAN_BITS,
    PACKET_MIN_BITS,
    Flow,
    FlowLabels,
    Sample,
    Topology,
    TrafficDescriptor,
)

__all__ = [
    "SimConfig",
    "FlowStats",
    "PortState",
    "generate_traffic",
    "scheduler_dequeue",
    "pop_packet",
    "simulate",
    "run_simulation",
    "label_sample",
    "mm1_reference",
]

RANK_SERVICE = 0
RANK_ARRIVAL = 1
RANK_SOURCE = 2

# Largest-weight queue replenishes by the minimum packet size per round.
# Keeping the quantum at or below every packet size means a visit serves at
# most one packet, so equal weights degenerate to exact round robin.
DRR_QUANTUM_BITS = 300.0


@dataclass
class SimConfig:
    duration_s: float
    warmup_s: float | None = None
    seed: int = 0
    reference_packet_bits: float = PACKET_MEAN_BITS
    trace_path: str | None = None

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigError(f"duration must be positive, got {self.duration_s}")
        if self.warmup_s is None:
            self.warmup_s = 0.1 * self.duration_s
        if not 0 <= self.warmup_s < self.duration_s:
            raise ConfigError(
                f"warmup {self.warmup_s} must lie within [0, duration {self.duration_s})"
            )


@dataclass
class FlowStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    in_flight: int = 0
    sum_delay: float = 0.0
    sum_delay_sq: float = 0.0


class _Packet:
    __slots__ = ("flow_id", "size_bits", "created_s", "hop", "counted", "path", "wfq_tag")

    def __init__(self, flow_id, size_bits, created_s, counted, path):
        self.flow_id = flow_id
        self.size_bits = size_bits
        self.created_s = created_s
        self.hop = 0
        self.counted = counted
        self.path = path
        self.wfq_tag = 0.0


class PortState:
    """Mutable per-port state: queue contents plus scheduler bookkeeping."""

    __slots__ = (
        "policy",
        "queues",
        "occupancy",
        "buffers",
        "weights",
        "quanta",
        "busy",
        "current",
        "virtual_time",
        "last_finish",
        "deficit",
        "drr_ptr",
        "drr_visited",
    )

    def __init__(self, policy, buffers, weights):
        n = len(buffers)
        self.policy = policy
        self.queues = [deque() for _ in range(n)]
        self.occupancy = [0.0] * n
        self.buffers = list(buffers)
        self.weights = list(weights)
        max_w = max(weights)
        self.quanta = [DRR_QUANTUM_BITS * w / max_w for w in weights]
        self.busy = False
        self.current = None
        self.virtual_time = 0.0
        self.last_finish = [0.0] * n
        self.deficit = [0.0] * n
        self.drr_ptr = 0
        self.drr_visited = [False] * n

    def total_packets(self) -> int:
        return sum(len(q) for q in self.queues)

    def reset_scheduler_state(self) -> None:
        n = len(self.queues)
        self.virtual_time = 0.0
        self.last_finish = [0.0] * n
        self.deficit = [0.0] * n
        self.drr_ptr = 0
        self.drr_visited = [False] * n


def scheduler_dequeue(policy: str, port: PortState) -> int | None:
    """Pick the queue to serve next, or None when the port has no packets.

    FIFO serves its single queue; SP the lowest non-empty priority index;
    WFQ the non-empty queue whose head carries the smallest virtual finish
    tag (self-clocked fair queuing); DRR round-robins with per-queue
    deficits replenished by weight-proportional quanta.
    """
    if port.total_packets() == 0:
        return None
    if policy == "fifo" or len(port.queues) == 1:
        for i, q in enumerate(port.queues):
            if q:
                return i
        return None
    if policy == "sp":
        for i, q in enumerate(port.queues):
            if q:
                return i
        return None
    if policy == "wfq":
        best = None
        best_tag = math.inf
        for i, q in enumerate(port.queues):
            if q and q[0].wfq_tag < best_tag:
                best = i
                best_tag = q[0].wfq_tag
        return best
    if policy == "drr":
        n = len(port.queues)
        while True:
            q = port.drr_ptr
            if port.queues[q]:
                if not port.drr_visited[q]:
                    port.deficit[q] += port.quanta[q]
                    port.drr_visited[q] = True
                if port.queues[q][0].size_bits <= port.deficit[q]:
                    return q
            else:
                port.deficit[q] = 0.0
            port.drr_visited[q] = False
            port.drr_ptr = (q + 1) % n
    raise ConfigError(f"unknown scheduling policy {policy!r}")


def pop_packet(port: PortState, queue_idx: int) -> _Packet:
    """Remove the head of the chosen queue and update scheduler bookkeeping."""
    packet = port.queues[queue_idx].popleft()
    port.occupancy[queue_idx] -= packet.size_bits
    if port.policy == "wfq":
        port.virtual_time = max(port.virtual_time, packet.wfq_tag)
    elif port.policy == "drr":
        port.deficit[queue_idx] -= packet.size_bits
        if not port.queues[queue_idx]:
            port.deficit[queue_idx] = 0.0
            port.drr_visited[queue_idx] = False
            port.drr_ptr = (queue_idx + 1) % len(port.queues)
    return packet


# ---------------------------------------------------------------------------
# traffic generation


def _packet_sizes(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.binomial(PACKET_BINOMIAL_N, 0.5, size=n) + PACKET_MIN_BITS


def _poisson_times(rng, rate, start, end):
    """Arrival instants of a Poisson process on [start, end)."""
    if rate <= 0 or end <= start:
        return np.empty(0)
    times = []
    t = start
    span = end - start
    chunk = max(16, int(rate * span * 1.25) + 16)
    while True:
        gaps = rng.exponential(1.0 / rate, size=chunk)
        arrivals = t + np.cumsum(gaps)
        inside = arrivals[arrivals < end]
        times.append(inside)
        if inside.size < arrivals.size:
            break
        t = arrivals[-1]
    return np.concatenate(times) if times else np.empty(0)


def generate_traffic(
    descriptor: TrafficDescriptor, duration: float, seed
) -> tuple[np.ndarray, np.ndarray]:
    """Packet arrival stream (times, sizes in bits) over [0, duration).

    Rates are in bits/second; the packet rate is avg_rate divided by the
    mean packet size. Sizes always follow 300 + Binomial(1400, 0.5).
    """
    rng = np.random.default_rng(seed)
    pkt_rate = descriptor.avg_rate_bps / PACKET_MEAN_BITS
    model = descriptor.model
    params = descriptor.params

    if model == "poisson":
        times = _poisson_times(rng, pkt_rate, 0.0, duration)
    elif model == "cbr":
        spacing = PACKET_MEAN_BITS / descriptor.avg_rate_bps
        n = int(duration / spacing)
        if n * spacing >= duration:
            n -= 1
        times = np.arange(1, n + 1, dtype=np.float64) * spacing
    elif model == "onoff":
        mean_on = float(params.get("mean_on_s", 1.0))
        mean_off = float(params.get("mean_off_s", 1.0))
        on_rate = pkt_rate * (mean_on + mean_off) / mean_on
        chunks = []
        t = 0.0
        while t < duration:
            on_len = rng.exponential(mean_on)
            chunks.append(_poisson_times(rng, on_rate, t, min(t + on_len, duration)))
            t += on_len + rng.exponential(mean_off)
        times = np.concatenate(chunks) if chunks else np.empty(0)
    elif model == "autocorrelated":
        # AR(1) gaussian copula over exponential quantiles: marginals stay
        # exponential with the configured rate, successive gaps correlate
        rho = float(params.get("rho", 0.6))
        times_list = []
        t = 0.0
        z = rng.standard_normal()
        innov_scale = math.sqrt(max(1.0 - rho * rho, 0.0))
        while t < duration:
            z = rho * z + innov_scale * rng.standard_normal()
            u = 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
            u = min(max(u, 1e-15), 1.0 - 1e-15)
            t += -math.log1p(-u) / pkt_rate
            if t < duration:
                times_list.append(t)
        times = np.asarray(times_list)
    elif model == "modulated":
        factors = params.get("factors", [1.5, 0.5])
        mean_dwell = float(params.get("mean_dwell_s", 1.0))
        chunks = []
        t = 0.0
        state = 0
        while t < duration:
            dwell = rng.exponential(mean_dwell)
            rate = pkt_rate * float(factors[state])
            chunks.append(_poisson_times(rng, rate, t, min(t + dwell, duration)))
            t += dwell
            state = 1 - state
        times = np.concatenate(chunks) if chunks else np.empty(0)
    else:
        raise ConfigError(f"unknown traffic model {model!r}")

    sizes = _packet_sizes(rng, times.size).astype(np.float64)
    return times, sizes


# ---------------------------------------------------------------------------
# the event loop


class _Trace:
    def __init__(self, path):
        self.rows = []
        self.path = path

    def add(self, time, flow_id, event, node):
        self.rows.append(f"{time!r},{flow_id},{event},{node}")

    def flush(self):
        with open(self.path, "w", encoding="utf-8") as fh:
            fh.write("time,flow,event,node\n")
            for row in self.rows:
                fh.write(row)
                fh.write("\n")


def simulate(
    topology: Topology,
    flows: list[Flow],
    arrivals: dict[int, tuple[np.ndarray, np.ndarray]],
    config: SimConfig,
) -> dict[int, FlowStats]:
    """Run the event loop over pre-generated arrival streams.

    ``arrivals`` maps flow id to (times, sizes). Packets created at or
    after the warmup cutoff are counted in the statistics; earlier packets
    are simulated but ignored. The loop hard-stops at the configured
    duration, so packets still queued or in service count as in flight.
    """
    links = topology.links
    ports = [
        PortState(
            policy=link.queues[0].policy,
            buffers=[q.buffer_bits for q in link.queues],
            weights=[q.weight for q in link.queues],
        )
        for link in links
    ]
    stats = {flow.id: FlowStats() for flow in flows}
    flows_sorted = sorted(flows, key=lambda f: f.id)
    streams = []
    for flow in flows_sorted:
        times, sizes = arrivals[flow.id]
        streams.append((flow, np.asarray(times, dtype=np.float64), np.asarray(sizes, dtype=np.float64)))

    trace = _Trace(config.trace_path) if config.trace_path else None
    warmup = config.warmup_s
    duration = config.duration_s
    heap: list = []
    seq = 0

    for pos, (flow, times, sizes) in enumerate(streams):
        if times.size:
            heapq.heappush(heap, (float(times[0]), RANK_SOURCE, seq, (pos, 0)))
            seq += 1

    def arrive(packet: _Packet, t: float) -> None:
        nonlocal seq
        link_idx, queue_idx = packet.path[packet.hop]
        port = ports[link_idx]
        if port.occupancy[queue_idx] + packet.size_bits > port.buffers[queue_idx]:
            if packet.counted:
                stats[packet.flow_id].dropped += 1
            if trace:
                trace.add(t, packet.flow_id, "drop", links[link_idx].src)
            return
        port.occupancy[queue_idx] += packet.size_bits
        if port.policy == "wfq":
            start = max(port.virtual_time, port.last_finish[queue_idx])
            packet.wfq_tag = start + packet.size_bits / port.weights[queue_idx]
            port.last_finish[queue_idx] = packet.wfq_tag
        port.queues[queue_idx].append(packet)
        if trace:
            trace.add(t, packet.flow_id, "arrive", links[link_idx].src)
        if not port.busy:
            start_service(link_idx, t)

    def start_service(link_idx: int, t: float) -> None:
        nonlocal seq
        port = ports[link_idx]
        qidx = scheduler_dequeue(port.policy, port)
        if qidx is None:
            port.busy = False
            port.current = None
            if port.total_packets() == 0:
                port.reset_scheduler_state()
            return
        packet = pop_packet(port, qidx)
        port.busy = True
        port.current = packet
        done = t + packet.size_bits / links[link_idx].capacity_bps
        heapq.heappush(heap, (done, RANK_SERVICE, seq, link_idx))
        seq += 1

    while heap:
        t, rank, _, data = heapq.heappop(heap)
        if t > duration:
            break
        if rank == RANK_SOURCE:
            pos, idx = data
            flow, times, sizes = streams[pos]
            created = float(times[idx])
            packet = _Packet(
                flow_id=flow.id,
                size_bits=float(sizes[idx]),
                created_s=created,
                counted=created >= warmup,
                path=flow.path,
            )
            if packet.counted:
                stats[flow.id].sent += 1
            if trace:
                trace.add(created, flow.id, "inject", flow.src)
            if idx + 1 < times.size:
                heapq.heappush(heap, (float(times[idx + 1]), RANK_SOURCE, seq, (pos, idx + 1)))
                seq += 1
            arrive(packet, t)
        elif rank == RANK_ARRIVAL:
            arrive(data, t)
        else:  # RANK_SERVICE
            link_idx = data
            port = ports[link_idx]
            packet = port.current
            port.current = None
            port.busy = False
            packet.hop += 1
            if packet.hop == len(packet.path):
                if packet.counted:
                    st = stats[packet.flow_id]
                    st.delivered += 1
                    delay = t - packet.created_s
                    st.sum_delay += delay
                    st.sum_delay_sq += delay * delay
                if trace:
                    trace.add(t, packet.flow_id, "deliver", links[link_idx].dst)
            else:
                heapq.heappush(heap, (t, RANK_ARRIVAL, seq, packet))
                seq += 1
            start_service(link_idx, t)

    for port in ports:
        for q in port.queues:
            for packet in q:
                if packet.counted:
                    stats[packet.flow_id].in_flight += 1
        if port.current is not None and port.current.counted:
            stats[port.current.flow_id].in_flight += 1

    if trace:
        trace.flush()
    return stats


def stats_to_labels(stats: dict[int, FlowStats]) -> dict[int, FlowLabels]:
    labels = {}
    for fid, st in sorted(stats.items()):
        if st.sent == 0:
            raise SimulationError(
                f"flow {fid}: no packets generated after warmup; increase the duration"
            )
        if st.delivered == 0:
            raise SimulationError(
                f"flow {fid}: no packets delivered after warmup; increase the duration"
            )
        mean = st.sum_delay / st.delivered
        var = max(st.sum_delay_sq / st.delivered - mean * mean, 0.0)
        labels[fid] = FlowLabels(
            delay_s=mean, jitter_s2=var, loss=st.dropped / st.sent
        )
    return labels


def run_simulation(sample: Sample, config: SimConfig) -> dict[int, FlowLabels]:
    """Simulate a sample and return its per-flow labels."""
    sample.validate()
    arrivals = {
        flow.id: generate_traffic(
            flow.traffic,
            config.duration_s,
            np.random.SeedSequence(entropy=config.seed, spawn_key=(flow.id,)),
        )
        for flow in sorted(sample.flows, key=lambda f: f.id)
    }
    stats = simulate(sample.topology, sample.flows, arrivals, config)
    return stats_to_labels(stats)


def label_sample(sample: Sample, config: SimConfig) -> Sample:
    """Copy of the sample with fresh simulation labels and provenance."""
    labels = run_simulation(sample, config)
    provenance = dict(sample.provenance)
    provenance["duration_s"] = config.duration_s
    provenance["sim_seed"] = int(config.seed)
    labeled = Sample(
        topology=sample.topology,
        flows=list(sample.flows),
        labels=labels,
        provenance=provenance,
    )
    labeled.validate()
    return labeled


def mm1_reference(lam: float, mu: float) -> float:
    """Analytic mean sojourn time of an M/M/1 queue: 1 / (mu - lambda)."""
    if lam >= mu:
        raise ConfigError(f"M/M/1 requires lambda < mu, got lambda={lam}, mu={mu}")
    return 1.0 / (mu - lam)
