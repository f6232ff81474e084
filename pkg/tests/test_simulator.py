from collections import deque

import numpy as np
import pytest

from flowgnn import netgraph as ng, simulator as sim
from flowgnn.errors import ConfigError, SimulationError
from flowgnn.netgraph import (
    Flow,
    Link,
    Queue,
    QueueConfig,
    Sample,
    Topology,
    TrafficConfig,
    TrafficDescriptor,
    build_sample,
    power_law_topology,
)
from flowgnn.simulator import (
    PortState,
    SimConfig,
    generate_traffic,
    label_sample,
    mm1_reference,
    pop_packet,
    run_simulation,
    scheduler_dequeue,
    simulate,
)


def single_link_topology(capacity=1_000_000.0, buffer_bits=1e15, policy="fifo", n_queues=1):
    queues = tuple(Queue(policy=policy, buffer_bits=buffer_bits, priority=i) for i in range(n_queues))
    links = [
        Link(src=0, dst=1, capacity_bps=capacity, queues=queues),
        Link(src=1, dst=0, capacity_bps=capacity, queues=queues),
    ]
    return Topology(nodes=[0, 1], links=links)


def make_flow(fid, path, model="poisson", rate=1000.0, tos=0):
    return Flow(
        id=fid,
        src=0,
        dst=1,
        path=tuple(path),
        traffic=TrafficDescriptor(model=model, avg_rate_bps=rate, tos=tos),
    )


def fill_port(port, queue_sizes):
    for qidx, sizes in enumerate(queue_sizes):
        for s in sizes:
            pkt = sim._Packet(flow_id=qidx, size_bits=float(s), created_s=0.0, counted=True, path=((0, qidx),))
            port.queues[qidx].append(pkt)
            port.occupancy[qidx] += s
    return port


# ---------------------------------------------------------------------------
# schedulers


def test_fifo_serves_single_queue_head():
    port = fill_port(PortState("fifo", [1e9], [1.0]), [[500, 700]])
    assert scheduler_dequeue("fifo", port) == 0
    assert pop_packet(port, 0).size_bits == 500


def test_sp_serves_lowest_nonempty_priority():
    port = fill_port(PortState("sp", [1e9] * 3, [1.0] * 3), [[], [400], [600]])
    assert scheduler_dequeue("sp", port) == 1


def test_idle_port_returns_none():
    port = PortState("sp", [1e9] * 3, [1.0] * 3)
    assert scheduler_dequeue("sp", port) is None


def drr_reference(queue_sizes, quanta, count):
    """Straight-line textbook deficit round robin service order."""
    queues = [deque(s) for s in queue_sizes]
    n = len(queues)
    deficit = [0.0] * n
    order = []
    while len(order) < count and any(queues):
        for q in range(n):
            if not queues[q]:
                deficit[q] = 0.0
                continue
            deficit[q] += quanta[q]
            while queues[q] and queues[q][0] <= deficit[q]:
                deficit[q] -= queues[q].popleft()
                order.append(q)
                if len(order) == count:
                    return order
            if not queues[q]:
                deficit[q] = 0.0
    return order


@pytest.mark.parametrize("seed", range(8))
def test_drr_matches_brute_force_trace(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 4))
    weights = list(rng.uniform(0.2, 1.0, size=n))
    queue_sizes = [list(rng.integers(300, 1701, size=30).astype(float)) for _ in range(n)]
    port = fill_port(PortState("drr", [1e9] * n, weights), queue_sizes)
    served = []
    for _ in range(sum(len(q) for q in queue_sizes)):
        q = scheduler_dequeue("drr", port)
        served.append(q)
        pop_packet(port, q)
    expected = drr_reference(queue_sizes, port.quanta, len(served))
    assert served == expected


def test_drr_equal_weights_balanced_in_windows():
    # equal weights, equal sizes, all backlogged: over any window of 3n
    # packets the per-queue served counts differ by at most one
    n = 3
    port = fill_port(
        PortState("drr", [1e9] * n, [1.0] * n),
        [[1000.0] * 60 for _ in range(n)],
    )
    served = []
    for _ in range(150):
        q = scheduler_dequeue("drr", port)
        served.append(q)
        pop_packet(port, q)
    w = 3 * n
    for start in range(len(served) - w):
        window = served[start : start + w]
        counts = [window.count(q) for q in range(n)]
        assert max(counts) - min(counts) <= 1, f"window at {start}: {counts}"


def test_wfq_prefers_smallest_finish_tag():
    port = PortState("wfq", [1e9] * 2, [0.9, 0.1])
    p0 = sim._Packet(0, 1000.0, 0.0, True, ((0, 0),))
    p0.wfq_tag = 1000.0 / 0.9
    p1 = sim._Packet(1, 1000.0, 0.0, True, ((0, 1),))
    p1.wfq_tag = 1000.0 / 0.1
    port.queues[0].append(p0)
    port.occupancy[0] += 1000
    port.queues[1].append(p1)
    port.occupancy[1] += 1000
    assert scheduler_dequeue("wfq", port) == 0


def backlogged_share_run(policy, weights, duration=30.0, sizes_const=1000.0):
    queues = tuple(
        Queue(policy=policy, buffer_bits=64_000.0, priority=i, weight=w)
        for i, w in enumerate(weights)
    )
    links = [
        Link(src=0, dst=1, capacity_bps=1_000_000.0, queues=queues),
        Link(src=1, dst=0, capacity_bps=1_000_000.0, queues=queues),
    ]
    topo = Topology(nodes=[0, 1], links=links)
    flows = [make_flow(i, [(0, i)], tos=i) for i in range(len(weights))]
    # feed each queue at twice its fair share so every queue stays backlogged
    per_flow_pkt_rate = 2.0 * 1_000_000.0 / sizes_const / len(weights)
    arrivals = {}
    for f in flows:
        times = np.arange(1, int(duration * per_flow_pkt_rate)) / per_flow_pkt_rate
        arrivals[f.id] = (times, np.full(times.size, sizes_const))
    stats = simulate(topo, flows, arrivals, SimConfig(duration_s=duration, seed=0))
    total = sum(s.delivered for s in stats.values())
    return [stats[f.id].delivered / total for f in flows]


def test_wfq_throughput_shares_follow_weights():
    shares = backlogged_share_run("wfq", [0.5, 0.3, 0.2])
    for share, weight in zip(shares, [0.5, 0.3, 0.2]):
        assert abs(share - weight) < 0.02


def test_drr_throughput_shares_follow_weights():
    shares = backlogged_share_run("drr", [0.5, 0.3, 0.2])
    for share, weight in zip(shares, [0.5, 0.3, 0.2]):
        assert abs(share - weight) < 0.02


# ---------------------------------------------------------------------------
# traffic generation


def descriptor(model, rate=1000.0, **params):
    return TrafficDescriptor(model=model, avg_rate_bps=rate, tos=0, params=params)


def test_cbr_spacing_exact():
    times, sizes = generate_traffic(descriptor("cbr", rate=1000.0), duration=50.0, seed=1)
    assert np.all(np.diff(times) == 1.0)
    assert times[0] == 1.0
    assert sizes.min() >= 300 and sizes.max() <= 1700


def test_poisson_mean_interarrival_within_2_percent():
    rate = 2000.0  # 2 packets/s of 1000-bit packets
    times, _ = generate_traffic(descriptor("poisson", rate=rate), duration=60000.0, seed=2)
    assert times.size > 100_000
    gaps = np.diff(times)
    assert abs(gaps.mean() - 0.5) / 0.5 < 0.02


def test_onoff_long_run_rate_half_of_on_rate():
    desc = descriptor("onoff", rate=2000.0, mean_on_s=1.0, mean_off_s=1.0)
    times, sizes = generate_traffic(desc, duration=5000.0, seed=3)
    delivered_rate = sizes.sum() / 5000.0
    on_rate = 2.0 * 2000.0  # off fraction 0.5 doubles the on-period rate
    assert abs(delivered_rate - 0.5 * on_rate) / (0.5 * on_rate) < 0.05


def test_autocorrelated_gaps_keep_exponential_mean_and_correlate():
    desc = descriptor("autocorrelated", rate=2000.0, rho=0.6)
    times, _ = generate_traffic(desc, duration=20000.0, seed=4)
    gaps = np.diff(times)
    assert abs(gaps.mean() - 0.5) / 0.5 < 0.05
    lag1 = np.corrcoef(gaps[:-1], gaps[1:])[0, 1]
    assert lag1 > 0.25


def test_modulated_long_run_rate_matches_average():
    desc = descriptor("modulated", rate=2000.0, factors=[1.5, 0.5], mean_dwell_s=1.0)
    times, sizes = generate_traffic(desc, duration=5000.0, seed=5)
    assert abs(sizes.sum() / 5000.0 - 2000.0) / 2000.0 < 0.05


def test_packet_sizes_within_support():
    for model in ("poisson", "cbr", "onoff", "autocorrelated", "modulated"):
        _, sizes = generate_traffic(descriptor(model), duration=50.0, seed=6)
        if sizes.size:
            assert sizes.min() >= 300 and sizes.max() <= 1700


def test_generate_traffic_deterministic():
    a = generate_traffic(descriptor("poisson"), duration=100.0, seed=7)
    b = generate_traffic(descriptor("poisson"), duration=100.0, seed=7)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


# ---------------------------------------------------------------------------
# analytic references


def test_mm1_reference_values():
    assert mm1_reference(50, 100) == pytest.approx(0.02)
    assert mm1_reference(80, 100) == pytest.approx(0.05)
    assert mm1_reference(99, 100) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        mm1_reference(100, 100)


def test_mm1_simulation_matches_analytic_sojourn():
    # lambda = 50/s arrivals, mu = 100/s service via exponential sizes on a
    # fixed-rate link; mean sojourn must match 1/(mu-lambda) = 0.02 s
    lam, mu = 50.0, 100.0
    capacity = 1_000_000.0
    mean_size = capacity / mu
    topo = single_link_topology(capacity=capacity)
    flow = make_flow(0, [(0, 0)])
    rng = np.random.default_rng(11)
    duration = 400.0
    n = int(lam * duration * 1.1)
    times = np.cumsum(rng.exponential(1.0 / lam, size=n))
    times = times[times < duration]
    sizes = rng.exponential(mean_size, size=times.size)
    stats = simulate(topo, [flow], {0: (times, sizes)}, SimConfig(duration_s=duration, seed=0))
    st = stats[0]
    mean_sojourn = st.sum_delay / st.delivered
    assert st.delivered > 10_000
    assert abs(mean_sojourn - mm1_reference(lam, mu)) / mm1_reference(lam, mu) < 0.05


# ---------------------------------------------------------------------------
# end-to-end engine behavior


def test_uncongested_cbr_delay_is_pure_transmission():
    capacity = 1_000_000.0
    topo = single_link_topology(capacity=capacity)
    flow = make_flow(0, [(0, 0)], model="cbr", rate=1000.0)
    labels = run_simulation(
        Sample(topology=topo, flows=[flow], provenance={}),
        SimConfig(duration_s=200.0, seed=1),
    )
    lab = labels[0]
    assert lab.loss == 0.0
    expected = ng.PACKET_MEAN_BITS / capacity
    assert abs(lab.delay_s - expected) / expected < 0.02
    assert lab.jitter_s2 < (200.0 / capacity) ** 2  # only size variation remains


def test_one_packet_buffer_drops_second_of_burst():
    topo = single_link_topology(capacity=1000.0, buffer_bits=1700.0)
    flows = [make_flow(0, [(0, 0)]), make_flow(1, [(0, 0)])]
    times = np.array([10.0])
    sizes = np.array([1000.0])
    arrivals = {0: (times, sizes), 1: (times.copy(), sizes.copy())}
    stats = simulate(topo, flows, arrivals, SimConfig(duration_s=100.0, warmup_s=0.0, seed=0))
    # flow 0's packet goes straight into service, flow 1's packet fills the
    # buffer; nothing is dropped until a third packet would arrive
    assert stats[0].delivered == 1 and stats[0].dropped == 0
    assert stats[1].delivered == 1

    arrivals = {0: (times, sizes), 1: (np.array([10.0, 10.0]), np.array([1000.0, 1000.0]))}
    stats = simulate(topo, flows, arrivals, SimConfig(duration_s=100.0, warmup_s=0.0, seed=0))
    assert stats[1].dropped == 1
    assert stats[1].delivered == 1


def test_simulation_deterministic_bitwise():
    topo = power_law_topology(8, seed=3)
    sample = build_sample(topo, 5, TrafficConfig(), QueueConfig(), seed=9)
    cfg = SimConfig(duration_s=80.0, seed=21)
    a = run_simulation(sample, cfg)
    b = run_simulation(sample, cfg)
    assert a == b


def test_fifo_and_single_queue_sp_produce_identical_traces(tmp_path):
    def topo_with(policy):
        queues = (Queue(policy=policy, buffer_bits=32000.0, priority=0),)
        links = [
            Link(src=0, dst=1, capacity_bps=5000.0, queues=queues),
            Link(src=1, dst=0, capacity_bps=5000.0, queues=queues),
        ]
        return Topology(nodes=[0, 1], links=links)

    flows = [make_flow(0, [(0, 0)], rate=3000.0), make_flow(1, [(0, 0)], rate=2500.0)]
    traces = {}
    labels = {}
    for policy in ("fifo", "sp"):
        trace = tmp_path / f"{policy}.csv"
        cfg = SimConfig(duration_s=120.0, seed=5, trace_path=str(trace))
        labels[policy] = run_simulation(
            Sample(topology=topo_with(policy), flows=flows, provenance={}), cfg
        )
        traces[policy] = trace.read_bytes()
    assert traces["fifo"] == traces["sp"]
    assert labels["fifo"] == labels["sp"]


def test_conservation_exact_across_random_samples():
    for seed in range(150):
        rng = np.random.default_rng(seed)
        topo = power_law_topology(int(rng.integers(5, 9)), seed=seed)
        sample = build_sample(
            topo,
            int(rng.integers(1, 5)),
            TrafficConfig(models=("poisson", "cbr", "onoff")),
            QueueConfig(policies=("fifo", "sp", "wfq", "drr"), buffer_bits=(4000.0, 16000.0)),
            seed=seed,
        )
        cfg = SimConfig(duration_s=20.0, seed=seed)
        arrivals = {
            f.id: generate_traffic(f.traffic, cfg.duration_s, np.random.SeedSequence(entropy=seed, spawn_key=(f.id,)))
            for f in sample.flows
        }
        stats = simulate(sample.topology, sample.flows, arrivals, cfg)
        for fid, st in stats.items():
            assert st.sent == st.delivered + st.dropped + st.in_flight, (
                f"seed {seed} flow {fid}: {st}"
            )


def test_occupancy_never_exceeds_buffer():
    # tiny buffers under heavy load: the engine must never have accepted a
    # packet that lifted occupancy above the buffer, so every drop shows up
    # in the loss label instead
    topo = single_link_topology(capacity=2000.0, buffer_bits=3000.0)
    flow = make_flow(0, [(0, 0)], rate=8000.0)
    labels = run_simulation(
        Sample(topology=topo, flows=[flow], provenance={}),
        SimConfig(duration_s=60.0, seed=2),
    )
    assert labels[0].loss > 0.2


def test_per_packet_delay_respects_transmission_bound(tmp_path):
    trace_path = tmp_path / "trace.csv"
    capacity = 5000.0
    topo = power_law_topology(6, seed=1)
    sample = build_sample(topo, 3, TrafficConfig(), QueueConfig(), seed=3)
    cfg = SimConfig(duration_s=40.0, warmup_s=0.0, seed=4, trace_path=str(trace_path))
    run_simulation(sample, cfg)
    injects, delivers = {}, {}
    for line in trace_path.read_text().splitlines()[1:]:
        t, fid, event, node = line.split(",")
        if event == "inject":
            injects.setdefault(int(fid), []).append(float(t))
        elif event == "deliver":
            delivers.setdefault(int(fid), []).append(float(t))
    assert delivers, "trace recorded no deliveries"
    for flow in sample.flows:
        bound = sum(
            300.0 / sample.topology.links[idx].capacity_bps for idx, _ in flow.path
        )
        for t_in, t_out in zip(injects[flow.id], delivers.get(flow.id, [])):
            assert t_out - t_in >= bound - 1e-12


def test_zero_delivery_raises_label_error():
    topo = single_link_topology(capacity=1000.0)
    flow = make_flow(0, [(0, 0)], model="cbr", rate=10.0)  # one packet per 100 s
    with pytest.raises(SimulationError):
        run_simulation(
            Sample(topology=topo, flows=[flow], provenance={}),
            SimConfig(duration_s=50.0, seed=0),
        )


def test_label_sample_attaches_labels_and_provenance():
    topo = power_law_topology(7, seed=5)
    sample = build_sample(topo, 4, TrafficConfig(), QueueConfig(), seed=6)
    labeled = label_sample(sample, SimConfig(duration_s=100.0, seed=8))
    assert labeled.labels is not None and len(labeled.labels) == 4
    assert labeled.provenance["duration_s"] == 100.0
    assert labeled.provenance["sim_seed"] == 8
    labeled.validate()


def test_warmup_excludes_early_packets():
    topo = single_link_topology(capacity=1_000_000.0)
    flow = make_flow(0, [(0, 0)], model="cbr", rate=1000.0)
    cfg_all = SimConfig(duration_s=100.0, warmup_s=0.0, seed=0)
    cfg_half = SimConfig(duration_s=100.0, warmup_s=50.0, seed=0)
    arrivals = {0: generate_traffic(flow.traffic, 100.0, seed=1)}
    all_stats = simulate(topo, [flow], arrivals, cfg_all)
    half_stats = simulate(topo, [flow], {0: arrivals[0]}, cfg_half)
    assert 0 < half_stats[0].sent < all_stats[0].sent


def test_sim_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(duration_s=0.0)
    with pytest.raises(ConfigError):
        SimConfig(duration_s=10.0, warmup_s=10.0)
