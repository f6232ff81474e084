"""Simulator fidelity: M/M/1 against the textbook formula, WFQ shares.

Run with: python3 demos/04_packet_simulator.py
"""

import numpy as np

from flowgnn.netgraph import Flow, Link, Queue, Topology, TrafficDescriptor
from flowgnn.simulator import SimConfig, mm1_reference, simulate

# --- M/M/1: Poisson arrivals, exponential service via packet sizes ---------

lam, mu = 80.0, 100.0
capacity = 1_000_000.0
queues = (Queue(policy="fifo", buffer_bits=1e15, priority=0),)
topo = Topology(
    nodes=[0, 1],
    links=[
        Link(src=0, dst=1, capacity_bps=capacity, queues=queues),
        Link(src=1, dst=0, capacity_bps=capacity, queues=queues),
    ],
)
flow = Flow(id=0, src=0, dst=1, path=((0, 0),),
            traffic=TrafficDescriptor(model="poisson", avg_rate_bps=1000.0, tos=0))

rng = np.random.default_rng(1)
duration = 400.0
times = np.cumsum(rng.exponential(1.0 / lam, size=int(lam * duration)))
times = times[times < duration]
sizes = rng.exponential(capacity / mu, size=times.size)

stats = simulate(topo, [flow], {0: (times, sizes)}, SimConfig(duration_s=duration, seed=0))
measured = stats[0].sum_delay / stats[0].delivered
print(f"M/M/1 (lambda={lam:.0f}/s, mu={mu:.0f}/s): measured sojourn {measured:.4f}s, "
      f"analytic {mm1_reference(lam, mu):.4f}s, {stats[0].delivered} packets")

# --- WFQ: backlogged queues share capacity by weight ------------------------

weights = [0.5, 0.3, 0.2]
wfq_queues = tuple(
    Queue(policy="wfq", buffer_bits=64000.0, priority=i, weight=w)
    for i, w in enumerate(weights)
)
wfq_topo = Topology(
    nodes=[0, 1],
    links=[
        Link(src=0, dst=1, capacity_bps=capacity, queues=wfq_queues),
        Link(src=1, dst=0, capacity_bps=capacity, queues=wfq_queues),
    ],
)
flows = [
    Flow(id=i, src=0, dst=1, path=((0, i),),
         traffic=TrafficDescriptor(model="cbr", avg_rate_bps=1000.0, tos=i))
    for i in range(3)
]
rate = 2.0 * capacity / 1000.0 / 3.0  # oversubscribe every queue
arrivals = {
    f.id: (np.arange(1, int(20.0 * rate)) / rate, np.full(int(20.0 * rate) - 1, 1000.0))
    for f in flows
}
stats = simulate(wfq_topo, flows, arrivals, SimConfig(duration_s=20.0, seed=0))
total = sum(s.delivered for s in stats.values())
shares = [stats[i].delivered / total for i in range(3)]
print("WFQ shares under full backlog:", [round(s, 3) for s in shares], "target", weights)
