"""Topology generators, shortest-path routing, and the dataset format.

Run with: python3 demos/03_topologies_and_datasets.py
"""

from flowgnn.netgraph import (
    QueueConfig,
    TrafficConfig,
    build_sample,
    deserialize_sample,
    fat_tree_topology,
    grid_topology,
    power_law_topology,
    serialize_sample,
    shortest_path_routing,
)


def undirected(topo):
    return len({tuple(sorted((l.src, l.dst))) for l in topo.links})


for name, topo in [
    ("fat-tree k=4", fat_tree_topology(4)),
    ("grid 3x3", grid_topology(3, 3)),
    ("power-law n=12", power_law_topology(12, seed=7)),
]:
    print(f"{name}: {len(topo.nodes)} nodes, {undirected(topo)} undirected links")

topo = power_law_topology(12, seed=7)
path = shortest_path_routing(topo, 0, 11)
print("\nshortest path 0 -> 11:", " -> ".join(map(str, path)))

sample = build_sample(
    topo,
    n_flows=5,
    traffic=TrafficConfig(models=("poisson", "cbr", "onoff"), max_lambda_bps=(800.0, 2400.0)),
    queues=QueueConfig(policies=("fifo", "wfq")),
    seed=3,
)
print("\nflows:")
for f in sample.flows:
    print(f"  flow {f.id}: {f.src} -> {f.dst}, {len(f.path)} hops, "
          f"{f.traffic.model} at {f.traffic.avg_rate_bps:.0f} b/s, tos {f.traffic.tos}")

line = serialize_sample(sample)
print(f"\nserialized record: {len(line)} bytes, round-trip identical:",
      deserialize_sample(line) == sample)
