"""Network data model: topologies, queues, flows, traffic, and dataset files.

A sample bundles one topology, a set of routed flows with traffic
descriptors, and (once simulated) per-flow ground-truth labels. Samples
serialize one JSON object per line; numbers survive the round trip at full
64-bit precision.

Packet sizes are always drawn from 300 + Binomial(1400, 0.5) bits: mean
1000, support exactly [300, 1700].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, DataError

__all__ = [
    "Queue",
    "Link",
    "Topology",
    "TrafficDescriptor",
    "Flow",
    "FlowLabels",
    "Sample",
    "TrafficConfig",
    "QueueConfig",
    "generate_topology",
    "power_law_topology",
    "fat_tree_topology",
    "grid_topology",
    "shortest_path_routing",
    "build_sample",
    "serialize_sample",
    "deserialize_sample",
    "write_dataset",
    "read_dataset",
    "load_topology",
]

PACKET_MIN_BITS = 300
PACKET_MAX_BITS = 1700
PACKET_MEAN_BITS = 1000.0  # mean of 300 + Binomial(1400, 0.5)
PACKET_BINOMIAL_N = PACKET_MAX_BITS - PACKET_MIN_BITS

POLICIES = ("fifo", "sp", "wfq", "drr")
TRAFFIC_MODELS = ("poisson", "cbr", "onoff", "autocorrelated", "modulated")

DATASET_VERSION = 1
DEFAULT_CAPACITY_BPS = 10_000.0
DEFAULT_BUFFER_BITS = 32_000.0


@dataclass(frozen=True)
class Queue:
    policy: str
    buffer_bits: float
    priority: int
    weight: float = 1.0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown scheduling policy {self.policy!r}")
        if self.buffer_bits <= 0:
            raise ConfigError(f"queue buffer must be positive, got {self.buffer_bits}")
        if self.weight <= 0:
            raise ConfigError(f"queue weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class Link:
    """Directed capacity-limited connection; queues are its output port."""

    src: int
    dst: int
    capacity_bps: float
    queues: tuple[Queue, ...]

    def __post_init__(self):
        if self.src == self.dst:
            raise ConfigError(f"self-loop link at node {self.src}")
        if self.capacity_bps <= 0:
            raise ConfigError(f"link capacity must be positive, got {self.capacity_bps}")
        if not self.queues:
            raise ConfigError(f"link {self.src}->{self.dst} has no queues")
        priorities = sorted(q.priority for q in self.queues)
        if priorities != list(range(len(self.queues))):
            raise ConfigError(
                f"link {self.src}->{self.dst}: queue priorities {priorities} "
                f"must be 0..{len(self.queues) - 1} without gaps"
            )


@dataclass
class Topology:
    nodes: list[int]
    links: list[Link]
    adjacency: dict[int, list[tuple[int, int]]] = field(
        default_factory=dict, compare=False, repr=False
    )

    def __post_init__(self):
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise ConfigError("duplicate node ids")
        for link in self.links:
            if link.src not in node_set or link.dst not in node_set:
                raise ConfigError(f"link {link.src}->{link.dst} references unknown node")
        self.adjacency = {n: [] for n in self.nodes}
        for idx, link in enumerate(self.links):
            self.adjacency[link.src].append((link.dst, idx))
        for n in self.adjacency:
            self.adjacency[n].sort()
        if self.nodes and not self._connected():
            raise ConfigError("topology is not connected")

    def _connected(self) -> bool:
        seen = {self.nodes[0]}
        frontier = [self.nodes[0]]
        while frontier:
            cur = frontier.pop()
            for nxt, _ in self.adjacency[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return len(seen) == len(self.nodes)

    def link_index(self, src: int, dst: int) -> int:
        for nxt, idx in self.adjacency[src]:
            if nxt == dst:
                return idx
        raise ConfigError(f"no link {src}->{dst}")


@dataclass(frozen=True)
class TrafficDescriptor:
    """How one flow emits packets; sizes always follow the binomial law."""

    model: str
    avg_rate_bps: float
    tos: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in TRAFFIC_MODELS:
            raise ConfigError(f"unknown traffic model {self.model!r}")
        if self.avg_rate_bps <= 0:
            raise ConfigError(f"average rate must be positive, got {self.avg_rate_bps}")
        if self.tos not in (0, 1, 2):
            raise ConfigError(f"tos must be 0, 1, or 2, got {self.tos}")


@dataclass(frozen=True)
class Flow:
    id: int
    src: int
    dst: int
    path: tuple[tuple[int, int], ...]  # (link_idx, queue_idx) per hop
    traffic: TrafficDescriptor


@dataclass(frozen=True)
class FlowLabels:
    delay_s: float
    jitter_s2: float
    loss: float

    def __post_init__(self):
        if self.jitter_s2 < 0:
            raise DataError(f"jitter must be non-negative, got {self.jitter_s2}")
        if not 0.0 <= self.loss <= 1.0:
            raise DataError(f"loss must be within [0, 1], got {self.loss}")


@dataclass
class Sample:
    topology: Topology
    flows: list[Flow]
    labels: dict[int, FlowLabels] | None = None
    provenance: dict = field(default_factory=dict)

    def validate(self) -> None:
        links = self.topology.links
        for flow in self.flows:
            if not flow.path:
                raise DataError(f"flow {flow.id} has an empty path")
            visited = [links[flow.path[0][0]].src]
            for link_idx, queue_idx in flow.path:
                link = links[link_idx]
                if link.src != visited[-1]:
                    raise DataError(f"flow {flow.id}: path is not contiguous at link {link_idx}")
                if not 0 <= queue_idx < len(link.queues):
                    raise DataError(f"flow {flow.id}: queue {queue_idx} not on link {link_idx}")
                if link.dst in visited:
                    raise DataError(f"flow {flow.id}: path revisits node {link.dst}")
                visited.append(link.dst)
            if visited[0] != flow.src or visited[-1] != flow.dst:
                raise DataError(f"flow {flow.id}: path endpoints do not match src/dst")
        if self.labels is not None:
            for flow in self.flows:
                if flow.id not in self.labels:
                    raise DataError(f"labels missing for flow {flow.id}")
                # labels are averages of per-packet delays, each of which is
                # at least the path transmission time of the smallest packet
                bound = transmission_lower_bound(self, flow.id, packet_bits=PACKET_MIN_BITS)
                if self.labels[flow.id].delay_s < bound - 1e-12:
                    raise DataError(
                        f"flow {flow.id}: labeled delay {self.labels[flow.id].delay_s} "
                        f"below transmission bound {bound}"
                    )


def transmission_lower_bound(
    sample: Sample, flow_id: int, packet_bits: float = PACKET_MEAN_BITS
) -> float:
    """Sum over the flow's path of packet_bits / capacity."""
    flow = next(f for f in sample.flows if f.id == flow_id)
    links = sample.topology.links
    return sum(packet_bits / links[idx].capacity_bps for idx, _ in flow.path)


# ---------------------------------------------------------------------------
# topology generators


def _default_queues() -> tuple[Queue, ...]:
    return (Queue(policy="fifo", buffer_bits=DEFAULT_BUFFER_BITS, priority=0),)


def _links_from_edges(
    edges: Iterable[tuple[int, int]], capacity_bps: float
) -> list[Link]:
    """Directed link pair for every undirected edge, in sorted order."""
    links = []
    for a, b in sorted(set(tuple(sorted(e)) for e in edges)):
        links.append(Link(src=a, dst=b, capacity_bps=capacity_bps, queues=_default_queues()))
        links.append(Link(src=b, dst=a, capacity_bps=capacity_bps, queues=_default_queues()))
    return links


def power_law_topology(
    n: int,
    seed: int,
    exponent: float = 2.0,
    capacity_bps: float = DEFAULT_CAPACITY_BPS,
) -> Topology:
    """Random topology with truncated power-law out-degrees.

    Degrees are sampled from P(k) proportional to k^-exponent on
    [1, n-1], edges are symmetrized, and components are stitched
    together so the result is always connected.
    """
    if n < 3:
        raise ConfigError(f"power-law topology needs at least 3 nodes, got {n}")
    rng = np.random.default_rng(seed)
    ks = np.arange(1, n)
    pmf = ks.astype(float) ** -exponent
    pmf /= pmf.sum()
    degrees = rng.choice(ks, size=n, p=pmf)

    edges: set[tuple[int, int]] = set()
    for node in range(n):
        others = np.array([m for m in range(n) if m != node])
        targets = rng.choice(others, size=min(int(degrees[node]), n - 1), replace=False)
        for t in targets:
            edges.add(tuple(sorted((node, int(t)))))

    # stitch components together deterministically
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        parent[find(a)] = find(b)
    roots = sorted({find(i) for i in range(n)})
    for a, b in zip(roots, roots[1:]):
        edges.add(tuple(sorted((a, b))))
        parent[find(a)] = find(b)

    return Topology(nodes=list(range(n)), links=_links_from_edges(edges, capacity_bps))


def fat_tree_topology(k: int, capacity_bps: float = DEFAULT_CAPACITY_BPS) -> Topology:
    """Three-tier k-ary fat tree: (k/2)^2 core, k^2/2 aggregation, k^2/2 edge."""
    if k < 2 or k % 2 != 0:
        raise ConfigError(f"fat-tree arity must be even and >= 2, got {k}")
    half = k // 2
    n_core = half * half
    core = list(range(n_core))
    agg_base = n_core
    edge_base = n_core + k * half
    edges: list[tuple[int, int]] = []
    for pod in range(k):
        aggs = [agg_base + pod * half + j for j in range(half)]
        edges_sw = [edge_base + pod * half + j for j in range(half)]
        for a in aggs:
            for e in edges_sw:
                edges.append((a, e))
        for j, a in enumerate(aggs):
            for c in range(j * half, (j + 1) * half):
                edges.append((core[c], a))
    nodes = list(range(edge_base + k * half))
    return Topology(nodes=nodes, links=_links_from_edges(edges, capacity_bps))


def grid_topology(
    rows: int, cols: int, capacity_bps: float = DEFAULT_CAPACITY_BPS
) -> Topology:
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise ConfigError(f"grid needs at least 2 nodes, got {rows}x{cols}")
    edges = []
    for r in range(rows):
        for c in range(cols):
            node = r * cols + c
            if c + 1 < cols:
                edges.append((node, node + 1))
            if r + 1 < rows:
                edges.append((node, node + cols))
    return Topology(nodes=list(range(rows * cols)), links=_links_from_edges(edges, capacity_bps))


def generate_topology(kind: str, seed: int = 0, **size_params) -> Topology:
    """Dispatch on kind: power_law(n), fat_tree(k), grid(rows, cols)."""
    kind = kind.replace("-", "_")
    if kind == "power_law":
        return power_law_topology(seed=seed, **size_params)
    if kind == "fat_tree":
        return fat_tree_topology(**size_params)
    if kind == "grid":
        return grid_topology(**size_params)
    raise ConfigError(f"unknown topology kind {kind!r}")


# ---------------------------------------------------------------------------
# routing


def shortest_path_routing(topology: Topology, src: int, dst: int) -> list[int]:
    """Minimal hop-count node path; ties resolved toward smaller node ids.

    Among all shortest paths the lexicographically smallest node sequence is
    returned, which makes routing deterministic and stable across runs.
    """
    if src == dst:
        raise ConfigError(f"flow endpoints must differ, got {src}->{dst}")
    if src not in topology.adjacency or dst not in topology.adjacency:
        raise ConfigError(f"unknown endpoint in {src}->{dst}")

    # distance-to-destination by reverse BFS, then greedy descent
    dist = {dst: 0}
    frontier = [dst]
    while frontier:
        nxt_frontier = []
        for cur in frontier:
            for nxt, _ in topology.adjacency[cur]:
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    nxt_frontier.append(nxt)
        frontier = nxt_frontier
    if src not in dist:
        raise ConfigError(f"no path from {src} to {dst}")

    path = [src]
    cur = src
    while cur != dst:
        candidates = [nxt for nxt, _ in topology.adjacency[cur] if dist.get(nxt) == dist[cur] - 1]
        cur = min(candidates)
        path.append(cur)
    return path


def route_links(topology: Topology, node_path: Sequence[int]) -> list[int]:
    return [topology.link_index(a, b) for a, b in zip(node_path, node_path[1:])]


# ---------------------------------------------------------------------------
# sample construction


@dataclass(frozen=True)
class TrafficConfig:
    """Traffic drawing recipe for one dataset.

    ``max_lambda_bps`` may be a single value or a (lo, hi) range; one value
    is drawn per sample and each flow's rate is that value scaled by a
    uniform factor in [0.1, 1].
    """

    models: tuple[str, ...] = ("poisson",)
    max_lambda_bps: float | tuple[float, float] = (400.0, 2000.0)
    tos_values: tuple[int, ...] = (0, 1, 2)
    onoff_mean_on_s: float = 1.0
    onoff_mean_off_s: float = 1.0
    autocorr_rho: float = 0.6
    modulated_factors: tuple[float, float] = (1.5, 0.5)
    modulated_mean_dwell_s: float = 1.0

    def __post_init__(self):
        for m in self.models:
            if m not in TRAFFIC_MODELS:
                raise ConfigError(f"unknown traffic model {m!r}")


@dataclass(frozen=True)
class QueueConfig:
    """Per-node scheduling draw; a node's policy applies to all its ports."""

    policies: tuple[str, ...] = ("fifo",)
    buffer_bits: float | tuple[float, float] = DEFAULT_BUFFER_BITS
    weights: tuple[float, ...] = (0.5, 0.3, 0.2)

    def __post_init__(self):
        for p in self.policies:
            if p not in POLICIES:
                raise ConfigError(f"unknown scheduling policy {p!r}")


def _draw_range(rng: np.random.Generator, value: float | tuple[float, float]) -> float:
    if isinstance(value, tuple):
        lo, hi = value
        return float(rng.uniform(lo, hi))
    return float(value)


def _queues_for(policy: str, buffer_bits: float, weights: tuple[float, ...]) -> tuple[Queue, ...]:
    if policy == "fifo":
        return (Queue(policy="fifo", buffer_bits=buffer_bits, priority=0),)
    # non-FIFO ports carry three queues with distinct priorities
    if policy in ("wfq", "drr"):
        w = np.asarray(weights[:3], dtype=float)
        w = w / w.sum()
        return tuple(
            Queue(policy=policy, buffer_bits=buffer_bits, priority=i, weight=float(w[i]))
            for i in range(3)
        )
    return tuple(Queue(policy="sp", buffer_bits=buffer_bits, priority=i) for i in range(3))


def _traffic_params(model: str, cfg: TrafficConfig) -> dict:
    if model == "onoff":
        return {"mean_on_s": cfg.onoff_mean_on_s, "mean_off_s": cfg.onoff_mean_off_s}
    if model == "autocorrelated":
        return {"rho": cfg.autocorr_rho}
    if model == "modulated":
        return {
            "factors": list(cfg.modulated_factors),
            "mean_dwell_s": cfg.modulated_mean_dwell_s,
        }
    return {}


def build_sample(
    topology: Topology,
    n_flows: int,
    traffic: TrafficConfig,
    queues: QueueConfig,
    seed: int,
) -> Sample:
    """Route flows, draw traffic descriptors, and install per-node queues."""
    if n_flows < 1:
        raise ConfigError(f"need at least one flow, got {n_flows}")
    rng = np.random.default_rng(seed)

    node_policy = {n: queues.policies[rng.integers(len(queues.policies))] for n in topology.nodes}
    node_buffer = {n: _draw_range(rng, queues.buffer_bits) for n in topology.nodes}
    links = [
        replace(link, queues=_queues_for(node_policy[link.src], node_buffer[link.src], queues.weights))
        for link in topology.links
    ]
    topo = Topology(nodes=list(topology.nodes), links=links)

    max_lambda = _draw_range(rng, traffic.max_lambda_bps)
    flows = []
    nodes = topo.nodes
    for fid in range(n_flows):
        src, dst = rng.choice(nodes, size=2, replace=False)
        node_path = shortest_path_routing(topo, int(src), int(dst))
        link_path = route_links(topo, node_path)
        tos = int(traffic.tos_values[rng.integers(len(traffic.tos_values))])
        model = traffic.models[rng.integers(len(traffic.models))]
        rate = max_lambda * rng.uniform(0.1, 1.0)
        path = tuple(
            (idx, min(tos, len(topo.links[idx].queues) - 1)) for idx in link_path
        )
        flows.append(
            Flow(
                id=fid,
                src=int(src),
                dst=int(dst),
                path=path,
                traffic=TrafficDescriptor(
                    model=model,
                    avg_rate_bps=float(rate),
                    tos=tos,
                    params=_traffic_params(model, traffic),
                ),
            )
        )
    sample = Sample(
        topology=topo,
        flows=flows,
        labels=None,
        provenance={"seed": int(seed), "duration_s": None, "version": __version__},
    )
    sample.validate()
    return sample


# ---------------------------------------------------------------------------
# serialization: one JSON object per line


def _queue_to_json(q: Queue) -> dict:
    return {"policy": q.policy, "buffer_bits": q.buffer_bits, "priority": q.priority, "weight": q.weight}


def _topology_to_json(t: Topology) -> dict:
    return {
        "nodes": t.nodes,
        "links": [
            {
                "src": l.src,
                "dst": l.dst,
                "capacity": l.capacity_bps,
                "queues": [_queue_to_json(q) for q in l.queues],
            }
            for l in t.links
        ],
    }


def serialize_sample(sample: Sample) -> str:
    record = {
        "version": DATASET_VERSION,
        "topology": _topology_to_json(sample.topology),
        "flows": [
            {
                "id": f.id,
                "src": f.src,
                "dst": f.dst,
                "path": [[link, queue] for link, queue in f.path],
                "traffic": {
                    "model": f.traffic.model,
                    "avg_rate_bps": f.traffic.avg_rate_bps,
                    "tos": f.traffic.tos,
                    "params": f.traffic.params,
                },
            }
            for f in sample.flows
        ],
        "provenance": sample.provenance,
    }
    if sample.labels is not None:
        record["labels"] = {
            str(fid): {
                "delay_s": lab.delay_s,
                "jitter_s2": lab.jitter_s2,
                "loss": lab.loss,
            }
            for fid, lab in sorted(sample.labels.items())
        }
    return json.dumps(record, separators=(",", ":"), sort_keys=False)


def _topology_from_json(obj: dict) -> Topology:
    links = [
        Link(
            src=int(l["src"]),
            dst=int(l["dst"]),
            capacity_bps=float(l["capacity"]),
            queues=tuple(
                Queue(
                    policy=q["policy"],
                    buffer_bits=float(q["buffer_bits"]),
                    priority=int(q["priority"]),
                    weight=float(q.get("weight", 1.0)),
                )
                for q in l.get("queues", [])
            )
            or _default_queues(),
        )
        for l in obj["links"]
    ]
    return Topology(nodes=[int(n) for n in obj["nodes"]], links=links)


def deserialize_sample(text: str, line_no: int | None = None) -> Sample:
    where = f" (line {line_no})" if line_no is not None else ""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as err:
        raise DataError(f"malformed sample record{where}: {err.msg} at byte offset {err.pos}") from err
    try:
        topo = _topology_from_json(obj["topology"])
        flows = [
            Flow(
                id=int(f["id"]),
                src=int(f["src"]),
                dst=int(f["dst"]),
                path=tuple((int(a), int(b)) for a, b in f["path"]),
                traffic=TrafficDescriptor(
                    model=f["traffic"]["model"],
                    avg_rate_bps=float(f["traffic"]["avg_rate_bps"]),
                    tos=int(f["traffic"]["tos"]),
                    params=f["traffic"].get("params", {}),
                ),
            )
            for f in obj["flows"]
        ]
        labels = None
        if "labels" in obj:
            labels = {
                int(fid): FlowLabels(
                    delay_s=float(lab["delay_s"]),
                    jitter_s2=float(lab["jitter_s2"]),
                    loss=float(lab["loss"]),
                )
                for fid, lab in obj["labels"].items()
            }
        return Sample(
            topology=topo,
            flows=flows,
            labels=labels,
            provenance=obj.get("provenance", {}),
        )
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, DataError):
            raise
        raise DataError(f"malformed sample record{where}: missing or invalid field ({err})") from err


def write_dataset(samples: Iterable[Sample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(serialize_sample(sample))
            fh.write("\n")


def read_dataset(path) -> list[Sample]:
    return list(iter_dataset(path))


def iter_dataset(path) -> Iterator[Sample]:
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as err:
        raise DataError(f"cannot read dataset {path}: {err}") from err
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            yield deserialize_sample(line, line_no=line_no)


def load_topology(path) -> Topology:
    """Import a standalone topology JSON file ({nodes, links})."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as err:
        raise DataError(f"cannot read topology {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise DataError(f"malformed topology file: {err.msg} at byte offset {err.pos}") from err
    try:
        return _topology_from_json(obj)
    except (KeyError, TypeError, ValueError) as err:
        raise DataError(f"malformed topology file: {err}") from err
