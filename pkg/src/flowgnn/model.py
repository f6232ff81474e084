"""Message-passing model over flows, queues, and links.

Entity features are dimensionless ratios (load, normalized buffers, rate
over bottleneck capacity), so a model trained on small networks transfers
to larger ones. Per-entity encoders produce hidden states of one shared
width; each message-passing iteration then runs three stages:

  1. every flow walks its (queue, link) hops through the flow-level
     recurrent cell, emitting one message per hop;
  2. every queue folds the sum of the messages of flows crossing it into
     its state with a single step of the queue-level cell;
  3. every link folds its queues, in priority order, into its state with
     the link-level recurrent cell.

Readouts keep physical units out of the learned parts: the delay head
predicts a queue occupancy fraction in (0, 1) that is scaled by
buffer/capacity and added to the exact transmission time, so predicted
delays can never fall below the path transmission bound. The jitter head
emits non-negative per-hop contributions; the loss head a probability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .cells import CellKind, CellParams, CellState, cell_step, init_params
from .errors import ConfigError, DataError
from .netgraph import (
    PACKET_MAX_BITS,
    PACKET_MEAN_BITS,
    POLICIES,
    TRAFFIC_MODELS,
    Sample,
)
from .numcore import Tensor

__all__ = [
    "ModelConfig",
    "ModelParams",
    "ModelState",
    "Predictions",
    "build_params",
    "encode_initial_states",
    "message_passing_iteration",
    "readout",
    "forward",
    "save_checkpoint",
    "load_checkpoint",
]

FLOW_FEATURES = 2 + 3 + len(TRAFFIC_MODELS)
LINK_FEATURES = 1 + len(POLICIES)
QUEUE_FEATURES = 2 + 3

HEADS = ("delay", "jitter", "loss")

# start the occupancy head near-empty: most queues in a sane network are
# far from full, and the sigmoid midpoint (50% occupancy) is a poor prior
DELAY_READOUT_BIAS = -2.0


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 32
    iterations: int = 8
    cell_kind: CellKind = CellKind.GRU
    readout_hidden: int = 32
    buffer_reference_bits: float = 32_000.0
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.readout_hidden < 1:
            raise ConfigError(f"readout_hidden must be >= 1, got {self.readout_hidden}")
        object.__setattr__(self, "cell_kind", CellKind(self.cell_kind))

    def to_json(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "iterations": self.iterations,
            "cell_kind": self.cell_kind.value,
            "readout_hidden": self.readout_hidden,
            "buffer_reference_bits": self.buffer_reference_bits,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(
            hidden_dim=int(obj["hidden_dim"]),
            iterations=int(obj["iterations"]),
            cell_kind=CellKind(obj["cell_kind"]),
            readout_hidden=int(obj["readout_hidden"]),
            buffer_reference_bits=float(obj["buffer_reference_bits"]),
            seed=int(obj["seed"]),
        )


class ModelParams:
    """All trainable tensors, keyed by stable path strings."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.tensors: dict[str, Tensor] = {}
        self.cells: dict[str, CellParams] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        tensor.requires_grad = True
        self.tensors[name] = tensor
        return tensor

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def count(self) -> int:
        return sum(t.values.size for t in self.tensors.values())

    def group_counts(self) -> dict[str, int]:
        groups = {"encoders": 0, "cells": 0, "readouts": 0}
        for name, t in self.tensors.items():
            if "_encoder/" in name:
                groups["encoders"] += t.values.size
            elif "_cell/" in name:
                groups["cells"] += t.values.size
            else:
                groups["readouts"] += t.values.size
        return groups

    def clone_values(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.tensors.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self.tensors):
            missing = set(self.tensors) - set(values)
            extra = set(values) - set(self.tensors)
            raise DataError(f"parameter names mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, arr in values.items():
            if self.tensors[name].values.shape != arr.shape:
                raise DataError(
                    f"parameter {name}: shape {arr.shape} does not match "
                    f"expected {self.tensors[name].values.shape}"
                )
            self.tensors[name].values = arr.astype(np.float64).copy()


def _glorot(rng, fan_out, fan_in):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def _register_mlp(params: ModelParams, rng, prefix: str, in_dim: int, hidden: int, out_dim: int, out_bias: float = 0.0):
    params.register(f"{prefix}/W1", Tensor(_glorot(rng, hidden, in_dim)))
    params.register(f"{prefix}/b1", Tensor(np.zeros(hidden)))
    params.register(f"{prefix}/W2", Tensor(_glorot(rng, out_dim, hidden)))
    params.register(f"{prefix}/b2", Tensor(np.full(out_dim, out_bias)))


def _register_cell(params: ModelParams, prefix: str, cell: CellParams):
    params.cells[prefix] = cell
    for name, tensor in cell.tensors():
        params.register(f"{prefix}/{name}", tensor)


def build_params(config: ModelConfig) -> ModelParams:
    """Initialize every encoder, cell, and readout deterministically."""
    params = ModelParams(config)
    h = config.hidden_dim
    rng = np.random.default_rng(config.seed)
    cell_seeds = rng.integers(0, 2**63 - 1, size=3)

    _register_mlp(params, rng, "flow_encoder", FLOW_FEATURES, h, h)
    _register_mlp(params, rng, "queue_encoder", QUEUE_FEATURES, h, h)
    _register_mlp(params, rng, "link_encoder", LINK_FEATURES, h, h)

    kind = config.cell_kind
    _register_cell(params, "flow_cell", init_params(kind, 2 * h, h, seed=int(cell_seeds[0])))
    _register_cell(params, "queue_cell", init_params(kind, h, h, seed=int(cell_seeds[1])))
    _register_cell(params, "link_cell", init_params(kind, h, h, seed=int(cell_seeds[2])))

    r = config.readout_hidden
    _register_mlp(params, rng, "delay_readout", h, r, 1, out_bias=DELAY_READOUT_BIAS)
    _register_mlp(params, rng, "jitter_readout", h, r, 1)
    _register_mlp(params, rng, "loss_readout", h, r, 1)
    return params


# ---------------------------------------------------------------------------
# features


def _one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[index] = 1.0
    return v


def flow_feature_vector(sample: Sample, flow) -> np.ndarray:
    links = sample.topology.links
    bottleneck = min(links[idx].capacity_bps for idx, _ in flow.path)
    return np.concatenate(
        [
            [flow.traffic.avg_rate_bps / bottleneck],
            [PACKET_MEAN_BITS / PACKET_MAX_BITS],
            _one_hot(flow.traffic.tos, 3),
            _one_hot(TRAFFIC_MODELS.index(flow.traffic.model), len(TRAFFIC_MODELS)),
        ]
    )


def link_feature_vector(sample: Sample, link_idx: int) -> np.ndarray:
    link = sample.topology.links[link_idx]
    offered = sum(
        f.traffic.avg_rate_bps
        for f in sample.flows
        if any(idx == link_idx for idx, _ in f.path)
    )
    return np.concatenate(
        [
            [offered / link.capacity_bps],
            _one_hot(POLICIES.index(link.queues[0].policy), len(POLICIES)),
        ]
    )


def queue_feature_vector(sample: Sample, link_idx: int, queue_idx: int, reference_bits: float) -> np.ndarray:
    queue = sample.topology.links[link_idx].queues[queue_idx]
    return np.concatenate(
        [
            [queue.buffer_bits / reference_bits],
            _one_hot(min(queue.priority, 2), 3),
            [queue.weight],
        ]
    )


# ---------------------------------------------------------------------------
# model state


@dataclass
class ModelState:
    flow_h: dict[int, Tensor]
    queue_h: dict[tuple[int, int], Tensor]
    link_h: dict[int, Tensor]
    flow_c: dict[int, Tensor] = field(default_factory=dict)
    link_c: dict[int, Tensor] = field(default_factory=dict)


def _mlp(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    z = nc.add(nc.matmul(params.tensors[f"{prefix}/W1"], x), params.tensors[f"{prefix}/b1"])
    z = nc.relu(z)
    return nc.add(nc.matmul(params.tensors[f"{prefix}/W2"], z), params.tensors[f"{prefix}/b2"])


def _encode(params: ModelParams, prefix: str, features: np.ndarray) -> Tensor:
    return nc.tanh(_mlp(params, prefix, nc.constant(features)))


def _entity_index(sample: Sample):
    """Links traversed by flows and every queue they carry, in stable order.

    Entities outside every flow path take no part in message passing and
    are left out entirely, which keeps updates local to the subnetwork a
    flow actually touches.
    """
    link_keys: set[int] = set()
    for flow in sample.flows:
        for link_idx, _ in flow.path:
            link_keys.add(link_idx)
    queue_keys = [
        (link_idx, queue_idx)
        for link_idx in sorted(link_keys)
        for queue_idx in range(len(sample.topology.links[link_idx].queues))
    ]
    return queue_keys, sorted(link_keys)


def encode_initial_states(sample: Sample, params: ModelParams) -> ModelState:
    """Per-entity feature vectors through their encoders."""
    config = params.config
    queue_keys, link_keys = _entity_index(sample)
    flows = sorted(sample.flows, key=lambda f: f.id)
    h = config.hidden_dim
    lstm = config.cell_kind is CellKind.LSTM

    state = ModelState(flow_h={}, queue_h={}, link_h={})
    for flow in flows:
        state.flow_h[flow.id] = _encode(params, "flow_encoder", flow_feature_vector(sample, flow))
        if lstm:
            state.flow_c[flow.id] = nc.constant(np.zeros(h))
    for link_idx, queue_idx in queue_keys:
        state.queue_h[(link_idx, queue_idx)] = _encode(
            params,
            "queue_encoder",
            queue_feature_vector(sample, link_idx, queue_idx, config.buffer_reference_bits),
        )
    for link_idx in link_keys:
        state.link_h[link_idx] = _encode(params, "link_encoder", link_feature_vector(sample, link_idx))
        if lstm:
            state.link_c[link_idx] = nc.constant(np.zeros(h))
    return state


def message_passing_iteration(state: ModelState, sample: Sample, params: ModelParams, iteration: int) -> ModelState:
    """One three-stage update; entities not on any flow path keep their state."""
    config = params.config
    kind = config.cell_kind
    lstm = kind is CellKind.LSTM
    flows = sorted(sample.flows, key=lambda f: f.id)
    flow_cell = params.cells["flow_cell"]
    queue_cell = params.cells["queue_cell"]
    link_cell = params.cells["link_cell"]
    h = config.hidden_dim

    # stage 1: flows walk their paths and emit one message per hop
    new_flow_h: dict[int, Tensor] = {}
    new_flow_c: dict[int, Tensor] = {}
    messages: dict[tuple[int, int], Tensor] = {}
    for flow in flows:
        cell_state = CellState(
            h=state.flow_h[flow.id],
            c=state.flow_c[flow.id] if lstm else None,
        )
        for hop in flow.path:
            x = nc.concat_last_axis(state.queue_h[hop], state.link_h[hop[0]])
            cell_state = cell_step(kind, flow_cell, cell_state, x)
            if hop in messages:
                messages[hop] = nc.add(messages[hop], cell_state.h)
            else:
                messages[hop] = cell_state.h
        new_flow_h[flow.id] = cell_state.h
        if lstm:
            new_flow_c[flow.id] = cell_state.c

    # stage 2: queues fold the summed messages of their flows
    new_queue_h = dict(state.queue_h)
    for key in sorted(messages):
        queue_state = CellState(
            h=state.queue_h[key],
            c=nc.constant(np.zeros(h)) if lstm else None,
        )
        new_queue_h[key] = cell_step(kind, queue_cell, queue_state, messages[key]).h

    # stage 3: links fold their queues in priority order
    new_link_h = dict(state.link_h)
    new_link_c = dict(state.link_c)
    links = sample.topology.links
    for link_idx in sorted(state.link_h):
        cell_state = CellState(
            h=state.link_h[link_idx],
            c=state.link_c[link_idx] if lstm else None,
        )
        touched = False
        for queue_idx in range(len(links[link_idx].queues)):
            key = (link_idx, queue_idx)
            if key not in new_queue_h:
                continue
            cell_state = cell_step(kind, link_cell, cell_state, new_queue_h[key])
            touched = True
        if touched:
            new_link_h[link_idx] = cell_state.h
            if lstm:
                new_link_c[link_idx] = cell_state.c

    return ModelState(
        flow_h=new_flow_h,
        queue_h=new_queue_h,
        link_h=new_link_h,
        flow_c=new_flow_c if lstm else {},
        link_c=new_link_c if lstm else {},
    )


# ---------------------------------------------------------------------------
# readouts


def _concat_flow_values(per_flow: list[Tensor]) -> Tensor:
    out = per_flow[0]
    for t in per_flow[1:]:
        out = nc.concat_last_axis(out, t)
    return out


def readout(state: ModelState, sample: Sample, params: ModelParams, head: str) -> Tensor:
    """Per-flow prediction vector, flows ordered by ascending id."""
    if head not in HEADS:
        raise ConfigError(f"unknown readout head {head!r}; expected one of {HEADS}")
    flows = sorted(sample.flows, key=lambda f: f.id)
    links = sample.topology.links

    if head == "loss":
        return _concat_flow_values(
            [nc.sigmoid(_mlp(params, "loss_readout", state.flow_h[f.id])) for f in flows]
        )

    # per-queue terms are shared by all flows crossing the queue
    hop_keys = sorted({hop for flow in flows for hop in flow.path})
    per_queue: dict[tuple[int, int], Tensor] = {}
    for key in hop_keys:
        if head == "delay":
            occupancy = nc.sigmoid(_mlp(params, "delay_readout", state.queue_h[key]))
            link = links[key[0]]
            scale = link.queues[key[1]].buffer_bits / link.capacity_bps
            per_queue[key] = nc.scalar_mul(occupancy, scale)
        else:
            per_queue[key] = nc.softplus(_mlp(params, "jitter_readout", state.queue_h[key]))

    outputs = []
    for flow in flows:
        total = None
        for hop in flow.path:
            term = per_queue[hop]
            total = term if total is None else nc.add(total, term)
        if head == "delay":
            transmission = sum(PACKET_MEAN_BITS / links[idx].capacity_bps for idx, _ in flow.path)
            total = nc.add(total, nc.constant(np.array([transmission])))
        outputs.append(total)
    return _concat_flow_values(outputs)


@dataclass
class Predictions:
    delay: Tensor
    jitter: Tensor
    loss: Tensor
    flow_ids: list[int]

    def to_numpy(self) -> dict[str, np.ndarray]:
        return {
            "delay": self.delay.values.copy(),
            "jitter": self.jitter.values.copy(),
            "loss": self.loss.values.copy(),
        }


def forward(sample: Sample, params: ModelParams) -> Predictions:
    """Encode, iterate message passing, and run all three readout heads."""
    state = encode_initial_states(sample, params)
    for i in range(params.config.iterations):
        state = message_passing_iteration(state, sample, params, i)
    flow_ids = sorted(f.id for f in sample.flows)
    return Predictions(
        delay=readout(state, sample, params, "delay"),
        jitter=readout(state, sample, params, "jitter"),
        loss=readout(state, sample, params, "loss"),
        flow_ids=flow_ids,
    )


# ---------------------------------------------------------------------------
# checkpoints


CHECKPOINT_VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": params.config.to_json(),
        "tensors": {
            name: {"shape": list(t.values.shape), "values": t.values.reshape(-1).tolist()}
            for name, t in params.tensors.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> ModelParams:
    """Rebuild a model and validate the stored shape table exactly."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as err:
        raise DataError(f"cannot read checkpoint {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise DataError(f"malformed checkpoint: {err.msg} at byte offset {err.pos}") from err
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {payload.get('format_version')}")
    params = build_params(ModelConfig.from_json(payload["config"]))
    values = {}
    for name, entry in payload["tensors"].items():
        arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        values[name] = arr
    params.load_values(values)
    return params
