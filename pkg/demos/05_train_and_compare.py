"""End to end at demo scale: simulate a dataset, train a small model for
each cell kind, and compare against the transmission-only baseline.

Takes about a minute. Run with: python3 demos/05_train_and_compare.py
"""

import numpy as np

from flowgnn.cells import CellKind
from flowgnn.model import ModelConfig
from flowgnn.netgraph import QueueConfig, TrafficConfig, build_sample, power_law_topology
from flowgnn.simulator import SimConfig, label_sample
from flowgnn.trainer import (
    TrainConfig,
    baseline_transmission_only,
    labels_vector,
    mape,
    train,
)


def make_sample(i):
    rng = np.random.default_rng(i)
    topo = power_law_topology(int(rng.integers(7, 10)), seed=100 + i, capacity_bps=4000.0)
    sample = build_sample(
        topo, 6, TrafficConfig(max_lambda_bps=(800.0, 2400.0)), QueueConfig(), seed=200 + i
    )
    return label_sample(sample, SimConfig(duration_s=150.0, seed=300 + i))


print("simulating 14 samples...")
samples = [make_sample(i) for i in range(14)]
train_set, val_set = samples[:11], samples[11:]

baseline = mape(
    np.concatenate([baseline_transmission_only(s) for s in val_set]),
    np.concatenate([labels_vector(s, "delay") for s in val_set]),
)
print(f"transmission-only baseline: validation delay MAPE {baseline:.3f}\n")

for kind in (CellKind.RNN, CellKind.GRU, CellKind.LSTM):
    model_config = ModelConfig(hidden_dim=16, iterations=4, cell_kind=kind, seed=1)
    train_config = TrainConfig(epochs=30, samples_per_update=4, seed=2, patience=None)
    _, metrics = train(train_set, val_set, model_config, train_config)
    final = metrics.task_metrics["delay"]["mape"]
    print(f"{kind.value:4s}: val delay MAPE {final:.3f} "
          f"(loss {metrics.val_loss[0]:.2f} -> {metrics.val_loss[-1]:.2f} over {len(metrics.val_loss)} epochs)")
