"""The three recurrent cells: step equations, parameter ratios, timing.

Run with: python3 demos/02_recurrent_cells.py
"""

import time

import numpy as np

from flowgnn.cells import CellKind, CellState, cell_step, init_params, param_count, zero_state
from flowgnn.numcore import Tensor

d, h = 4, 8
print(f"parameter counts at input_dim={d}, hidden_dim={h}:")
for kind in (CellKind.RNN, CellKind.GRU, CellKind.LSTM):
    print(f"  {kind.value:4s}: {param_count(kind, d, h):4d}")
print("ratio is exactly 1 : 3 : 4\n")

# closing the GRU update gate freezes the hidden state
params = init_params(CellKind.GRU, d, h, seed=0)
params.biases["b_z"].values[:] = -1e6
h_prev = np.linspace(-0.5, 0.5, h)
out = cell_step(CellKind.GRU, params, CellState(h=Tensor(h_prev)), Tensor(np.ones(d)))
print("GRU with closed update gate: max |h_t - h_{t-1}| =", np.max(np.abs(out.h.values - h_prev)))

# sequence cost grows linearly with length
params = init_params(CellKind.LSTM, 16, 16, seed=1)
x = Tensor(np.zeros(16))


def run(steps):
    state = zero_state(CellKind.LSTM, 16)
    t0 = time.perf_counter()
    for _ in range(steps):
        state = cell_step(CellKind.LSTM, params, state, x)
    return time.perf_counter() - t0


run(64)
t64 = min(run(64) for _ in range(3))
t128 = min(run(128) for _ in range(3))
print(f"\nLSTM sequence timing: T=64 {1e3 * t64:.1f} ms, T=128 {1e3 * t128:.1f} ms, "
      f"ratio {t128 / t64:.2f} (linear in T)")
