"""Tour of the tensor engine: taped ops, backward, Adam, gradient checks.

Run with: python3 demos/01_tensor_autodiff.py
"""

import numpy as np

from flowgnn import numcore as nc
from flowgnn.numcore import AdamState, Tape, adam_step, zero_grad

# --- forward ops record onto a tape when an input requires gradients -------

x = nc.tensor([3.0, -1.0], requires_grad=True)
with Tape() as tape:
    loss = nc.reduce_sum(nc.hadamard(x, x))  # sum(x^2)
    nc.backward(loss)
print("d/dx sum(x^2) at [3, -1]:", x.grad, "(expected [6, -2])")

# --- the finite-difference oracle reports max relative error ---------------

err = nc.gradient_check(
    lambda t: nc.reduce_mean(nc.tanh(nc.sigmoid(t))),
    nc.tensor([0.3, -0.7, 1.2], requires_grad=True),
)
print(f"gradient_check(tanh . sigmoid): max rel error {err:.2e}")

# --- Adam fits a tiny least-squares problem ---------------------------------

rng = np.random.default_rng(0)
w_true = np.array([[2.0, -1.0], [0.5, 1.5]])
xs = rng.normal(size=(2, 40))
ys = w_true @ xs

w = nc.tensor(np.zeros((2, 2)), requires_grad=True)
state = AdamState(learning_rate=0.05)
for step in range(400):
    zero_grad([w])
    with Tape():
        pred = nc.matmul(w, nc.constant(xs))
        diff = nc.sub(pred, nc.constant(ys))
        loss = nc.reduce_mean(nc.hadamard(diff, diff))
        nc.backward(loss)
    adam_step([w], state)
print("recovered weights:\n", np.round(w.values, 3))
print("target weights:\n", w_true)
