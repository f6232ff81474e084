"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array in row-major order. Operations on tensors
record entries on the active ``Tape`` whenever an input requires gradients;
``backward`` replays the tape in exact reverse execution order and
accumulates gradients into every reachable tensor with ``requires_grad``.

The tape is dynamic: one forward pass builds one tape, which is discarded
after the backward pass. Tapes are strictly single-threaded; tensors that
are not attached to a tape are plain immutable values and safe to share.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GradientError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "AdamState",
    "tensor",
    "constant",
    "zeros",
    "apply",
    "add",
    "sub",
    "matmul",
    "hadamard",
    "concat_last_axis",
    "tanh",
    "sigmoid",
    "relu",
    "softplus",
    "absolute",
    "reduce_mean",
    "reduce_sum",
    "scalar_mul",
    "backward",
    "zero_grad",
    "adam_step",
    "gradient_check",
    "stop_recording",
]

# Pre-activations beyond this magnitude saturate tanh/sigmoid anyway; the
# clamp keeps exp() finite and keeps sigmoid outputs strictly inside (0, 1)
# in float64 (sigmoid(36) is still representable below 1.0).
ACTIVATION_CLAMP = 36.0


class Tensor:
    """A dense float64 array that can participate in gradient taping."""

    __slots__ = ("values", "requires_grad", "grad", "tape")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def to_numpy(self) -> np.ndarray:
        return self.values.copy()

    def accumulate_grad(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += delta

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _OpRecord:
    __slots__ = ("output", "backward_fn")

    def __init__(self, output: Tensor, backward_fn: Callable[[np.ndarray], None]):
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed operations for one forward pass.

    Usable as a context manager; the innermost active tape receives the
    recordings. Without an explicit tape, an ambient module-level tape is
    used so that gradient-tracked operations are never silently dropped.
    """

    def __init__(self):
        self.entries: list[_OpRecord] = []
        self._consumed = False

    def record(self, output: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
        output.tape = self
        self.entries.append(_OpRecord(output, backward_fn))

    def reset_grads(self) -> None:
        """Clear gradients of every tensor recorded on this tape and re-arm it."""
        for entry in self.entries:
            entry.output.grad = None
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"

    def __len__(self) -> int:
        return len(self.entries)


_TAPE_STACK: list[Tape] = []
_AMBIENT_TAPE: Tape | None = None
_RECORDING = True


class stop_recording:
    """Context manager that disables taping (pure evaluation)."""

    def __enter__(self):
        global _RECORDING
        self._prev = _RECORDING
        _RECORDING = False
        return self

    def __exit__(self, *exc):
        global _RECORDING
        _RECORDING = self._prev


def _current_tape() -> Tape:
    global _AMBIENT_TAPE
    if _TAPE_STACK:
        return _TAPE_STACK[-1]
    if _AMBIENT_TAPE is None or _AMBIENT_TAPE._consumed:
        _AMBIENT_TAPE = Tape()
    return _AMBIENT_TAPE


def tensor(values, requires_grad: bool = False) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=requires_grad)


def _make_result(
    op_kind: str,
    values: np.ndarray,
    inputs: tuple[Tensor, ...],
    backward_builder: Callable[[Tensor], Callable[[np.ndarray], None]],
) -> Tensor:
    out = Tensor(values)
    if _RECORDING and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _current_tape().record(out, backward_builder(out))
    return out


def _shape_mismatch(op_kind: str, a: Tensor, b: Tensor) -> ShapeError:
    return ShapeError(f"{op_kind}: shapes {a.shape} and {b.shape} do not conform")


# ---------------------------------------------------------------------------
# elementwise and structural operations


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_mismatch("add", a, b)
    values = a.values + b.values

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(g)

        return bwd

    return _make_result("add", values, (a, b), build)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_mismatch("sub", a, b)
    values = a.values - b.values

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(-g)

        return bwd

    return _make_result("sub", values, (a, b), build)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_mismatch("hadamard", a, b)
    values = a.values * b.values

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g * b.values)
            if b.requires_grad:
                b.accumulate_grad(g * a.values)

        return bwd

    return _make_result("hadamard", values, (a, b), build)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: (m,k)@(k,n) -> (m,n) or matrix-vector (m,k)@(k,) -> (m,)."""
    if a.values.ndim != 2 or b.values.ndim not in (1, 2):
        raise ShapeError(
            f"matmul: unsupported ranks {a.shape} @ {b.shape}; "
            "expected 2-d lhs and 1-d or 2-d rhs"
        )
    if a.shape[1] != b.shape[0]:
        raise _shape_mismatch("matmul", a, b)
    values = a.values @ b.values

    def build(out):
        def bwd(g):
            if b.values.ndim == 1:
                if a.requires_grad:
                    a.accumulate_grad(np.outer(g, b.values))
                if b.requires_grad:
                    b.accumulate_grad(a.values.T @ g)
            else:
                if a.requires_grad:
                    a.accumulate_grad(g @ b.values.T)
                if b.requires_grad:
                    b.accumulate_grad(a.values.T @ g)

        return bwd

    return _make_result("matmul", values, (a, b), build)


def concat_last_axis(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != b.values.ndim or a.shape[:-1] != b.shape[:-1]:
        raise _shape_mismatch("concat_last_axis", a, b)
    values = np.concatenate([a.values, b.values], axis=-1)
    split = a.shape[-1]

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g[..., :split])
            if b.requires_grad:
                b.accumulate_grad(g[..., split:])

        return bwd

    return _make_result("concat_last_axis", values, (a, b), build)


def tanh(a: Tensor) -> Tensor:
    values = np.tanh(np.clip(a.values, -ACTIVATION_CLAMP, ACTIVATION_CLAMP))

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g * (1.0 - out.values * out.values))

        return bwd

    return _make_result("tanh", values, (a,), build)


def sigmoid(a: Tensor) -> Tensor:
    x = np.clip(a.values, -ACTIVATION_CLAMP, ACTIVATION_CLAMP)
    values = 1.0 / (1.0 + np.exp(-x))

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g * out.values * (1.0 - out.values))

        return bwd

    return _make_result("sigmoid", values, (a,), build)


def relu(a: Tensor) -> Tensor:
    values = np.maximum(a.values, 0.0)

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g * (a.values > 0.0))

        return bwd

    return _make_result("relu", values, (a,), build)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)) in overflow-free form; strictly positive output."""
    x = a.values
    values = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def build(out):
        def bwd(g):
            if a.requires_grad:
                xc = np.clip(x, -ACTIVATION_CLAMP, ACTIVATION_CLAMP)
                a.accumulate_grad(g / (1.0 + np.exp(-xc)))

        return bwd

    return _make_result("softplus", values, (a,), build)


def absolute(a: Tensor) -> Tensor:
    """|x| with sign subgradient (0 at exactly 0)."""
    values = np.abs(a.values)

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g * np.sign(a.values))

        return bwd

    return _make_result("absolute", values, (a,), build)


def reduce_sum(a: Tensor) -> Tensor:
    values = np.asarray(a.values.sum())

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(np.full_like(a.values, float(g)))

        return bwd

    return _make_result("reduce_sum", values, (a,), build)


def reduce_mean(a: Tensor) -> Tensor:
    n = a.values.size
    if n == 0:
        raise ShapeError("reduce_mean: empty tensor")
    values = np.asarray(a.values.mean())

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(np.full_like(a.values, float(g) / n))

        return bwd

    return _make_result("reduce_mean", values, (a,), build)


def scalar_mul(a: Tensor, k: float) -> Tensor:
    k = float(k)
    values = a.values * k

    def build(out):
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g * k)

        return bwd

    return _make_result("scalar_mul", values, (a,), build)


_BINARY_OPS = {
    "matmul": matmul,
    "add": add,
    "hadamard": hadamard,
    "concat_last_axis": concat_last_axis,
}
_UNARY_OPS = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "reduce_mean": reduce_mean,
    "reduce_sum": reduce_sum,
}


def apply(op_kind: str, *inputs) -> Tensor:
    """Dispatch by operation name; shape checks are per-op."""
    if op_kind in _BINARY_OPS:
        if len(inputs) != 2:
            raise ShapeError(f"{op_kind}: expected 2 inputs, got {len(inputs)}")
        return _BINARY_OPS[op_kind](*inputs)
    if op_kind in _UNARY_OPS:
        if len(inputs) != 1:
            raise ShapeError(f"{op_kind}: expected 1 input, got {len(inputs)}")
        return _UNARY_OPS[op_kind](*inputs)
    if op_kind == "scalar_mul":
        if len(inputs) != 2 or isinstance(inputs[1], Tensor):
            raise ShapeError("scalar_mul: expected (tensor, python scalar)")
        return scalar_mul(inputs[0], inputs[1])
    raise ShapeError(f"unknown op_kind {op_kind!r}")


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    The tape that recorded ``loss`` is replayed in exact reverse execution
    order. The tape is then marked consumed: a second call without
    ``tape.reset_grads()`` raises, which makes accidental double
    accumulation testable.
    """
    if loss.values.size != 1:
        raise GradientError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise GradientError("backward: loss is not connected to a tape")
    if tape._consumed:
        raise GradientError(
            "backward: tape already consumed; call reset_grads() or rebuild the forward pass"
        )
    tape._consumed = True
    loss.grad = np.ones_like(loss.values)
    for entry in reversed(tape.entries):
        g = entry.output.grad
        if g is None:
            continue
        entry.backward_fn(g)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Adam optimizer


class AdamState:
    """Bias-corrected Adam state over an ordered parameter set."""

    def __init__(
        self,
        learning_rate: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update. Gradients are left untouched."""
    if state.m is None:
        state.m = [np.zeros_like(p.values) for p in params]
        state.v = [np.zeros_like(p.values) for p in params]
    if len(state.m) != len(params):
        raise GradientError(
            f"adam_step: parameter count changed ({len(state.m)} -> {len(params)})"
        )
    for i, p in enumerate(params):
        if p.grad is None:
            raise GradientError(f"adam_step: parameter {i} has no gradient")
        if state.m[i].shape != p.values.shape:
            raise GradientError(
                f"adam_step: parameter {i} shape drifted "
                f"{state.m[i].shape} -> {p.values.shape}"
            )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        p.values -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


# ---------------------------------------------------------------------------
# finite-difference oracle


def gradient_check(
    f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is
    ``|analytic - central| / max(|analytic|, |central|, 1e-12)``.
    ``f`` must be scalar-valued and must only depend on ``x``'s values.
    """
    if step <= 0:
        raise ValueError("gradient_check: step must be positive")
    x.grad = None
    with Tape():
        y = f(x)
        if y.values.size != 1:
            raise GradientError(
                f"gradient_check: f must be scalar-valued, got shape {y.shape}"
            )
        backward(y)
    if x.grad is None:
        analytic = np.zeros_like(x.values)
    else:
        analytic = x.grad.copy()

    flat = x.values.reshape(-1)
    numeric = np.zeros_like(flat)
    with stop_recording():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f(Tensor(x.values)).values)
            flat[i] = orig - step
            lo = float(f(Tensor(x.values)).values)
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * step)
    numeric = numeric.reshape(x.values.shape)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))
