"""Losses, metrics, the training loop, and baselines.

Training pairs each task with its loss: relative error (MAPE) for delay
and jitter, absolute error (MAE) for the loss fraction. Gradients are
accumulated over a configurable number of samples per update and applied
with bias-corrected Adam. The reference mode is single-threaded and
bitwise reproducible for a fixed seed; epoch aggregates use exact
summation so recorded losses do not depend on iteration order.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigError, NumericError
from .model import ModelConfig, ModelParams, Predictions, build_params, forward
from .netgraph import PACKET_MEAN_BITS, Sample
from .numcore import AdamState, Tape, Tensor, adam_step, zero_grad

__all__ = [
    "TrainConfig",
    "Metrics",
    "mape",
    "mae",
    "mape_loss",
    "mae_loss",
    "train",
    "evaluate",
    "baseline_transmission_only",
    "labels_vector",
    "metric_for_task",
    "sample_loss",
]

TASKS = ("delay", "jitter", "loss")
MAPE_EPS = 1e-9


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 50
    samples_per_update: int = 8
    task: str = "delay"
    task_weights: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    patience: int | None = 10

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if not 1 <= self.samples_per_update <= 2000:
            raise ConfigError(
                f"samples_per_update must be within [1, 2000], got {self.samples_per_update}"
            )
        if self.task not in TASKS + ("multi",):
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS + ('multi',)}")
        if self.task == "multi" and not self.task_weights:
            raise ConfigError("multi-task training needs task_weights")

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "samples_per_update": self.samples_per_update,
            "task": self.task,
            "task_weights": self.task_weights,
            "seed": self.seed,
            "patience": self.patience,
        }


@dataclass
class Metrics:
    task_metrics: dict[str, dict[str, float]]
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    wall_clock_s: float
    config_hash: str


def config_hash(model_config: ModelConfig, train_config: TrainConfig | None = None) -> str:
    payload = {"model": model_config.to_json()}
    if train_config is not None:
        payload["train"] = train_config.to_json()
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# metrics and losses


def mape(pred, truth) -> float:
    """Mean of |pred - truth| / max(|truth|, eps), as a fraction."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ConfigError(f"mape: length mismatch {p.shape} vs {t.shape}")
    return float(np.mean(np.abs(p - t) / np.maximum(np.abs(t), MAPE_EPS)))


def mae(pred, truth) -> float:
    """Mean absolute difference, in the inputs' units."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ConfigError(f"mae: length mismatch {p.shape} vs {t.shape}")
    return float(np.mean(np.abs(p - t)))


def mape_loss(pred: Tensor, truth: np.ndarray) -> Tensor:
    t = np.asarray(truth, dtype=np.float64)
    inv = nc.constant(1.0 / np.maximum(np.abs(t), MAPE_EPS))
    return nc.reduce_mean(nc.hadamard(nc.absolute(nc.sub(pred, nc.constant(t))), inv))


def mae_loss(pred: Tensor, truth: np.ndarray) -> Tensor:
    t = np.asarray(truth, dtype=np.float64)
    return nc.reduce_mean(nc.absolute(nc.sub(pred, nc.constant(t))))


def labels_vector(sample: Sample, task: str) -> np.ndarray:
    if sample.labels is None:
        raise ConfigError("sample has no labels")
    ordered = sorted(sample.labels.items())
    if task == "delay":
        return np.array([lab.delay_s for _, lab in ordered])
    if task == "jitter":
        return np.array([lab.jitter_s2 for _, lab in ordered])
    if task == "loss":
        return np.array([lab.loss for _, lab in ordered])
    raise ConfigError(f"unknown task {task!r}")


def metric_for_task(task: str, context: str = "default") -> str:
    """Reporting convention: delay and jitter use MAPE, the loss fraction
    MAE; traffic-model comparisons report jitter as MAE instead."""
    if task == "delay":
        return "mape"
    if task == "jitter":
        return "mae" if context == "traffic_model" else "mape"
    if task == "loss":
        return "mae"
    raise ConfigError(f"unknown task {task!r}")


def _task_pred(preds: Predictions, task: str) -> Tensor:
    return {"delay": preds.delay, "jitter": preds.jitter, "loss": preds.loss}[task]


def _single_task_loss(preds: Predictions, sample: Sample, task: str) -> Tensor:
    truth = labels_vector(sample, task)
    if task == "loss":
        return mae_loss(preds.loss, truth)
    return mape_loss(_task_pred(preds, task), truth)


def sample_loss(sample: Sample, params: ModelParams, config: TrainConfig) -> Tensor:
    preds = forward(sample, params)
    if config.task != "multi":
        return _single_task_loss(preds, sample, config.task)
    total = None
    for task, weight in sorted(config.task_weights.items()):
        term = nc.scalar_mul(_single_task_loss(preds, sample, task), weight)
        total = term if total is None else nc.add(total, term)
    return total


# ---------------------------------------------------------------------------
# training


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def train(
    train_samples: list[Sample],
    val_samples: list[Sample],
    model_config: ModelConfig,
    train_config: TrainConfig,
    initial_params: ModelParams | None = None,
    adam_state: AdamState | None = None,
) -> tuple[ModelParams, Metrics]:
    """Train and return the best-validation parameters plus metric series.

    Adam only ever sees gradients from training samples; validation drives
    checkpoint selection and early stopping alone. Resuming is supported by
    passing the previous parameters and optimizer state.
    """
    if not train_samples:
        raise ConfigError("training set is empty")
    for s in train_samples + val_samples:
        if s.labels is None:
            raise ConfigError("all samples must be labeled for training")
    started = time.perf_counter()
    params = initial_params if initial_params is not None else build_params(model_config)
    adam = adam_state if adam_state is not None else AdamState(learning_rate=train_config.learning_rate)
    rng = np.random.default_rng(train_config.seed)

    train_losses: list[float] = []
    val_losses: list[float] = []
    best_val = math.inf
    best_epoch = -1
    best_values = params.clone_values()

    def validation_loss() -> float:
        if not val_samples:
            return math.nan
        with nc.stop_recording():
            losses = [float(sample_loss(s, params, train_config).values) for s in val_samples]
        return math.fsum(losses) / len(losses)

    for epoch in range(train_config.epochs):
        order = rng.permutation(len(train_samples))
        epoch_losses: list[float] = []
        for chunk in _chunks(order, train_config.samples_per_update):
            zero_grad(params.parameters())
            for idx in chunk:
                sample = train_samples[int(idx)]
                with Tape():
                    loss = sample_loss(sample, params, train_config)
                    value = float(loss.values)
                    if not math.isfinite(value):
                        raise NumericError(
                            f"non-finite loss at epoch {epoch} on training sample {int(idx)} "
                            f"(provenance seed {sample.provenance.get('seed')})"
                        )
                    nc.backward(nc.scalar_mul(loss, 1.0 / len(chunk)))
                epoch_losses.append(value)
            # heads outside the trained task receive no gradient at all
            for p in params.parameters():
                if p.grad is None:
                    p.grad = np.zeros_like(p.values)
            adam_step(params.parameters(), adam)
        train_losses.append(math.fsum(epoch_losses) / len(epoch_losses))
        vloss = validation_loss()
        val_losses.append(vloss)

        improved = not math.isnan(vloss) and vloss < best_val
        if improved:
            best_val = vloss
            best_epoch = epoch
            best_values = params.clone_values()
        if (
            train_config.patience is not None
            and best_epoch >= 0
            and epoch - best_epoch >= train_config.patience
        ):
            break

    if best_epoch >= 0:
        params.load_values(best_values)

    task_metrics = {}
    if val_samples:
        eval_tasks = (
            TASKS if train_config.task == "multi" else (train_config.task,)
        )
        for task in eval_tasks:
            task_metrics[task] = _evaluate_task(params, val_samples, task)
    metrics = Metrics(
        task_metrics=task_metrics,
        train_loss=train_losses,
        val_loss=val_losses,
        best_epoch=best_epoch,
        wall_clock_s=time.perf_counter() - started,
        config_hash=config_hash(model_config, train_config),
    )
    return params, metrics


def _evaluate_task(params: ModelParams, samples: list[Sample], task: str) -> dict[str, float]:
    preds_all: list[np.ndarray] = []
    truth_all: list[np.ndarray] = []
    with nc.stop_recording():
        for sample in samples:
            preds = forward(sample, params)
            preds_all.append(_task_pred(preds, task).values)
            truth_all.append(labels_vector(sample, task))
    p = np.concatenate(preds_all)
    t = np.concatenate(truth_all)
    return {"mape": mape(p, t), "mae": mae(p, t), "flows": int(p.size)}


def evaluate(params: ModelParams, samples: list[Sample], task: str) -> Metrics:
    """Metrics of a trained model over a labeled dataset for one task."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    for s in samples:
        if s.labels is None:
            raise ConfigError("evaluation needs labeled samples")
    started = time.perf_counter()
    task_metrics = {task: _evaluate_task(params, samples, task)}
    return Metrics(
        task_metrics=task_metrics,
        train_loss=[],
        val_loss=[],
        best_epoch=-1,
        wall_clock_s=time.perf_counter() - started,
        config_hash=config_hash(params.config),
    )


def baseline_transmission_only(sample: Sample) -> np.ndarray:
    """Delay prediction that ignores queuing entirely."""
    links = sample.topology.links
    flows = sorted(sample.flows, key=lambda f: f.id)
    return np.array(
        [
            sum(PACKET_MEAN_BITS / links[idx].capacity_bps for idx, _ in f.path)
            for f in flows
        ]
    )
