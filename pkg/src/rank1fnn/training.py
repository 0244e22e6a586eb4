"""Loss, analytic gradients and the two trainers.

The loss is the summed negative log-likelihood of the one-hot targets.  The
Rank-1 FNN trainer runs block-coordinate gradient descent: within one outer
iteration each mode factor ``W_l`` takes one full-batch step, in mode order,
using the freshest values of the other factors, and then ``V`` takes one step.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import LabeledDataset
from .model import (
    DenseFNN,
    Rank1FNN,
    flatten_batch,
    sigmoid,
    softmax,
    transformed_inputs,
    unfold_batch,
)
from .metrics import accuracy

__all__ = [
    "TraceStep",
    "TrainConfig",
    "TrainReport",
    "TrainingDivergedError",
    "finite_difference_gradient",
    "grad_dense_hidden_weights",
    "grad_mode_weights",
    "grad_output_weights",
    "init_dense",
    "init_rank1",
    "nll_loss",
    "train_dense",
    "train_rank1",
]

LOG_FLOOR = 1e-300


class TrainingDivergedError(ArithmeticError):
    """The training loss became non-finite."""

    def __init__(self, epoch: int, losses: list):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch
        self.losses = losses


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    max_epochs: int = 500
    tolerance: float = 1e-8
    seed: int = 0
    init_scale: float = 0.1
    slope: float = 1.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if not self.tolerance >= 0:
            raise ValueError("tolerance must be non-negative")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")
        if not self.slope > 0:
            raise ValueError("slope must be positive")


@dataclass
class TrainReport:
    losses: list
    initial_loss: float
    terminated_by: str
    train_accuracy: float

    @property
    def epochs_run(self) -> int:
        return len(self.losses)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,loss\n")
        for epoch, loss in enumerate(self.losses, start=1):
            buf.write(f"{epoch},{loss!r}\n")
        buf.write(f"summary,{self.epochs_run},{self.terminated_by},{self.train_accuracy!r}\n")
        return buf.getvalue()


@dataclass
class TraceStep:
    """Snapshot taken right after one block update."""

    epoch: int
    block: str
    tau: np.ndarray | None
    mode_factors: tuple
    output_weights: np.ndarray


# -- loss and gradients ------------------------------------------------------

def _check(model, dataset: LabeledDataset):
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if dataset.dims != tuple(model.input_dims):
        raise ValueError(f"dataset dims {dataset.dims} do not match model dims {model.input_dims}")
    if dataset.n_classes != model.class_count:
        raise ValueError(f"dataset has {dataset.n_classes} classes, model {model.class_count}")


def _nll(probs: np.ndarray, targets: np.ndarray) -> float:
    return float(-np.sum(targets * np.log(np.maximum(probs, LOG_FLOOR))))


def nll_loss(model, dataset: LabeledDataset) -> float:
    _check(model, dataset)
    return _nll(model.forward(dataset.samples), dataset.targets)


def grad_output_weights(model, dataset: LabeledDataset) -> np.ndarray:
    """dL/dV, shape ``(Q, C)``."""
    _check(model, dataset)
    u = model.hidden_activations(dataset.samples)
    delta = softmax(u @ model.output_weights) - dataset.targets
    return u.T @ delta


def _mode_gradient(model: Rank1FNN, tau: np.ndarray, mode: int, targets: np.ndarray):
    """Gradient for ``W_mode`` given precomputed ``tau`` (N, p_mode, Q)."""
    z = np.einsum("npq,pq->nq", tau, model.mode_factors[mode])
    u = sigmoid(z, model.slope)
    delta = softmax(u @ model.output_weights) - targets
    dz = (delta @ model.output_weights.T) * (model.slope * u * (1.0 - u))
    return np.einsum("npq,nq->pq", tau, dz)


def grad_mode_weights(model: Rank1FNN, dataset: LabeledDataset, mode: int) -> np.ndarray:
    """dL/dW_mode, shape ``(p_mode, Q)`` (0-based mode)."""
    _check(model, dataset)
    if not 0 <= mode < model.order:
        raise IndexError(f"mode {mode} out of range for a {model.order}-mode model")
    tau = transformed_inputs(model.mode_factors, dataset.samples, mode)
    return _mode_gradient(model, tau, mode, dataset.targets)


def grad_dense_hidden_weights(model: DenseFNN, dataset: LabeledDataset) -> np.ndarray:
    """dL/dW for the dense baseline, shape ``(Q, prod(dims))``."""
    _check(model, dataset)
    x = flatten_batch(dataset.samples)
    u = sigmoid(x @ model.hidden_weights.T, model.slope)
    delta = softmax(u @ model.output_weights) - dataset.targets
    dz = (delta @ model.output_weights.T) * (model.slope * u * (1.0 - u))
    return dz.T @ x


def finite_difference_gradient(loss_fn: Callable[[np.ndarray], float], params, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` at ``params``.

    Arithmetic runs in the dtype of ``params`` (at least float64), so an
    extended-precision ``params`` and ``loss_fn`` give an extended-precision
    estimate.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    theta = np.array(params, dtype=np.result_type(np.asarray(params).dtype, np.float64))
    h = theta.dtype.type(h)
    grad = np.empty_like(theta)
    flat, gflat = theta.reshape(-1), grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        up = loss_fn(theta.copy())
        flat[j] = orig - h
        down = loss_fn(theta.copy())
        flat[j] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ArithmeticError(f"non-finite loss while perturbing coordinate {j}")
        gflat[j] = (up - down) / (2 * h)
    return grad


# -- trainers ----------------------------------------------------------------

def init_rank1(dims: Sequence[int], hidden: int, classes: int, cfg: TrainConfig) -> Rank1FNN:
    """Uniform ``[-init_scale, init_scale]`` weights drawn from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    s = cfg.init_scale
    factors = [rng.uniform(-s, s, size=(int(p), hidden)) for p in dims]
    V = rng.uniform(-s, s, size=(hidden, classes))
    return Rank1FNN(factors, V, cfg.slope)


def init_dense(dims: Sequence[int], hidden: int, classes: int, cfg: TrainConfig) -> DenseFNN:
    rng = np.random.default_rng(cfg.seed)
    s = cfg.init_scale
    W = rng.uniform(-s, s, size=(hidden, math.prod(int(p) for p in dims)))
    V = rng.uniform(-s, s, size=(hidden, classes))
    return DenseFNN(tuple(dims), W, V, cfg.slope)


def _validate_run(dataset: LabeledDataset, dims, hidden: int, classes: int):
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if dataset.dims != tuple(int(p) for p in dims):
        raise ValueError(f"dataset dims {dataset.dims} do not match {tuple(dims)}")
    if dataset.n_classes != classes:
        raise ValueError(f"dataset has {dataset.n_classes} classes, expected {classes}")
    if hidden < 1:
        raise ValueError("hidden must be at least 1")


def _stop(prev: float, cur: float, tol: float) -> bool:
    # A flat loss stops training; a transient increase does not.
    return abs(prev - cur) / max(abs(prev), 1e-300) < tol


def _run(model, dataset, cfg: TrainConfig, epoch_step):
    targets = dataset.targets
    initial = _nll(model.forward(dataset.samples), targets)
    if not math.isfinite(initial):
        raise TrainingDivergedError(0, [])
    losses, prev, reason = [], initial, "budget"
    for epoch in range(1, cfg.max_epochs + 1):
        model = epoch_step(model, epoch)
        with np.errstate(over="ignore", invalid="ignore"):
            probs = model.forward(dataset.samples) if _finite(model) else None
        loss = _nll(probs, targets) if probs is not None else math.nan
        losses.append(loss)
        if not math.isfinite(loss):
            raise TrainingDivergedError(epoch, losses)
        if _stop(prev, loss, cfg.tolerance):
            reason = "tolerance"
            break
        prev = loss
    report = TrainReport(losses, initial, reason, accuracy(model.predict(dataset.samples), dataset.labels))
    return model, report


def _finite(model) -> bool:
    if isinstance(model, Rank1FNN):
        blocks = [*model.mode_factors, model.output_weights]
    else:
        blocks = [model.hidden_weights, model.output_weights]
    return all(np.all(np.isfinite(b)) for b in blocks)


def train_rank1(dataset: LabeledDataset, dims: Sequence[int], hidden: int, classes: int,
                cfg: TrainConfig, trace: list | None = None):
    """Fit a Rank-1 FNN by alternating mode-wise gradient steps.

    Each outer iteration visits modes ``0, ..., D-1`` in order.  The
    transformed inputs for mode ``l`` are built from factors ``< l`` already
    updated in this iteration and factors ``> l`` not yet updated.  The output
    weights are stepped last.  If ``trace`` is a list, a :class:`TraceStep`
    is appended after every block update.

    Returns ``(model, report)``; raises :class:`TrainingDivergedError` if the
    loss stops being finite.
    """
    _validate_run(dataset, dims, hidden, classes)
    X, T, lr = dataset.samples, dataset.targets, cfg.learning_rate
    unfoldings = [unfold_batch(X, l) for l in range(len(dims))]

    def epoch_step(model: Rank1FNN, epoch: int) -> Rank1FNN:
        with np.errstate(over="ignore", invalid="ignore"):
            for l in range(model.order):
                tau = transformed_inputs(model.mode_factors, X, l, unfoldings[l])
                step = lr * _mode_gradient(model, tau, l, T)
                factors = list(model.mode_factors)
                factors[l] = factors[l] - step
                model = model.replace(mode_factors=factors)
                if trace is not None:
                    trace.append(TraceStep(epoch, f"W{l + 1}", tau, model.mode_factors, model.output_weights))
            u = sigmoid(model.pre_activations(X, 0, unfoldings[0]), model.slope)
            delta = softmax(u @ model.output_weights) - T
            model = model.replace(output_weights=model.output_weights - lr * (u.T @ delta))
        if trace is not None:
            trace.append(TraceStep(epoch, "V", None, model.mode_factors, model.output_weights))
        return model

    return _run(init_rank1(dims, hidden, classes, cfg), dataset, cfg, epoch_step)


def train_dense(dataset: LabeledDataset, dims: Sequence[int], hidden: int, classes: int,
                cfg: TrainConfig):
    """Plain full-batch gradient descent on the dense baseline."""
    _validate_run(dataset, dims, hidden, classes)
    x, T, lr = flatten_batch(dataset.samples), dataset.targets, cfg.learning_rate

    def epoch_step(model: DenseFNN, epoch: int) -> DenseFNN:
        with np.errstate(over="ignore", invalid="ignore"):
            u = sigmoid(x @ model.hidden_weights.T, model.slope)
            delta = softmax(u @ model.output_weights) - T
            dz = (delta @ model.output_weights.T) * (model.slope * u * (1.0 - u))
            return model.replace(
                hidden_weights=model.hidden_weights - lr * (dz.T @ x),
                output_weights=model.output_weights - lr * (u.T @ delta),
            )

    return _run(init_dense(dims, hidden, classes, cfg), dataset, cfg, epoch_step)
