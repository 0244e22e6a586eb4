"""Compare analytic gradients against central finite differences.

The finite-difference side evaluates the loss through a separate
brute-force forward pass (explicit Kronecker weight vectors) in extended
precision.  In float64 the cancellation in ``L(w + h) - L(w - h)`` leaves an
absolute error near ``eps * L / h``, which swamps small gradient entries.
"""
from __future__ import annotations

import numpy as np

from .data import LabeledDataset
from .model import Rank1FNN
from .training import finite_difference_gradient, grad_mode_weights, grad_output_weights

TOLERANCE = 1e-5
FD_STEP = 1e-6
EXTENDED = np.longdouble


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def reference_loss(mode_factors, output_weights, slope, samples, labels):
    """Summed NLL via explicit full weight vectors, in extended precision."""
    factors = [np.asarray(W, dtype=EXTENDED) for W in mode_factors]
    V = np.asarray(output_weights, dtype=EXTENDED)
    X = np.asarray(samples, dtype=EXTENDED)
    Q = V.shape[0]
    # Full weight tensor of neuron i is w_1 o w_2 o ... o w_D; contract with X directly.
    rows = []
    for i in range(Q):
        w = factors[0][:, i]
        for W in factors[1:]:
            w = np.multiply.outer(w, W[:, i])
        rows.append(w.reshape(-1))
    W_full = np.stack(rows)
    z = X.reshape(X.shape[0], -1) @ W_full.T
    u = 1 / (1 + np.exp(-EXTENDED(slope) * z))
    logits = u @ V
    logits = logits - logits.max(axis=1, keepdims=True)
    log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return -log_probs[np.arange(len(labels)), labels].sum()


def random_problem(seed: int, max_order: int = 3, max_dim: int = 4, max_hidden: int = 3,
                   max_classes: int = 3, max_samples: int = 5):
    """Small random Rank-1 FNN and dataset for gradient checks."""
    rng = np.random.default_rng(seed)
    D = int(rng.integers(1, max_order + 1))
    dims = tuple(int(p) for p in rng.integers(1, max_dim + 1, size=D))
    Q = int(rng.integers(1, max_hidden + 1))
    C = int(rng.integers(2, max_classes + 1))
    N = int(rng.integers(1, max_samples + 1))
    factors = [rng.uniform(-1, 1, size=(p, Q)) for p in dims]
    V = rng.uniform(-1, 1, size=(Q, C))
    model = Rank1FNN(factors, V, slope=float(rng.uniform(0.5, 2.0)))
    X = rng.uniform(-1, 1, size=(N, *dims))
    y = rng.integers(0, C, size=N)
    return model, LabeledDataset(X, y, C)


def check_gradients(model: Rank1FNN, dataset: LabeledDataset, h: float = FD_STEP,
                    corrupt: str | None = None) -> dict:
    """Worst relative error per block, keyed ``"W1" ... "WD"`` and ``"V"``.

    ``corrupt`` names a block whose analytic gradient is deliberately
    perturbed; it exists so callers can confirm a failure is detected.
    """
    X, y, a = dataset.samples, dataset.labels, model.slope
    errors = {}
    for l in range(model.order):
        def loss(W, l=l):
            factors = list(model.mode_factors)
            factors[l] = W
            return reference_loss(factors, model.output_weights, a, X, y)

        analytic = grad_mode_weights(model, dataset, l)
        if corrupt == f"W{l + 1}":
            analytic = analytic * 1.01 + 1e-3
        numeric = finite_difference_gradient(loss, model.mode_factors[l].astype(EXTENDED), h)
        errors[f"W{l + 1}"] = float(relative_error(analytic, numeric).max())

    analytic = grad_output_weights(model, dataset)
    if corrupt == "V":
        analytic = analytic * 1.01 + 1e-3
    numeric = finite_difference_gradient(
        lambda V: reference_loss(model.mode_factors, V, a, X, y),
        model.output_weights.astype(EXTENDED), h,
    )
    errors["V"] = float(relative_error(analytic, numeric).max())
    return errors
