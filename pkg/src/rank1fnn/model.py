"""Rank-1 FNN and the dense FNN baseline.

Both networks have one sigmoid hidden layer and a softmax output layer with
no bias terms.  The Rank-1 FNN stores the input-to-hidden weights of neuron
``i`` as ``D`` mode vectors (column ``i`` of each ``W_l``); its full weight
vector is the Kronecker product ``w_D (x) ... (x) w_1``.

Inputs are either a single tensor of shape ``input_dims`` or a batch of
shape ``(N, *input_dims)``.  Class indices are 0-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import khatri_rao_chain, kronecker_chain

__all__ = [
    "DenseFNN",
    "Rank1FNN",
    "dumps_model",
    "load_model",
    "loads_model",
    "param_count",
    "save_model",
    "sigmoid",
    "softmax",
]


def sigmoid(x, slope: float = 1.0) -> np.ndarray:
    """Logistic function ``1 / (1 + exp(-slope * x))``, overflow-safe."""
    z = slope * np.asarray(x, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(logits) -> np.ndarray:
    """Softmax over the last axis with max-logit subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class _OneHiddenLayer:
    """Shared forward machinery; subclasses provide ``pre_activations``."""

    input_dims: tuple
    output_weights: np.ndarray
    slope: float

    @property
    def hidden_count(self) -> int:
        return self.output_weights.shape[0]

    @property
    def class_count(self) -> int:
        return self.output_weights.shape[1]

    def _as_batch(self, X):
        X = np.asarray(X, dtype=np.float64)
        dims = tuple(self.input_dims)
        if X.shape == dims:
            single = True
            X = X[np.newaxis]
        elif X.shape[1:] == dims:
            single = False
        else:
            raise ValueError(f"input of shape {X.shape} does not match model dims {dims}")
        if not np.all(np.isfinite(X)):
            raise ValueError("input contains non-finite entries")
        return X, single

    def hidden_activations(self, X) -> np.ndarray:
        Xb, single = self._as_batch(X)
        u = sigmoid(self.pre_activations(Xb), self.slope)
        return u[0] if single else u

    def logits(self, X) -> np.ndarray:
        return self.hidden_activations(X) @ self.output_weights

    def forward(self, X) -> np.ndarray:
        """Class probabilities, shape ``(C,)`` or ``(N, C)``."""
        return softmax(self.logits(X))

    def predict(self, X):
        """Most probable class; ties go to the lowest index."""
        return np.argmax(self.forward(X), axis=-1)


@dataclass(frozen=True, eq=False)
class Rank1FNN(_OneHiddenLayer):
    """One-hidden-layer network with rank-1 (Kronecker) hidden weights.

    Parameters
    ----------
    mode_factors : sequence of ndarray
        ``W_1, ..., W_D``; ``W_l`` has shape ``(p_l, Q)``.
    output_weights : ndarray
        ``V`` of shape ``(Q, C)``; column ``k`` feeds class ``k``.
    slope : float
        Sigmoid slope ``a``.
    """

    mode_factors: tuple
    output_weights: np.ndarray
    slope: float = 1.0

    def __post_init__(self):
        factors = tuple(np.array(W, dtype=np.float64) for W in self.mode_factors)
        V = np.array(self.output_weights, dtype=np.float64)
        if not factors:
            raise ValueError("need at least one mode factor")
        if any(W.ndim != 2 for W in factors) or V.ndim != 2:
            raise ValueError("mode factors and output weights must be matrices")
        Q = V.shape[0]
        if Q < 1:
            raise ValueError("hidden layer needs at least one neuron")
        if any(W.shape[1] != Q or W.shape[0] < 1 for W in factors):
            raise ValueError(
                f"mode factors {[W.shape for W in factors]} incompatible with {Q} hidden neurons"
            )
        if V.shape[1] < 2:
            raise ValueError("need at least two classes")
        if not self.slope > 0:
            raise ValueError("sigmoid slope must be positive")
        object.__setattr__(self, "mode_factors", factors)
        object.__setattr__(self, "output_weights", V)
        object.__setattr__(self, "slope", float(self.slope))

    @property
    def input_dims(self) -> tuple:
        return tuple(W.shape[0] for W in self.mode_factors)

    @property
    def order(self) -> int:
        return len(self.mode_factors)

    def replace(self, mode_factors=None, output_weights=None) -> "Rank1FNN":
        return Rank1FNN(
            self.mode_factors if mode_factors is None else mode_factors,
            self.output_weights if output_weights is None else output_weights,
            self.slope,
        )

    def hidden_weight_vector(self, neuron: int) -> np.ndarray:
        """Full weight vector ``w_D (x) ... (x) w_1`` of one hidden neuron.

        Meant for checks and dense export, not for the training loop.
        """
        if not 0 <= neuron < self.hidden_count:
            raise IndexError(f"neuron {neuron} out of range")
        return kronecker_chain([W[:, neuron] for W in reversed(self.mode_factors)])

    def transformed_inputs(self, X, mode: int) -> np.ndarray:
        """``tau`` for every neuron at once.

        Returns ``X_(mode) @ (W_D . ... . W_{mode+1} . W_{mode-1} . ... . W_1)``
        of shape ``(p_mode, Q)``, or ``(N, p_mode, Q)`` for a batch.  Column
        ``i`` does not depend on ``W_mode``.
        """
        if not 0 <= mode < self.order:
            raise IndexError(f"mode {mode} out of range for a {self.order}-mode model")
        Xb, single = self._as_batch(X)
        tau = transformed_inputs(self.mode_factors, Xb, mode)
        return tau[0] if single else tau

    def transformed_input(self, X, mode: int, neuron: int) -> np.ndarray:
        if not 0 <= neuron < self.hidden_count:
            raise IndexError(f"neuron {neuron} out of range")
        X = np.asarray(X, dtype=np.float64)
        if X.shape != self.input_dims:
            raise ValueError(f"input of shape {X.shape} does not match model dims {self.input_dims}")
        return self.transformed_inputs(X, mode)[:, neuron]

    def pre_activations(self, Xb, mode: int = 0, unfolded: np.ndarray | None = None) -> np.ndarray:
        # Inference always contracts through mode 0 so outputs are reproducible.
        tau = transformed_inputs(self.mode_factors, Xb, mode, unfolded)
        return np.einsum("npq,pq->nq", tau, self.mode_factors[mode])

    def hidden_activations(self, X, mode: int = 0) -> np.ndarray:
        Xb, single = self._as_batch(X)
        u = sigmoid(self.pre_activations(Xb, mode), self.slope)
        return u[0] if single else u


def unfold_batch(Xb: np.ndarray, mode: int) -> np.ndarray:
    """Stack the mode-``mode`` unfoldings of every sample: ``(N * p_mode, rest)``."""
    N, p = Xb.shape[0], Xb.shape[mode + 1]
    unfolded = np.moveaxis(Xb, mode + 1, 1).reshape(N, p, -1, order="F")
    return np.ascontiguousarray(unfolded).reshape(N * p, -1)


def transformed_inputs(mode_factors: Sequence[np.ndarray], Xb: np.ndarray, mode: int,
                       unfolded: np.ndarray | None = None) -> np.ndarray:
    """Batched ``tau`` of shape ``(N, p_mode, Q)``; no validation.

    ``unfolded`` may carry a precomputed ``unfold_batch(Xb, mode)``.
    """
    if unfolded is None:
        unfolded = unfold_batch(Xb, mode)
    tau = unfolded @ khatri_rao_chain(mode_factors, skip=mode)
    return tau.reshape(Xb.shape[0], Xb.shape[mode + 1], -1)


@dataclass(frozen=True, eq=False)
class DenseFNN(_OneHiddenLayer):
    """Unconstrained one-hidden-layer network on ``vec(X)``.

    ``hidden_weights`` has shape ``(Q, prod(input_dims))``; row ``i`` is the
    weight vector of hidden neuron ``i``.
    """

    input_dims: tuple
    hidden_weights: np.ndarray
    output_weights: np.ndarray
    slope: float = 1.0

    def __post_init__(self):
        dims = tuple(int(p) for p in self.input_dims)
        W = np.array(self.hidden_weights, dtype=np.float64)
        V = np.array(self.output_weights, dtype=np.float64)
        if not dims or any(p < 1 for p in dims):
            raise ValueError(f"invalid input dims {dims}")
        if W.ndim != 2 or V.ndim != 2:
            raise ValueError("weights must be matrices")
        if W.shape[1] != math.prod(dims) or W.shape[0] != V.shape[0] or W.shape[0] < 1:
            raise ValueError(f"hidden weights {W.shape} incompatible with dims {dims} and V {V.shape}")
        if V.shape[1] < 2:
            raise ValueError("need at least two classes")
        if not self.slope > 0:
            raise ValueError("sigmoid slope must be positive")
        object.__setattr__(self, "input_dims", dims)
        object.__setattr__(self, "hidden_weights", W)
        object.__setattr__(self, "output_weights", V)
        object.__setattr__(self, "slope", float(self.slope))

    @classmethod
    def from_rank1(cls, m: Rank1FNN) -> "DenseFNN":
        W = np.stack([m.hidden_weight_vector(i) for i in range(m.hidden_count)])
        return cls(m.input_dims, W, m.output_weights, m.slope)

    def replace(self, hidden_weights=None, output_weights=None) -> "DenseFNN":
        return DenseFNN(
            self.input_dims,
            self.hidden_weights if hidden_weights is None else hidden_weights,
            self.output_weights if output_weights is None else output_weights,
            self.slope,
        )

    def pre_activations(self, Xb) -> np.ndarray:
        return flatten_batch(Xb) @ self.hidden_weights.T


def flatten_batch(Xb: np.ndarray) -> np.ndarray:
    """Row ``n`` is ``vec(Xb[n])``."""
    return Xb.reshape(Xb.shape[0], -1, order="F")


def param_count(kind: str, dims: Sequence[int], hidden: int, classes: int) -> int:
    """Number of trainable weights.

    ``Q * sum(dims) + Q * C`` for ``kind="rank1"``, ``Q * prod(dims) + Q * C``
    for ``kind="dense"``.
    """
    dims = [int(p) for p in dims]
    if not dims or any(p < 1 for p in dims) or hidden < 1 or classes < 1:
        raise ValueError("dims, hidden and classes must all be positive")
    if kind == "rank1":
        return hidden * sum(dims) + hidden * classes
    if kind == "dense":
        return hidden * math.prod(dims) + hidden * classes
    raise ValueError(f"unknown model kind {kind!r}")


# -- serialization -----------------------------------------------------------

def _floats(a: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in np.asarray(a).ravel(order="F"))


def dumps_model(m: Rank1FNN | DenseFNN) -> str:
    """Text form: header, dims line, then one line per weight matrix (column-major)."""
    dims = " ".join(str(p) for p in m.input_dims)
    if isinstance(m, Rank1FNN):
        header = f"rank1fnn {m.order} {m.hidden_count} {m.class_count} {m.slope!r}"
        blocks = [_floats(W) for W in m.mode_factors]
    elif isinstance(m, DenseFNN):
        header = f"densefnn {len(m.input_dims)} {m.hidden_count} {m.class_count} {m.slope!r}"
        blocks = [_floats(m.hidden_weights)]
    else:
        raise TypeError(f"cannot serialize {type(m).__name__}")
    return "\n".join([header, dims, *blocks, _floats(m.output_weights)]) + "\n"


def _read_matrix(line: str, rows: int, cols: int) -> np.ndarray:
    values = np.array([float(tok) for tok in line.split()], dtype=np.float64)
    if values.size != rows * cols:
        raise ValueError(f"expected {rows * cols} values, found {values.size}")
    return values.reshape(rows, cols, order="F")


def loads_model(text: str) -> Rank1FNN | DenseFNN:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        kind, D, Q, C, a = lines[0].split()
        D, Q, C, a = int(D), int(Q), int(C), float(a)
        dims = tuple(int(tok) for tok in lines[1].split())
        if len(dims) != D:
            raise ValueError(f"header declares {D} modes, dims line has {len(dims)}")
        if kind == "rank1fnn":
            if len(lines) != D + 3:
                raise ValueError("wrong number of weight blocks")
            factors = [_read_matrix(lines[2 + l], dims[l], Q) for l in range(D)]
            return Rank1FNN(factors, _read_matrix(lines[2 + D], Q, C), a)
        if kind == "densefnn":
            if len(lines) != 4:
                raise ValueError("wrong number of weight blocks")
            W = _read_matrix(lines[2], Q, math.prod(dims))
            return DenseFNN(dims, W, _read_matrix(lines[3], Q, C), a)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed model file: {exc}") from exc
    raise ValueError(f"malformed model file: unknown model kind {kind!r}")


def save_model(m: Rank1FNN | DenseFNN, path) -> None:
    Path(path).write_text(dumps_model(m))


def load_model(path) -> Rank1FNN | DenseFNN:
    return loads_model(Path(path).read_text())
