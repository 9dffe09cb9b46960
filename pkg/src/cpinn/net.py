"""Small tanh MLP with hand-written automatic differentiation.

The forward sweep carries the network value together with exact tangents
along selected input coordinates (forward mode).  The reverse sweep then
back-propagates through both streams, so losses that depend on input
derivatives (PDE residuals) get exact parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeError

FORMAT_TAG = "cpinn-mlp"
FORMAT_VERSION = 1
DEFAULT_BETA_INIT = 0.1


@dataclass
class MlpModel:
    """Weights are stored as (fan_in, fan_out) so a layer is ``h @ W + b``."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    beta: float | None = None

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1:
            raise ShapeError("number of weight matrices does not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ShapeError(f"layer {i}: got W{w.shape}, b{b.shape}, expected W{expected}")

    @property
    def inverse_mode(self) -> bool:
        return self.beta is not None

    @property
    def n_params(self) -> int:
        n = sum(w.size + b.size for w, b in zip(self.weights, self.biases))
        return n + (1 if self.inverse_mode else 0)

    def to_vector(self) -> np.ndarray:
        """Flatten as: weights row-major per layer, then biases, then beta."""
        parts = [w.ravel() for w in self.weights] + [b for b in self.biases]
        if self.inverse_mode:
            parts.append(np.array([self.beta]))
        return np.concatenate(parts).astype(np.float64)

    def with_vector(self, vec: np.ndarray) -> "MlpModel":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {vec.shape}")
        pos = 0
        weights = []
        for w in self.weights:
            weights.append(vec[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
        biases = []
        for b in self.biases:
            biases.append(vec[pos:pos + b.size].copy())
            pos += b.size
        beta = float(vec[pos]) if self.inverse_mode else None
        return MlpModel(self.layer_sizes, weights, biases, beta)


@dataclass
class Gradients:
    """Partials of a scalar loss, shape-congruent with the model."""

    loss: float
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    beta: float | None = None
    input_derivatives: np.ndarray | None = None

    def to_vector(self) -> np.ndarray:
        parts = [w.ravel() for w in self.weights] + list(self.biases)
        if self.beta is not None:
            parts.append(np.array([self.beta]))
        return np.concatenate(parts)


def init_model(layer_sizes: Sequence[int], seed: int = 0, inverse_mode: bool = False,
               beta_init: float = DEFAULT_BETA_INIT) -> MlpModel:
    """Glorot-uniform weights, zero biases, drawn from ``default_rng(seed)``."""
    sizes = list(layer_sizes)
    if len(sizes) < 2 or any(int(n) < 1 for n in sizes):
        raise ConfigurationError(f"invalid layer_sizes {layer_sizes!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(sizes), weights, biases, beta_init if inverse_mode else None)


def _as_batch(model: MlpModel, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    d_in = model.layer_sizes[0]
    if x.ndim == 1 and d_in == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != d_in:
        raise ShapeError(f"inputs of shape {x.shape} do not match input width {d_in}")
    return x


class Trace:
    """Forward sweep over a batch, kept for one reverse sweep.

    ``directions`` lists the input coordinates to differentiate along.
    After construction, ``output`` has shape (B,) and ``tangents`` has shape
    (K, B) with ``tangents[k] = d output / d x[directions[k]]``.
    """

    def __init__(self, model: MlpModel, inputs, directions: Sequence[int] = ()):
        x = _as_batch(model, inputs)
        self.model = model
        self.directions = tuple(directions)
        n_batch, d_in = x.shape
        if any(not 0 <= k < d_in for k in self.directions):
            raise ConfigurationError(f"direction out of range for input width {d_in}")

        n_tan = len(self.directions)
        h = np.zeros((1 + n_tan, n_batch, d_in))
        h[0] = x
        for i, k in enumerate(self.directions):
            h[1 + i, :, k] = 1.0

        # per hidden layer: stacked input, activation, slope, tangent pre-activations
        self._inputs: list[np.ndarray] = []
        self._act: list[np.ndarray] = []
        self._slope: list[np.ndarray] = []
        self._tan_pre: list[np.ndarray] = []
        n_layers = len(model.weights)
        for i, (w, b) in enumerate(zip(model.weights, model.biases)):
            self._inputs.append(h)
            z = h @ w
            z[0] += b
            if i == n_layers - 1:
                break
            a = np.tanh(z[0])
            s = 1.0 - a * a
            self._act.append(a)
            self._slope.append(s)
            self._tan_pre.append(z[1:])
            h = np.empty_like(z)
            h[0] = a
            h[1:] = s * z[1:]
        self.output = z[0, :, 0]
        self.tangents = z[1:, :, 0]

    def backward(self, grad_output, grad_tangents=None) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Reverse sweep: given dL/d(output) and dL/d(tangents), return (dW, db)."""
        model = self.model
        n_tan = len(self.directions)
        n_batch = self.output.shape[0]
        gz = np.zeros((1 + n_tan, n_batch, 1))
        gz[0, :, 0] = grad_output
        if grad_tangents is not None and n_tan:
            gz[1:, :, 0] = grad_tangents

        n_layers = len(model.weights)
        g_w: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
        g_b: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
        for i in range(n_layers - 1, -1, -1):
            h = self._inputs[i]
            w = model.weights[i]
            g_w[i] = h.reshape(-1, w.shape[0]).T @ gz.reshape(-1, w.shape[1])
            g_b[i] = gz[0].sum(axis=0)
            if i == 0:
                break
            gh = gz @ w.T
            a, s, zt = self._act[i - 1], self._slope[i - 1], self._tan_pre[i - 1]
            gz = np.empty_like(gh)
            gz[1:] = s * gh[1:]
            g_slope = (gh[1:] * zt).sum(axis=0) if n_tan else 0.0
            gz[0] = (gh[0] - 2.0 * a * g_slope) * s
        return g_w, g_b


def forward(model: MlpModel, inputs) -> np.ndarray:
    """Network output for each row of ``inputs``; shape (B,)."""
    return Trace(model, inputs).output


def input_derivatives(model: MlpModel, inputs, order: int = 1) -> np.ndarray:
    """Exact d output / d input, shape (B, d_in)."""
    if order != 1:
        raise ConfigurationError(f"unsupported derivative order {order}")
    trace = Trace(model, inputs, directions=range(model.layer_sizes[0]))
    return trace.tangents.T.copy()


LossClosure = Callable[[np.ndarray, np.ndarray, "float | None"],
                       tuple[float, np.ndarray, "np.ndarray | None", "float | None"]]


def grad_params(model: MlpModel, inputs, loss_closure: LossClosure,
                directions: Sequence[int] = ()) -> Gradients:
    """Reverse-mode gradient of a scalar loss of the network outputs.

    ``loss_closure(output, tangents, beta)`` returns the loss together with
    its local partials ``(loss, dL/doutput, dL/dtangents, dL/dbeta)``.  The
    last two may be None when the loss does not depend on them.
    """
    trace = Trace(model, inputs, directions)
    loss, g_out, g_tan, g_beta = loss_closure(trace.output, trace.tangents, model.beta)
    loss = float(loss)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss!r}")
    g_w, g_b = trace.backward(g_out, g_tan)
    if model.inverse_mode:
        g_beta = 0.0 if g_beta is None else float(g_beta)
    else:
        g_beta = None
    tangents = trace.tangents.T.copy() if trace.directions else None
    return Gradients(loss, g_w, g_b, g_beta, tangents)


def save_model(model: MlpModel, path) -> None:
    """Text format: tag/version line, layer sizes, mode flag, then one value per line."""
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION}",
             "layer_sizes " + " ".join(str(n) for n in model.layer_sizes),
             f"inverse {int(model.inverse_mode)}"]
    lines.extend(repr(float(v)) for v in model.to_vector())
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> MlpModel:
    lines = Path(path).read_text().split("\n")
    tag, version = lines[0].split()
    if tag != FORMAT_TAG or int(version) != FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported model file header {lines[0]!r}")
    sizes = tuple(int(n) for n in lines[1].split()[1:])
    inverse = bool(int(lines[2].split()[1]))
    template = init_model(sizes, seed=0, inverse_mode=inverse)
    values = np.array([float(v) for v in lines[3:] if v.strip()])
    return template.with_vector(values)
