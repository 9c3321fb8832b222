"""Dense feed-forward networks with exact backprop, Adam, and a gradient checker.

Everything runs at 64-bit precision. Each network keeps its parameters in one
flat vector (layer by layer: weight matrix row-major, then bias); per-layer
weight and bias arrays are views into that vector, so optimizer updates,
serialization, and finite-difference sweeps all operate on a single array.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"ACERAX1\x00"


def param_count(sizes: Sequence[int]) -> int:
    """Parameter count of a dense net: sum of (fan_in + 1) * fan_out per layer."""
    return sum((i + 1) * o for i, o in zip(sizes[:-1], sizes[1:]))


class DenseNet:
    """Fully connected network, tanh hidden activations, identity output.

    ``flat`` is the single source of truth for the parameters. Assigning
    ``net.flat[:] = v`` updates the live weight/bias views in place.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        rng: np.random.Generator | None = None,
        output_bias: float | Sequence[float] | None = None,
    ):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"need at least two positive layer sizes, got {sizes}")
        self.sizes = sizes
        self.flat = np.zeros(param_count(sizes), dtype=np.float64)
        self._layers: list[tuple[np.ndarray, np.ndarray]] = []
        self._slices: list[tuple[slice, slice]] = []
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w_sl = slice(offset, offset + fan_in * fan_out)
            b_sl = slice(w_sl.stop, w_sl.stop + fan_out)
            offset = b_sl.stop
            self._layers.append(
                (self.flat[w_sl].reshape(fan_out, fan_in), self.flat[b_sl])
            )
            self._slices.append((w_sl, b_sl))
        if rng is not None:
            self.init_params(rng)
        if output_bias is not None:
            self._layers[-1][1][:] = output_bias

    # -- shape info ------------------------------------------------------

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    @property
    def num_params(self) -> int:
        return self.flat.size

    def weights(self, layer: int) -> np.ndarray:
        """Weight matrix view of shape (fan_out, fan_in) for the given layer."""
        return self._layers[layer][0]

    def biases(self, layer: int) -> np.ndarray:
        """Bias vector view for the given layer."""
        return self._layers[layer][1]

    # -- initialization --------------------------------------------------

    def init_params(self, rng: np.random.Generator) -> None:
        """Uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases."""
        for w, b in self._layers:
            fan_out, fan_in = w.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w[:] = rng.uniform(-limit, limit, size=w.shape)
            b[:] = 0.0

    # -- forward / backward ----------------------------------------------

    def _run(self, x: np.ndarray, keep: bool) -> tuple[np.ndarray, list[np.ndarray]]:
        acts = [x]
        h = x
        for w, b in self._layers[:-1]:
            h = np.tanh(h @ w.T + b)
            acts.append(h)
        w, b = self._layers[-1]
        y = h @ w.T + b
        return y, (acts if keep else [])

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Map one input vector to one output vector. Pure."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise ValueError(f"input shape {x.shape}, expected ({self.input_dim},)")
        y, _ = self._run(x[None, :], keep=False)
        return y[0]

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        """Forward over rows of x, shape (batch, input_dim) -> (batch, output_dim)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"input shape {x.shape}, expected (*, {self.input_dim})")
        y, _ = self._run(x, keep=False)
        return y

    def backward_batch(self, x: np.ndarray, output_grad: np.ndarray) -> np.ndarray:
        """Gradient of sum_i output_grad[i] . f(x[i]) with respect to the flat parameters."""
        x = np.asarray(x, dtype=np.float64)
        g = np.asarray(output_grad, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"input shape {x.shape}, expected (*, {self.input_dim})")
        if g.shape != (x.shape[0], self.output_dim):
            raise ValueError(
                f"output_grad shape {g.shape}, expected ({x.shape[0]}, {self.output_dim})"
            )
        _, acts = self._run(x, keep=True)
        grad = np.empty_like(self.flat)
        d = g
        for layer in range(len(self._layers) - 1, -1, -1):
            w, _ = self._layers[layer]
            w_sl, b_sl = self._slices[layer]
            grad[w_sl] = (d.T @ acts[layer]).ravel()
            grad[b_sl] = d.sum(axis=0)
            if layer > 0:
                # tanh'(z) expressed through the cached activation a = tanh(z)
                d = (d @ w) * (1.0 - acts[layer] ** 2)
        return grad

    def backward(self, x: np.ndarray, output_grad: np.ndarray) -> np.ndarray:
        """Gradient of output_grad . f(x) with respect to the flat parameters."""
        x = np.asarray(x, dtype=np.float64)
        g = np.asarray(output_grad, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise ValueError(f"input shape {x.shape}, expected ({self.input_dim},)")
        if g.shape != (self.output_dim,):
            raise ValueError(f"output_grad shape {g.shape}, expected ({self.output_dim},)")
        return self.backward_batch(x[None, :], g[None, :])

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        """Checkpoint encoding: magic, layer-size list, then raw little-endian f64 params."""
        head = CHECKPOINT_MAGIC + struct.pack("<I", len(self.sizes))
        head += struct.pack(f"<{len(self.sizes)}I", *self.sizes)
        return head + self.flat.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["DenseNet", int]:
        """Decode one network blob starting at offset; returns (net, next offset)."""
        m = len(CHECKPOINT_MAGIC)
        if buf[offset : offset + m] != CHECKPOINT_MAGIC:
            raise ValueError("bad checkpoint magic")
        offset += m
        (n_sizes,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        sizes = struct.unpack_from(f"<{n_sizes}I", buf, offset)
        offset += 4 * n_sizes
        net = cls(sizes)
        n = net.num_params
        net.flat[:] = np.frombuffer(buf, dtype="<f8", count=n, offset=offset)
        return net, offset + 8 * n

    def copy(self) -> "DenseNet":
        out = DenseNet(self.sizes)
        out.flat[:] = self.flat
        return out


# -- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-network Adam accumulator. Moment vectors match the net's flat layout."""

    step_size: float
    dim: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.m = np.zeros(self.dim, dtype=np.float64)
        self.v = np.zeros(self.dim, dtype=np.float64)


def adam_step(
    state: AdamState, params: np.ndarray, grad: np.ndarray, sign: str = "descent"
) -> np.ndarray:
    """One Adam update; "ascent" adds the step, "descent" subtracts it.

    Mutates the optimizer state, returns the updated parameter vector
    (the input is left untouched).
    """
    if sign not in ("ascent", "descent"):
        raise ValueError(f"sign must be 'ascent' or 'descent', got {sign!r}")
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != (state.dim,) or grad.shape != (state.dim,):
        raise ValueError(
            f"length mismatch: params {params.shape}, grad {grad.shape}, state dim {state.dim}"
        )
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    delta = state.step_size * m_hat / (np.sqrt(v_hat) + state.eps)
    return params + delta if sign == "ascent" else params - delta


# -- finite-difference gradient check ---------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    """Per-coordinate comparison of an analytic gradient against central differences."""

    rel_errors: np.ndarray
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_errors.max())

    @property
    def worst_index(self) -> int:
        return int(self.rel_errors.argmax())

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def finite_diff_check(
    loss: Callable[[np.ndarray], float],
    analytic_grad: Callable[[np.ndarray], np.ndarray],
    params: np.ndarray,
    step: float = 1e-6,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare an analytic gradient to central finite differences of ``loss``.

    ``loss`` must be deterministic in the parameters. The relative error per
    coordinate is |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-6); the floor keeps
    coordinates whose true gradient is zero from dividing by rounding noise.
    """
    params = np.asarray(params, dtype=np.float64)
    analytic = np.asarray(analytic_grad(params), dtype=np.float64)
    if analytic.shape != params.shape:
        raise ValueError(f"gradient shape {analytic.shape} != params {params.shape}")
    fd = np.empty_like(params)
    probe = params.copy()
    for i in range(params.size):
        orig = probe[i]
        probe[i] = orig + step
        up = loss(probe)
        probe[i] = orig - step
        down = loss(probe)
        probe[i] = orig
        fd[i] = (up - down) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-6)
    rel = np.abs(analytic - fd) / denom
    return GradCheckReport(rel_errors=rel, tolerance=tolerance)
