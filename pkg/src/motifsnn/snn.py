"""Leaky integrate-and-fire dynamics and layered feedforward passes.

Spike trains are numpy arrays shaped ``(T, n)`` for one sample or
``(T, B, n)`` for a batch.  Inside the autodiff graph they are flattened
time-major to ``(T*B, n)`` tensors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numba
import numpy as np

from .autodiff import ShapeError, Tensor, add, make, matmul, scale, spike_threshold, transpose, vstack


@dataclass(frozen=True)
class LifParams:
    """Neuron constants shared by every neuron of a network.

    The decay factor is derived, ``beta = 1 - delta_t / tau``, so the
    relation holds exactly.  ``r`` is the virtual resistance (kept at 1).
    """

    tau: float = 10.0
    delta_t: float = 1.0
    r: float = 1.0
    u_thr: float = 1.0
    surrogate_slope: float = 25.0

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta = 1 - delta_t/tau must lie in (0, 1), got {self.beta}")
        if self.u_thr <= 0:
            raise ValueError(f"u_thr must be positive, got {self.u_thr}")
        if self.surrogate_slope <= 0:
            raise ValueError("surrogate_slope must be positive")

    @property
    def beta(self) -> float:
        return 1.0 - self.delta_t / self.tau


@dataclass
class LifState:
    """Membrane potentials of one layer; shape ``(n,)`` or ``(B, n)``."""

    u: np.ndarray

    @classmethod
    def zeros(cls, width: int, batch: int | None = None) -> "LifState":
        shape = (width,) if batch is None else (batch, width)
        return cls(np.zeros(shape))


class LayeredNet(Protocol):
    widths: tuple[int, ...]
    lif: LifParams

    def weights(self) -> list[Tensor]: ...


def lif_update(u_prev: np.ndarray, r_i: np.ndarray, params: LifParams) -> np.ndarray:
    # keep the un-reset potential so the next branch test can see it
    return np.where(u_prev <= params.u_thr, params.beta * u_prev + r_i, r_i)


def lif_step(state: LifState, i_in, params: LifParams) -> tuple[LifState, np.ndarray]:
    """Advance one layer by one time step; returns the new state and spikes."""
    i_in = np.asarray(i_in, dtype=np.float64)
    if i_in.shape != state.u.shape:
        raise ShapeError(f"input current shape {i_in.shape} != state shape {state.u.shape}")
    u = lif_update(state.u, params.r * i_in, params)
    return LifState(u), (u > params.u_thr).astype(np.float64)


def input_current(w, x) -> np.ndarray:
    """Currents ``W @ x`` entering a layer from presynaptic spikes ``x``."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"weights {w.shape} cannot take spike vector {x.shape}")
    return x @ w.T


@numba.njit(cache=True)
def _scan_forward(r_i, beta, thr):
    steps, width = r_i.shape
    pot = np.empty_like(r_i)
    spikes = np.empty_like(r_i)
    u = np.zeros(width)
    for t in range(steps):
        for j in range(width):
            if u[j] <= thr:
                u[j] = beta * u[j] + r_i[t, j]
            else:
                u[j] = r_i[t, j]
            pot[t, j] = u[j]
            spikes[t, j] = 1.0 if u[j] > thr else 0.0
    return pot, spikes


@numba.njit(cache=True)
def _scan_backward(g, pot, beta, thr, r, slope, through_spike):
    steps, width = g.shape
    g_pot = np.empty_like(g)
    carry = np.zeros(width)
    for t in range(steps - 1, -1, -1):
        for j in range(width):
            gt = g[t, j]
            if through_spike:
                d = slope * abs(pot[t, j] - thr) + 1.0
                gt = gt / (d * d)
            gu = gt + carry[j]
            g_pot[t, j] = r * gu
            if t > 0 and pot[t - 1, j] <= thr:
                carry[j] = beta * gu
            else:
                carry[j] = 0.0
    return g_pot


def lif_scan(current: Tensor, steps: int, params: LifParams, output: str = "spikes") -> Tensor:
    """Run one layer over all time steps as a single graph node.

    ``current`` is the time-major ``(steps*B, n)`` input current.  Returns the
    spike train, or the membrane potentials when ``output="membrane"``.
    The reset branch acts as a constant selector in the backward pass.
    """
    if output not in ("spikes", "membrane"):
        raise ValueError(f"unknown lif_scan output {output!r}")
    rows, n = current.shape
    if steps < 1 or rows % steps:
        raise ShapeError(f"{rows} rows cannot be split into {steps} steps")
    width = rows // steps * n
    beta, thr = params.beta, params.u_thr
    r_i = current.values if params.r == 1.0 else params.r * current.values
    pot, spikes = _scan_forward(np.ascontiguousarray(r_i).reshape(steps, width), beta, thr)
    values = (spikes if output == "spikes" else pot).reshape(rows, n)

    def back(g):
        g = np.ascontiguousarray(g).reshape(steps, width)
        g_in = _scan_backward(g, pot, beta, thr, params.r, params.surrogate_slope, output == "spikes")
        return (g_in.reshape(rows, n),)

    return make(values, (current,), back, "lif_scan")


def _flatten_input(spikes) -> tuple[np.ndarray, int, int | None]:
    arr = np.asarray(spikes, dtype=np.float64)
    if arr.ndim == 2:
        steps, batch = arr.shape[0], None
        flat = arr
    elif arr.ndim == 3:
        steps, batch = arr.shape[0], arr.shape[1]
        flat = arr.reshape(steps * batch, arr.shape[2])
    else:
        raise ShapeError(f"spike input must be (T, n) or (T, B, n), got {arr.shape}")
    if steps == 0:
        raise ValueError("spike input needs at least one time step")
    return flat, steps, batch


def as_train(out: Tensor | np.ndarray, steps: int) -> np.ndarray:
    """Reshape a flattened output back to ``(T, B, n)``."""
    vals = out.values if isinstance(out, Tensor) else np.asarray(out)
    return vals.reshape(steps, -1, vals.shape[1])


def _effective(weights: Sequence[Tensor], errors) -> list[Tensor]:
    if errors is None:
        return list(weights)
    if len(errors) != len(weights):
        raise ShapeError(f"{len(errors)} error matrices for {len(weights)} layers")
    out = []
    for w, e in zip(weights, errors):
        if e.shape != w.shape:
            raise ShapeError(f"error matrix {e.shape} does not match weights {w.shape}")
        out.append(add(w, Tensor(e)))
    return out


def forward(net: LayeredNet, spikes, errors: Sequence[np.ndarray] | None = None,
            readout: str = "spikes", weights: Sequence[Tensor] | None = None) -> Tensor:
    """Feedforward pass from reset membranes; returns the flattened output train.

    Layers carry no recurrence, so running each layer over all time steps
    before the next is identical to the time-outer loop.  ``errors`` are
    fixed additive weight perturbations held for the whole pass.
    """
    flat, steps, _ = _flatten_input(spikes)
    if flat.shape[1] != net.widths[0]:
        raise ShapeError(f"input width {flat.shape[1]} != network input width {net.widths[0]}")
    x = Tensor(flat)
    weights = _effective(net.weights() if weights is None else weights, errors)
    last = len(weights) - 1
    for l, w in enumerate(weights):
        current = matmul(x, transpose(w))
        x = lif_scan(current, steps, net.lif, output=readout if l == last else "spikes")
    return x


def forward_stepwise(net: LayeredNet, spikes, errors: Sequence[np.ndarray] | None = None) -> Tensor:
    """Time-outer, layer-inner pass built from primitive graph operations.

    Slow; kept as an independent reference for :func:`forward`.
    """
    flat, steps, _ = _flatten_input(spikes)
    if flat.shape[1] != net.widths[0]:
        raise ShapeError(f"input width {flat.shape[1]} != network input width {net.widths[0]}")
    batch = flat.shape[0] // steps
    weights = _effective(net.weights(), errors)
    p = net.lif
    potentials = [Tensor(np.zeros((batch, w.shape[0]))) for w in weights]
    outputs = []
    for t in range(steps):
        x = Tensor(flat[t * batch:(t + 1) * batch])
        for l, w in enumerate(weights):
            prev = potentials[l]
            gain = Tensor(p.beta * (prev.values <= p.u_thr))
            current = matmul(x, transpose(w))
            u = prev * gain + scale(current, p.r)
            potentials[l] = u
            x = spike_threshold(u, p.u_thr, p.surrogate_slope)
        outputs.append(x)
    return vstack(outputs)


def sample_errors(weights: Sequence[np.ndarray], alpha: float, rng: np.random.Generator,
                  literal_mean: bool = False) -> list[np.ndarray]:
    """Draw one mismatch matrix per layer, entrywise std ``alpha * |W|``.

    With ``literal_mean`` the draw is centred on ``W`` itself, so adding it
    doubles the mean weight.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    out = []
    for w in weights:
        w = np.asarray(w, dtype=np.float64)
        e = alpha * np.abs(w) * rng.standard_normal(w.shape)
        out.append(w + e if literal_mean else e)
    return out


def forward_noisy(net: LayeredNet, spikes, alpha: float, rng: np.random.Generator,
                  literal_mean: bool = False, readout: str = "spikes") -> Tensor:
    """Forward pass with one mismatch draw per layer fixed for the whole pass."""
    weights = net.weights()
    errors = sample_errors([w.values for w in weights], alpha, rng, literal_mean)
    return forward(net, spikes, errors=errors, readout=readout, weights=weights)
