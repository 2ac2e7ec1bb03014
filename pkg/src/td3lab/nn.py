"""Dense ReLU networks with hand-written reverse-mode gradients, plus Adam.

All parameters of a network live in one flat array (``Mlp.params``); the
per-layer weight matrices and bias vectors are views into it. That keeps
Adam, Polyak averaging and serialization single vectorized operations.

Batches are row-major: an input of shape ``(n, fan_in)`` produces an output
of shape ``(n, fan_out)``. A 1-D input is treated as a batch of one and the
output is returned 1-D as well.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError

ACTIVATIONS = ("identity", "tanh")
_MAGIC = b"MLP1"


class Mlp:
    """Feedforward network: ReLU between layers, identity or tanh at the output.

    Weights are stored ``(out, in)``. ``version`` increments on every
    parameter write made through this module so stale forward caches can be
    detected.
    """

    def __init__(self, sizes, output_activation="identity", dtype=np.float64):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigError(f"need at least two positive layer sizes, got {sizes}")
        if output_activation not in ACTIVATIONS:
            raise ConfigError(f"unknown output activation {output_activation!r}")
        self.sizes = sizes
        self.output_activation = output_activation
        self.dtype = np.dtype(dtype)
        n = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
        self.params = np.zeros(n, dtype=self.dtype)
        self.layers = _layer_views(self.params, sizes)
        self.version = 0

    @property
    def n_params(self):
        return self.params.size

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def copy(self) -> "Mlp":
        clone = Mlp(self.sizes, self.output_activation, self.dtype)
        clone.params[:] = self.params
        return clone

    def set_params(self, values):
        values = np.asarray(values, dtype=self.dtype)
        if values.shape != self.params.shape:
            raise ShapeError(f"expected {self.params.shape} parameters, got {values.shape}")
        self.params[:] = values
        self.version += 1

    def touch(self):
        """Mark parameters as modified after an in-place write."""
        self.version += 1

    def __call__(self, x):
        return forward(self, x)[0]

    def __repr__(self):
        return f"Mlp(sizes={self.sizes}, output={self.output_activation!r})"


def _layer_views(flat, sizes):
    views = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = flat[offset:offset + fan_out * fan_in].reshape(fan_out, fan_in)
        offset += fan_out * fan_in
        b = flat[offset:offset + fan_out]
        offset += fan_out
        views.append((w, b))
    return views


def init_mlp(sizes, output_activation="identity", rng=None, dtype=np.float64) -> Mlp:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if rng is None:
        rng = np.random.default_rng()
    net = Mlp(sizes, output_activation, dtype)
    for w, _ in net.layers:
        bound = 1.0 / np.sqrt(w.shape[1])
        w[:] = rng.uniform(-bound, bound, size=w.shape)
    return net


@dataclass
class ForwardCache:
    inputs: list          # activation entering each layer; inputs[0] is the network input
    pre: list             # pre-activation of each layer
    output: np.ndarray
    net_id: int
    version: int
    squeeze: bool


def forward(net: Mlp, x):
    """Evaluate ``net`` on ``x``; returns ``(output, cache)``."""
    x = np.asarray(x, dtype=net.dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"input of shape {x.shape} does not fit fan_in {net.in_dim}")
    inputs, pre = [], []
    h = x
    last = len(net.layers) - 1
    for k, (w, b) in enumerate(net.layers):
        inputs.append(h)
        z = h @ w.T
        z += b
        pre.append(z)
        if k < last:
            h = np.maximum(z, 0.0)
        elif net.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
    cache = ForwardCache(inputs, pre, h, id(net), net.version, squeeze)
    return (h[0] if squeeze else h), cache


def backward(net: Mlp, cache: ForwardCache, output_grad, param_grads=True):
    """Reverse pass for the forward call that produced ``cache``.

    Returns ``(grads, input_grad)`` where ``grads`` is flat and aligned with
    ``net.params`` (summed over the batch), or ``None`` when
    ``param_grads=False``.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise ContractError("forward cache does not belong to the current network state")
    if len(cache.pre) != len(net.layers):
        raise ContractError("cache layer count differs from network layer count")
    g = np.asarray(output_grad, dtype=net.dtype)
    if cache.squeeze and g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {cache.output.shape}")

    if net.output_activation == "tanh":
        g = g * (1.0 - cache.output * cache.output)
    grads = np.empty_like(net.params) if param_grads else None
    views = _layer_views(grads, net.sizes) if param_grads else None
    for k in range(len(net.layers) - 1, -1, -1):
        w, _ = net.layers[k]
        if k < len(net.layers) - 1:
            g = g * (cache.pre[k] > 0.0)
        if param_grads:
            gw, gb = views[k]
            np.matmul(g.T, cache.inputs[k], out=gw)
            gb[:] = g.sum(axis=0)
        g = g @ w
    input_grad = g[0] if cache.squeeze else g
    return grads, input_grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def for_net(cls, net: Mlp, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros_like(net.params), np.zeros_like(net.params), lr, beta1, beta2, eps)


def adam_step(net: Mlp, grads, state: AdamState):
    """One bias-corrected Adam descent step, applied in place.

    Raises NumericError (leaving parameters and moments untouched) if any
    gradient entry is not finite.
    """
    grads = np.asarray(grads, dtype=net.dtype)
    if grads.shape != net.params.shape or state.m.shape != net.params.shape:
        raise ShapeError("gradient/moment shapes do not match parameters")
    if not np.isfinite(grads).all():
        raise NumericError("non-finite gradient passed to adam_step")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * (grads * grads)
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    net.params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    net.touch()
    return net, state


def grad_check(net: Mlp, x, h=1e-6):
    """Largest relative error between ``backward`` and central differences.

    The scalar probed is the sum of all outputs over the batch. Error per
    component is ``|a - n| / max(1e-8, |a| + |n|)``; the maximum is taken
    over every parameter and every input coordinate.
    """
    x = np.array(x, dtype=np.float64)
    out, cache = forward(net, x)
    grads, input_grad = backward(net, cache, np.ones_like(out))

    def f():
        return float(np.sum(forward(net, x)[0]))

    saved = net.params.copy()
    numeric = np.empty_like(net.params)
    for i in range(net.n_params):
        net.params[i] = saved[i] + h
        up = f()
        net.params[i] = saved[i] - h
        down = f()
        net.params[i] = saved[i]
        numeric[i] = (up - down) / (2 * h)
    net.params[:] = saved

    flat_x = x.reshape(-1)
    numeric_x = np.empty_like(flat_x)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        up = f()
        flat_x[i] = orig - h
        down = f()
        flat_x[i] = orig
        numeric_x[i] = (up - down) / (2 * h)

    analytic = np.concatenate([grads, np.reshape(input_grad, -1)])
    numeric = np.concatenate([numeric, numeric_x])
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def mlp_to_bytes(net: Mlp) -> bytes:
    """Header (magic, layer count, sizes, activation) then little-endian float64 params."""
    header = _MAGIC + struct.pack("<I", len(net.sizes))
    header += struct.pack(f"<{len(net.sizes)}I", *net.sizes)
    header += struct.pack("<B", ACTIVATIONS.index(net.output_activation))
    return header + net.params.astype("<f8").tobytes()


def mlp_from_bytes(blob: bytes, dtype=np.float64) -> Mlp:
    net, _ = _read_mlp(blob, 0, dtype)
    return net


def _read_mlp(blob, offset, dtype=np.float64):
    if blob[offset:offset + 4] != _MAGIC:
        raise ContractError("not a serialized Mlp")
    offset += 4
    (n,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    sizes = struct.unpack_from(f"<{n}I", blob, offset)
    offset += 4 * n
    (act,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    net = Mlp(sizes, ACTIVATIONS[act], dtype)
    count = net.n_params
    net.params[:] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    return net, offset + 8 * count
