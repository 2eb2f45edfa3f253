"""Forward-only neural network primitives.

All operations are pure functions of (input, weights, spec): no gradients,
no internal state, 64-bit floats throughout.  The hot kernels (conv2d,
linear, lstm_cell) dispatch to a compiled extension when it is importable
and to the numpy fallback otherwise; EVOWORLD_BACKEND=python|compiled
forces the choice.

Canonical flat weight layouts (row-major, weights then bias):
  conv    w (out_ch, in_ch, k, k), b (out_ch,)
  linear  w (out, in), b (out,)
  lstm    w (4*hidden, in+hidden) with gate rows [input, forget, candidate,
          output] acting on concat(x, h), b (4*hidden,)
  mdn     linear hidden -> 3*n_mix*z_dim, output reshaped to (3, n_mix,
          z_dim) as [logits, means, log_scales]
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from evoworld.errors import ConfigError
from evoworld.nn import kernels_py

_IMPLS = {"python": kernels_py}
try:
    from evoworld import _kernels

    _IMPLS["compiled"] = _kernels
except ImportError:
    pass


def _pick_default() -> str:
    forced = os.environ.get("EVOWORLD_BACKEND")
    if forced:
        if forced not in _IMPLS:
            raise ConfigError(
                f"EVOWORLD_BACKEND={forced!r} unavailable; have {sorted(_IMPLS)}"
            )
        return forced
    return "compiled" if "compiled" in _IMPLS else "python"


_backend = _pick_default()


def backend_name() -> str:
    return _backend


def available_backends() -> list[str]:
    return sorted(_IMPLS)


def set_backend(name: str) -> None:
    global _backend
    if name not in _IMPLS:
        raise ConfigError(f"unknown backend {name!r}; have {sorted(_IMPLS)}")
    _backend = name


def _impl():
    return _IMPLS[_backend]


ACTIVATIONS = {"identity": 0, "relu": 1, "tanh": 2}
LAYER_KINDS = ("conv", "linear", "lstm-cell", "mdn-head")


@dataclass(frozen=True)
class TensorShape:
    """Shape of a dense tensor: (channels, height, width) or a plain length."""

    dims: tuple

    def __post_init__(self):
        if not self.dims or any(int(d) < 1 for d in self.dims):
            raise ConfigError(f"all dims must be >= 1, got {self.dims}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def count(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the agent network; sizes are channels for conv layers."""

    kind: str
    in_size: int
    out_size: int
    kernel: int = 0
    stride: int = 2
    activation: str = "identity"
    label: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.in_size < 1 or self.out_size < 1:
            raise ConfigError(f"layer sizes must be >= 1 ({self})")
        if self.kind == "conv" and (self.kernel < 1 or self.stride < 1):
            raise ConfigError(f"conv layer needs kernel/stride >= 1 ({self})")
        if not self.label:
            object.__setattr__(self, "label", self.kind)

    @property
    def param_count(self) -> int:
        if self.kind == "conv":
            return self.out_size * self.in_size * self.kernel**2 + self.out_size
        if self.kind == "linear":
            return self.out_size * self.in_size + self.out_size
        if self.kind == "lstm-cell":
            h = self.out_size
            return 4 * (h * (self.in_size + h) + h)
        raise ConfigError(f"param_count undefined for {self.kind}")


def conv_output_size(in_px: int, kernel: int, stride: int) -> int:
    """Spatial size after a valid (unpadded) convolution."""
    if in_px < kernel:
        raise ConfigError(f"input extent {in_px} smaller than kernel {kernel}")
    return (in_px - kernel) // stride + 1


def _as_f64(a, what, label):
    a = np.ascontiguousarray(a, dtype=np.float64)
    return a


def conv2d_forward(image, weights, spec: LayerSpec):
    """Valid-padding convolution over an image tensor (channels, H, W)."""
    image = _as_f64(image, "input", spec.label)
    if image.ndim != 3 or image.shape[0] != spec.in_size:
        raise ConfigError(
            f"layer {spec.label}: expected input (channels={spec.in_size}, H, W), "
            f"got shape {tuple(image.shape)}"
        )
    k, s = spec.kernel, spec.stride
    if image.shape[1] < k or image.shape[2] < k:
        raise ConfigError(
            f"layer {spec.label}: spatial extent {image.shape[1:]} smaller than kernel {k}"
        )
    weights = _as_f64(weights, "weights", spec.label)
    if weights.shape != (spec.param_count,):
        raise ConfigError(
            f"layer {spec.label}: expected {spec.param_count} weights, got {weights.size}"
        )
    n_w = spec.out_size * spec.in_size * k * k
    w = weights[:n_w].reshape(spec.out_size, spec.in_size, k, k)
    b = weights[n_w:]
    return _impl().conv2d(image, w, b, s, ACTIVATIONS[spec.activation])


def linear_forward(vec, weights, spec: LayerSpec):
    """Affine map out = W @ vec + b with elementwise activation."""
    vec = _as_f64(vec, "input", spec.label)
    if vec.shape != (spec.in_size,):
        raise ConfigError(
            f"layer {spec.label}: expected input length {spec.in_size}, got {vec.shape}"
        )
    weights = _as_f64(weights, "weights", spec.label)
    if weights.shape != (spec.param_count,):
        raise ConfigError(
            f"layer {spec.label}: expected {spec.param_count} weights, got {weights.size}"
        )
    n_w = spec.out_size * spec.in_size
    w = weights[:n_w].reshape(spec.out_size, spec.in_size)
    b = weights[n_w:]
    return _impl().linear(vec, w, b, ACTIVATIONS[spec.activation])


def lstm_cell_forward(x, h, c, weights):
    """Standard LSTM recurrence; returns (h', c').

    Gate order in the flat weight segment is fixed as (input, forget,
    candidate, output); see the module docstring for the exact layout.
    """
    x = _as_f64(x, "x", "lstm")
    h = _as_f64(h, "h", "lstm")
    c = _as_f64(c, "c", "lstm")
    if h.shape != c.shape or h.ndim != 1 or x.ndim != 1:
        raise ConfigError(
            f"lstm: x/h/c must be vectors with len(h)==len(c); got {x.shape}, {h.shape}, {c.shape}"
        )
    n, hidden = x.shape[0], h.shape[0]
    expected = 4 * (hidden * (n + hidden) + hidden)
    weights = _as_f64(weights, "weights", "lstm")
    if weights.shape != (expected,):
        raise ConfigError(
            f"lstm: expected {expected} weights for in={n}, hidden={hidden}; got {weights.size}"
        )
    n_w = 4 * hidden * (n + hidden)
    w = weights[:n_w].reshape(4 * hidden, n + hidden)
    b = weights[n_w:]
    return _impl().lstm_cell(x, h, c, w, b)


def mdn_head_forward(h, weights, n_mixtures: int, z_dim: int):
    """Mixture-density head: (logits, means, log_scales), each (n_mixtures, z_dim).

    Raw parameters are returned; use mixture_weights() to normalize logits.
    """
    h = _as_f64(h, "h", "mdn")
    if h.ndim != 1:
        raise ConfigError(f"mdn: hidden input must be a vector, got {h.shape}")
    if n_mixtures < 1 or z_dim < 1:
        raise ConfigError("mdn: n_mixtures and z_dim must be >= 1")
    hidden = h.shape[0]
    out = 3 * n_mixtures * z_dim
    expected = hidden * out + out
    weights = _as_f64(weights, "weights", "mdn")
    if weights.shape != (expected,):
        raise ConfigError(
            f"mdn: expected {expected} weights for hidden={hidden}, "
            f"n_mixtures={n_mixtures}, z_dim={z_dim}; got {weights.size}"
        )
    spec = LayerSpec("linear", hidden, out, activation="identity", label="mdn-head")
    raw = linear_forward(h, weights, spec).reshape(3, n_mixtures, z_dim)
    return raw[0], raw[1], raw[2]


def mixture_weights(logits):
    """Softmax of mixture logits per z-dimension (axis 0 = mixtures)."""
    m = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(m)
    return e / e.sum(axis=0, keepdims=True)


def he_uniform_init(fan_in: int, count: int, rng):
    """Uniform draw in [-sqrt(1/fan_in), sqrt(1/fan_in)], count values."""
    if fan_in < 1:
        raise ConfigError(f"fan_in must be >= 1, got {fan_in}")
    bound = (1.0 / fan_in) ** 0.5
    return rng.uniform(-bound, bound, count)
