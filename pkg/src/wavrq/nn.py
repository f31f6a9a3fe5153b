"""Parameterized layers built on the autograd core.

Layers hold their tensors and expose them through ``params()`` as a flat
``name -> Tensor`` mapping, which is what the optimizer and checkpoint
code operate on. Initialization is fully determined by the generator
passed to the constructor.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, add, conv1d, gelu, mul, normalize, parameter

__all__ = ["Linear", "Conv1dLayer", "LayerNorm", "GroupNorm", "Module"]


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def kaiming_normal(rng: np.random.Generator, fan_in: int, shape, dtype):
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Module:
    """Minimal base: children are discovered via _children, params via _params."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}

    def params(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, t in self._params.items():
            out[prefix + name] = t
        for name, child in self._children.items():
            out.update(child.params(prefix + name + "."))
        return out

    def num_params(self) -> int:
        return sum(t.data.size for t in self.params().values())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng, dtype=np.float32, bias=True,
                 init: str = "xavier"):
        super().__init__()
        if init == "xavier":
            w = xavier_uniform(rng, d_in, d_out, (d_in, d_out), dtype)
        elif init == "zeros":
            w = np.zeros((d_in, d_out), dtype=dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        self._params["weight"] = parameter(w)
        if bias:
            self._params["bias"] = parameter(np.zeros(d_out, dtype=dtype))
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self._params["weight"]
        if "bias" in self._params:
            y = add(y, self._params["bias"])
        return y


class Conv1dLayer(Module):
    """Strided valid-mode convolution, bias-free (offsets come from the norm)."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, rng,
                 dtype=np.float32):
        super().__init__()
        self._params["weight"] = parameter(
            kaiming_normal(rng, c_in * kernel, (c_out, c_in, kernel), dtype))
        self.stride = stride
        self.kernel = kernel

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self._params["weight"], self.stride)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__()
        self._params["gain"] = parameter(np.ones(dim, dtype=dtype))
        self._params["bias"] = parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        # normalizes the trailing axis
        xhat = normalize(x, axis=-1, eps=self.eps)
        return add(mul(xhat, self._params["gain"]), self._params["bias"])


class GroupNorm(Module):
    """Group normalization over (B, C, L); groups == C gives per-channel norm."""

    def __init__(self, groups: int, channels: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__()
        if channels % groups:
            raise ValueError("channels must divide evenly into groups")
        self._params["gain"] = parameter(np.ones((channels, 1), dtype=dtype))
        self._params["bias"] = parameter(np.zeros((channels, 1), dtype=dtype))
        self.groups = groups
        self.channels = channels
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        b, c, length = x.shape
        g = self.groups
        xg = x.reshape((b, g, (c // g) * length))
        xhat = normalize(xg, axis=-1, eps=self.eps).reshape((b, c, length))
        return add(mul(xhat, self._params["gain"]), self._params["bias"])


def gelu_layer(x: Tensor) -> Tensor:
    return gelu(x)
