"""Parameter containers and the basic trainable layers.

A :class:`Module` tracks parameters (Tensors with ``requires_grad``),
non-trainable buffers (plain arrays) and child modules, assigned as
ordinary attributes.  ``named_parameters`` walks the tree in assignment
order, which fixes both the parameter ordering inside checkpoints and
the order in which initialisers consume random numbers.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Tensor

__all__ = ["Module", "Linear", "Conv2d", "BatchNorm2d", "LayerNorm", "Mlp"]


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal samples with tails beyond two standard deviations clipped."""
    return np.clip(rng.normal(0.0, std, size=shape), -2.0 * std, 2.0 * std)


class Module:
    """Base class wiring parameter discovery, dtype casts and grad reset."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> None:
        self._children[name] = module
        object.__setattr__(self, name, module)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()])) if self.parameters() else 0

    def train(self, mode: bool = True) -> "Module":
        """Switch batch-statistics layers between batch and stored stats."""
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def cast(self, dtype) -> "Module":
        """Cast all parameters in place; float64 is used for gradient checks."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Name -> value for every parameter and buffer, in tree order."""
        out = {name: p.data for name, p in self.named_parameters()}
        out.update({name: b for name, b in self.named_buffers()})
        return out

    def load_state_arrays(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.named_parameters():
            key = prefix + name
            if key not in state:
                raise KeyError(f"missing parameter {key!r} in state")
            arr = np.asarray(state[key], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"parameter {key!r}: stored shape {arr.shape} != expected {p.data.shape}"
                )
            p.data = arr.copy()
        for name, b in self.named_buffers():
            key = prefix + name
            if key not in state:
                raise KeyError(f"missing buffer {key!r} in state")
            arr = np.asarray(state[key])
            if arr.shape != b.shape:
                raise ValueError(
                    f"buffer {key!r}: stored shape {arr.shape} != expected {b.shape}"
                )
            b[...] = arr  # in place, so aliases held by layers stay valid

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """Affine map over the last axis; weight is stored [d_in, d_out]."""

    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        bias: bool = True,
        std: float = 0.02,
    ):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Tensor(
            trunc_normal(rng, (d_in, d_out), std).astype(np.float32), requires_grad=True
        )
        self.bias = (
            Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True) if bias else None
        )

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """Standard NCHW convolution layer with He-normal weight init."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        bias: bool = True,
    ):
        super().__init__()
        self.stride = stride
        fan_in = c_in * kernel * kernel
        std = float(np.sqrt(2.0 / fan_in))
        self.weight = Tensor(
            rng.normal(0.0, std, size=(c_out, c_in, kernel, kernel)).astype(np.float32),
            requires_grad=True,
        )
        self.bias = (
            Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True) if bias else None
        )

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride)


class BatchNorm2d(Module):
    """Per-channel standardisation of NCHW maps with an affine rescale.

    Training mode normalises by the current batch's statistics and keeps
    exponential running estimates; eval mode reuses those estimates, so a
    single patch embeds deterministically.  Without this the encoder's
    pooled features stay trapped in the narrow cone the shared image DC
    component induces, and the contrastive loss plateaus.
    """

    def __init__(self, channels: int, eps: float = 1e-5, stats_momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.stats_momentum = stats_momentum
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            m = F.mean(x, axis=(0, 2, 3), keepdims=True)
            centered = F.sub(x, m)
            v = F.mean(F.mul(centered, centered), axis=(0, 2, 3), keepdims=True)
            n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
            unbiased = v.data.reshape(-1) * (n / max(n - 1, 1))
            self.running_mean += self.stats_momentum * (
                m.data.reshape(-1) - self.running_mean
            )
            self.running_var += self.stats_momentum * (unbiased - self.running_var)
            xn = F.div(centered, F.sqrt(F.add(v, self.eps)))
        else:
            m = self.running_mean.reshape(1, -1, 1, 1)
            v = self.running_var.reshape(1, -1, 1, 1)
            xn = F.mul(F.sub(x, m), 1.0 / np.sqrt(v + self.eps))
        g = F.reshape(self.gamma, (1, -1, 1, 1))
        b = F.reshape(self.beta, (1, -1, 1, 1))
        return F.add(F.mul(xn, g), b)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class Mlp(Module):
    """Two-layer token MLP with GELU, used inside each transformer layer."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))
