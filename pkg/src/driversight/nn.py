"""Module/parameter containers and the layers the models are assembled from.

Parameters are float32 by default (checkpoints store raw float32) and float64
when a model is instantiated for finite-difference checking. Batch-norm layers
carry an ``identity_mode`` switch that bypasses them entirely so the recurrence
and decoder equations can be unit-tested against exact hand values.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable tensor."""

    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


class Module:
    """Minimal container with named parameters, buffers and train/eval mode."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def _set_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    # -- traversal -------------------------------------------------------------

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def modules(self):
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    # -- state -----------------------------------------------------------------

    def state_dict(self) -> dict:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({"buffer:" + name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict) -> None:
        """Load arrays by name; raises with a full shape/name diff on mismatch."""
        problems = []
        own = self.state_dict()
        for name in own:
            if name not in state:
                problems.append(f"missing from source: {name} {tuple(own[name].shape)}")
        for name in state:
            if name not in own:
                problems.append(f"unexpected in source: {name} {tuple(state[name].shape)}")
        for name, arr in state.items():
            if name in own and tuple(own[name].shape) != tuple(arr.shape):
                problems.append(
                    f"shape mismatch: {name} expected {tuple(own[name].shape)} got {tuple(arr.shape)}"
                )
        if problems:
            raise ValueError("state dict incompatible:\n  " + "\n  ".join(problems))

        params = dict(self.named_parameters())
        for name, arr in state.items():
            if name.startswith("buffer:"):
                continue
            p = params[name]
            p.data = arr.astype(p.data.dtype, copy=True)

        buffer_owners = self._buffer_owners()
        for name, arr in state.items():
            if not name.startswith("buffer:"):
                continue
            owner, local = buffer_owners[name[len("buffer:") :]]
            owner._set_buffer(local, arr.astype(owner._buffers[local].dtype, copy=True))

    def _buffer_owners(self, prefix: str = "") -> dict:
        owners = {}
        for name in self._buffers:
            owners[prefix + name] = (self, name)
        for name, m in self._modules.items():
            owners.update(m._buffer_owners(prefix + name + "."))
        return owners

    # -- modes -----------------------------------------------------------------

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._list = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._modules[str(len(self._list))] = module
        self._list.append(module)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Sequential(Module):
    def __init__(self, *modules):
        super().__init__()
        self._list = []
        for m in modules:
            self._modules[str(len(self._list))] = m
            self._list.append(m)

    def __iter__(self):
        return iter(self._list)

    def forward(self, x):
        for m in self._list:
            x = m(x)
        return x


class ReLU(Module):
    def forward(self, x):
        return T.relu(x)


class Sigmoid(Module):
    def forward(self, x):
        return T.sigmoid(x)


class Tanh(Module):
    def forward(self, x):
        return T.tanh(x)


# -- initialisation ----------------------------------------------------------


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


# -- layers --------------------------------------------------------------------


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, bias=True, *, rng, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(he_normal(rng, (cout, cin, kernel, kernel), cin * kernel * kernel, dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype)) if bias else None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, channels, kernel, stride=1, padding=0, bias=True, *, rng, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(he_normal(rng, (channels, kernel, kernel), kernel * kernel, dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype)) if bias else None

    def forward(self, x):
        return T.depthwise_conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, fin, fout, bias=True, *, rng, dtype=np.float32):
        super().__init__()
        self.weight = Parameter(he_normal(rng, (fin, fout), fin, dtype))
        self.bias = Parameter(np.zeros(fout, dtype=dtype)) if bias else None

    def forward(self, x):
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class _BatchNorm(Module):
    """Normalisation over `axes` with per-feature affine parameters.

    Modes: training (batch statistics, running stats updated), eval (running
    statistics), identity (input returned untouched; the exact-equation tests
    rely on this bypass).
    """

    def __init__(self, num_features, axes, shape, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.axes = axes
        self.bshape = shape
        self.eps = eps
        self.momentum = momentum
        self.identity_mode = False
        self.gamma = Parameter(np.ones(num_features, dtype=dtype))
        self.beta = Parameter(np.zeros(num_features, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(num_features, dtype=dtype))
        self.register_buffer("running_var", np.ones(num_features, dtype=dtype))

    def forward(self, x):
        if self.identity_mode:
            return x
        if self.training:
            mu = x.mean(axis=self.axes, keepdims=True)
            xc = x - mu
            var = (xc * xc).mean(axis=self.axes, keepdims=True)
            xhat = xc / T.sqrt(var + self.eps)
            m = self.momentum
            self._set_buffer(
                "running_mean", ((1 - m) * self.running_mean + m * mu.data.reshape(-1)).astype(self.running_mean.dtype)
            )
            self._set_buffer(
                "running_var", ((1 - m) * self.running_var + m * var.data.reshape(-1)).astype(self.running_var.dtype)
            )
        else:
            mu = Tensor(self.running_mean.reshape(self.bshape))
            sd = Tensor(np.sqrt(self.running_var + self.eps).reshape(self.bshape))
            xhat = (x - mu) / sd
        return self.gamma.reshape(self.bshape) * xhat + self.beta.reshape(self.bshape)


class BatchNorm2d(_BatchNorm):
    """Per-channel batch norm for (B, C, H, W) inputs."""

    def __init__(self, channels, **kw):
        super().__init__(channels, axes=(0, 2, 3), shape=(1, channels, 1, 1), **kw)


class BatchNorm1d(_BatchNorm):
    """Per-feature batch norm for (..., F) inputs, normalising over all leading axes."""

    def __init__(self, features, ndim=2, **kw):
        super().__init__(features, axes=tuple(range(ndim - 1)), shape=(1,) * (ndim - 1) + (features,), **kw)


class LayerNorm(Module):
    """Layer norm over the last axis."""

    def __init__(self, dim, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return self.gamma * (xc / T.sqrt(var + self.eps)) + self.beta


class InvertedResidual(Module):
    """Narrow -> wide -> narrow block: 1x1 expand, depthwise 3x3, 1x1 project,
    with a skip connection when shapes allow."""

    def __init__(self, cin, cout, stride=1, expand=4, *, rng, dtype=np.float32):
        super().__init__()
        mid = max(cin * expand, cout)
        self.use_skip = stride == 1 and cin == cout
        self.expand_conv = Conv2d(cin, mid, 1, bias=False, rng=rng, dtype=dtype)
        self.expand_bn = BatchNorm2d(mid, dtype=dtype)
        self.dw_conv = DepthwiseConv2d(mid, 3, stride=stride, padding=1, bias=False, rng=rng, dtype=dtype)
        self.dw_bn = BatchNorm2d(mid, dtype=dtype)
        self.project_conv = Conv2d(mid, cout, 1, bias=False, rng=rng, dtype=dtype)
        self.project_bn = BatchNorm2d(cout, dtype=dtype)

    def forward(self, x):
        h = T.relu(self.expand_bn(self.expand_conv(x)))
        h = T.relu(self.dw_bn(self.dw_conv(h)))
        h = self.project_bn(self.project_conv(h))
        if self.use_skip:
            h = h + x
        return h


def set_batchnorm_identity(module: Module, identity: bool = True) -> None:
    """Flip every batch-norm layer under `module` into/out of identity mode."""
    for m in module.modules():
        if isinstance(m, _BatchNorm):
            m.identity_mode = identity


def set_batchnorm_momentum(module: Module, momentum: float) -> None:
    for m in module.modules():
        if isinstance(m, _BatchNorm):
            m.momentum = momentum
