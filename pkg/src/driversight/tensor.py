"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ``ndarray`` and records the operations applied to it;
``Tensor.backward()`` walks the tape and accumulates gradients into ``.grad``.
Only the primitives needed by the model family live here: elementwise
arithmetic, matmul, reductions, shape ops, 2-d (depthwise) convolution,
pooling and nearest-neighbor upsampling. Everything else in the package is
composed from these, so its gradients come for free.

Dtype discipline: an op produces the dtype of its inputs. Models are built in
float32 for training and float64 for finite-difference checking; nothing here
silently promotes.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "as_tensor",
    "concat",
    "stack",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "sqrt",
    "softmax",
    "log_softmax",
    "pad2d",
    "conv2d",
    "depthwise_conv2d",
    "max_pool2d",
    "upsample_nearest2d",
    "mac_counter",
]

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class _MacCounter:
    """Optional multiply-accumulate counter, enabled by the benchmark."""

    def __init__(self):
        self.active = False
        self.total = 0

    def add(self, n: int) -> None:
        if self.active:
            self.total += int(n)

    def reset(self) -> None:
        self.total = 0


mac_counter = _MacCounter()


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (adjoint of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """An ndarray plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents, backward) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- basic introspection ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy() if grad.base is not None or grad is self.data else grad
        else:
            self.grad = self.grad + grad

    # -- backward pass ---------------------------------------------------------

    def backward(self, grad=None) -> None:
        """Backpropagate from this tensor. Defaults to d(self)/d(self) = 1
        and therefore requires a scalar unless `grad` is given."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient requires a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._node(out_data, (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._node(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self):
        def backward(g):
            if self.requires_grad:
                self._accumulate(-g)

        return Tensor._node(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) + (-self)

    def __truediv__(self, other):
        other = as_tensor(other, self.dtype)
        out_data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape)
                )

        return Tensor._node(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return as_tensor(other, self.dtype) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._node(out_data, (self,), backward)

    def __matmul__(self, other):
        other = as_tensor(other, self.dtype)
        out_data = np.matmul(self.data, other.data)
        mac_counter.add(max(out_data.size, 1) * self.data.shape[-1])
        vec_left = self.data.ndim == 1
        vec_right = other.data.ndim == 1

        def backward(g):
            if self.requires_grad:
                if vec_right:
                    ga = g[..., None] * other.data
                else:
                    gl = g[..., None, :] if vec_left else g
                    ga = np.matmul(gl, np.swapaxes(other.data, -1, -2))
                    if vec_left:
                        ga = ga.reshape(-1, self.data.shape[0]).sum(axis=0)
                self._accumulate(_unbroadcast(ga, self.data.shape))
            if other.requires_grad:
                if vec_left and vec_right:
                    gb = g * self.data
                elif vec_left:
                    gb = np.multiply.outer(self.data, g)
                elif vec_right:
                    gb = np.einsum("...mk,...m->k", self.data, g, optimize=True)
                else:
                    gb = np.matmul(np.swapaxes(self.data, -1, -2), g)
                other._accumulate(_unbroadcast(gb, other.data.shape))

        return Tensor._node(out_data, (self, other), backward)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.data.shape).astype(self.dtype, copy=False))
                return
            axes = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                g = np.expand_dims(g, axes)
            self._accumulate(np.broadcast_to(g, self.data.shape))

        return Tensor._node(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for a in axes:
                n *= self.data.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape ops ---------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.data.shape
        out_data = self.data.reshape(shape)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(old_shape))

        return Tensor._node(out_data, (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.transpose(inv))

        return Tensor._node(self.data.transpose(axes), (self,), backward)

    def __getitem__(self, idx):
        out_data = self.data[idx]

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, idx, g)
                self._accumulate(full)

        return Tensor._node(out_data, (self,), backward)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value)
    if dtype is not None and arr.dtype != dtype and np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(dtype)
    elif dtype is not None and arr.dtype.kind in "iu":
        arr = arr.astype(dtype)
    return Tensor(arr)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor._node(out_data, tensors, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        pieces = np.moveaxis(g, axis, 0)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor._node(out_data, tensors, backward)


# -- elementwise nonlinearities ------------------------------------------------


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._node(out_data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.tanh(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - out_data * out_data))

    return Tensor._node(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.maximum(x.data, 0)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0))

    return Tensor._node(out_data, (x,), backward)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * out_data)

    return Tensor._node(out_data, (x,), backward)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.log(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    return Tensor._node(out_data, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.sqrt(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * 0.5 / out_data)

    return Tensor._node(out_data, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max-shift is a constant)."""
    x = as_tensor(x)
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))
    e = exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))
    return shifted - log(exp(shifted).sum(axis=axis, keepdims=True))


# -- spatial primitives ----------------------------------------------------------


def pad2d(x: Tensor, pad: int) -> Tensor:
    """Zero-pad the last two axes by `pad` on every side."""
    if pad == 0:
        return x
    x = as_tensor(x)
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    out_data = np.pad(x.data, widths)
    sl = (Ellipsis, slice(pad, -pad), slice(pad, -pad))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g[sl])

    return Tensor._node(out_data, (x,), backward)


def _col_view(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    b, c = xp.shape[:2]
    s0, s1, s2, s3 = xp.strides
    shape = (b, c, kh, kw, oh, ow)
    strides = (s0, s1, s2, s3, s2 * sh, s3 * sw)
    return np.lib.stride_tricks.as_strided(xp, shape=shape, strides=strides)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation: x (B,C,H,W), w (OC,C,kh,kw), b (OC,)."""
    x = as_tensor(x)
    w = as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input/weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input {x.shape[1]}, weight {w.shape[1]}")
    bsz, c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    xp = np.pad(x.data, [(0, 0), (0, 0), (padding, padding), (padding, padding)]) if padding else x.data
    oh = (xp.shape[2] - kh) // stride + 1
    ow = (xp.shape[3] - kw) // stride + 1
    cols = _col_view(xp, kh, kw, stride, stride, oh, ow).reshape(bsz, c * kh * kw, oh * ow)
    w2 = w.data.reshape(oc, c * kh * kw)
    out = np.matmul(w2, cols).reshape(bsz, oc, oh, ow)
    mac_counter.add(bsz * oc * c * kh * kw * oh * ow)
    if b is not None:
        out = out + b.data.reshape(1, oc, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(bsz, oc, oh * ow)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            dw = np.einsum("bos,bks->ok", g2, cols, optimize=True)
            w._accumulate(dw.reshape(w.data.shape))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2).reshape(bsz, c, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for ki in range(kh):
                for kj in range(kw):
                    dxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += dcols[
                        :, :, ki, kj
                    ]
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(dxp)

    return Tensor._node(out, parents, backward)


def depthwise_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel 2-d cross-correlation: x (B,C,H,W), w (C,kh,kw), b (C,).

    Computed as kh*kw shifted multiply-accumulates, which is much faster than
    an im2col round-trip for the small kernels used here.
    """
    x = as_tensor(x)
    w = as_tensor(w)
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"depthwise channel mismatch: input {x.shape[1]}, weight {w.shape[0]}")
    bsz, c, h, wd = x.shape
    _, kh, kw = w.shape
    xp = np.pad(x.data, [(0, 0), (0, 0), (padding, padding), (padding, padding)]) if padding else x.data
    oh = (xp.shape[2] - kh) // stride + 1
    ow = (xp.shape[3] - kw) // stride + 1
    out = np.zeros((bsz, c, oh, ow), dtype=x.dtype)
    slices = {}
    for ki in range(kh):
        for kj in range(kw):
            sl = xp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride]
            slices[(ki, kj)] = sl
            out += w.data[None, :, ki, kj, None, None] * sl
    mac_counter.add(bsz * c * kh * kw * oh * ow)
    if b is not None:
        out = out + b.data.reshape(1, c, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            dw = np.empty_like(w.data)
            for ki in range(kh):
                for kj in range(kw):
                    dw[:, ki, kj] = np.einsum("bchw,bchw->c", g, slices[(ki, kj)], optimize=True)
            w._accumulate(dw)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for ki in range(kh):
                for kj in range(kw):
                    dxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += (
                        w.data[None, :, ki, kj, None, None] * g
                    )
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(dxp)

    return Tensor._node(out, parents, backward)


def max_pool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling; spatial dims must divide by `kernel`."""
    x = as_tensor(x)
    bsz, c, h, w = x.shape
    if h % kernel or w % kernel:
        raise ValueError(f"max_pool2d: spatial dims {h}x{w} not divisible by {kernel}")
    oh, ow = h // kernel, w // kernel
    blocks = x.data.reshape(bsz, c, oh, kernel, ow, kernel)
    out = blocks.max(axis=(3, 5))

    def backward(g):
        if not x.requires_grad:
            return
        mask = blocks == out[:, :, :, None, :, None]
        # ties split the gradient evenly (measure-zero for continuous inputs)
        counts = mask.sum(axis=(3, 5), keepdims=True)
        dx = mask * (g[:, :, :, None, :, None] / counts)
        x._accumulate(dx.reshape(bsz, c, h, w))

    return Tensor._node(out, (x,), backward)


def upsample_nearest2d(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbor upsampling by an integer factor on the last two axes."""
    if factor == 1:
        return x
    x = as_tensor(x)
    out_data = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def backward(g):
        if x.requires_grad:
            lead = g.shape[:-2]
            h, w = x.shape[-2], x.shape[-1]
            x._accumulate(g.reshape(*lead, h, factor, w, factor).sum(axis=(-3, -1)))

    return Tensor._node(out_data, (x,), backward)
