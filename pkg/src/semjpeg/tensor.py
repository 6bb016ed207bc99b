"""Dense float64 tensor operations with hand-written backward passes.

Activations are numpy arrays laid out as (batch, channels, height, width).
Every forward op has a matching ``*_backward`` that returns the gradient
with respect to its input; parameter gradients accumulate into
:class:`LayerParams`.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
CHECKPOINT_MAGIC = b"MSROI1"


class ShapeError(ValueError):
    pass


@dataclass
class LayerParams:
    """Convolution kernel (out, in, n, n) and bias (out,) plus gradient accumulators."""

    kernel: np.ndarray
    bias: np.ndarray
    padding: int = 0
    grad_kernel: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    grad_bias: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        self.kernel = np.ascontiguousarray(self.kernel, dtype=DTYPE)
        self.bias = np.ascontiguousarray(self.bias, dtype=DTYPE)
        if self.kernel.ndim != 4 or self.kernel.shape[2] != self.kernel.shape[3]:
            raise ShapeError(f"kernel must be (out, in, n, n), got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match kernel {self.kernel.shape}")
        if self.grad_kernel is None:
            self.grad_kernel = np.zeros_like(self.kernel)
        if self.grad_bias is None:
            self.grad_bias = np.zeros_like(self.bias)

    @property
    def out_features(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_features(self) -> int:
        return self.kernel.shape[1]

    @property
    def size(self) -> int:
        return self.kernel.shape[2]

    def zero_grad(self) -> None:
        self.grad_kernel[...] = 0.0
        self.grad_bias[...] = 0.0

    @classmethod
    def glorot(cls, out_features: int, in_features: int, size: int,
               rng: np.random.Generator, padding: int | None = None) -> "LayerParams":
        """Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero bias."""
        fan_in = in_features * size * size
        fan_out = out_features * size * size
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        kernel = rng.uniform(-limit, limit, size=(out_features, in_features, size, size))
        if padding is None:
            padding = size // 2
        return cls(kernel, np.zeros(out_features), padding=padding)

    @classmethod
    def he(cls, out_features: int, in_features: int, size: int,
           rng: np.random.Generator, padding: int | None = None) -> "LayerParams":
        """Uniform init in +-sqrt(6 / fan_in), zero bias; keeps ReLU stacks at unit variance."""
        limit = math.sqrt(6.0 / (in_features * size * size))
        kernel = rng.uniform(-limit, limit, size=(out_features, in_features, size, size))
        if padding is None:
            padding = size // 2
        return cls(kernel, np.zeros(out_features), padding=padding)


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-d (batch, channels, height, width) tensor, got shape {x.shape}")
    return x


def _conv_out_size(size: int, k: int, padding: int, stride: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: np.ndarray, params: LayerParams, padding: int | None = None, stride: int = 1) -> np.ndarray:
    """Cross-correlate ``x`` with the layer kernel and add the bias.

    out[n,o,i,j] = sum_c sum_a sum_b W[o,c,a,b] x[n,c,i*s+a-p,j*s+b-p] + bias[o]
    with zero contributions from taps outside the input.
    """
    x = _as_batch(x)
    if padding is None:
        padding = params.padding
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")
    if x.shape[1] != params.in_features:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[1]} channels but kernel shape "
            f"{params.kernel.shape} expects {params.in_features}")
    n, _, h, w = x.shape
    k = params.size
    ho = _conv_out_size(h, k, padding, stride)
    wo = _conv_out_size(w, k, padding, stride)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel shape {params.kernel.shape} does not fit input shape {x.shape}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    out = np.zeros((n, ho, wo, params.out_features), dtype=DTYPE)
    for a in range(k):
        for b in range(k):
            window = xp[:, :, a:a + stride * (ho - 1) + 1:stride, b:b + stride * (wo - 1) + 1:stride]
            # (n, c, ho, wo) x (o, c) -> (n, ho, wo, o)
            out += np.tensordot(window, params.kernel[:, :, a, b], axes=([1], [1]))
    out = out.transpose(0, 3, 1, 2) + params.bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x: np.ndarray, params: LayerParams, upstream: np.ndarray,
                    padding: int | None = None, stride: int = 1) -> np.ndarray:
    """Return d(loss)/d(x) and accumulate kernel/bias gradients into ``params``."""
    x = _as_batch(x)
    if padding is None:
        padding = params.padding
    n, c, h, w = x.shape
    k = params.size
    ho = _conv_out_size(h, k, padding, stride)
    wo = _conv_out_size(w, k, padding, stride)
    expected = (n, params.out_features, ho, wo)
    upstream = np.asarray(upstream, dtype=DTYPE)
    if upstream.shape != expected:
        raise ShapeError(f"upstream gradient shape {upstream.shape} does not match conv output shape {expected}")
    if x.shape[1] != params.in_features:
        raise ShapeError(f"input shape {x.shape} does not match kernel shape {params.kernel.shape}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    grad_xp = np.zeros_like(xp)
    g = upstream.transpose(0, 2, 3, 1)  # (n, ho, wo, o)
    for a in range(k):
        for b in range(k):
            rows = slice(a, a + stride * (ho - 1) + 1, stride)
            cols = slice(b, b + stride * (wo - 1) + 1, stride)
            window = xp[:, :, rows, cols]
            # (n, c, ho, wo) . (n, ho, wo, o) -> (c, o)
            params.grad_kernel[:, :, a, b] += np.tensordot(window, g, axes=([0, 2, 3], [0, 1, 2])).T
            # (n, ho, wo, o) . (o, c) -> (n, ho, wo, c)
            grad_xp[:, :, rows, cols] += np.tensordot(g, params.kernel[:, :, a, b], axes=([3], [0])).transpose(0, 3, 1, 2)
    params.grad_bias += upstream.sum(axis=(0, 2, 3))
    if padding:
        return grad_xp[:, :, padding:padding + h, padding:padding + w].copy()
    return grad_xp


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(x) > 0, upstream, 0.0)


def maxpool(x: np.ndarray, window: int = 2, stride: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Max over square windows.

    Returns the pooled tensor and, for every output cell, the flat index of
    the winning input position within its (height * width) plane. Ties go to
    the lowest flat index.
    """
    x = _as_batch(x)
    if stride < 1 or window < 1:
        raise ShapeError(f"window and stride must be >= 1, got window={window} stride={stride}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} larger than input plane {h}x{w}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    best = np.full((n, c, ho, wo), -np.inf, dtype=DTYPE)
    arg = np.zeros((n, c, ho, wo), dtype=np.int64)
    base_r = np.arange(ho)[:, None] * stride
    base_c = np.arange(wo)[None, :] * stride
    # row-major offsets visit candidates in increasing flat index; strict '>' keeps the first max
    for a in range(window):
        for b in range(window):
            cand = x[:, :, a:a + stride * (ho - 1) + 1:stride, b:b + stride * (wo - 1) + 1:stride]
            better = cand > best
            best = np.where(better, cand, best)
            arg = np.where(better, (base_r + a) * w + (base_c + b), arg)
    return best, arg


def maxpool_backward(input_shape: Sequence[int], argmax: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    n, c, h, w = input_shape
    upstream = np.asarray(upstream, dtype=DTYPE)
    if upstream.shape != argmax.shape:
        raise ShapeError(f"upstream gradient shape {upstream.shape} does not match pool output {argmax.shape}")
    grad = np.zeros((n * c, h * w), dtype=DTYPE)
    rows = np.repeat(np.arange(n * c), argmax.shape[2] * argmax.shape[3])
    np.add.at(grad, (rows, argmax.reshape(-1)), upstream.reshape(-1))
    return grad.reshape(n, c, h, w)


def sigmoid(x):
    """Logistic 1 / (1 + exp(-x)), evaluated without overflow."""
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    scores = np.asarray(scores, dtype=DTYPE)
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def sgd_step(params: Iterable[LayerParams], lr: float) -> bool:
    """Apply p <- p - lr * grad to every layer, then zero the gradients.

    If any gradient is non-finite the whole step is skipped (gradients are
    still cleared) and False is returned.
    """
    params = list(params)
    finite = all(np.all(np.isfinite(p.grad_kernel)) and np.all(np.isfinite(p.grad_bias)) for p in params)
    if finite:
        for p in params:
            p.kernel -= lr * p.grad_kernel
            p.bias -= lr * p.grad_bias
    for p in params:
        p.zero_grad()
    return finite


def _all_finite(params: Sequence[LayerParams]) -> bool:
    return all(np.all(np.isfinite(p.grad_kernel)) and np.all(np.isfinite(p.grad_bias)) for p in params)


class Momentum:
    """Heavy-ball SGD: v <- mu v + g, p <- p - lr v."""

    def __init__(self, params: Sequence[LayerParams], lr: float, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [(np.zeros_like(p.kernel), np.zeros_like(p.bias)) for p in self.params]

    def step(self) -> bool:
        if not _all_finite(self.params):
            for p in self.params:
                p.zero_grad()
            return False
        for p, (vk, vb) in zip(self.params, self.velocity):
            vk *= self.momentum
            vk += p.grad_kernel
            vb *= self.momentum
            vb += p.grad_bias
            p.kernel -= self.lr * vk
            p.bias -= self.lr * vb
            p.zero_grad()
        return True


class Adam:
    """Adam with bias-corrected moment estimates; skips non-finite steps like :func:`sgd_step`."""

    def __init__(self, params: Sequence[LayerParams], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.moments = [[np.zeros_like(a) for a in (p.kernel, p.kernel, p.bias, p.bias)] for p in self.params]

    def step(self) -> bool:
        if not _all_finite(self.params):
            for p in self.params:
                p.zero_grad()
            return False
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, (mk, vk, mb, vb) in zip(self.params, self.moments):
            for value, grad, m, v in ((p.kernel, p.grad_kernel, mk, vk), (p.bias, p.grad_bias, mb, vb)):
                m *= self.beta1
                m += (1 - self.beta1) * grad
                v *= self.beta2
                v += (1 - self.beta2) * grad * grad
                value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()
        return True


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradcheck(loss_and_grads: Callable[[np.ndarray], tuple[float, np.ndarray]],
              params: Sequence[LayerParams], x: np.ndarray, epsilon: float = 1e-3,
              samples: int | None = 16, seed: int = 0, floor: float = 1e-8) -> float:
    """Worst relative error between analytic gradients and central differences.

    ``loss_and_grads(x)`` must run forward+backward, returning the scalar
    loss and d(loss)/d(x), and leave parameter gradients accumulated in
    ``params`` (they are zeroed here first). ``samples`` coordinates are
    drawn per tensor; ``None`` checks every coordinate.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.zero_grad()
    x = np.array(x, dtype=DTYPE, order="C")  # reshape(-1) below must be a view
    _, grad_x = loss_and_grads(x)
    analytic = [(p.kernel, p.grad_kernel.copy()) for p in params] + [(p.bias, p.grad_bias.copy()) for p in params]
    analytic.append((x, np.asarray(grad_x, dtype=DTYPE).copy()))
    for p in params:
        p.zero_grad()

    def pick(arr):
        if samples is None or samples >= arr.size:
            return range(arr.size)
        return rng.choice(arr.size, size=samples, replace=False)

    worst = 0.0
    for tensor, grad in analytic:
        flat = tensor.reshape(-1)
        for idx in pick(tensor):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            up, _ = loss_and_grads(x)
            flat[idx] = orig - epsilon
            down, _ = loss_and_grads(x)
            flat[idx] = orig
            numeric = (up - down) / (2 * epsilon)
            worst = max(worst, relative_error(grad.reshape(-1)[idx], numeric, floor))
    for p in params:
        p.zero_grad()
    return worst


def save_checkpoint(path: str | Path, layers: Sequence[LayerParams]) -> None:
    """Write "MSROI1", a little-endian u32 layer count, then per layer the
    kernel rank + extents, the bias extent, and the raw float64 values."""
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<I", len(layers))
    for layer in layers:
        for arr in (layer.kernel, layer.bias):
            out += struct.pack("<I", arr.ndim)
            out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += struct.pack("<I", layer.padding)
        out += layer.kernel.astype("<f8").tobytes()
        out += layer.bias.astype("<f8").tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(out))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> list[LayerParams]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not an MSROI1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise ValueError(f"{path}: truncated checkpoint at offset {pos}")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    (count,) = take("<I")
    layers = []
    for _ in range(count):
        shapes = []
        for _ in range(2):
            (ndim,) = take("<I")
            shapes.append(take(f"<{ndim}I"))
        (padding,) = take("<I")
        arrays = []
        for shape in shapes:
            nbytes = 8 * int(np.prod(shape))
            if pos + nbytes > len(data):
                raise ValueError(f"{path}: truncated checkpoint at offset {pos}")
            arrays.append(np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos).astype(DTYPE).reshape(shape))
            pos += nbytes
        layers.append(LayerParams(arrays[0], arrays[1], padding=padding))
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes after offset {pos}")
    return layers
