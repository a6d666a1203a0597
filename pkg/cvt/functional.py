"""
Differentiable operations on `Tensor`.

Each op is a `Function` subclass paired with a lowercase wrapper; layers only
call the wrappers.
"""
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from cvt.errors import ContractError, DimensionError, GeometryError, LabelIndexError
from cvt.tensor import Function, Tensor, as_tensor


# ==========================
# Element-wise
# ==========================
class Add(Function):
    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (
            self.unbroadcast(grad * self.b, self.a.shape),
            self.unbroadcast(grad * self.a, self.b.shape),
        )


class Scale(Function):
    def forward(self, a, factor: float):
        self.factor = factor
        return a * np.asarray(factor, dtype=a.dtype)

    def backward(self, grad):
        return (grad * np.asarray(self.factor, dtype=grad.dtype),)


class Gelu(Function):
    """Exact GELU, x * Phi(x)."""

    def forward(self, x):
        self.x = x
        self.cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
        return (x * self.cdf).astype(x.dtype)

    def backward(self, grad):
        pdf = np.exp(-0.5 * self.x * self.x) / math.sqrt(2.0 * math.pi)
        return ((grad * (self.cdf + self.x * pdf)).astype(grad.dtype),)


def add(a, b) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def sub(a, b) -> Tensor:
    return Sub.apply(as_tensor(a), as_tensor(b))


def mul(a, b) -> Tensor:
    return Mul.apply(as_tensor(a), as_tensor(b))


def scale(a: Tensor, factor: float) -> Tensor:
    return Scale.apply(a, factor=factor)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


# ==========================
# Shape manipulation
# ==========================
class Reshape(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, a, axes):
        self.axes = axes if axes is not None else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class GetItem(Function):
    def forward(self, a, index):
        self.in_shape, self.key, self.dtype = a.shape, index, a.dtype
        return a[index]

    def backward(self, grad):
        full = np.zeros(self.in_shape, dtype=self.dtype)
        np.add.at(full, self.key, grad)
        return (full,)


class Concat(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(a, axes=tuple(axes) if axes is not None else None)


def getitem(a: Tensor, index) -> Tensor:
    return GetItem.apply(a, index=index)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


# ==========================
# Reductions
# ==========================
class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.in_shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Mean(Sum):
    def forward(self, a, axis, keepdims):
        out = super().forward(a, axis, keepdims)
        self.count = a.size // max(out.size, 1)
        return (out / self.count).astype(a.dtype)

    def backward(self, grad):
        (full,) = super().backward(grad)
        return (full / self.count,)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return Mean.apply(a, axis=axis, keepdims=keepdims)


# ==========================
# Matrix multiply
# ==========================
class MatMul(Function):
    """Batched matrix product over the last two axes; leading axes broadcast."""

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError("matmul", a.shape, b.shape)
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        ga = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        gb = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return self.unbroadcast(ga, self.a.shape), self.unbroadcast(gb, self.b.shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight (+ bias); weight is stored (in_features, out_features)."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ==========================
# Convolution
# ==========================
def conv_output_size(size: int, kernel: int, stride: int, padding: int, axis: str = "H") -> int:
    """floor((size + 2p - k) / stride + 1); raises GeometryError when not positive."""
    if stride < 1 or padding < 0:
        raise ContractError(f"stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise GeometryError(axis, size, kernel, stride, padding)
    return out


def embed_output_size(size: int, kernel: int, stride: int, padding: int, axis: str = "H") -> int:
    """Token-embedding grid extent; the kernel must also fit inside the unpadded input."""
    if size < kernel:
        raise GeometryError(axis, size, kernel, stride, padding)
    return conv_output_size(size, kernel, stride, padding, axis)


class Conv2d(Function):
    """Grouped 2-D cross-correlation with zero padding, via strided windows."""

    def forward(self, x, w, *bias, stride, padding, groups):
        B, C, H, W = x.shape
        C_out, C_group, kh, kw = w.shape
        if C % groups or C_out % groups or C // groups != C_group:
            raise DimensionError("conv2d", x.shape, w.shape)
        Ho = conv_output_size(H, kh, stride, padding, axis="H")
        Wo = conv_output_size(W, kw, stride, padding, axis="W")

        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        win = win.reshape(B, groups, C_group, Ho, Wo, kh, kw)
        wg = w.reshape(groups, C_out // groups, C_group, kh, kw)

        self.geometry = (stride, padding, groups, Ho, Wo)
        self.xp_shape, self.x_shape = xp.shape, x.shape
        self.win, self.wg, self.w_shape = win, wg, w.shape
        self.has_bias = bool(bias)

        out = np.einsum("bgchwij,gocij->bgohw", win, wg, optimize=True).reshape(B, C_out, Ho, Wo)
        if bias:
            out = out + bias[0].reshape(1, C_out, 1, 1)
        return out.astype(x.dtype, copy=False)

    def backward(self, grad):
        stride, padding, groups, Ho, Wo = self.geometry
        B, C, H, W = self.x_shape
        kh, kw = self.w_shape[2:]
        gg = grad.reshape(B, groups, -1, Ho, Wo)

        gw = np.einsum("bgohw,bgchwij->gocij", gg, self.win, optimize=True).reshape(self.w_shape)
        gwin = np.einsum("bgohw,gocij->bgchwij", gg, self.wg, optimize=True).reshape(B, C, Ho, Wo, kh, kw)

        gxp = np.zeros(self.xp_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gwin[..., i, j]
        gx = gxp[:, :, padding:padding + H, padding:padding + W]

        grads = [gx, gw.astype(grad.dtype, copy=False)]
        if self.has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d", x.shape, weight.shape)
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Conv2d.apply(*inputs, stride=stride, padding=padding, groups=groups)


# ==========================
# Attention and normalization
# ==========================
class Softmax(Function):
    def forward(self, x, axis):
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out, self.axis = e / e.sum(axis=axis, keepdims=True), axis
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=self.axis, keepdims=True)),)


class LayerNorm(Function):
    """Normalize over the last axis, then scale by gamma and shift by beta."""

    def forward(self, x, gamma, beta, eps):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.x_hat = (x - mu) * self.inv_std
        self.gamma = gamma
        return (self.x_hat * gamma + beta).astype(x.dtype, copy=False)

    def backward(self, grad):
        lead = tuple(range(grad.ndim - 1))
        g_gamma = (grad * self.x_hat).sum(axis=lead)
        g_beta = grad.sum(axis=lead)
        gx_hat = grad * self.gamma
        gx = self.inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - self.x_hat * (gx_hat * self.x_hat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gamma, g_beta


class BatchNorm2d(Function):
    """
    Per-channel normalization of B x C x H x W.

    With `batch_stats` the statistics come from x itself and gradients flow
    through them; otherwise mean/var are constants (eval mode).
    """

    def forward(self, x, gamma, beta, mean, var, eps, batch_stats):
        shape = (1, -1, 1, 1)
        self.inv_std = (1.0 / np.sqrt(var + eps)).reshape(shape)
        self.x_hat = (x - mean.reshape(shape)) * self.inv_std
        self.gamma, self.batch_stats = gamma.reshape(shape), batch_stats
        return (self.x_hat * self.gamma + beta.reshape(shape)).astype(x.dtype, copy=False)

    def backward(self, grad):
        axes = (0, 2, 3)
        g_gamma = (grad * self.x_hat).sum(axis=axes)
        g_beta = grad.sum(axis=axes)
        gx_hat = grad * self.gamma
        if self.batch_stats:
            gx = self.inv_std * (
                gx_hat
                - gx_hat.mean(axis=axes, keepdims=True)
                - self.x_hat * (gx_hat * self.x_hat).mean(axis=axes, keepdims=True)
            )
        else:
            gx = gx_hat * self.inv_std
        return gx, g_gamma, g_beta


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"softmax axis {axis} out of range for shape {x.shape}")
    return Softmax.apply(x, axis=axis)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if x.shape[-1] != gamma.shape[0]:
        raise DimensionError("layernorm", x.shape, gamma.shape)
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """
    Train mode normalizes with batch statistics over (B, H, W) and updates the
    running buffers in place: running <- (1 - momentum) * running + momentum * batch.
    Eval mode normalizes with the running buffers.
    """
    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise DimensionError("batchnorm2d", x.shape, gamma.shape)
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    return BatchNorm2d.apply(x, gamma, beta, mean=mean, var=var, eps=eps, batch_stats=training)


# ==========================
# Loss
# ==========================
class CrossEntropy(Function):
    def forward(self, logits, labels):
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        self.probs, self.labels = np.exp(log_probs), labels
        rows = np.arange(len(labels))
        return np.asarray(-log_probs[rows, labels].mean(), dtype=logits.dtype)

    def backward(self, grad):
        g = self.probs.copy()
        g[np.arange(len(self.labels)), self.labels] -= 1.0
        return (g * (grad / len(self.labels)),)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError("cross_entropy", logits.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise LabelIndexError(f"labels must lie in [0, {logits.shape[1]}), got {labels.min()}..{labels.max()}")
    return CrossEntropy.apply(logits, labels=labels)


# ==========================
# Regularization hook
# ==========================
def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep, dtype=x.dtype))


def flatten_tokens(x: Tensor) -> Tuple[Tensor, int, int]:
    """B x C x H x W -> (B x HW x C, H, W), row-major with W fastest."""
    B, C, H, W = x.shape
    return transpose(reshape(x, (B, C, H * W)), (0, 2, 1)), H, W


def tokens_to_map(x: Tensor, H: int, W: int) -> Tensor:
    """B x HW x C -> B x C x H x W."""
    B, T, C = x.shape
    if T != H * W:
        raise ContractError(f"{T} tokens do not form a {H}x{W} grid")
    return reshape(transpose(x, (0, 2, 1)), (B, C, H, W))
