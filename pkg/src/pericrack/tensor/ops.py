"""Differentiable operations on :class:`~pericrack.tensor.core.Tensor`.

Reductions accumulate in float64 and cast back to the input dtype.
Broadcasting is supported for elementwise ``add``/``mul`` only.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ParameterError, ShapeError
from .core import Tensor


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)), dtype=np.float64).astype(grad.dtype)
    axes = tuple(k for k, n in enumerate(shape) if n == 1 and grad.shape[k] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True, dtype=np.float64).astype(grad.dtype)
    return grad.reshape(shape)


# -- elementwise ---------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, sa) if a.requires_grad else None,
                _unbroadcast(g * ad, sb) if b.requires_grad else None)

    return Tensor._make(ad * bd, (a, b), backward, "mul")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return Tensor._make(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._make(np.log(x), (a,), lambda g: (g / x,), "log")


def square(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._make(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def relu(a: Tensor) -> Tensor:
    """``max(0, x)``; the subgradient at 0 is taken as 0."""
    out = np.maximum(a.data, 0)
    return Tensor._make(out, (a,), lambda g: (np.where(out > 0, g, 0).astype(g.dtype, copy=False),), "relu")


def add_relu(a: Tensor, b: Tensor) -> Tensor:
    """``relu(a + b)`` with broadcasting, computed in one buffer."""
    sa, sb = a.shape, b.shape
    out = np.add(a.data, b.data)
    np.maximum(out, 0, out=out)

    def backward(g):
        g = np.where(out > 0, g, 0).astype(g.dtype, copy=False)
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._make(out, (a, b), backward, "add_relu")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x).astype(x.dtype, copy=False)
    return Tensor._make(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


# -- shape ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.data.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._make(a.data[index], (a,), backward, "getitem")


def concat(tensors, axis=-1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward,
                        "concat")


def gather_points(a: Tensor, index: np.ndarray) -> Tensor:
    """Select rows along axis 1 per batch element: ``a[b, index[b]]``.

    ``a`` is ``(B, P, D)`` and ``index`` is ``(B, n)``.
    """
    index = np.asarray(index)
    if index.ndim != 2 or index.shape[0] != a.shape[0]:
        raise ShapeError(f"index shape {index.shape} does not match batch of {a.shape}")
    out = np.take_along_axis(a.data, index[:, :, None], axis=1)
    shape, dtype = a.shape, a.data.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        rows = np.arange(shape[0])[:, None]
        np.add.at(full, (rows, index), g)
        return (full,)

    return Tensor._make(out, (a,), backward, "gather_points")


# -- reductions ------------------------------------------------------------------------

def sum(a: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    shape, dtype = a.shape, a.data.dtype
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64), dtype=dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(dtype),)

    return Tensor._make(out, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[k] for k in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / float(n))


# -- linear algebra ----------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} are incompatible")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if ad.ndim > 2 and bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    """Affine map ``W x + b`` for ``W`` of shape ``(out, in)`` over the last axis of ``x``."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd.T
    if bias is not None:
        out += bias.data
    out = out.reshape(*lead, wd.shape[0])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd).reshape(xd.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        gb = g2.sum(axis=0, dtype=np.float64).astype(g.dtype) if bias is not None and bias.requires_grad else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._make(out, parents, backward, "linear")


def linear_relu(x: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    """``relu(linear(x, W, b))`` keeping only the activated output alive for the backward pass."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd.T
    if bias is not None:
        out += bias.data
    np.maximum(out, 0, out=out)

    def backward(g):
        g2 = g.reshape(out.shape)
        g2 = np.where(out > 0, g2, 0).astype(g.dtype, copy=False)
        gx = (g2 @ wd).reshape(xd.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        gb = g2.sum(axis=0, dtype=np.float64).astype(g.dtype) if bias is not None and bias.requires_grad else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._make(out.reshape(*xd.shape[:-1], wd.shape[0]), parents, backward, "linear_relu")


# -- convolution and pooling ---------------------------------------------------------------

def conv2d_shape(width: int, height: int, depth: int, filter_size: int, stride: int, padding: int,
                 n_filters: int) -> tuple:
    """Output volume ``(W2, H2, D2)`` with the floor convention for uneven strides."""
    for name, v in (("width", width), ("height", height), ("depth", depth), ("filter_size", filter_size),
                    ("stride", stride), ("n_filters", n_filters)):
        if int(v) != v or v < 1:
            raise ParameterError(f"{name} must be a positive integer, got {v!r}")
    if padding < 0:
        raise ParameterError(f"padding must be non-negative, got {padding!r}")
    if filter_size > width + 2 * padding or filter_size > height + 2 * padding:
        raise ParameterError(f"filter {filter_size} larger than padded input {width}x{height}+2*{padding}")
    w2 = (width - filter_size + 2 * padding) // stride + 1
    h2 = (height - filter_size + 2 * padding) // stride + 1
    return w2, h2, n_filters


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` ``(B, C, H, W)`` with ``kernels`` ``(K, C, F, F)``."""
    B, C, H, W = x.shape
    K, Ck, F, F2 = kernels.shape
    if Ck != C or F != F2:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernels {kernels.shape}")
    if bias is not None and bias.shape != (K,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {K} filters")
    Wo, Ho, _ = conv2d_shape(W, H, C, F, stride, padding, K)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (F, F), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * F * F)
    wmat = kernels.data.reshape(K, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(B, Ho, Wo, K).transpose(0, 3, 1, 2)
    dtype = x.data.dtype

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, K)
        gk = (g2.T @ cols).reshape(kernels.shape) if kernels.requires_grad else None
        gb = g2.sum(axis=0, dtype=np.float64).astype(g.dtype) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(B, Ho, Wo, C, F, F)
            gxp = np.zeros(xp.shape, dtype=dtype)
            for p in range(F):
                for q in range(F):
                    gxp[:, :, p:p + stride * Ho:stride, q:q + stride * Wo:stride] += \
                        dcols[:, :, :, :, p, q].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernels, bias) if bias is not None else (x, kernels)
    return Tensor._make(np.ascontiguousarray(out), parents, backward, "conv2d")


def maxpool(x: Tensor, window: int = 3, stride: int = None) -> Tensor:
    """Per-window maximum; trailing rows/columns that do not fill a window are dropped."""
    stride = window if stride is None else stride
    B, C, H, W = x.shape
    if window > H or window > W:
        raise ParameterError(f"pool window {window} larger than input {H}x{W}")
    if window < 1 or stride < 1:
        raise ParameterError("pool window and stride must be positive")
    Ho, Wo = (H - window) // stride + 1, (W - window) // stride + 1
    win = sliding_window_view(x.data, (window, window), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    flat = win.reshape(B, C, Ho, Wo, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    shape, dtype = x.shape, x.data.dtype

    def backward(g):
        gx = np.zeros(shape, dtype=dtype)
        bi, ci, hi, wi = np.indices(arg.shape)
        rows = hi * stride + arg // window
        cols = wi * stride + arg % window
        np.add.at(gx, (bi, ci, rows, cols), g)
        return (gx,)

    return Tensor._make(np.ascontiguousarray(out), (x,), backward, "maxpool")


# -- probabilities and losses ----------------------------------------------------------------

def softmax(z: Tensor, axis=-1) -> Tensor:
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    t = np.exp(shifted)
    out = t / t.sum(axis=axis, keepdims=True, dtype=np.float64).astype(t.dtype)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (z,), backward, "softmax")


def log_softmax(z: Tensor, axis=-1) -> Tensor:
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True, dtype=np.float64)).astype(z.data.dtype)
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (z,), backward, "log_softmax")


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer class ``targets`` (0-based)."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or len(targets) != logits.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    logp = log_softmax(logits, axis=1)
    picked = getitem(logp, (np.arange(len(targets)), targets))
    return neg(mean(picked))


BCE_EPS = 1e-7


def bce(p, y) -> Tensor:
    """Binary cross-entropy ``-mean(y log p + (1 - y) log(1 - p))`` with ``p`` clamped."""
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    y = np.asarray(y, dtype=p.data.dtype)
    pc = np.clip(p.data, BCE_EPS, 1 - BCE_EPS)
    inside = (p.data >= BCE_EPS) & (p.data <= 1 - BCE_EPS)
    n = p.data.size
    terms = y * np.log(pc) + (1 - y) * np.log(1 - pc)
    out = np.asarray(-terms.sum(dtype=np.float64) / n, dtype=p.data.dtype)

    def backward(g):
        return (g * inside * (-(y / pc) + (1 - y) / (1 - pc)) / n,)

    return Tensor._make(out, (p,), backward, "bce")


def bce_with_logits(logits: Tensor, y, axis=None) -> Tensor:
    """Summed BCE of ``sigmoid(logits)`` against ``y``, computed stably from logits.

    Returns the sum over ``axis`` (all axes when ``None``).
    """
    a = logits.data
    y = np.asarray(y, dtype=a.dtype)
    terms = np.logaddexp(0.0, a).astype(a.dtype, copy=False) - y * a
    out = np.asarray(terms.sum(axis=axis, dtype=np.float64), dtype=a.dtype)

    def backward(g):
        gg = g if axis is None else np.expand_dims(g, axis)
        return (gg * (_sigmoid(a) - y),)

    return Tensor._make(out, (logits,), backward, "bce_with_logits")


def gaussian_kl(mu1: Tensor, sigma1: Tensor, mu2: Tensor, sigma2: Tensor) -> Tensor:
    """``KL(N(mu1, sigma1^2) || N(mu2, sigma2^2))`` summed over the last axis."""
    s1, s2 = sigma1.data, sigma2.data
    if np.any(s1 <= 0) or np.any(s2 <= 0):
        raise ParameterError("gaussian_kl requires positive standard deviations")
    diff = mu1.data - mu2.data
    var2 = s2 * s2
    terms = np.log(s2 / s1) + (s1 * s1 + diff * diff) / (2 * var2) - 0.5
    out = np.asarray(terms.sum(axis=-1, dtype=np.float64), dtype=s1.dtype)

    def backward(g):
        g = np.asarray(g)[..., None]
        return (g * diff / var2,
                g * (-1.0 / s1 + s1 / var2),
                -g * diff / var2,
                g * (1.0 / s2 - (s1 * s1 + diff * diff) / (var2 * s2)))

    return Tensor._make(out, (mu1, sigma1, mu2, sigma2), backward, "gaussian_kl")


def reparam_sample(mu: Tensor, sigma: Tensor, noise: np.ndarray) -> Tensor:
    """Differentiable sample ``mu + sigma * noise``."""
    noise = np.asarray(noise, dtype=mu.data.dtype)
    return add(mu, mul(sigma, noise))
