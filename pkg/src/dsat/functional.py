"""Differentiable operations on :class:`~dsat.tensor.Tensor`.

Every public function returns a new Tensor and, while gradients are
enabled, records a backward closure mapping the output gradient to the
parent gradients.  Backward closures return one numpy array (or None)
per parent, in parent order.

Array layout conventions used throughout the package:

* image batches are NCHW for convolutions,
* attention operates on NHWC-derived ``[batch, tokens, channels]``,
* ``linear`` weights are ``[d_in, d_out]`` so that ``y = x @ w + b``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .tensor import Tensor, is_grad_enabled

__all__ = [
    "add", "sub", "mul", "div", "neg", "exp", "log", "sqrt", "abs",
    "sum", "mean", "matmul", "reshape", "transpose", "concat",
    "slice_", "take_rows", "pad_reflect2d",
    "sigmoid", "gelu", "leaky_relu", "softmax", "layer_norm",
    "linear", "conv2d", "depthwise_conv2d",
    "pixel_shuffle", "pixel_unshuffle",
    "window_partition", "window_reverse", "cyclic_shift",
    "logsumexp", "l2_normalize",
]


def _wrap(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(value, dtype=dtype))


def _make(out_data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    requires = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        out._parents = parents
        out._backward = backward
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient over axes that were broadcast in the forward pass."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data + b.data

    def backward(g):
        return _sum_to_shape(g, a.data.shape), _sum_to_shape(g, b.data.shape)

    return _make(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data - b.data

    def backward(g):
        return _sum_to_shape(g, a.data.shape), _sum_to_shape(-g, b.data.shape)

    return _make(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data * b.data

    def backward(g):
        return (
            _sum_to_shape(g * b.data, a.data.shape),
            _sum_to_shape(g * a.data, b.data.shape),
        )

    return _make(out, (a, b), backward)


def div(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data / b.data

    def backward(g):
        ga = _sum_to_shape(g / b.data, a.data.shape)
        gb = _sum_to_shape(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return _make(out, (a, b), backward)


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * (0.5 / out),))


def abs(x: Tensor) -> Tensor:
    # subgradient at 0 is taken as 0
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


# -- reductions ---------------------------------------------------------------

def _norm_axes(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.data.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            shape = list(x.data.shape)
            for a in axes:
                shape[a] = 1
            g = g.reshape(shape)
        return (np.broadcast_to(g, x.data.shape),)

    return _make(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.data.ndim)
    count = int(np.prod([x.data.shape[a] for a in axes]))
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            shape = list(x.data.shape)
            for a in axes:
                shape[a] = 1
            g = g.reshape(shape)
        return (np.broadcast_to(g / count, x.data.shape),)

    return _make(out, (x,), backward)


# -- shape manipulation -------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.data.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    axis = axis % tensors[0].data.ndim
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tensors, backward)


def slice_(x: Tensor, key) -> Tensor:
    """Basic indexing (ints/slices); gradient scatters back into zeros."""
    out = x.data[key]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return _make(out, (x,), backward)


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; used for relative position bias lookup."""
    index = np.asarray(index)
    out = table.data[index]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index.reshape(-1), g.reshape(-1, *table.data.shape[1:]))
        return (gt,)

    return _make(out, (table,), backward)


def pad_reflect2d(x: Tensor, pads, axes=(-2, -1)) -> Tensor:
    """Reflect-pad two axes (without repeating the edge sample).

    Parameters
    ----------
    pads : (pad_before_0, pad_after_0, pad_before_1, pad_after_1)
        Padding amounts for ``axes[0]`` and ``axes[1]``.  Each pad must
        be smaller than the corresponding extent.
    """
    p0b, p0a, p1b, p1a = pads
    ax0, ax1 = (a % x.data.ndim for a in axes)
    spec = [(0, 0)] * x.data.ndim
    spec[ax0] = (p0b, p0a)
    spec[ax1] = (p1b, p1a)
    out = np.pad(x.data, spec, mode="reflect")
    # source index of each padded position, per axis
    idx0 = np.pad(np.arange(x.data.shape[ax0]), (p0b, p0a), mode="reflect")
    idx1 = np.pad(np.arange(x.data.shape[ax1]), (p1b, p1a), mode="reflect")

    def backward(g):
        mid_shape = list(x.data.shape)
        mid_shape[ax0] = g.shape[ax0]
        mid = np.zeros(mid_shape, dtype=g.dtype)
        np.add.at(np.moveaxis(mid, ax1, 0), idx1, np.moveaxis(g, ax1, 0))
        gx = np.zeros_like(x.data)
        np.add.at(np.moveaxis(gx, ax0, 0), idx0, np.moveaxis(mid, ax0, 0))
        return (gx,)

    return _make(out, (x,), backward)


# -- activations and normalisation --------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    out = special.expit(x.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    cdf = 0.5 * (1.0 + special.erf(x.data / np.sqrt(2.0)))
    out = x.data * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
        return (g * (cdf + x.data * pdf),)

    return _make(out, (x,), backward)


def leaky_relu(x: Tensor, negative_slope: float = 0.1) -> Tensor:
    pos = x.data >= 0
    out = np.where(pos, x.data, negative_slope * x.data)

    def backward(g):
        return (np.where(pos, g, negative_slope * g),)

    return _make(out.astype(x.data.dtype, copy=False), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data
    d = x.data.shape[-1]

    def backward(g):
        gbeta = _sum_to_shape(g, beta.data.shape)
        ggamma = _sum_to_shape(g * xhat, gamma.data.shape)
        gxhat = g * gamma.data
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True) / d
        )
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), backward)


# -- dense and convolution ----------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _sum_to_shape(ga, a.data.shape), _sum_to_shape(gb, b.data.shape)

    return _make(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``y = x @ weight + bias`` over the last axis; weight is [d_in, d_out]."""
    d_in, d_out = weight.data.shape
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    out2 = x2 @ weight.data
    if bias is not None:
        out2 = out2 + bias.data
    out = out2.reshape(*lead, d_out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, d_out)
        gx = (g2 @ weight.data.T).reshape(x.data.shape)
        gw = x2.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, backward)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int | None = None,
) -> Tensor:
    """2-D cross-correlation over NCHW input with zero padding.

    ``weight`` is [C_out, C_in, kh, kw].  ``padding=None`` picks
    (k - 1) // 2, which preserves spatial size at stride 1 for odd k.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input, got ndim={x.data.ndim}")
    n, c_in, h, w = x.data.shape
    c_out, c_in_w, kh, kw = weight.data.shape
    if c_in_w != c_in:
        raise ValueError(f"conv2d channel mismatch: input {c_in}, weight {c_in_w}")
    if padding is None:
        padding = (kh - 1) // 2
    p, s = int(padding), int(stride)

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // s + 1
    wo = (wp - kw) // s + 1
    # im2col in [.., kh, kw, c] order: every bulk copy below then runs
    # over a contiguous channel axis, which is what makes this fast
    xnl = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    cols6 = np.empty((n, ho, wo, kh, kw, c_in), dtype=xnl.dtype)
    for u in range(kh):
        for v in range(kw):
            cols6[:, :, :, u, v, :] = xnl[
                :, u : u + (ho - 1) * s + 1 : s, v : v + (wo - 1) * s + 1 : s, :
            ]
    cols = cols6.reshape(n * ho * wo, kh * kw * c_in)
    w2 = np.ascontiguousarray(weight.data.transpose(0, 2, 3, 1)).reshape(c_out, -1)
    out2 = cols @ w2.T
    if bias is not None:
        out2 += bias.data
    out = np.ascontiguousarray(out2.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, c_out)
        gw = (g2.T @ cols).reshape(c_out, kh, kw, c_in).transpose(0, 3, 1, 2)
        gcols = (g2 @ w2).reshape(n, ho, wo, kh, kw, c_in)
        gxp = np.zeros_like(xnl)
        for u in range(kh):
            for v in range(kw):
                gxp[:, u : u + (ho - 1) * s + 1 : s, v : v + (wo - 1) * s + 1 : s, :] += gcols[
                    :, :, :, u, v, :
                ]
        gxp = np.ascontiguousarray(gxp.transpose(0, 3, 1, 2))
        gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        if bias is None:
            return gx, np.ascontiguousarray(gw)
        return gx, np.ascontiguousarray(gw), g.sum(axis=(0, 2, 3))

    return _make(out, parents, backward)


def depthwise_conv2d(x: Tensor, weight: Tensor) -> Tensor:
    """Per-channel 3x3-style convolution with zero padding, stride 1.

    ``weight`` is [C, 1, k, k] (shared across the batch) or
    [N, C, 1, k, k] (one kernel per sample, as produced from a
    degradation representation).  Output spatial size equals input.

    Implemented as k*k shifted multiply-accumulates, which beats an
    im2col matmul for small k because each channel has its own kernel.
    """
    if x.data.ndim != 4:
        raise ValueError(f"depthwise_conv2d expects NCHW input, got ndim={x.data.ndim}")
    n, c, h, w = x.data.shape
    if weight.data.ndim == 4:
        wk = weight.data[:, 0]  # [c, k, k]
        per_sample = False
    elif weight.data.ndim == 5:
        wk = weight.data[:, :, 0]  # [n, c, k, k]
        per_sample = True
    else:
        raise ValueError(f"depthwise weight must be 4-D or 5-D, got ndim={weight.data.ndim}")
    k = wk.shape[-1]
    p = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))

    out = np.zeros_like(x.data)
    for u in range(k):
        for v in range(k):
            coeff = wk[..., u, v][..., None, None]  # [c,1,1] or [n,c,1,1]
            out += xp[:, :, u : u + h, v : v + w] * coeff

    def backward(g):
        gxp = np.zeros_like(xp)
        gwk = np.zeros_like(wk)
        for u in range(k):
            for v in range(k):
                coeff = wk[..., u, v][..., None, None]
                gxp[:, :, u : u + h, v : v + w] += g * coeff
                prod = g * xp[:, :, u : u + h, v : v + w]
                gwk[..., u, v] = prod.sum(axis=(2, 3)) if per_sample else prod.sum(axis=(0, 2, 3))
        gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        gw = gwk[:, :, None] if per_sample else gwk[:, None]
        return gx, gw.reshape(weight.data.shape)

    return _make(out, (x, weight), backward)


# -- pixel shuffle ------------------------------------------------------------

def pixel_shuffle(x: Tensor, upscale: int) -> Tensor:
    """Rearrange [N, C*s*s, H, W] into [N, C, H*s, W*s].

    ``out[n, c, h*s + i, w*s + j] == x[n, c*s*s + i*s + j, h, w]``.
    """
    s = int(upscale)
    n, cs2, h, w = x.data.shape
    if cs2 % (s * s) != 0:
        raise ValueError(f"channels {cs2} not divisible by {s * s}")
    c = cs2 // (s * s)
    out = (
        x.data.reshape(n, c, s, s, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, c, h * s, w * s)
    )

    def backward(g):
        gx = (
            g.reshape(n, c, h, s, w, s)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, cs2, h, w)
        )
        return (gx,)

    return _make(np.ascontiguousarray(out), (x,), backward)


def pixel_unshuffle(x: Tensor, downscale: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`: [N, C, H*s, W*s] -> [N, C*s*s, H, W]."""
    s = int(downscale)
    n, c, hs, ws = x.data.shape
    if hs % s or ws % s:
        raise ValueError(f"spatial size ({hs}, {ws}) not divisible by {s}")
    h, w = hs // s, ws // s
    out = (
        x.data.reshape(n, c, h, s, w, s)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, c * s * s, h, w)
    )

    def backward(g):
        gx = (
            g.reshape(n, c, s, s, h, w)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, c, hs, ws)
        )
        return (gx,)

    return _make(np.ascontiguousarray(out), (x,), backward)


# -- window helpers for shifted-window attention --------------------------------

def window_partition(x: Tensor, window: int) -> Tensor:
    """Split [H, W, C] or [N, H, W, C] into [num_windows, window*window, C].

    H and W must be multiples of ``window``.  Windows are ordered
    row-major over (batch, window row, window column); tokens inside a
    window are row-major too.
    """
    m = int(window)
    squeeze = x.data.ndim == 3
    data = x.data[None] if squeeze else x.data
    n, h, w, c = data.shape
    if h % m or w % m:
        raise ValueError(f"spatial size ({h}, {w}) not divisible by window {m}")
    out = (
        data.reshape(n, h // m, m, w // m, m, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n * (h // m) * (w // m), m * m, c)
    )

    def backward(g):
        gx = (
            g.reshape(n, h // m, w // m, m, m, c)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(n, h, w, c)
        )
        return (gx[0] if squeeze else gx,)

    return _make(np.ascontiguousarray(out), (x,), backward)


def window_reverse(windows: Tensor, window: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`window_partition`.

    The batch size is inferred from the window count; a single-image
    batch comes back as [H, W, C], larger batches as [N, H, W, C].
    """
    m = int(window)
    num, m2, c = windows.data.shape
    per_image = (h // m) * (w // m)
    if m2 != m * m or num % per_image:
        raise ValueError(f"window tensor {windows.data.shape} does not tile ({h}, {w})")
    n = num // per_image
    out = (
        windows.data.reshape(n, h // m, w // m, m, m, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, h, w, c)
    )
    squeeze = n == 1

    def backward(g):
        gd = g[None] if squeeze else g
        gw = (
            gd.reshape(n, h // m, m, w // m, m, c)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(num, m2, c)
        )
        return (gw,)

    return _make(np.ascontiguousarray(out[0] if squeeze else out), (windows,), backward)


def cyclic_shift(x: Tensor, shift_h: int, shift_w: int) -> Tensor:
    """Circularly roll the H and W axes of [..., H, W, C]."""
    axes = (x.data.ndim - 3, x.data.ndim - 2)
    out = np.roll(x.data, (shift_h, shift_w), axis=axes)

    def backward(g):
        return (np.roll(g, (-shift_h, -shift_w), axis=axes),)

    return _make(out, (x,), backward)


# -- composites ----------------------------------------------------------------

def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable log-sum-exp along one axis (axis is dropped)."""
    m = x.data.max(axis=axis, keepdims=True)
    shifted = sub(x, Tensor(m))
    s = sum(exp(shifted), axis=axis)
    return add(log(s), Tensor(np.squeeze(m, axis=axis)))


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale vectors along ``axis`` to unit Euclidean norm."""
    sq = sum(mul(x, x), axis=axis, keepdims=True)
    return div(x, sqrt(add(sq, eps)))
