"""Dense float64 array kernels used by every cell equation.

A "tensor" here is a plain ``numpy.ndarray`` of dtype float64 laid out
row-major and channel-first. Spatial operands are ``C x H x W``; every
kernel also accepts a leading batch axis (``N x C x H x W`` or ``N x in``)
so a minibatch can be stepped in one call. Functions never mutate their
inputs.

Each differentiable kernel has a matching ``*_vjp`` that maps an output
cotangent back to its operands; the autodiff tape is built on these.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ConfigError, ShapeError

DTYPE = np.float64


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def _check_same_shape(*arrays):
    shapes = [np.shape(a) for a in arrays]
    if any(s != shapes[0] for s in shapes[1:]):
        raise ShapeError(f"elementwise operands differ in shape: {shapes}")


# --------------------------------------------------------------------------
# affine

def affine(weight, x, bias=None) -> np.ndarray:
    """``weight @ x + bias`` for ``x`` of shape ``(in,)`` or ``(N, in)``.

    ``bias=None`` gives the plain linear map.
    """
    weight, x = as_tensor(weight), as_tensor(x)
    if weight.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"affine: weight {weight.shape} cannot act on input {x.shape}"
        )
    out = x @ weight.T
    if bias is None:
        return out
    bias = as_tensor(bias)
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"affine: bias {bias.shape} does not match weight {weight.shape}")
    return out + bias


def affine_vjp(g, weight, x):
    """Cotangents ``(d_weight, d_x, d_bias)`` for :func:`affine`."""
    g = as_tensor(g)
    if x.ndim == 1:
        return np.outer(g, x), weight.T @ g, g.copy()
    return g.T @ x, g @ weight, g.sum(axis=0)


# --------------------------------------------------------------------------
# conv2d

def _pads(kernel_hw, padding):
    kh, kw = kernel_hw
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"same-mode convolution needs odd kernel sizes, got {kh}x{kw}")
        return kh // 2, kw // 2
    if padding == "valid":
        return 0, 0
    raise ConfigError(f"unknown padding mode {padding!r}")


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected C x H x W or N x C x H x W, got shape {x.shape}")


def _windows(xp, kh, kw, stride):
    # (N, C, Ho, Wo, kh, kw) strided view, no copy
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d(x, kernel, bias=None, stride=1, padding="same") -> np.ndarray:
    """Zero-padded 2-D cross-correlation.

    ``x`` is ``C_in x H x W`` (optionally batched), ``kernel`` is
    ``C_out x C_in x kh x kw``. ``padding="same"`` keeps ``H x W`` and
    requires odd kernel extents and unit stride; ``padding="valid"`` is the
    strided downsampling form.
    """
    xb, squeeze = _batched(x)
    kernel = as_tensor(kernel)
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be 4-D, got {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if xb.shape[1] != c_in:
        raise ShapeError(f"conv2d: input {xb.shape[1:]} has {xb.shape[1]} channels, kernel {kernel.shape} expects {c_in}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d: bias {bias.shape} does not match kernel {kernel.shape}")
    ph, pw = _pads((kh, kw), padding)
    if padding == "same" and stride != 1:
        raise ConfigError("same-mode convolution is stride 1 only")
    if stride < 1:
        raise ConfigError(f"stride must be positive, got {stride}")
    xp = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xb
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {xp.shape[2:]}")
    cols = _windows(xp, kh, kw, stride)
    out = np.tensordot(cols, kernel, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, C_out
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias[None, :, None, None]
    return np.ascontiguousarray(out[0] if squeeze else out)


def conv2d_vjp(g, x, kernel, stride=1, padding="same"):
    """Cotangents ``(d_x, d_kernel, d_bias)`` for :func:`conv2d`."""
    xb, squeeze = _batched(x)
    gb = as_tensor(g)
    if squeeze:
        gb = gb[None]
    _, c_in, kh, kw = kernel.shape
    ph, pw = _pads((kh, kw), padding)
    xp = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xb
    cols = _windows(xp, kh, kw, stride)
    ho, wo = gb.shape[2], gb.shape[3]

    d_kernel = np.tensordot(gb, cols, axes=([0, 2, 3], [0, 2, 3]))  # C_out, C_in, kh, kw
    d_bias = gb.sum(axis=(0, 2, 3))
    d_cols = np.tensordot(gb, kernel, axes=([1], [0]))  # N, Ho, Wo, C_in, kh, kw
    d_xp = np.zeros_like(xp)
    for a in range(kh):
        for b in range(kw):
            d_xp[:, :, a:a + stride * (ho - 1) + 1:stride, b:b + stride * (wo - 1) + 1:stride] += (
                d_cols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
            )
    d_x = d_xp[:, :, ph:ph + xb.shape[2], pw:pw + xb.shape[3]]
    return (d_x[0] if squeeze else d_x), d_kernel, d_bias


# --------------------------------------------------------------------------
# max pooling

def _pool_view(x, window):
    xb, squeeze = _batched(x)
    n, c, h, w = xb.shape
    hp, wp = -(-h // window) * window, -(-w // window) * window
    if (hp, wp) != (h, w):
        xb = np.pad(xb, ((0, 0), (0, 0), (0, hp - h), (0, wp - w)), constant_values=-np.inf)
    blocks = xb.reshape(n, c, hp // window, window, wp // window, window)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hp // window, wp // window, window * window)
    return blocks, squeeze, (h, w)


def maxpool2d(x, window=2) -> np.ndarray:
    """Non-overlapping ``window x window`` max pooling (stride = window).

    Odd extents are padded with ``-inf`` so the trailing partial window
    still pools over the real elements.
    """
    blocks, squeeze, _ = _pool_view(x, window)
    out = blocks.max(axis=-1)
    return out[0] if squeeze else out


def maxpool2d_vjp(g, x, window=2):
    """Routes each output cotangent to the first maximal element of its window."""
    blocks, squeeze, (h, w) = _pool_view(x, window)
    gb = as_tensor(g)[None] if squeeze else as_tensor(g)
    idx = blocks.argmax(axis=-1)
    d_blocks = np.zeros_like(blocks)
    np.put_along_axis(d_blocks, idx[..., None], gb[..., None], axis=-1)
    n, c, ph, pw, _ = d_blocks.shape
    d = d_blocks.reshape(n, c, ph, pw, window, window).transpose(0, 1, 2, 4, 3, 5)
    d = d.reshape(n, c, ph * window, pw * window)[:, :, :h, :w]
    return d[0] if squeeze else d


# --------------------------------------------------------------------------
# pointwise

def sigmoid(x):
    return expit(as_tensor(x))


def tanh(x):
    return np.tanh(as_tensor(x))


def heaviside(x):
    """1 where ``x >= 0``, else 0."""
    return (as_tensor(x) >= 0).astype(DTYPE)


def add(a, b):
    _check_same_shape(a, b)
    return as_tensor(a) + as_tensor(b)


def sub(a, b):
    _check_same_shape(a, b)
    return as_tensor(a) - as_tensor(b)


def mul(a, b):
    _check_same_shape(a, b)
    return as_tensor(a) * as_tensor(b)


def scale(a, c: float):
    return as_tensor(a) * float(c)


POINTWISE = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "heaviside": heaviside,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
}


def pointwise(op: str, *args):
    try:
        fn = POINTWISE[op]
    except KeyError:
        raise ValueError(f"unknown pointwise op {op!r}; expected one of {sorted(POINTWISE)}") from None
    return fn(*args)
