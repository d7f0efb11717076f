"""Layer forward/backward passes: stride-1 same-padded conv, ReLU, 2x2
maxpool, dense. Backward passes are hand-derived adjoints; there is no
autodiff. Batched variants exist because training feeds mini-batches; the
single-sample functions are thin wrappers over them.
"""

import numpy as np

from . import kernels

DEFAULT_DTYPE = np.float32
SUPPORTED_KERNEL_SIZES = (3, 5)


class Workspace:
    """Reusable scratch buffers keyed by name/shape/dtype.

    Optional everywhere: pass one to amortize large allocations across
    training steps. Buffers are overwritten on each call that uses them, so a
    workspace must not be shared across concurrent callers.
    """

    def __init__(self):
        self._bufs = {}

    def buf(self, name, shape, dtype):
        b = self._bufs.get(name)
        if b is None or b.shape != shape or b.dtype != dtype:
            b = np.empty(shape, dtype=dtype)
            self._bufs[name] = b
        return b


class ConvLayer:
    """Stride-1, same-padded conv parameters: kernels (outC, inC, k, k), bias (outC,)."""

    def __init__(self, kernels_arr, bias):
        kernels_arr = np.asarray(kernels_arr)
        bias = np.asarray(bias)
        if kernels_arr.ndim != 4:
            raise ValueError(f"conv kernels must be 4-D, got shape {kernels_arr.shape}")
        out_c, in_c, kh, kw = kernels_arr.shape
        if kh != kw or kh not in SUPPORTED_KERNEL_SIZES:
            raise ValueError(f"conv kernel must be square with size in {SUPPORTED_KERNEL_SIZES}, got {kh}x{kw}")
        if bias.shape != (out_c,):
            raise ValueError(f"conv bias shape {bias.shape} does not match {out_c} output channels")
        if not (np.isfinite(kernels_arr).all() and np.isfinite(bias).all()):
            raise ValueError("conv parameters contain non-finite values")
        self.kernels = kernels_arr
        self.bias = bias

    @property
    def out_channels(self):
        return self.kernels.shape[0]

    @property
    def in_channels(self):
        return self.kernels.shape[1]

    @property
    def kernel_size(self):
        return self.kernels.shape[2]


class DenseLayer:
    """Fully connected parameters: weights (out, in), bias (out,)."""

    def __init__(self, weights, bias):
        weights = np.asarray(weights)
        bias = np.asarray(bias)
        if weights.ndim != 2 or weights.shape[0] < 1 or weights.shape[1] < 1:
            raise ValueError(f"dense weights must be 2-D with positive dims, got shape {weights.shape}")
        if bias.shape != (weights.shape[0],):
            raise ValueError(f"dense bias shape {bias.shape} does not match out_dim {weights.shape[0]}")
        if not (np.isfinite(weights).all() and np.isfinite(bias).all()):
            raise ValueError("dense parameters contain non-finite values")
        self.weights = weights
        self.bias = bias

    @property
    def out_dim(self):
        return self.weights.shape[0]

    @property
    def in_dim(self):
        return self.weights.shape[1]


# ---------------------------------------------------------------------------
# convolution


def _check_conv_input(x, layer):
    if x.ndim != 4:
        raise ValueError(f"conv input must be (N, C, H, W), got shape {x.shape}")
    n, c, h, w = x.shape
    k = layer.kernel_size
    if c != layer.in_channels:
        raise ValueError(f"conv input has {c} channels, layer expects {layer.in_channels}")
    if h < k or w < k:
        raise ValueError(f"conv input {h}x{w} smaller than kernel {k}x{k}")


def conv2d_forward_batch(x, layer, ws=None):
    """Same-padded cross-correlation plus bias for a batch (N, C, H, W)."""
    _check_conv_input(x, layer)
    ws = ws or Workspace()
    n, c, h, w = x.shape
    k = layer.kernel_size
    pad = k // 2
    ck = c * k * k
    out_c = layer.out_channels
    dt = x.dtype

    xp = ws.buf(f"c{k}.{c}.xp", (n, c, h + 2 * pad, w + 2 * pad), dt)
    xp[:] = 0
    xp[:, :, pad:pad + h, pad:pad + w] = x
    col = ws.buf(f"c{k}.{c}.col", (n, h, w, ck), dt)
    kernels.im2col(xp, k, k, col)
    y_rows = ws.buf(f"c{k}.{c}.{out_c}.y", (n * h * w, out_c), dt)
    np.matmul(col.reshape(n * h * w, ck), layer.kernels.reshape(out_c, ck).T, out=y_rows)
    np.add(y_rows, layer.bias.astype(dt, copy=False), out=y_rows)
    y = np.empty((n, out_c, h, w), dtype=dt)
    kernels.rows_to_nchw(y_rows, y)
    return y


def conv2d_forward(x, layer, ws=None):
    """Single-image convolution: (C, H, W) -> (outC, H, W)."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"conv input must be (C, H, W), got shape {x.shape}")
    return conv2d_forward_batch(x[None], layer, ws)[0]


def conv2d_backward_batch(grad_out, x, layer, ws=None):
    """Gradients of the batched convolution.

    grad_out and x are the forward output's gradient and the cached forward
    input; returns (grad_input, grad_kernels, grad_bias).
    """
    _check_conv_input(x, layer)
    n, c, h, w = x.shape
    out_c = layer.out_channels
    if grad_out.shape != (n, out_c, h, w):
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match forward output {(n, out_c, h, w)}")
    ws = ws or Workspace()
    k = layer.kernel_size
    pad = k // 2
    ck = c * k * k
    dt = x.dtype

    # The column matrix is recomputed from the cached input rather than kept
    # alive between forward and backward.
    xp = ws.buf(f"c{k}.{c}.xp", (n, c, h + 2 * pad, w + 2 * pad), dt)
    xp[:] = 0
    xp[:, :, pad:pad + h, pad:pad + w] = x
    col = ws.buf(f"c{k}.{c}.col", (n, h, w, ck), dt)
    kernels.im2col(xp, k, k, col)
    col_mat = col.reshape(n * h * w, ck)

    g_rows = ws.buf(f"c{k}.{c}.{out_c}.g", (n * h * w, out_c), dt)
    kernels.nchw_to_rows(np.ascontiguousarray(grad_out), g_rows)

    grad_kernels = np.matmul(g_rows.T, col_mat).reshape(layer.kernels.shape)
    grad_bias = g_rows.sum(axis=0)

    gcol = ws.buf(f"c{k}.{c}.gcol", (n, h, w, ck), dt)
    np.matmul(g_rows, layer.kernels.reshape(out_c, ck), out=gcol.reshape(n * h * w, ck))
    gxp = ws.buf(f"c{k}.{c}.gxp", xp.shape, dt)
    kernels.col2im(gcol, k, k, gxp)
    grad_input = gxp[:, :, pad:pad + h, pad:pad + w].copy()
    return grad_input, grad_kernels, grad_bias


def conv2d_backward(grad_out, x, layer, ws=None):
    """Single-image adjoint: returns (grad_input, grad_kernels, grad_bias)."""
    x = np.asarray(x)
    grad_out = np.asarray(grad_out)
    if x.ndim != 3 or grad_out.ndim != 3:
        raise ValueError("conv2d_backward expects 3-D grad_out and cached input")
    gx, gk, gb = conv2d_backward_batch(grad_out[None], x[None], layer, ws)
    return gx[0], gk, gb


# ---------------------------------------------------------------------------
# relu


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    # Subgradient at exactly 0 is defined as 0.
    return grad_out * (x > 0)


# ---------------------------------------------------------------------------
# maxpool


def maxpool2_forward_batch(x):
    """2x2/stride-2 max pooling for (N, C, H, W); H and W must be even.

    Returns (pooled, idx) where idx records each tile's argmax (row-major
    in-tile offset 0..3, first element wins ties) for the backward pass.
    """
    if x.ndim != 4:
        raise ValueError(f"maxpool input must be (N, C, H, W), got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool needs even spatial dims, got {h}x{w}")
    y = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
    idx = np.empty(y.shape, dtype=np.uint8)
    kernels.maxpool2(np.ascontiguousarray(x), y, idx)
    return y, idx


def maxpool2_forward(x):
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"maxpool input must be (C, H, W), got shape {x.shape}")
    y, idx = maxpool2_forward_batch(x[None])
    return y[0], idx[0]


def maxpool2_backward_batch(grad_out, idx):
    if grad_out.shape != idx.shape:
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match pooling indices {idx.shape}")
    n, c, ho, wo = grad_out.shape
    gx = np.empty((n, c, ho * 2, wo * 2), dtype=grad_out.dtype)
    kernels.maxpool2_back(np.ascontiguousarray(grad_out), idx, gx)
    return gx


def maxpool2_backward(grad_out, idx):
    grad_out = np.asarray(grad_out)
    if grad_out.ndim != 3:
        raise ValueError("maxpool2_backward expects (C, H, W) grad_out")
    return maxpool2_backward_batch(grad_out[None], idx[None])[0]


# ---------------------------------------------------------------------------
# dense


def dense_forward(x, layer):
    """W @ x + b. Accepts a single vector (in,) or a batch (N, in)."""
    x = np.asarray(x)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"dense input length {x.shape[-1]} does not match in_dim {layer.in_dim}")
    return x @ layer.weights.T + layer.bias


def dense_backward(grad_out, x, layer):
    """Returns (grad_input, grad_weights, grad_bias) for vector or batch input."""
    grad_out = np.asarray(grad_out)
    x = np.asarray(x)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"dense input length {x.shape[-1]} does not match in_dim {layer.in_dim}")
    if grad_out.shape[-1] != layer.out_dim:
        raise ValueError(f"grad_out length {grad_out.shape[-1]} does not match out_dim {layer.out_dim}")
    grad_input = grad_out @ layer.weights
    if x.ndim == 1:
        grad_w = np.outer(grad_out, x)
        grad_b = grad_out.copy()
    else:
        grad_w = grad_out.T @ x
        grad_b = grad_out.sum(axis=0)
    return grad_input, grad_w, grad_b
