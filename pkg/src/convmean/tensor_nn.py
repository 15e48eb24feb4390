"""Dense tensor primitives for the CM network.

Activations are numpy arrays laid out ``(H, W, C)``; every function also
accepts a leading batch axis ``(N, H, W, C)`` and returns the same rank it
was given. Kernels are ``(kh, kw, cin, cout)`` with no bias.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ShapeError

EPS_NORM = 1e-9
GRAY = np.full(3, 1.0 / np.sqrt(3.0))


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (H, W, C) or (N, H, W, C) array, got shape {x.shape}")


def conv_output_size(size, k, pad, stride):
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"dimension {size} with kernel {k}, pad {pad}, stride {stride} "
            f"does not give an integer output size")
    return span // stride + 1


def conv2d(x, kernel, pad=0, stride=1):
    """Cross-correlate ``x`` with ``kernel`` (zero padding, no flip, no bias)."""
    xb, single = _as_batch(x)
    kernel = np.asarray(kernel)
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must be (kh, kw, cin, cout), got shape {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    n, h, w, c = xb.shape
    if c != cin:
        raise ShapeError(f"input has {c} channels but kernel expects {cin}")
    if pad < 0 or stride < 1:
        raise ShapeError(f"invalid pad={pad} / stride={stride}")
    ho = conv_output_size(h, kh, pad, stride)
    wo = conv_output_size(w, kw, pad, stride)

    if kh == 1 and kw == 1 and pad == 0:
        src = xb[:, ::stride, ::stride, :]
        out = src.reshape(-1, cin) @ kernel.reshape(cin, cout)
        out = out.reshape(n, ho, wo, cout)
    else:
        if pad:
            xb = np.pad(xb, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        # windows: (N, Ho, Wo, C, kh, kw)
        win = sliding_window_view(xb, (kh, kw), axis=(1, 2))
        win = win[:, ::stride, ::stride]
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
        out = cols.reshape(n * ho * wo, kh * kw * cin) @ kernel.reshape(kh * kw * cin, cout)
        out = out.reshape(n, ho, wo, cout)
    return out[0] if single else out


def conv2d_backward(x, kernel, grad_out, pad=0, need_input_grad=True):
    """Gradients of a stride-1 ``conv2d`` w.r.t. its kernel and (optionally) input.

    Returns ``(grad_kernel, grad_input)``; ``grad_input`` is None when not
    requested. The kernel gradient is summed over the batch axis.
    """
    xb, single = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    kernel = np.asarray(kernel)
    kh, kw, cin, cout = kernel.shape
    n, ho, wo, _ = gb.shape
    g2 = gb.reshape(-1, cout)

    if kh == 1 and kw == 1 and pad == 0:
        grad_k = (xb.reshape(-1, cin).T @ g2).reshape(kernel.shape)
    else:
        xp = np.pad(xb, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xb
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, kh * kw * cin)
        grad_k = (cols.T @ g2).reshape(kernel.shape)

    grad_x = None
    if need_input_grad:
        # full correlation with the spatially flipped, channel-swapped kernel
        flipped = kernel[::-1, ::-1].transpose(0, 1, 3, 2)
        grad_x = conv2d(gb, flipped, pad=kh - 1 - pad, stride=1)
        if single:
            grad_x = grad_x[0]
    return grad_k, grad_x


def maxpool2x2(x):
    """Non-overlapping 2x2 max-pool with stride 2.

    Returns ``(pooled, routing)`` where ``routing`` holds, per output cell and
    channel, the flat window index ``2*dr + dc`` of the selected input. Ties
    go to the first element in row-major order.
    """
    xb, single = _as_batch(x)
    n, h, w, c = xb.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even height and width, got {h}x{w}")
    pooled = xb[:, 0::2, 0::2]
    routing = np.zeros(pooled.shape, dtype=np.int8)
    # strict ">" keeps the earliest element in row-major order on ties
    for k, cand in enumerate((xb[:, 0::2, 1::2], xb[:, 1::2, 0::2], xb[:, 1::2, 1::2]), start=1):
        better = cand > pooled
        pooled = np.where(better, cand, pooled)
        routing[better] = k
    if single:
        return pooled[0], routing[0]
    return pooled, routing


def routing_coords(routing):
    """Absolute ``(row, col)`` input coordinates recorded by a pool routing."""
    routing = np.asarray(routing)
    ho, wo = routing.shape[-3], routing.shape[-2]
    rows = np.arange(ho)[:, None, None] * 2 + routing // 2
    cols = np.arange(wo)[None, :, None] * 2 + routing % 2
    return rows, cols


def maxpool2x2_backward(grad_out, routing):
    gb, single = _as_batch(grad_out)
    rb = routing[None] if single else routing
    n, ho, wo, c = gb.shape
    grad = np.zeros((n, 2 * ho, 2 * wo, c), dtype=gb.dtype)
    for k in range(4):
        grad[:, k // 2::2, k % 2::2] = np.where(rb == k, gb, 0)
    return grad[0] if single else grad


def relu(x):
    return np.maximum(x, 0)


def global_avg_pool(x):
    """Per-channel mean over all spatial positions."""
    xb, single = _as_batch(x)
    out = xb.mean(axis=(1, 2))
    return out[0] if single else out


def l2_normalize(v, eps=EPS_NORM):
    """Scale ``v`` to unit length.

    Vectors shorter than ``eps`` map to the gray direction ``(1,1,1)/sqrt(3)``.
    Returns ``(unit, degenerate)``; for a batch ``(N, 3)`` both outputs are
    batched.
    """
    v = np.asarray(v)
    norm = np.sqrt((v.astype(np.float64) ** 2).sum(axis=-1, keepdims=True))
    degenerate = norm[..., 0] < eps
    safe = np.where(norm < eps, 1.0, norm)
    unit = np.where(norm < eps, GRAY.astype(v.dtype, copy=False), v / safe.astype(v.dtype))
    if v.ndim == 1:
        return unit, bool(degenerate)
    return unit, degenerate
