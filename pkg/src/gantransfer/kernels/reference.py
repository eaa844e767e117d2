"""Pure numpy convolution kernels (im2col views plus BLAS contractions)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(padded: int, k: int, stride: int) -> int:
    return (padded - k) // stride + 1


def conv2d_forward(x_padded: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Cross-correlate ``x_padded`` [n,c,hp,wp] with ``w`` [o,c,kh,kw]."""
    kh, kw = w.shape[2], w.shape[3]
    oh = _out_size(x_padded.shape[2], kh, stride)
    ow = _out_size(x_padded.shape[3], kw, stride)
    win = sliding_window_view(x_padded, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow]
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(np.moveaxis(y, 3, 1))


def conv2d_backward_input(
    dy: np.ndarray, w: np.ndarray, stride: int, hp: int, wp: int
) -> np.ndarray:
    """Gradient of the forward pass with respect to the padded input."""
    n, o, oh, ow = dy.shape
    _, c, kh, kw = w.shape
    dxp = np.zeros((n, c, hp, wp), dtype=dy.dtype)
    for khi in range(kh):
        for kwi in range(kw):
            contrib = np.tensordot(dy, w[:, :, khi, kwi], axes=([1], [0]))
            dxp[
                :, :, khi : khi + oh * stride : stride, kwi : kwi + ow * stride : stride
            ] += np.moveaxis(contrib, 3, 1)
    return dxp


def conv2d_backward_kernel(
    dy: np.ndarray, x_padded: np.ndarray, kh: int, kw: int, stride: int
) -> np.ndarray:
    """Gradient of the forward pass with respect to the kernel."""
    oh, ow = dy.shape[2], dy.shape[3]
    win = sliding_window_view(x_padded, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow]
    dw = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))
    return np.ascontiguousarray(dw)
