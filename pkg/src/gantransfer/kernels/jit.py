"""Numba convolution kernels.

Two loop orders cover the two shape regimes: a row kernel that vectorizes
over output columns (wide feature maps, few channels) and a channel kernel
that vectorizes over output channels (narrow maps, many channels). Both
accumulate each output element over (in-channel, kh, kw) in the same fixed
order, so the dispatch never changes the produced bits.

Parallel loops only split work across independent output slices; per-element
accumulation stays sequential, so results are identical for any thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


def _out_size(padded: int, k: int, stride: int) -> int:
    return (padded - k) // stride + 1


@njit(cache=True, fastmath=False, parallel=True)
def _forward_rows(xp, w, stride, oh, ow):
    n, c, hp, wp = xp.shape
    o, _, kh, kw = w.shape
    y = np.zeros((n, o, oh, ow), dtype=xp.dtype)
    for ni in prange(n):
        buf = np.empty(ow, dtype=xp.dtype)
        for ohi in range(oh):
            for ci in range(c):
                for khi in range(kh):
                    ih = ohi * stride + khi
                    for kwi in range(kw):
                        for owi in range(ow):
                            buf[owi] = xp[ni, ci, ih, owi * stride + kwi]
                        for oi in range(o):
                            wv = w[oi, ci, khi, kwi]
                            for owi in range(ow):
                                y[ni, oi, ohi, owi] += wv * buf[owi]
    return y


@njit(cache=True, fastmath=False, parallel=True)
def _forward_channels(xp, wt, stride, oh, ow):
    n = xp.shape[0]
    c, kh, kw, o = wt.shape
    y = np.empty((n, o, oh, ow), dtype=xp.dtype)
    for ni in prange(n):
        acc = np.empty(o, dtype=xp.dtype)
        for ohi in range(oh):
            for owi in range(ow):
                for oi in range(o):
                    acc[oi] = 0.0
                for ci in range(c):
                    for khi in range(kh):
                        ih = ohi * stride + khi
                        for kwi in range(kw):
                            xv = xp[ni, ci, ih, owi * stride + kwi]
                            for oi in range(o):
                                acc[oi] += xv * wt[ci, khi, kwi, oi]
                for oi in range(o):
                    y[ni, oi, ohi, owi] = acc[oi]
    return y


@njit(cache=True, fastmath=False, parallel=True)
def _backward_input(dy, wt, stride, hp, wp):
    n, o, oh, ow = dy.shape
    c, kh, kw, _ = wt.shape
    dxp = np.zeros((n, c, hp, wp), dtype=dy.dtype)
    for ni in prange(n):
        dybuf = np.empty(o, dtype=dy.dtype)
        for ohi in range(oh):
            for owi in range(ow):
                for oi in range(o):
                    dybuf[oi] = dy[ni, oi, ohi, owi]
                for ci in range(c):
                    for khi in range(kh):
                        ih = ohi * stride + khi
                        for kwi in range(kw):
                            s = dy.dtype.type(0.0)
                            for oi in range(o):
                                s += dybuf[oi] * wt[ci, khi, kwi, oi]
                            dxp[ni, ci, ih, owi * stride + kwi] += s
    return dxp


@njit(cache=True, fastmath=False, parallel=True)
def _backward_kernel(dy, xp, stride, kh, kw):
    n, o, oh, ow = dy.shape
    c = xp.shape[1]
    dwt = np.zeros((c, kh, kw, o), dtype=dy.dtype)
    for ci in prange(c):
        dybuf = np.empty(o, dtype=dy.dtype)
        for ni in range(n):
            for ohi in range(oh):
                for owi in range(ow):
                    for oi in range(o):
                        dybuf[oi] = dy[ni, oi, ohi, owi]
                    for khi in range(kh):
                        ih = ohi * stride + khi
                        for kwi in range(kw):
                            xv = xp[ni, ci, ih, owi * stride + kwi]
                            for oi in range(o):
                                dwt[ci, khi, kwi, oi] += xv * dybuf[oi]
    return dwt


def conv2d_forward(x_padded: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    o, _, kh, kw = w.shape
    oh = _out_size(x_padded.shape[2], kh, stride)
    ow = _out_size(x_padded.shape[3], kw, stride)
    if ow >= o:
        return _forward_rows(x_padded, np.ascontiguousarray(w), stride, oh, ow)
    wt = np.ascontiguousarray(np.moveaxis(w, 0, 3))
    return _forward_channels(x_padded, wt, stride, oh, ow)


def conv2d_backward_input(
    dy: np.ndarray, w: np.ndarray, stride: int, hp: int, wp: int
) -> np.ndarray:
    wt = np.ascontiguousarray(np.moveaxis(w, 0, 3))
    return _backward_input(np.ascontiguousarray(dy), wt, stride, hp, wp)


def conv2d_backward_kernel(
    dy: np.ndarray, x_padded: np.ndarray, kh: int, kw: int, stride: int
) -> np.ndarray:
    dwt = _backward_kernel(np.ascontiguousarray(dy), x_padded, stride, kh, kw)
    return np.ascontiguousarray(np.moveaxis(dwt, 3, 0))
