"""Pure numpy reference kernels for patch extraction and its adjoint."""

import numpy as np


def out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """Unfold ``x`` (N, C, H, W) into columns of shape (C*kh*kw, N*Ho*Wo).

    Row index is ``(c*kh + i)*kw + j``; column index is ``(n*Ho + y)*Wo + x``.
    """
    n, c, h, w = x.shape
    ho = out_size(h, kh, stride, pad)
    wo = out_size(w, kw, stride, pad)
    if pad:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cols = np.empty((c, kh, kw, n, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


def col2im(cols, shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back into an (N, C, H, W) array."""
    n, c, h, w = shape
    ho = out_size(h, kh, stride, pad)
    wo = out_size(w, kw, stride, pad)
    cols = np.ascontiguousarray(cols).reshape(c, kh, kw, n, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                cols[:, i, j].transpose(1, 0, 2, 3))
    if pad:
        return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])
    return xp


def upsample2x(x):
    """Nearest-neighbour doubling of the two trailing axes."""
    n, c, h, w = x.shape
    out = np.empty((n, c, h, 2, w, 2))
    out[...] = x[:, :, :, None, :, None]
    return out.reshape(n, c, 2 * h, 2 * w)


def sumpool2x(x):
    """Adjoint of :func:`upsample2x`: sum over non-overlapping 2x2 blocks."""
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
