"""Pure-numpy implementations of the convolution and pooling kernels.

These are the reference versions. The compiled module ``_kernels`` exposes
the same four functions and accumulates in the same order, so both backends
give bitwise identical results.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col3d(xp, kernel, stride, out_shape):
    """Gather sliding 3D windows of a padded batch into rows.

    ``xp`` has shape (B, C, L, H, W). Returns an array of shape
    (B*Lo*Ho*Wo, C*kt*kh*kw) where columns are ordered (c, dt, dh, dw).
    """
    kt, kh, kw = kernel
    st, sh, sw = stride
    lo, ho, wo = out_shape
    b, c = xp.shape[:2]
    win = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))
    win = win[:, :, : (lo - 1) * st + 1 : st, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]
    # (B, C, Lo, Ho, Wo, kt, kh, kw) -> (B, Lo, Ho, Wo, C, kt, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7))
    return cols.reshape(b * lo * ho * wo, c * kt * kh * kw)


def col2im3d(dcols, xp_shape, kernel, stride, out_shape):
    """Scatter-add window rows back onto a padded input (adjoint of im2col3d)."""
    kt, kh, kw = kernel
    st, sh, sw = stride
    lo, ho, wo = out_shape
    b, c = xp_shape[:2]
    d = dcols.reshape(b, lo, ho, wo, c, kt, kh, kw).transpose(0, 4, 5, 6, 7, 1, 2, 3)
    dxp = np.zeros(xp_shape, dtype=np.float64)
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                dxp[:, :, i : i + st * lo : st, j : j + sh * ho : sh, k : k + sw * wo : sw] += d[
                    :, :, i, j, k
                ]
    return dxp


def maxpool3d_forward(x, pool):
    """Non-overlapping max pooling; ``x`` dims must be divisible by ``pool``.

    Returns the pooled values and, per output cell, the scan-order index of
    the first maximum inside its window.
    """
    pt, ph, pw = pool
    b, c, l, h, w = x.shape
    lo, ho, wo = l // pt, h // ph, w // pw
    win = x.reshape(b, c, lo, pt, ho, ph, wo, pw).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    win = win.reshape(b, c, lo, ho, wo, pt * ph * pw)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool3d_backward(g, arg, pool, in_shape):
    """Route each output gradient to its window's recorded argmax."""
    pt, ph, pw = pool
    b, c, l, h, w = in_shape
    lo, ho, wo = l // pt, h // ph, w // pw
    dwin = np.zeros((b, c, lo, ho, wo, pt * ph * pw), dtype=np.float64)
    np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
    dwin = dwin.reshape(b, c, lo, ho, wo, pt, ph, pw).transpose(0, 1, 2, 5, 3, 6, 4, 7)
    return np.ascontiguousarray(dwin).reshape(in_shape)
