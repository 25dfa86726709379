"""Compiled loops for small per-tap convolutions.

Both kernels accumulate each output element over ``(c, dy, dx)`` in the
same sequential order without fast-math, so a position-constant local
kernel gives bit-identical results to the shared one.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def corr_taps(xp, w, H, W):
    B = xp.shape[0]
    O, C, F, _ = w.shape
    out = np.zeros((B, O, H, W), dtype=xp.dtype)
    for b in range(B):
        for o in range(O):
            for c in range(C):
                for dy in range(F):
                    for dx in range(F):
                        wv = w[o, c, dy, dx]
                        for y in range(H):
                            for x in range(W):
                                out[b, o, y, x] += wv * xp[b, c, y + dy, x + dx]
    return out


@numba.njit(cache=True)
def local_corr_taps(xp, w, H, W):
    B, O, C, F = w.shape[0], w.shape[1], w.shape[2], w.shape[3]
    out = np.zeros((B, O, H, W), dtype=xp.dtype)
    for b in range(B):
        for o in range(O):
            for c in range(C):
                for dy in range(F):
                    for dx in range(F):
                        for y in range(H):
                            for x in range(W):
                                out[b, o, y, x] += w[b, o, c, dy, dx, y, x] * xp[b, c, y + dy, x + dx]
    return out


@numba.njit(cache=True)
def local_corr_taps_backward(xp, w, g, H, W):
    B, O, C, F = w.shape[0], w.shape[1], w.shape[2], w.shape[3]
    gw = np.empty_like(w)
    gxp = np.zeros_like(xp)
    for b in range(B):
        for o in range(O):
            for c in range(C):
                for dy in range(F):
                    for dx in range(F):
                        for y in range(H):
                            for x in range(W):
                                gv = g[b, o, y, x]
                                gw[b, o, c, dy, dx, y, x] = gv * xp[b, c, y + dy, x + dx]
                                gxp[b, c, y + dy, x + dx] += gv * w[b, o, c, dy, dx, y, x]
    return gw, gxp
