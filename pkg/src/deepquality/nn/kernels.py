"""Compiled gather/scatter kernels behind the layer math.

All heavy arithmetic happens in BLAS matmuls; these kernels only move data
(column/patch lowering, pooling, layout changes). Every ``prange`` iteration
writes a disjoint slice of the output and loop order inside an iteration is
fixed, so results are bit-identical regardless of thread count.
"""

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def im2col(xp, kh, kw, out):
    # xp: padded input (N, C, Hp, Wp); out: (N, Ho, Wo, C*kh*kw), Ho=Hp-kh+1.
    N, C, Hp, Wp = xp.shape
    Ho = Hp - kh + 1
    Wo = Wp - kw + 1
    for n in prange(N):
        for c in range(C):
            for di in range(kh):
                for dj in range(kw):
                    col = (c * kh + di) * kw + dj
                    for i in range(Ho):
                        for j in range(Wo):
                            out[n, i, j, col] = xp[n, c, i + di, j + dj]


@njit(parallel=True, cache=True)
def col2im(gcol, kh, kw, gxp):
    # Adjoint of im2col: scatter-add columns back onto the padded grid.
    # gxp is fully overwritten (zeroed per (n, c) plane before accumulation).
    N, C, Hp, Wp = gxp.shape
    Ho = Hp - kh + 1
    Wo = Wp - kw + 1
    for n in prange(N):
        for c in range(C):
            for i in range(Hp):
                for j in range(Wp):
                    gxp[n, c, i, j] = 0.0
            for di in range(kh):
                for dj in range(kw):
                    col = (c * kh + di) * kw + dj
                    for i in range(Ho):
                        for j in range(Wo):
                            gxp[n, c, i + di, j + dj] += gcol[n, i, j, col]


@njit(parallel=True, cache=True)
def nchw_to_rows(x, out):
    # (N, C, H, W) -> (N*H*W, C) with row index n*H*W + i*W + j.
    N, C, H, W = x.shape
    for n in prange(N):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    out[(n * H + i) * W + j, c] = x[n, c, i, j]


@njit(parallel=True, cache=True)
def rows_to_nchw(rows, out):
    # Inverse layout change of nchw_to_rows.
    N, C, H, W = out.shape
    for n in prange(N):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    out[n, c, i, j] = rows[(n * H + i) * W + j, c]


@njit(parallel=True, cache=True)
def maxpool2(x, y, idx):
    # 2x2 window, stride 2. idx stores the winning in-tile offset 0..3 in
    # row-major order; ties go to the first (lowest) offset.
    N, C, Ho, Wo = y.shape
    for n in prange(N):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    best = x[n, c, 2 * i, 2 * j]
                    arg = 0
                    v = x[n, c, 2 * i, 2 * j + 1]
                    if v > best:
                        best = v
                        arg = 1
                    v = x[n, c, 2 * i + 1, 2 * j]
                    if v > best:
                        best = v
                        arg = 2
                    v = x[n, c, 2 * i + 1, 2 * j + 1]
                    if v > best:
                        best = v
                        arg = 3
                    y[n, c, i, j] = best
                    idx[n, c, i, j] = arg


@njit(parallel=True, cache=True)
def maxpool2_back(g, idx, gx):
    # Route each upstream gradient to the argmax position of its tile.
    N, C, Ho, Wo = g.shape
    for n in prange(N):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    gx[n, c, 2 * i, 2 * j] = 0.0
                    gx[n, c, 2 * i, 2 * j + 1] = 0.0
                    gx[n, c, 2 * i + 1, 2 * j] = 0.0
                    gx[n, c, 2 * i + 1, 2 * j + 1] = 0.0
                    a = idx[n, c, i, j]
                    gx[n, c, 2 * i + a // 2, 2 * j + a % 2] = g[n, c, i, j]
