# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the channel-wise graph contraction and depthwise
temporal convolution. Signatures mirror ``_kernels_py``."""
import numpy as np
cimport cython
from cython cimport floating


def graph_apply(const floating[:, :, :, ::1] adj, const floating[:, :, :, ::1] feat):
    cdef Py_ssize_t B = feat.shape[0], N = feat.shape[1]
    cdef Py_ssize_t T = feat.shape[2], C = feat.shape[3]
    cdef Py_ssize_t b, n, m, t, c
    cdef floating a
    dtype = np.float64 if floating is double else np.float32
    out_arr = np.zeros((B, N, T, C), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    with nogil:
        for b in range(B):
            for n in range(N):
                for m in range(N):
                    for t in range(T):
                        for c in range(C):
                            out[b, n, t, c] += adj[b, n, m, c] * feat[b, m, t, c]
    return out_arr


def graph_apply_backward(const floating[:, :, :, ::1] adj, const floating[:, :, :, ::1] feat,
                         const floating[:, :, :, ::1] grad):
    cdef Py_ssize_t B = feat.shape[0], N = feat.shape[1]
    cdef Py_ssize_t T = feat.shape[2], C = feat.shape[3]
    cdef Py_ssize_t b, n, m, t, c
    dtype = np.float64 if floating is double else np.float32
    d_adj_arr = np.zeros((B, N, N, C), dtype=dtype)
    d_feat_arr = np.zeros((B, N, T, C), dtype=dtype)
    cdef floating[:, :, :, ::1] d_adj = d_adj_arr
    cdef floating[:, :, :, ::1] d_feat = d_feat_arr
    with nogil:
        for b in range(B):
            for n in range(N):
                for m in range(N):
                    for t in range(T):
                        for c in range(C):
                            d_adj[b, n, m, c] += grad[b, n, t, c] * feat[b, m, t, c]
                            d_feat[b, m, t, c] += adj[b, n, m, c] * grad[b, n, t, c]
    return d_adj_arr, d_feat_arr


def temporal_conv(const floating[:, :, :, ::1] x, const floating[:, ::1] w):
    cdef Py_ssize_t B = x.shape[0], N = x.shape[1], T = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t ks = w.shape[0], pad = w.shape[0] // 2
    cdef Py_ssize_t b, n, t, k, c, s
    dtype = np.float64 if floating is double else np.float32
    out_arr = np.zeros((B, N, T, C), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    with nogil:
        for b in range(B):
            for n in range(N):
                for t in range(T):
                    for k in range(ks):
                        s = t + k - pad
                        if s < 0 or s >= T:
                            continue
                        for c in range(C):
                            out[b, n, t, c] += w[k, c] * x[b, n, s, c]
    return out_arr


def temporal_conv_backward(const floating[:, :, :, ::1] x, const floating[:, ::1] w,
                           const floating[:, :, :, ::1] grad):
    cdef Py_ssize_t B = x.shape[0], N = x.shape[1], T = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t ks = w.shape[0], pad = w.shape[0] // 2
    cdef Py_ssize_t b, n, t, k, c, s
    dtype = np.float64 if floating is double else np.float32
    dx_arr = np.zeros((B, N, T, C), dtype=dtype)
    dw_arr = np.zeros((ks, C), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = dx_arr
    cdef floating[:, ::1] dw = dw_arr
    with nogil:
        for b in range(B):
            for n in range(N):
                for t in range(T):
                    for k in range(ks):
                        s = t + k - pad
                        if s < 0 or s >= T:
                            continue
                        for c in range(C):
                            dx[b, n, s, c] += w[k, c] * grad[b, n, t, c]
                            dw[k, c] += grad[b, n, t, c] * x[b, n, s, c]
    return dx_arr, dw_arr
