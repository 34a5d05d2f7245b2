"""Pure numpy kernels; reference fallback for the compiled ``_ckernels`` module.

All arrays are batched: adjacency ``(B, N, N, C)``, features ``(B, N, T, C)``,
depthwise weights ``(K, C)``.
"""
import numpy as np


def graph_apply(adj, feat):
    return np.einsum("bnmc,bmtc->bntc", adj, feat, optimize=False)


def graph_apply_backward(adj, feat, grad):
    d_adj = np.einsum("bntc,bmtc->bnmc", grad, feat, optimize=False)
    d_feat = np.einsum("bnmc,bntc->bmtc", adj, grad, optimize=False)
    return d_adj, d_feat


def temporal_conv(x, w):
    ks = w.shape[0]
    pad = ks // 2
    T = x.shape[2]
    out = np.zeros_like(x)
    for k in range(ks):
        shift = k - pad
        lo, hi = max(0, -shift), min(T, T - shift)
        if lo < hi:
            out[:, :, lo:hi, :] += w[k] * x[:, :, lo + shift:hi + shift, :]
    return out


def temporal_conv_backward(x, w, grad):
    ks = w.shape[0]
    pad = ks // 2
    T = x.shape[2]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    for k in range(ks):
        shift = k - pad
        lo, hi = max(0, -shift), min(T, T - shift)
        if lo < hi:
            g = grad[:, :, lo:hi, :]
            dx[:, :, lo + shift:hi + shift, :] += w[k] * g
            dw[k] = np.einsum("bntc,bntc->c", g, x[:, :, lo + shift:hi + shift, :])
    return dx, dw
