"""Kernel backend selection.

The compiled Cython module is used when it was built; otherwise the numpy
implementation is used. Set ``PROTOGCN_KERNELS=python`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("PROTOGCN_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def _c(a):
    return np.ascontiguousarray(a)


def graph_apply(adj, feat, impl=None):
    impl = impl or _impl
    return impl.graph_apply(_c(adj), _c(feat))


def graph_apply_backward(adj, feat, grad, impl=None):
    impl = impl or _impl
    return impl.graph_apply_backward(_c(adj), _c(feat), _c(grad))


def temporal_conv(x, w, impl=None):
    impl = impl or _impl
    return impl.temporal_conv(_c(x), _c(w))


def temporal_conv_backward(x, w, grad, impl=None):
    impl = impl or _impl
    return impl.temporal_conv_backward(_c(x), _c(w), _c(grad))


def available():
    """Return the mapping of importable backend names to modules."""
    out = {"python": _kernels_py}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
