"""Convolution kernel dispatch: compiled extension when built, numpy fallback.

The two backends produce the same values up to floating point summation
order.  Selection happens at import time; ``SPDNN_KERNELS`` overrides it
(``auto``, ``compiled`` or ``numpy``) and :func:`use_backend` switches at
runtime, which the benchmark and the tests use to compare both paths.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from . import _convkernels
except ImportError:  # extension not built; the numpy path is fully functional
    _convkernels = None

COMPILED_AVAILABLE = _convkernels is not None


class KernelError(Exception):
    pass


def _pad_same(x, k):
    p = (k - 1) // 2
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _forward_numpy(xp, w):
    b, ci, hp, wp = xp.shape
    k = w.shape[0]
    h, wd = hp - k + 1, wp - k + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))          # (B,Ci,H,W,k,k)
    col = win.transpose(0, 2, 3, 4, 5, 1).reshape(b * h * wd, k * k * ci)
    out = col @ w.reshape(k * k * ci, -1)
    return np.ascontiguousarray(out.reshape(b, h, wd, -1).transpose(0, 3, 1, 2))


def _forward_compiled(xp, w):
    b, _, hp, wp = xp.shape
    k = w.shape[0]
    out = np.zeros((b, w.shape[3], hp - k + 1, wp - k + 1), dtype=xp.dtype)
    _convkernels.conv2d_forward(xp, np.ascontiguousarray(w), out)
    return out


def _grad_weights_numpy(xp, dy):
    b, ci, hp, wp = xp.shape
    k = hp - dy.shape[2] + 1
    h, wd = dy.shape[2], dy.shape[3]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    col = win.transpose(0, 2, 3, 4, 5, 1).reshape(b * h * wd, k * k * ci)
    dyt = dy.transpose(0, 2, 3, 1).reshape(b * h * wd, -1)
    return (col.T @ dyt).reshape(k, k, ci, dy.shape[1])


def _grad_weights_compiled(xp, dy):
    k = xp.shape[2] - dy.shape[2] + 1
    dw = np.zeros((k, k, xp.shape[1], dy.shape[1]), dtype=xp.dtype)
    _convkernels.conv2d_grad_weights(xp, np.ascontiguousarray(dy), dw)
    return dw


_BACKENDS = {
    "numpy": (_forward_numpy, _grad_weights_numpy),
    "compiled": (_forward_compiled, _grad_weights_compiled),
}

_active = "numpy"


def available_backends():
    return ("compiled", "numpy") if COMPILED_AVAILABLE else ("numpy",)


def use_backend(name: str) -> None:
    """Select the kernel backend by name ('compiled' or 'numpy')."""
    global _active
    if name not in _BACKENDS:
        raise KernelError(f"unknown kernel backend {name!r}")
    if name == "compiled" and not COMPILED_AVAILABLE:
        raise KernelError("compiled kernels are not built; run the extension build")
    _active = name


def active_backend() -> str:
    return _active


def _select_initial():
    choice = os.environ.get("SPDNN_KERNELS", "auto").lower()
    if choice == "auto":
        choice = "compiled" if COMPILED_AVAILABLE else "numpy"
    use_backend(choice)


_select_initial()


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padding stride-1 convolution of (B,Cin,H,W) with (k,k,Cin,Cout)."""
    if x.shape[1] != w.shape[2]:
        raise KernelError(f"channel mismatch: input has {x.shape[1]}, kernel expects {w.shape[2]}")
    fwd, _ = _BACKENDS[_active]
    out = fwd(_pad_same(x, w.shape[0]), w)
    out += b.reshape(1, -1, 1, 1)
    return out


def conv2d_grad_input(w: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the convolution input.

    Equals a same-padding convolution of the output gradient with the kernel
    flipped in both spatial axes and transposed in its channel axes.
    """
    wt = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    fwd, _ = _BACKENDS[_active]
    return fwd(_pad_same(dy, w.shape[0]), wt)


def conv2d_grad_weights(x: np.ndarray, dy: np.ndarray, kernel: int) -> np.ndarray:
    """Gradient w.r.t. the kernel, shape (kernel,kernel,Cin,Cout).

    The kernel size is passed explicitly because same padding keeps the
    spatial size, so it cannot be read off the tensor shapes.
    """
    _, gw = _BACKENDS[_active]
    return gw(_pad_same(x, kernel), np.ascontiguousarray(dy))
