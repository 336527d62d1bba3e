# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels: same-padding forward and weight gradient.

Inputs arrive pre-padded and C-contiguous; the innermost loops run over the
contiguous width axis so the compiler can vectorize them.  The input
gradient reuses the forward kernel with flipped, transposed weights (done on
the Python side).
"""

ctypedef fused floating:
    float
    double


def conv2d_forward(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] w,
                   floating[:, :, :, ::1] out):
    """out[b,co,y,x] += sum over (ci,dy,dx) of xp[b,ci,y+dy,x+dx] * w[dy,dx,ci,co].

    xp is the zero-padded input (B, Cin, H+k-1, W+k-1); out must be zeroed
    by the caller.
    """
    cdef Py_ssize_t B = out.shape[0], Co = out.shape[1], H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t Ci = xp.shape[1], k = w.shape[0]
    cdef Py_ssize_t b, co, ci, dy, dx, y, x
    cdef floating wv
    for b in range(B):
        for co in range(Co):
            for ci in range(Ci):
                for dy in range(k):
                    for dx in range(k):
                        wv = w[dy, dx, ci, co]
                        for y in range(H):
                            for x in range(W):
                                out[b, co, y, x] += wv * xp[b, ci, y + dy, x + dx]


def conv2d_grad_weights(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] dout,
                        floating[:, :, :, ::1] dw):
    """dw[dy,dx,ci,co] += sum over (b,y,x) of xp[b,ci,y+dy,x+dx] * dout[b,co,y,x].

    dw must be zeroed by the caller.
    """
    cdef Py_ssize_t B = dout.shape[0], Co = dout.shape[1], H = dout.shape[2], W = dout.shape[3]
    cdef Py_ssize_t Ci = xp.shape[1], k = dw.shape[0]
    cdef Py_ssize_t b, co, ci, dy, dx, y, x
    cdef floating s
    for b in range(B):
        for ci in range(Ci):
            for co in range(Co):
                for dy in range(k):
                    for dx in range(k):
                        s = 0
                        for y in range(H):
                            for x in range(W):
                                s = s + xp[b, ci, y + dy, x + dx] * dout[b, co, y, x]
                        dw[dy, dx, ci, co] += s
