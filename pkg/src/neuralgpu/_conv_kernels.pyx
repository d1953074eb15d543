# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled same-padding convolution kernels.

Thin wrappers over the register-blocked C kernels in ``conv_impl.h``.  Every
output element is accumulated from 0 in a fixed order (taps ascending, then
channels ascending; positions in row-major order for the kernel gradient), the
same order the numpy kernels in ``_conv_fallback`` use, so the two backends
return identical arrays.

Layouts are channels-last: states ``[B, w, n, c]``, kernels ``[kw, kh, cin, cout]``.
"""

import numpy as np

cdef extern from "conv_impl.h" nogil:
    void conv_forward_f64(const double *sp, const double *ker, double *out, Py_ssize_t nb,
                          Py_ssize_t nw, Py_ssize_t nn, Py_ssize_t cin, Py_ssize_t kw,
                          Py_ssize_t kh, Py_ssize_t cout)
    void conv_forward_f32(const float *sp, const float *ker, float *out, Py_ssize_t nb,
                          Py_ssize_t nw, Py_ssize_t nn, Py_ssize_t cin, Py_ssize_t kw,
                          Py_ssize_t kh, Py_ssize_t cout)
    void conv_grad_kernel_f64(const double *sp, const double *g, double *out, Py_ssize_t nb,
                              Py_ssize_t nw, Py_ssize_t nn, Py_ssize_t cin, Py_ssize_t kw,
                              Py_ssize_t kh, Py_ssize_t cout)
    void conv_grad_kernel_f32(const float *sp, const float *g, float *out, Py_ssize_t nb,
                              Py_ssize_t nw, Py_ssize_t nn, Py_ssize_t cin, Py_ssize_t kw,
                              Py_ssize_t kh, Py_ssize_t cout)


def _padded(x, Py_ssize_t kw, Py_ssize_t kh):
    cdef Py_ssize_t hw = kw // 2, hh = kh // 2
    out = np.zeros((x.shape[0], x.shape[1] + 2 * hw, x.shape[2] + 2 * hh, x.shape[3]), dtype=x.dtype)
    out[:, hw:hw + x.shape[1], hh:hh + x.shape[2]] = x
    return out


def _forward(s, kernel):
    cdef Py_ssize_t nb = s.shape[0], nw = s.shape[1], nn = s.shape[2], cin = s.shape[3]
    cdef Py_ssize_t kw = kernel.shape[0], kh = kernel.shape[1], cout = kernel.shape[3]
    sp = _padded(s, kw, kh)
    kernel = np.ascontiguousarray(kernel)
    out = np.zeros((nb, nw, nn, cout), dtype=s.dtype)
    cdef double[:, :, :, ::1] sd, kd, od
    cdef float[:, :, :, ::1] sf, kf, of
    if s.dtype == np.float64:
        sd, kd, od = sp, kernel, out
        with nogil:
            conv_forward_f64(&sd[0, 0, 0, 0], &kd[0, 0, 0, 0], &od[0, 0, 0, 0],
                             nb, nw, nn, cin, kw, kh, cout)
    else:
        sf, kf, of = sp, kernel, out
        with nogil:
            conv_forward_f32(&sf[0, 0, 0, 0], &kf[0, 0, 0, 0], &of[0, 0, 0, 0],
                             nb, nw, nn, cin, kw, kh, cout)
    return out


def conv_forward(s, kernel):
    return _forward(s, kernel)


def conv_grad_input(g, kernel):
    # gradient of a same-padding conv is the conv with the flipped, channel-swapped kernel
    flipped = np.ascontiguousarray(kernel[::-1, ::-1].transpose(0, 1, 3, 2))
    return _forward(g, flipped)


def conv_grad_kernel(s, g, kernel_shape):
    cdef Py_ssize_t nb = s.shape[0], nw = s.shape[1], nn = s.shape[2], cin = s.shape[3]
    cdef Py_ssize_t kw = kernel_shape[0], kh = kernel_shape[1], cout = g.shape[3]
    sp = _padded(s, kw, kh)
    g = np.ascontiguousarray(g)
    out = np.zeros((kw, kh, cin, cout), dtype=s.dtype)
    cdef double[:, :, :, ::1] sd, gd, od
    cdef float[:, :, :, ::1] sf, gf, of
    if s.dtype == np.float64:
        sd, gd, od = sp, g, out
        with nogil:
            conv_grad_kernel_f64(&sd[0, 0, 0, 0], &gd[0, 0, 0, 0], &od[0, 0, 0, 0],
                                 nb, nw, nn, cin, kw, kh, cout)
    else:
        sf, gf, of = sp, g, out
        with nogil:
            conv_grad_kernel_f32(&sf[0, 0, 0, 0], &gf[0, 0, 0, 0], &of[0, 0, 0, 0],
                                 nb, nw, nn, cin, kw, kh, cout)
    return out
