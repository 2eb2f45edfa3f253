# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: plain C loops over contiguous float64 buffers.

Same signatures and gate ordering as evoworld.nn.kernels_py; selected at
import time by evoworld.nn when available.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

NAME = "compiled"


cdef inline double _act(double v, int act) nogil:
    if act == 1:
        return v if v > 0.0 else 0.0
    if act == 2:
        return tanh(v)
    return v


cdef inline double _sigmoid(double v) nogil:
    if v >= 0.0:
        return 1.0 / (1.0 + exp(-v))
    cdef double ev = exp(v)
    return ev / (1.0 + ev)


def conv2d(cnp.ndarray[double, ndim=3, mode="c"] x,
           cnp.ndarray[double, ndim=4, mode="c"] w,
           cnp.ndarray[double, ndim=1, mode="c"] b,
           int stride, int act):
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (wd - k) // stride + 1
    cdef cnp.ndarray[double, ndim=3, mode="c"] y = np.empty((cout, ho, wo))
    cdef Py_ssize_t oc, oy, ox, ic, ky, kx
    cdef double acc
    with nogil:
        for oc in range(cout):
            for oy in range(ho):
                for ox in range(wo):
                    acc = b[oc]
                    for ic in range(cin):
                        for ky in range(k):
                            for kx in range(k):
                                acc += w[oc, ic, ky, kx] * x[ic, oy * stride + ky, ox * stride + kx]
                    y[oc, oy, ox] = _act(acc, act)
    return y


def linear(cnp.ndarray[double, ndim=1, mode="c"] x,
           cnp.ndarray[double, ndim=2, mode="c"] w,
           cnp.ndarray[double, ndim=1, mode="c"] b,
           int act):
    cdef Py_ssize_t n = x.shape[0], m = w.shape[0]
    cdef cnp.ndarray[double, ndim=1, mode="c"] y = np.empty(m)
    cdef Py_ssize_t i, j
    cdef double acc
    with nogil:
        for i in range(m):
            acc = b[i]
            for j in range(n):
                acc += w[i, j] * x[j]
            y[i] = _act(acc, act)
    return y


def lstm_cell(cnp.ndarray[double, ndim=1, mode="c"] x,
              cnp.ndarray[double, ndim=1, mode="c"] h,
              cnp.ndarray[double, ndim=1, mode="c"] c,
              cnp.ndarray[double, ndim=2, mode="c"] w,
              cnp.ndarray[double, ndim=1, mode="c"] b):
    cdef Py_ssize_t n = x.shape[0], hidden = h.shape[0]
    cdef cnp.ndarray[double, ndim=1, mode="c"] h2 = np.empty(hidden)
    cdef cnp.ndarray[double, ndim=1, mode="c"] c2 = np.empty(hidden)
    cdef Py_ssize_t u, j, row
    cdef double pre_i, pre_f, pre_g, pre_o, ig, fg, gg, og, cn
    with nogil:
        for u in range(hidden):
            # gate rows: input u, forget hidden+u, candidate 2*hidden+u, output 3*hidden+u
            pre_i = b[u]
            pre_f = b[hidden + u]
            pre_g = b[2 * hidden + u]
            pre_o = b[3 * hidden + u]
            for j in range(n):
                pre_i += w[u, j] * x[j]
                pre_f += w[hidden + u, j] * x[j]
                pre_g += w[2 * hidden + u, j] * x[j]
                pre_o += w[3 * hidden + u, j] * x[j]
            for j in range(hidden):
                pre_i += w[u, n + j] * h[j]
                pre_f += w[hidden + u, n + j] * h[j]
                pre_g += w[2 * hidden + u, n + j] * h[j]
                pre_o += w[3 * hidden + u, n + j] * h[j]
            ig = _sigmoid(pre_i)
            fg = _sigmoid(pre_f)
            gg = tanh(pre_g)
            og = _sigmoid(pre_o)
            cn = fg * c[u] + ig * gg
            c2[u] = cn
            h2[u] = og * tanh(cn)
    return h2, c2
